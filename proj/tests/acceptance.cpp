// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "lfal/lfal.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

using namespace lfal;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome verdict(bool pass, std::string detail) { return {pass, std::move(detail)}; }

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome roundtrip() {
  Rng rng(101);
  const LayerStack net = project(make_stack(16, 3, {0.99, 0.95}, 0.0, rng));
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vector x = 10.0 * rng.normal_matrix(16, 1);
    const double err = (inverse(net, forward(net, x).y) - x).cwiseAbs().maxCoeff();
    worst = std::max(worst, err / (1.0 + x.cwiseAbs().maxCoeff()));
  }
  return verdict(worst <= 1e-9, "max scaled error " + fmt("%.3g", worst));
}

Outcome lipschitz() {
  Rng rng(102);
  bool ok = true;
  std::string detail;
  for (int L = 2; L <= 5; ++L) {
    const LayerStack net = project(make_stack(16, L, {}, 0.0, rng));
    const LipschitzCertificate c = certify(net, rng, 10000);
    const bool within = c.K_emp <= c.K_bound + 1e-9 && c.M_emp <= c.M_bound + 1e-9;
    LayerStack scaled = net;
    for (auto &w : scaled.weights) w *= 2.0;
    const bool flagged = !certify(scaled, rng, 10000).passed();
    ok = ok && within && flagged && c.passed();
    detail += "L=" + std::to_string(L) + " K " + fmt("%.6f", c.K_emp) + "/" + fmt("%.6f", c.K_bound) + " M " +
              fmt("%.6f", c.M_emp) + "/" + fmt("%.6f", c.M_bound) + (flagged ? " x2 flagged; " : " x2 NOT flagged; ");
  }
  return verdict(ok, detail);
}

struct Toy {
  std::vector<Vector> x;
  std::vector<int> y;
};

Toy two_blobs(Rng &rng, Eigen::Index d, int per_class) {
  Vector dir = rng.normal_matrix(d, 1);
  dir.normalize();
  Toy t;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      t.x.push_back((c == 0 ? -2.0 : 2.0) * dir + 0.4 * Vector(rng.normal_matrix(d, 1)));
      t.y.push_back(c);
    }
  return t;
}

Outcome ortho_training() {
  Rng rng(103);
  const Eigen::Index d = 8;
  const Toy toy = two_blobs(rng, d, 25);
  LatentClassifier m = make_latent_classifier(d, 3, 2, {}, 1.0 / double(d), rng);
  // Start well away from orthonormality so the penalty has work to do.
  for (auto &w : m.stack.weights) w += 0.3 * rng.normal_matrix(d, d);
  const double before = ortho_penalty(m.stack).value;
  TrainOptions opt;
  opt.epochs = 500;
  const TrainResult r = train(m, toy.x, toy.y, opt, rng);
  const double acc = training_accuracy(m, toy.x, toy.y);
  return verdict(r.penalty < 1e-2 && acc == 1.0, "penalty " + fmt("%.3g", before) + " -> " + fmt("%.3g", r.penalty) +
                                                     ", accuracy " + fmt("%.3f", acc));
}

Outcome gradients() {
  Rng rng(104);
  double worst = 0.0;
  int nets = 0;
  while (nets < 20) {
    const Eigen::Index d = 2 + Eigen::Index(rng.below(5));
    const int L = 2 + int(rng.below(2));
    const int classes = 2 + int(rng.below(3));
    LatentClassifier m = make_latent_classifier(d, L, classes, {}, rng.uniform(0.05, 1.0), rng);
    for (auto &w : m.stack.weights) w += 0.2 * rng.normal_matrix(d, d);
    const Vector x = rng.normal_matrix(d, 1);
    const int label = int(rng.below(std::uint64_t(classes)));
    bool near_kink = false;
    for (const auto &p : forward(m.stack, x).trace.pre) near_kink |= p.cwiseAbs().minCoeff() < 1e-3;
    if (near_kink) continue;
    std::vector<Matrix> grads;
    for (auto *p : m.parameters()) grads.push_back(Matrix::Zero(p->rows(), p->cols()));
    m.accumulate(x, label, grads);
    m.regularize(m.stack.lambda, grads);
    const auto params = m.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto f = [&](const Matrix &w) {
        LatentClassifier c = m;
        *c.parameters()[k] = w;
        Vector dz;
        return softmax_ce(c.scores(x), label, dz) + c.stack.lambda * ortho_penalty(c.stack).value;
      };
      worst = std::max(worst, rel_diff(grads[k], finite_diff_grad(f, *params[k], 1e-6)));
    }
    ++nets;
  }
  return verdict(worst <= 1e-4, "max relative difference " + fmt("%.3g", worst) + " over 20 nets");
}

// Independent evaluations of the membership and exemplar updates, written as plain loops.
Matrix brute_mu(const Matrix &X, const Matrix &V, double gamma) {
  Matrix mu(X.cols(), V.cols());
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
      double dist = 0.0;
      for (Eigen::Index r = 0; r < X.rows(); ++r) dist += (X(r, i) - V(r, k)) * (X(r, i) - V(r, k));
      mu(i, k) = std::exp(-dist / gamma);
      total += mu(i, k);
    }
    for (Eigen::Index i = 0; i < X.cols(); ++i) mu(i, k) /= total;
  }
  return mu;
}

Matrix brute_V(const Matrix &X, const Matrix &mu, const Matrix &V, const Matrix &H, const Hypers &h) {
  Matrix out(V.rows(), V.cols());
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < X.cols(); ++i) mass += mu(i, k);
    for (Eigen::Index r = 0; r < V.rows(); ++r) {
      double num = 0.0;
      for (Eigen::Index i = 0; i < X.cols(); ++i) num += mu(i, k) * X(r, i);
      for (Eigen::Index j = 0; j < H.cols(); ++j) {
        double dist = 0.0;
        for (Eigen::Index q = 0; q < V.rows(); ++q) dist += (H(q, j) - V(q, k)) * (H(q, j) - V(q, k));
        num += (h.alpha / h.sigma) * std::exp(-dist / h.sigma) * (V(r, k) - H(r, j));
      }
      out(r, k) = num / (mass + h.beta);
    }
  }
  return out;
}

DisplayProblem random_problem(Rng &rng) {
  DisplayProblem prob;
  prob.X = rng.normal_matrix(4, 20);
  prob.H = rng.normal_matrix(4, 3);
  prob.K = 3;
  prob.hypers = default_hypers(20, 4, 3, 3);
  return prob;
}

Outcome fixed_point_solver() {
  Rng rng(105);
  double worst_sum = 0.0, worst_rise = -std::numeric_limits<double>::infinity(), worst_oracle = 0.0;
  int converged = 0, agree = 0, literal_rises = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const DisplayProblem prob = random_problem(rng);
    const std::uint64_t seed = rng.next_u64();
    Rng init(seed);
    DisplayState s = initial_state(prob, init);
    bool done = false, literal_rose = false;
    for (int it = 0; it < 200 && !done; ++it) {
      const double gamma = iteration_gamma(prob, s);
      Hypers frozen = prob.hypers;
      frozen.gamma = gamma;
      const DisplayState next = step(prob, s, gamma);
      for (Eigen::Index k = 0; k < next.mu.cols(); ++k)
        worst_sum = std::max(worst_sum, std::abs(next.mu.col(k).sum() - 1.0));
      worst_oracle = std::max(worst_oracle, (next.mu - brute_mu(prob.X, s.V, gamma)).cwiseAbs().maxCoeff());
      worst_oracle =
          std::max(worst_oracle, (next.V - brute_V(prob.X, next.mu, s.V, prob.H, frozen)).cwiseAbs().maxCoeff());
      const double before = objective(prob.X, prob.H, s.V, s.mu, frozen);
      const double after = objective(prob.X, prob.H, next.V, next.mu, frozen);
      worst_rise = std::max(worst_rise, after - before);

      // For the record: the same step with the exemplar pull pointed the other way.
      const Matrix S = similarity_S(s.V, prob.H, frozen.sigma);
      Matrix lit = prob.X * next.mu - (2.0 * frozen.alpha / frozen.sigma) *
                                          (s.V * S.colwise().sum().asDiagonal() - prob.H * S);
      lit /= 1.0 + frozen.beta;
      literal_rose |= objective(prob.X, prob.H, lit, next.mu, frozen) > before + 1e-8;

      s = next;
      done = s.last_change < 1e-6;
    }
    converged += done;
    literal_rises += literal_rose;
    Rng again(seed);
    const DisplayState solved = solve(prob, again);
    agree += solved.converged == done && solved.iteration == s.iteration && solved.V == s.V;
  }
  const bool pass = worst_sum <= 1e-9 && worst_rise <= 1e-8 && worst_oracle <= 1e-12 && converged >= 48 && agree == 50;
  return verdict(pass, "(a) max |colsum-1| " + fmt("%.2g", worst_sum) + "; (b) max rise " + fmt("%.2g", worst_rise) +
                           "; (c) max oracle diff " + fmt("%.2g", worst_oracle) + "; (d) converged " +
                           std::to_string(converged) + "/50; solve() agrees on " + std::to_string(agree) +
                           "/50; [info] opposite-sign exemplar pull rises in " + std::to_string(literal_rises) + "/50");
}

Outcome weighted_mean() {
  Rng rng(106);
  double worst = 0.0;
  int converged = 0;
  for (int inst = 0; inst < 50; ++inst) {
    DisplayProblem prob = random_problem(rng);
    prob.hypers.alpha = 0.0;
    prob.hypers.beta = 0.0;
    SolveOptions opt;
    opt.tol = 1e-12;
    opt.max_iters = 2000;
    const DisplayState s = solve(prob, rng, opt);
    converged += s.converged;
    for (Eigen::Index k = 0; k < s.V.cols(); ++k) {
      Vector mean = Vector::Zero(prob.p());
      double mass = 0.0;
      for (Eigen::Index i = 0; i < prob.n(); ++i) {
        mean += s.mu(i, k) * prob.X.col(i);
        mass += s.mu(i, k);
      }
      worst = std::max(worst, (s.V.col(k) - mean / mass).cwiseAbs().maxCoeff());
    }
  }
  return verdict(worst <= 1e-8 && converged == 50,
                 "max deviation " + fmt("%.2g", worst) + ", converged " + std::to_string(converged) + "/50");
}

Outcome ablation_direction() {
  ExperimentConfig c;
  c.data.synth.classes = 8;
  c.data.synth.per_class = 30;
  c.data.synth.noise = 6.0;
  c.data.synth.test_per_class = 20;
  c.strategies = {Strategy::random, Strategy::designed_ambient, Strategy::designed_latent};
  c.rates = {0.15};
  c.seeds.clear();
  for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  c.jobs = int(std::max(1u, std::thread::hardware_concurrency()));
  c.output_dir = (fs::temp_directory_path() / "lfal_acceptance_ablation").string();
  fs::remove_all(c.output_dir);
  const Pool pool = load_pool(c);
  const GridOutcome o = run_grid(c, pool);

  auto finals = [&](Strategy s) {
    std::vector<double> v(10, std::nan(""));
    for (const auto &cell : o.cells)
      if (cell.strategy == s && cell.ok) v[cell.seed] = cell.final_accuracy;
    return v;
  };
  const auto rnd = finals(Strategy::random), amb = finals(Strategy::designed_ambient),
             lat = finals(Strategy::designed_latent);
  const TableRow &r = o.table.rows[0], &a = o.table.rows[1], &l = o.table.rows[2];
  int wins = 0;
  for (int s = 0; s < 10; ++s) wins += lat[s] > rnd[s];
  const bool pass = !o.partial_failure() && l.mean >= a.mean && a.mean >= r.mean - r.stddev && wins >= 7;
  return verdict(pass, "random " + fmt("%.4f", r.mean) + "+-" + fmt("%.4f", r.stddev) + ", ambient " +
                           fmt("%.4f", a.mean) + ", latent " + fmt("%.4f", l.mean) + ", latent beats random in " +
                           std::to_string(wins) + "/10 seeds");
}

// Greedy k-center with the same conventions as the strategy, written without shared helpers.
std::vector<int> brute_kcenter(const Matrix &X, int K, const std::vector<char> &labeled) {
  const int n = int(X.cols());
  auto dist = [&](int i, int j) { return (X.col(i) - X.col(j)).norm(); };
  std::vector<int> centers, picks;
  for (int i = 0; i < n; ++i)
    if (labeled[i]) centers.push_back(i);
  int available = 0;
  for (int i = 0; i < n; ++i) available += !labeled[i];
  const int want = std::min(K, available);
  std::vector<char> taken(labeled);
  if (centers.empty() && want > 0) {
    const Vector centroid = X.rowwise().mean();
    int best = -1;
    for (int i = 0; i < n; ++i)
      if (best < 0 || (X.col(i) - centroid).norm() > (X.col(best) - centroid).norm()) best = i;
    centers.push_back(best);
    picks.push_back(best);
    taken[best] = 1;
  }
  while (int(picks.size()) < want) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (int c : centers) nearest = std::min(nearest, dist(i, c));
      if (nearest > best_d) {
        best = i;
        best_d = nearest;
      }
    }
    centers.push_back(best);
    picks.push_back(best);
    taken[best] = 1;
  }
  return picks;
}

Outcome strategy_oracles() {
  Rng rng(108);
  int margin_ok = 0, coreset_ok = 0, coreset_cases = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int classes = 2 + int(rng.below(5)), n = 5 + int(rng.below(40));
    const Matrix scores = rng.normal_matrix(classes, n);
    std::vector<char> labeled(std::size_t(n), 0);
    for (auto &l : labeled) l = rng.uniform() < 0.3;
    const int K = 1 + int(rng.below(std::uint64_t(n)));
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < n; ++j) {
      if (labeled[j]) continue;
      std::vector<double> col(scores.col(j).data(), scores.col(j).data() + classes);
      std::sort(col.begin(), col.end(), std::greater<>());
      ranked.push_back({col[0] - col[1], j});
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<int> expect;
    for (int i = 0; i < std::min<int>(K, int(ranked.size())); ++i) expect.push_back(ranked[i].second);
    margin_ok += uncertainty_margin_pick(scores, K, labeled) == expect;
  }
  for (int n = 1; n <= 12; ++n)
    for (int rep = 0; rep < 5; ++rep) {
      const Matrix X = rng.normal_matrix(3, n);
      std::vector<char> labeled(std::size_t(n), 0);
      if (rep % 2 == 1)
        for (auto &l : labeled) l = rng.uniform() < 0.25;
      for (int K = 1; K <= n; ++K) {
        ++coreset_cases;
        coreset_ok += diversity_coreset_pick(X, K, labeled) == brute_kcenter(X, K, labeled);
      }
    }
  return verdict(margin_ok == 100 && coreset_ok == coreset_cases,
                 "margin " + std::to_string(margin_ok) + "/100, coreset " + std::to_string(coreset_ok) + "/" +
                     std::to_string(coreset_cases));
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome pipeline_determinism() {
  auto run = [](const std::string &name, int jobs) {
    ExperimentConfig c;
    c.data.synth = {4, 8, 4, 8, 1.0, 4, 1.0};
    c.K = 4;
    c.rates = {0.3, 0.15};
    c.seeds = {0, 1};
    c.train.epochs = 40;
    c.net.certify_samples = 500;
    c.jobs = jobs;
    c.output_dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(c.output_dir);
    run_grid(c, load_pool(c));
    std::string all = slurp(fs::path(c.output_dir) / "results.csv");
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(fs::path(c.output_dir) / "records")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files) all += f.filename().string() + '\n' + slurp(f);
    return std::pair{slurp(fs::path(c.output_dir) / "results.csv"), all};
  };
  const auto a = run("lfal_acceptance_det_a", 1), b = run("lfal_acceptance_det_b", 2);
  const bool pass = !a.first.empty() && a.first == b.first && a.second == b.second;
  return verdict(pass, std::string(a.first == b.first ? "results.csv identical" : "results.csv differs") + ", " +
                           (a.second == b.second ? "round records identical" : "round records differ"));
}

Outcome chunk_descriptors() {
  bool ok = true;
  // Coordinates are multiples of 1/64, so every chunk sum is exact.
  Rng rng(110);
  for (int rep = 0; rep < 50; ++rep) {
    const int joints = 1 + int(rng.below(5)), chunks = 1 + int(rng.below(6));
    const int frames = chunks * (1 + int(rng.below(5)));
    SkeletonSequence s;
    s.joints = joints;
    s.frames = frames;
    s.coords.resize(3, Eigen::Index(joints) * frames);
    for (Eigen::Index i = 0; i < s.coords.size(); ++i) s.coords.data()[i] = double(int(rng.below(1025)) - 512) / 64.0;
    SkeletonSequence twice = s;
    twice.frames = 2 * frames;
    twice.coords.resize(3, Eigen::Index(joints) * twice.frames);
    for (int t = 0; t < frames; ++t)
      for (int j = 0; j < joints; ++j) {
        twice.coords.col(Eigen::Index(2 * t) * joints + j) = s.point(t, j);
        twice.coords.col(Eigen::Index(2 * t + 1) * joints + j) = s.point(t, j);
      }
    for (int j = 0; j < joints; ++j) ok = ok && chunk_descriptor(s, j, chunks) == chunk_descriptor(twice, j, chunks);
  }
  SkeletonSequence ramp;
  ramp.joints = 1;
  ramp.frames = 8;
  ramp.coords.resize(3, 8);
  for (int t = 0; t < 8; ++t) ramp.coords.col(t) << double(t), 2.0, 3.0;
  Vector expect(12);
  expect << 0.5, 2, 3, 2.5, 2, 3, 4.5, 2, 3, 6.5, 2, 3;
  const bool example = chunk_descriptor(ramp, 0, 4) == expect;
  return verdict(ok && example, std::string("duplication invariance ") + (ok ? "exact" : "violated") +
                                    ", T=8/M_c=4 example " + (example ? "exact" : "wrong"));
}

} // namespace

int main() {
  struct Criterion {
    int id;
    const char *name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "invertibility round trip", 1.0, roundtrip},
      {2, "Lipschitz certificate", 10.0, lipschitz},
      {3, "orthonormality training", 60.0, ortho_training},
      {4, "gradient correctness", 30.0, gradients},
      {5, "fixed-point solver", 30.0, fixed_point_solver},
      {6, "weighted-mean degenerate case", 30.0, weighted_mean},
      {7, "ablation direction", 900.0, ablation_direction},
      {8, "strategy oracles", 5.0, strategy_oracles},
      {9, "pipeline determinism", 300.0, pipeline_determinism},
      {10, "chunk descriptors", 5.0, chunk_descriptors},
  };
  int failed = 0;
  for (const auto &c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception &e) {
      o = verdict(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over time budget of " + fmt("%.0f", c.budget_s) + " s";
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s: %s (%.2f s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
