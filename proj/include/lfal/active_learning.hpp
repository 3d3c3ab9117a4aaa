#pragma once
/**
 * @brief Active-learning rounds: pick or design a display, label it through
 * the oracle, retrain from scratch on every label so far, evaluate.
 *
 * All strategy helpers work in "local" indices, i.e. positions within the
 * training split. Records and displays report pool (global) indices.
 */
#include "lfal/display_solver.hpp"
#include "lfal/graph_conv.hpp"
#include "lfal/invertible_net.hpp"
#include "lfal/skeleton_data.hpp"
#include "lfal/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace lfal {

enum class Strategy { designed_ambient, designed_latent, random, uncertainty_margin, diversity_coreset };

inline constexpr Strategy kAllStrategies[] = {Strategy::random, Strategy::designed_ambient, Strategy::designed_latent,
                                              Strategy::uncertainty_margin, Strategy::diversity_coreset};

inline const char *to_string(Strategy s) {
  switch (s) {
  case Strategy::designed_ambient: return "designed_ambient";
  case Strategy::designed_latent: return "designed_latent";
  case Strategy::random: return "random";
  case Strategy::uncertainty_margin: return "uncertainty_margin";
  case Strategy::diversity_coreset: return "diversity_coreset";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string &s) {
  for (auto k : kAllStrategies)
    if (s == to_string(k)) return k;
  throw ContractError("unknown strategy \"" + s + "\"");
}

inline bool is_designed(Strategy s) { return s == Strategy::designed_ambient || s == Strategy::designed_latent; }

/** @brief Holds the hidden labels; remembers which samples were queried. */
class Oracle {
public:
  explicit Oracle(std::vector<int> labels) : labels_(std::move(labels)), queried_(labels_.size(), false) {}

  int query(int index) {
    require(index >= 0 && std::size_t(index) < labels_.size(), "Oracle: index out of range");
    if (!queried_[std::size_t(index)]) {
      queried_[std::size_t(index)] = true;
      ++count_;
    }
    return labels_[std::size_t(index)];
  }
  bool queried(int index) const { return queried_.at(std::size_t(index)); }
  std::size_t queried_count() const { return count_; }

private:
  std::vector<int> labels_;
  std::vector<bool> queried_;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Pool-based pickers.

inline std::vector<int> unlabeled_indices(const std::vector<char> &labeled) {
  std::vector<int> out;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (!labeled[i]) out.push_back(int(i));
  return out;
}

inline std::vector<int> random_pick(const std::vector<char> &labeled, int K, Rng &rng) {
  auto cand = unlabeled_indices(labeled);
  rng.shuffle(cand);
  cand.resize(std::min<std::size_t>(cand.size(), std::size_t(std::max(K, 0))));
  return cand;
}

/** @brief Margin = top-1 minus top-2 score per column of `scores` (classes x n). */
inline Vector margins(const Matrix &scores) {
  Vector m(scores.cols());
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    double a = -std::numeric_limits<double>::infinity(), b = a;
    for (Eigen::Index c = 0; c < scores.rows(); ++c) {
      const double v = scores(c, j);
      if (v > a) {
        b = a;
        a = v;
      } else if (v > b) {
        b = v;
      }
    }
    m(j) = scores.rows() > 1 ? a - b : 0.0;
  }
  return m;
}

/** @brief The K unlabeled columns with the smallest margin; ties go to the lower index. */
inline std::vector<int> uncertainty_margin_pick(const Matrix &scores, int K, const std::vector<char> &labeled) {
  require(std::size_t(scores.cols()) == labeled.size(), "uncertainty_margin_pick: scores/labeled size mismatch");
  const Vector m = margins(scores);
  auto cand = unlabeled_indices(labeled);
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return m(a) < m(b); });
  cand.resize(std::min<std::size_t>(cand.size(), std::size_t(std::max(K, 0))));
  return cand;
}

/**
 * @brief Greedy k-center over the columns of X. Each pick maximises the
 * distance to the nearest labeled-or-picked column. With nothing labeled the
 * first pick is the column farthest from the centroid. Ties go to the lower
 * index.
 */
inline std::vector<int> diversity_coreset_pick(const Matrix &X, int K, const std::vector<char> &labeled) {
  require(std::size_t(X.cols()) == labeled.size(), "diversity_coreset_pick: X/labeled size mismatch");
  const auto n = X.cols();
  std::vector<char> taken(labeled.begin(), labeled.end());
  std::vector<int> picks;
  const auto avail = unlabeled_indices(labeled);
  const int want = std::min<int>(K, int(avail.size()));
  if (want <= 0) return picks;

  // Direct differences rather than the Gram expansion: picks hinge on exact comparisons.
  auto sq_dists_to = [&](const Vector &c) { return Vector((X.colwise() - c).colwise().squaredNorm().transpose()); };
  Vector nearest = Vector::Constant(n, std::numeric_limits<double>::infinity());
  auto absorb = [&](int c) { nearest = nearest.cwiseMin(sq_dists_to(X.col(c))); };
  bool any = false;
  for (Eigen::Index i = 0; i < n; ++i)
    if (labeled[std::size_t(i)]) {
      absorb(int(i));
      any = true;
    }
  if (!any) {
    const Vector centroid = X.rowwise().mean();
    const Vector d = sq_dists_to(centroid);
    int best = avail.front();
    for (int i : avail)
      if (d(i) > d(best)) best = i;
    picks.push_back(best);
    taken[std::size_t(best)] = 1;
    absorb(best);
  }
  while (int(picks.size()) < want) {
    int best = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (taken[std::size_t(i)]) continue;
      if (best < 0 || nearest(i) > nearest(best)) best = int(i);
    }
    picks.push_back(best);
    taken[std::size_t(best)] = 1;
    absorb(best);
  }
  return picks;
}

struct Grounding {
  std::vector<int> indices; ///< one per grounded exemplar, in exemplar order
  std::vector<double> distances;
  bool partial = false;
};

/**
 * @brief Snap each exemplar (column of V) to its nearest unlabeled column of X.
 * Exemplars are served in ascending order of their nearest distance; a
 * sample already taken is skipped in favour of the next-nearest.
 */
inline Grounding ground_exemplars(const Matrix &V, const Matrix &X, const std::vector<char> &labeled) {
  require(V.rows() == X.rows(), "ground_exemplars: dimension mismatch");
  require(std::size_t(X.cols()) == labeled.size(), "ground_exemplars: X/labeled size mismatch");
  const Matrix d = pairwise_sq_dists(X, V);
  const auto avail = unlabeled_indices(labeled);
  Grounding g;
  const auto K = V.cols();
  if (avail.empty() || K == 0) {
    g.partial = K > 0;
    return g;
  }
  std::vector<std::vector<int>> ranked(static_cast<std::size_t>(K), avail);
  std::vector<int> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  for (Eigen::Index k = 0; k < K; ++k) {
    auto &r = ranked[std::size_t(k)];
    std::stable_sort(r.begin(), r.end(), [&](int a, int b) { return d(a, k) < d(b, k); });
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return d(ranked[a].front(), a) < d(ranked[b].front(), b); });
  std::vector<int> assigned(static_cast<std::size_t>(K), -1);
  std::vector<char> taken(labeled.size(), 0);
  for (int k : order) {
    for (int i : ranked[std::size_t(k)])
      if (!taken[std::size_t(i)]) {
        assigned[std::size_t(k)] = i;
        taken[std::size_t(i)] = 1;
        break;
      }
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    const int i = assigned[std::size_t(k)];
    if (i < 0) {
      g.partial = true;
      continue;
    }
    g.indices.push_back(i);
    g.distances.push_back(d(i, k));
  }
  return g;
}

struct DisplayConfig {
  double tol = 1e-6;
  int max_iters = 200;
  double sigma_ratio = 2.0;
  GammaMode gamma_mode = GammaMode::adaptive;
  double gamma_fixed = 1.0;
};

/** @brief Solve for K exemplars over `pool_repr` given history H with the default hyperparameters. */
inline DisplayState design_display(const Matrix &pool_repr, const Matrix &H, int K, Rng &rng,
                                   const DisplayConfig &cfg = {}) {
  DisplayProblem prob;
  prob.X = pool_repr;
  prob.H = H.cols() > 0 ? H : Matrix(pool_repr.rows(), 0);
  prob.K = K;
  prob.hypers = default_hypers(prob.n(), prob.p(), K, prob.N(), nullptr, cfg.sigma_ratio);
  prob.gamma_mode = cfg.gamma_mode;
  if (cfg.gamma_mode == GammaMode::fixed) prob.hypers.gamma = cfg.gamma_fixed;
  SolveOptions so;
  so.tol = cfg.tol;
  so.max_iters = cfg.max_iters;
  return solve(prob, rng, so);
}

struct EvalResult {
  double accuracy = 0.0; ///< macro average over classes present in the test split
  std::vector<double> per_class;
  std::vector<int> omitted_classes;
};

/** @brief Mean of per-class accuracies; classes absent from `truth` are omitted. */
inline EvalResult evaluate(const std::vector<int> &predicted, const std::vector<int> &truth, int num_classes) {
  require(predicted.size() == truth.size(), "evaluate: size mismatch");
  require(!truth.empty(), "evaluate: empty test split");
  std::vector<int> hit(std::size_t(num_classes), 0), total(std::size_t(num_classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes, "evaluate: label out of range");
    ++total[std::size_t(truth[i])];
    hit[std::size_t(truth[i])] += predicted[i] == truth[i];
  }
  EvalResult r;
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (total[std::size_t(c)] == 0) {
      r.omitted_classes.push_back(c);
      r.per_class.push_back(std::nan(""));
      continue;
    }
    const double a = double(hit[std::size_t(c)]) / total[std::size_t(c)];
    r.per_class.push_back(a);
    sum += a;
    ++present;
  }
  r.accuracy = sum / present;
  return r;
}

// ---------------------------------------------------------------------------
// Runs.

enum class ClassifierKind { stack, gcn };

inline const char *to_string(ClassifierKind k) { return k == ClassifierKind::stack ? "stack" : "gcn"; }

struct NetConfig {
  ClassifierKind classifier = ClassifierKind::stack;
  int depth = 3;
  Eigen::Index dim = 0; ///< 0: pool dimension p; larger values zero-pad
  ActivationSpec act;
  std::optional<double> lambda; ///< default 1/p
  int gcn_filters = 8;
  int gcn_blocks = 3;
  int gcn_hidden = 32;
  int certify_samples = 1000;
};

struct ALConfig {
  Strategy strategy = Strategy::random;
  int K = 12;
  int rounds = 3;
  DisplayConfig display;
  NetConfig net;
  TrainOptions train;
};

/** @brief Rounds needed to reach `rate` of an n-sample pool with displays of K. */
inline int rounds_for_rate(double rate, Eigen::Index n, int K) {
  require(rate > 0.0 && rate <= 1.0 && K >= 1, "rounds_for_rate: need 0 < rate <= 1 and K >= 1");
  return std::max(1, int(std::ceil(rate * double(n) / double(K) - 1e-9)));
}

struct CertSummary {
  double K_bound, M_bound, K_emp, M_emp, ortho_residual;
  bool passed;
};

struct RoundRecord {
  int round = 0;
  Strategy strategy = Strategy::random;
  std::vector<int> picked; ///< pool indices
  double labeling_rate = 0.0;
  double accuracy = 0.0;
  int solver_iterations = 0;
  bool solver_converged = false;
  std::optional<CertSummary> certificate;
  std::vector<std::string> notes;
};

inline nlohmann::json to_json(const RoundRecord &r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["strategy"] = to_string(r.strategy);
  j["picked"] = r.picked;
  j["labeling_rate"] = r.labeling_rate;
  j["accuracy"] = r.accuracy;
  j["display_solver_iterations"] = r.solver_iterations;
  j["display_solver_converged"] = r.solver_converged;
  if (r.certificate) {
    const auto &c = *r.certificate;
    j["certificate"] = {{"K_bound", c.K_bound}, {"M_bound", c.M_bound}, {"K_emp", c.K_emp},
                        {"M_emp", c.M_emp},     {"ortho_residual", c.ortho_residual}, {"passed", c.passed}};
  } else {
    j["certificate"] = nullptr;
  }
  j["notes"] = r.notes;
  return j;
}

/** @brief Training split, test split and their feature views. */
struct ALContext {
  const Pool *pool = nullptr;
  std::vector<int> train_idx, test_idx;
  Matrix X;      ///< p x n_train (ambient)
  Matrix X_test; ///< p x n_test

  explicit ALContext(const Pool &p) : pool(&p), train_idx(p.train_indices()), test_idx(p.test_indices()) {
    require(!train_idx.empty(), "ALContext: pool has no training samples");
    require(!test_idx.empty(), "ALContext: pool has no test samples");
    X = p.flat(Eigen::all, train_idx);
    X_test = p.flat(Eigen::all, test_idx);
  }
  Eigen::Index n() const { return X.cols(); }
  Eigen::Index p() const { return X.rows(); }
};

struct Model {
  std::optional<LatentClassifier> stack;
  std::optional<GcnClassifier> gcn;
};

struct ALRun {
  int t = 0; ///< rounds completed
  int T = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> displays; ///< pool indices per round
  std::vector<std::vector<int>> labels;
  Matrix H;                        ///< designed exemplars (ambient strategy), p x t*K
  std::vector<int> grounded_local; ///< latent history source: grounded training positions
  std::vector<char> labeled;       ///< per training position
  std::vector<double> accuracy;
  double labeling_rate = 0.0;
  Model model;        ///< classifier f_t
  LayerStack mapper;  ///< latent mapper used by the next designed_latent round
  std::vector<RoundRecord> records;

  bool done() const { return t >= T; }
};

inline Matrix pad_rows(const Matrix &x, Eigen::Index dim) {
  if (x.rows() == dim) return x;
  Matrix out = Matrix::Zero(dim, x.cols());
  out.topRows(x.rows()) = x;
  return out;
}

inline Eigen::Index net_dim(const ALConfig &cfg, Eigen::Index p) {
  require(cfg.net.dim == 0 || cfg.net.dim >= p, "net.dim must be 0 or >= the pool dimension");
  return cfg.net.dim == 0 ? p : cfg.net.dim;
}

inline double net_lambda(const ALConfig &cfg, Eigen::Index p) { return cfg.net.lambda.value_or(1.0 / double(p)); }

inline ALRun start_run(const ALContext &ctx, const ALConfig &cfg, std::uint64_t seed) {
  require(cfg.K >= 1 && cfg.rounds >= 1, "start_run: K and rounds must be >= 1");
  ALRun run;
  run.T = cfg.rounds;
  run.K = cfg.K;
  run.seed = seed;
  run.H = Matrix(ctx.p(), 0);
  run.labeled.assign(std::size_t(ctx.n()), 0);
  Rng init = Rng(seed).derive(0xA11CE);
  run.mapper = make_stack(net_dim(cfg, ctx.p()), cfg.net.depth, cfg.net.act, net_lambda(cfg, ctx.p()), init);
  return run;
}

/** @brief Fit a fresh classifier (and, if needed, a latent mapper) on the labeled set. */
inline Model fit_model(const ALContext &ctx, const ALConfig &cfg, const std::vector<int> &local,
                       const std::vector<int> &labels, Rng &rng, bool need_stack) {
  Model m;
  const int classes = ctx.pool->num_classes;
  const Eigen::Index dim = net_dim(cfg, ctx.p());
  TrainOptions topt = cfg.train;
  topt.project = true;
  if (cfg.net.classifier == ClassifierKind::stack || need_stack) {
    Rng init = rng.derive(1), shuffle = rng.derive(2);
    auto clf = make_latent_classifier(dim, cfg.net.depth, classes, cfg.net.act, net_lambda(cfg, ctx.p()), init);
    std::vector<Vector> xs;
    for (int i : local) xs.push_back(pad_rows(ctx.X.col(i), dim));
    train(clf, xs, labels, topt, shuffle);
    m.stack = std::move(clf);
  }
  if (cfg.net.classifier == ClassifierKind::gcn) {
    Rng init = rng.derive(3), shuffle = rng.derive(4);
    const auto &g0 = ctx.pool->graphs[std::size_t(ctx.train_idx.front())];
    GcnShape shape{g0.signal_dim(), g0.nodes(), cfg.net.gcn_blocks, cfg.net.gcn_filters, cfg.net.gcn_hidden, classes};
    auto clf = make_gcn_classifier(shape, cfg.net.act, init);
    std::vector<SkeletonGraph> gs;
    for (int i : local) gs.push_back(ctx.pool->graphs[std::size_t(ctx.train_idx[std::size_t(i)])]);
    train(clf, gs, labels, topt, shuffle);
    m.gcn = std::move(clf);
  }
  return m;
}

/** @brief Class scores (classes x cols) of the given local training positions or test columns. */
inline Matrix model_scores(const Model &m, const ALContext &ctx, const ALConfig &cfg, bool test,
                           const std::vector<int> &cols) {
  const auto &idx = test ? ctx.test_idx : ctx.train_idx;
  if (cfg.net.classifier == ClassifierKind::gcn) {
    Matrix s(m.gcn->classes(), Eigen::Index(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      s.col(Eigen::Index(j)) = m.gcn->scores(ctx.pool->graphs[std::size_t(idx[std::size_t(cols[j])])]);
    return s;
  }
  const Matrix &X = test ? ctx.X_test : ctx.X;
  return m.stack->scores_columns(pad_rows(X(Eigen::all, cols), m.stack->stack.dim()));
}

inline EvalResult evaluate_model(const Model &m, const ALContext &ctx, const ALConfig &cfg) {
  std::vector<int> cols(ctx.test_idx.size());
  std::iota(cols.begin(), cols.end(), 0);
  const Matrix s = model_scores(m, ctx, cfg, true, cols);
  std::vector<int> pred, truth;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    Eigen::Index best;
    s.col(j).maxCoeff(&best);
    pred.push_back(int(best));
    truth.push_back(ctx.pool->labels[std::size_t(ctx.test_idx[std::size_t(j)])]);
  }
  return evaluate(pred, truth, ctx.pool->num_classes);
}

/**
 * @brief Execute one round. Returns false (and records nothing) when every
 * training sample is already labeled.
 */
inline bool round(ALRun &run, const ALContext &ctx, Oracle &oracle, const ALConfig &cfg) {
  require(!run.done(), "round: budget already exhausted");
  const auto unlabeled = unlabeled_indices(run.labeled);
  if (unlabeled.empty()) return false;

  Rng rng = Rng(run.seed).derive(std::uint64_t(run.t + 1));
  Rng pick_rng = rng.derive(10);
  RoundRecord rec;
  rec.round = run.t;
  rec.strategy = cfg.strategy;
  std::vector<int> picks;

  switch (cfg.strategy) {
  case Strategy::random:
    picks = random_pick(run.labeled, cfg.K, pick_rng);
    break;
  case Strategy::uncertainty_margin:
    if (!run.model.stack && !run.model.gcn) {
      rec.notes.push_back("no classifier yet: random fallback");
      picks = random_pick(run.labeled, cfg.K, pick_rng);
    } else {
      std::vector<int> all(std::size_t(ctx.n()));
      std::iota(all.begin(), all.end(), 0);
      picks = uncertainty_margin_pick(model_scores(run.model, ctx, cfg, false, all), cfg.K, run.labeled);
    }
    break;
  case Strategy::diversity_coreset:
    picks = diversity_coreset_pick(ctx.X, cfg.K, run.labeled);
    break;
  case Strategy::designed_ambient: {
    const DisplayState st = design_display(ctx.X, run.H, cfg.K, pick_rng, cfg.display);
    rec.solver_iterations = st.iteration;
    rec.solver_converged = st.converged;
    const Grounding g = ground_exemplars(st.V, ctx.X, run.labeled);
    picks = g.indices;
    if (g.partial) rec.notes.push_back("partial display: too few unlabeled samples");
    run.H.conservativeResize(Eigen::NoChange, run.H.cols() + st.V.cols());
    run.H.rightCols(st.V.cols()) = st.V;
    break;
  }
  case Strategy::designed_latent: {
    const LayerStack &net = run.mapper;
    Rng cert_rng = rng.derive(11);
    const LipschitzCertificate cert = certify(net, cert_rng, cfg.net.certify_samples);
    rec.certificate = CertSummary{cert.K_bound, cert.M_bound, cert.K_emp, cert.M_emp, cert.ortho_residual,
                                  cert.passed()};
    const Matrix Z = latent_map(net, pad_rows(ctx.X, net.dim()));
    const Matrix Hl = Z(Eigen::all, run.grounded_local);
    const DisplayState st = design_display(Z, Hl, cfg.K, pick_rng, cfg.display);
    rec.solver_iterations = st.iteration;
    rec.solver_converged = st.converged;
    const Matrix V = latent_unmap(net, st.V, cert).topRows(ctx.p());
    const Grounding g = ground_exemplars(V, ctx.X, run.labeled);
    picks = g.indices;
    if (g.partial) rec.notes.push_back("partial display: too few unlabeled samples");
    run.grounded_local.insert(run.grounded_local.end(), picks.begin(), picks.end());
    break;
  }
  }

  std::vector<int> display, labels;
  for (int i : picks) {
    require(!run.labeled[std::size_t(i)], "round: sample picked twice");
    run.labeled[std::size_t(i)] = 1;
    const int global = ctx.train_idx[std::size_t(i)];
    display.push_back(global);
    labels.push_back(oracle.query(global));
  }
  run.displays.push_back(display);
  run.labels.push_back(labels);

  // Every label so far, in display order.
  std::vector<int> all_local, all_labels;
  std::vector<int> pos_of(std::size_t(ctx.pool->size()), -1);
  for (std::size_t i = 0; i < ctx.train_idx.size(); ++i) pos_of[std::size_t(ctx.train_idx[i])] = int(i);
  for (std::size_t r = 0; r < run.displays.size(); ++r)
    for (std::size_t j = 0; j < run.displays[r].size(); ++j) {
      all_local.push_back(pos_of[std::size_t(run.displays[r][j])]);
      all_labels.push_back(run.labels[r][j]);
    }

  Rng fit_rng = rng.derive(12);
  const bool need_stack = cfg.strategy == Strategy::designed_latent;
  run.model = fit_model(ctx, cfg, all_local, all_labels, fit_rng, need_stack);
  if (run.model.stack) run.mapper = run.model.stack->stack;

  const EvalResult ev = evaluate_model(run.model, ctx, cfg);
  for (int c : ev.omitted_classes) rec.notes.push_back("class " + std::to_string(c) + " absent from test split");
  rec.picked = display;
  rec.accuracy = ev.accuracy;
  run.labeling_rate = double(all_local.size()) / double(ctx.n());
  rec.labeling_rate = run.labeling_rate;
  run.accuracy.push_back(ev.accuracy);
  run.records.push_back(std::move(rec));
  ++run.t;
  return true;
}

/** @brief Run all rounds; `on_round` sees each record as soon as it is produced. */
template <class Callback>
ALRun run_active_learning(const Pool &pool, const ALConfig &cfg, std::uint64_t seed, Callback &&on_round) {
  const ALContext ctx(pool);
  Oracle oracle(pool.labels);
  ALRun run = start_run(ctx, cfg, seed);
  while (!run.done()) {
    if (!round(run, ctx, oracle, cfg)) break;
    on_round(run.records.back());
  }
  return run;
}

inline ALRun run_active_learning(const Pool &pool, const ALConfig &cfg, std::uint64_t seed) {
  return run_active_learning(pool, cfg, seed, [](const RoundRecord &) {});
}

} // namespace lfal
