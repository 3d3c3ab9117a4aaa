// lfal: run active-learning grids, report records, certify checkpoints, write synthetic data.
//
// Exit codes: 0 success, 1 config error, 2 partial grid failure (run) or a
// failed certificate (certify), 3 I/O error.
#include "lfal/lfal.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace {

enum Exit { kOk = 0, kConfig = 1, kPartial = 2, kIo = 3 };

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

nlohmann::json number_or_string(const std::string &v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) {
      if (v.find_first_of(".eE") == std::string::npos) return nlohmann::json(std::stoll(v));
      return nlohmann::json(d);
    }
  } catch (const std::exception &) {
  }
  return nlohmann::json(v);
}

/** Flags shared by every subcommand that builds a pool or a model; each one overrides a config path. */
struct Overrides {
  std::map<std::string, std::string> values; // dotted config path -> raw text
  std::string synth;

  void add(CLI::App *app, const std::string &flag, const std::string &path, const std::string &help) {
    app->add_option_function<std::string>(
        flag, [this, path](const std::string &v) { values[path] = v; }, help);
  }

  void apply(nlohmann::json &j) const {
    for (const auto &[path, raw] : values) {
      if (path == "strategies") {
        j["strategies"] = split_list(raw);
      } else if (path == "rates" || path == "seeds") {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto &x : split_list(raw)) arr.push_back(number_or_string(x));
        j[path] = arr;
      } else if (path == "data.path" || path == "output_dir" || path == "display.gamma_mode" ||
                 path == "net.classifier") {
        lfal::set_path(j, path, raw);
      } else {
        lfal::set_path(j, path, number_or_string(raw));
      }
    }
    if (!synth.empty()) {
      static const std::set<std::string> keys{"classes", "per_class", "joints", "frames",
                                              "noise",   "test_per_class", "step", "seed"};
      for (const auto &kv : split_list(synth)) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw lfal::ConfigError("--synth: expected key=value, got \"" + kv + "\"");
        const auto key = kv.substr(0, eq);
        if (!keys.count(key)) throw lfal::ConfigError("--synth: unknown key \"" + key + "\"");
        lfal::set_path(j, "data.synth." + key, number_or_string(kv.substr(eq + 1)));
      }
      j["data"]["path"] = nullptr;
    }
  }
};

void add_data_flags(CLI::App *app, Overrides &o) {
  o.add(app, "--data", "data.path", "JSON-lines skeleton dataset");
  app->add_option("--synth", o.synth, "synthetic pool: classes=..,per_class=..,joints=..,frames=..,noise=..");
  o.add(app, "--chunks", "data.chunks", "temporal chunks per trajectory (default 4)");
}

void add_model_flags(CLI::App *app, Overrides &o) {
  o.add(app, "--net.classifier", "net.classifier", "stack or gcn");
  o.add(app, "--net.depth", "net.depth", "network depth L");
  o.add(app, "--net.dim", "net.dim", "latent width (0 = pool dimension)");
  o.add(app, "--net.u", "net.u", "upper activation slope (default 0.99)");
  o.add(app, "--net.l", "net.l", "lower activation slope (default 0.95)");
  o.add(app, "--net.lambda", "net.lambda", "orthonormality weight (default 1/p)");
  o.add(app, "--train.epochs", "train.epochs", "training epochs");
  o.add(app, "--train.batch", "train.batch", "minibatch size");
  o.add(app, "--train.lr0", "train.lr0", "initial learning rate");
  o.add(app, "--train.momentum", "train.momentum", "momentum (default 0.9)");
}

nlohmann::json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw lfal::IoError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw lfal::ConfigError("config " + path + ": " + e.what());
  }
}

lfal::ExperimentConfig resolve(const std::string &config_path, const Overrides &o, nlohmann::json *resolved = nullptr) {
  nlohmann::json j = lfal::default_config_json();
  if (!config_path.empty()) lfal::merge_json(j, read_json_file(config_path));
  o.apply(j);
  if (resolved) *resolved = j;
  return lfal::config_from_json(j);
}

int cmd_run(const std::string &config_path, const Overrides &o) {
  nlohmann::json resolved;
  const auto cfg = resolve(config_path, o, &resolved);
  const lfal::Pool pool = lfal::load_pool(cfg);
  std::cerr << "pool: " << pool.train_indices().size() << " train / " << pool.test_indices().size()
            << " test samples, " << pool.num_classes << " classes, dim " << pool.dim() << '\n';
  lfal::fs::create_directories(cfg.output_dir);
  lfal::write_atomic(lfal::fs::path(cfg.output_dir) / "config.json", resolved.dump(2) + '\n');
  const auto outcome = lfal::run_grid(cfg, pool, &std::cerr);
  std::cout << lfal::table_text(outcome.table);
  std::cerr << "results written to " << cfg.output_dir << '\n';
  return outcome.partial_failure() ? kPartial : kOk;
}

int cmd_report(const std::string &records, const std::string &out) {
  const auto rep = lfal::collect_records(records);
  for (const auto &w : rep.warnings) std::cerr << "warning: " << w << '\n';
  const std::string csv = lfal::report_csv(rep);
  if (out.empty() || out == "-") std::cout << csv;
  else lfal::write_atomic(out, csv);
  return kOk;
}

int cmd_certify(const std::string &model, int samples, std::uint64_t seed) {
  const auto clf = lfal::load_checkpoint(model);
  lfal::Rng rng(seed);
  const auto c = lfal::certify(clf.stack, rng, samples);
  std::printf("depth          %d\n", clf.stack.depth());
  std::printf("dim            %ld\n", long(clf.stack.dim()));
  std::printf("K bound        %.10g\n", c.K_bound);
  std::printf("K sampled      %.10g  %s\n", c.K_emp, c.forward_ok() ? "ok" : "VIOLATED");
  std::printf("M bound        %.10g\n", c.M_bound);
  std::printf("M sampled      %.10g  %s\n", c.M_emp, c.inverse_ok() ? "ok" : "VIOLATED");
  std::printf("ortho residual %.3e  %s (tol %.0e)\n", c.ortho_residual, c.orthonormal() ? "ok" : "VIOLATED",
              c.ortho_tol);
  std::printf("certificate    %s\n", c.passed() ? "PASSED" : "FAILED");
  return c.passed() ? kOk : kPartial;
}

int cmd_synth(const std::string &out, const Overrides &o) {
  const auto cfg = resolve("", o);
  lfal::Rng rng(cfg.data.synth_seed);
  const auto seqs = lfal::synth_sequences(cfg.data.synth, rng);
  lfal::save_dataset(out, seqs);
  std::cerr << "wrote " << seqs.size() << " sequences to " << out << '\n';
  return kOk;
}

int cmd_train(const std::string &config_path, const std::string &out, const Overrides &o) {
  const auto cfg = resolve(config_path, o);
  const lfal::Pool pool = lfal::load_pool(cfg);
  const lfal::ALContext ctx(pool);
  lfal::ALConfig al;
  al.net = cfg.net;
  al.train = cfg.train;
  std::vector<int> local(ctx.train_idx.size()), labels;
  std::iota(local.begin(), local.end(), 0);
  for (int i : ctx.train_idx) labels.push_back(pool.labels[std::size_t(i)]);
  al.net.classifier = lfal::ClassifierKind::stack;
  lfal::Rng rng(cfg.master_seed);
  const auto m = lfal::fit_model(ctx, al, local, labels, rng, true);
  lfal::save_checkpoint(out, *m.stack, cfg.master_seed);
  const auto ev = lfal::evaluate_model(m, ctx, al);
  std::cerr << "test macro accuracy " << ev.accuracy << "; checkpoint written to " << out << '\n';
  return kOk;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Active learning with designed displays on skeleton data"};
  app.require_subcommand(1);

  std::string config_path, records, out, model, train_out;
  int samples = 10000;
  std::uint64_t cert_seed = 0;
  Overrides run_o, synth_o, train_o;

  auto *run = app.add_subcommand("run", "run an experiment grid");
  run->add_option("--config", config_path, "JSON config file");
  add_data_flags(run, run_o);
  add_model_flags(run, run_o);
  run_o.add(run, "--display.K", "display.K", "exemplars per display");
  run_o.add(run, "--display.tol", "display.tol", "solver tolerance (default 1e-6)");
  run_o.add(run, "--display.max-iters", "display.max_iters", "solver iteration cap (default 200)");
  run_o.add(run, "--display.sigma-ratio", "display.sigma_ratio", "sigma / alpha (default 2.0)");
  run_o.add(run, "--display.gamma-mode", "display.gamma_mode", "adaptive or fixed:<value>");
  run_o.add(run, "--strategies", "strategies", "comma-separated strategy names");
  run_o.add(run, "--rates", "rates", "comma-separated labeling rates");
  run_o.add(run, "--seeds", "seeds", "comma-separated run seeds");
  run_o.add(run, "--seed", "seed", "master seed");
  run_o.add(run, "--jobs", "jobs", "parallel grid cells");
  run_o.add(run, "--out", "output_dir", std::string("output directory (default $") + lfal::kOutputDirEnv + ")");

  auto *report = app.add_subcommand("report", "long CSV of every round record");
  report->add_option("--records", records, "records directory")->required();
  report->add_option("--out", out, "output CSV (default stdout)");

  auto *cert = app.add_subcommand("certify", "check a checkpoint's Lipschitz certificate");
  cert->add_option("--model", model, "checkpoint file")->required();
  cert->add_option("--samples", samples, "sampled pairs")->check(CLI::Range(2, 100000000));
  cert->add_option("--seed", cert_seed, "sampling seed");

  auto *synth = app.add_subcommand("synth", "write a synthetic JSON-lines dataset");
  synth->add_option("--out", out, "output file")->required();
  synth->add_option("--synth", synth_o.synth, "classes=..,per_class=..,joints=..,frames=..,noise=..");
  synth_o.add(synth, "--seed", "data.synth.seed", "generator seed");

  auto *trn = app.add_subcommand("train", "train a latent classifier on a pool and save a checkpoint");
  trn->add_option("--config", config_path, "JSON config file");
  trn->add_option("--out", train_out, "checkpoint file")->required();
  add_data_flags(trn, train_o);
  add_model_flags(trn, train_o);
  train_o.add(trn, "--seed", "seed", "initialisation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config_path, run_o);
    if (*report) return cmd_report(records, out);
    if (*cert) return cmd_certify(model, samples, cert_seed);
    if (*synth) return cmd_synth(out, synth_o);
    if (*trn) return cmd_train(config_path, train_out, train_o);
  } catch (const lfal::ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const lfal::ContractError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const lfal::IoError &e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const lfal::FormatError &e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error &e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
