#pragma once
/**
 * @brief Experiment grids over (labeling rate x strategy x seed).
 *
 * A config is one JSON document. Each grid cell runs an active-learning job
 * and appends one JSON object per round to its record file (rewritten
 * atomically after every round). The final table holds mean and standard
 * deviation of the last-round accuracy over seeds per (rate, strategy).
 */
#include "lfal/active_learning.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace lfal {

namespace fs = std::filesystem;

struct ConfigError : Error {
  using Error::Error;
};

inline constexpr const char *kOutputDirEnv = "LFAL_OUTPUT_DIR";

struct DataSource {
  std::string path; ///< JSON-lines dataset; empty means synthetic
  SynthSpec synth;
  std::uint64_t synth_seed = 42;
  int chunks = kDefaultChunks;
};

struct ExperimentConfig {
  DataSource data;
  std::vector<Strategy> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};
  std::vector<double> rates{0.45, 0.30, 0.15};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t master_seed = 0;
  int K = 12;
  DisplayConfig display;
  NetConfig net;
  TrainOptions train;
  std::string output_dir;
  int jobs = 1;
};

inline GammaMode parse_gamma_mode(const std::string &s, double &fixed) {
  if (s == "adaptive") return GammaMode::adaptive;
  if (s.rfind("fixed:", 0) == 0) {
    try {
      fixed = std::stod(s.substr(6));
    } catch (const std::exception &) {
      throw ConfigError("display.gamma_mode: cannot parse \"" + s + "\"");
    }
    if (!(fixed > 0.0)) throw ConfigError("display.gamma_mode: fixed gamma must be positive");
    return GammaMode::fixed;
  }
  throw ConfigError("display.gamma_mode must be \"adaptive\" or \"fixed:<value>\", got \"" + s + "\"");
}

/** @brief Parse "classes=8,per_class=30,..." into a synth spec. */
inline SynthSpec parse_synth_spec(const std::string &text, SynthSpec spec = {}) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--synth: expected key=value, got \"" + item + "\"");
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    try {
      if (key == "classes") spec.classes = std::stoi(val);
      else if (key == "per_class") spec.per_class = std::stoi(val);
      else if (key == "joints") spec.joints = std::stoi(val);
      else if (key == "frames") spec.frames = std::stoi(val);
      else if (key == "noise") spec.noise = std::stod(val);
      else if (key == "test_per_class") spec.test_per_class = std::stoi(val);
      else if (key == "step") spec.step = std::stod(val);
      else throw ConfigError("--synth: unknown key \"" + key + "\"");
    } catch (const std::invalid_argument &) {
      throw ConfigError("--synth: bad value for " + key);
    }
  }
  return spec;
}

/** @brief Defaults as JSON; a config file and CLI overrides are merged on top. */
inline nlohmann::json default_config_json() {
  const ExperimentConfig d;
  nlohmann::json j;
  j["data"] = {{"path", nullptr},
               {"chunks", d.data.chunks},
               {"synth",
                {{"classes", d.data.synth.classes},
                 {"per_class", d.data.synth.per_class},
                 {"joints", d.data.synth.joints},
                 {"frames", d.data.synth.frames},
                 {"noise", d.data.synth.noise},
                 {"test_per_class", 20},
                 {"step", d.data.synth.step},
                 {"seed", d.data.synth_seed}}}};
  j["strategies"] = nlohmann::json::array();
  for (auto s : d.strategies) j["strategies"].push_back(to_string(s));
  j["rates"] = d.rates;
  j["seeds"] = d.seeds;
  j["seed"] = d.master_seed;
  j["display"] = {{"K", d.K},
                  {"tol", d.display.tol},
                  {"max_iters", d.display.max_iters},
                  {"sigma_ratio", d.display.sigma_ratio},
                  {"gamma_mode", "adaptive"}};
  j["net"] = {{"classifier", "stack"}, {"depth", d.net.depth},     {"dim", d.net.dim},
              {"u", d.net.act.u},      {"l", d.net.act.l},         {"lambda", nullptr},
              {"filters", d.net.gcn_filters}, {"blocks", d.net.gcn_blocks}, {"hidden", d.net.gcn_hidden},
              {"certify_samples", d.net.certify_samples}};
  j["train"] = {{"epochs", d.train.epochs},
                {"batch", d.train.batch},
                {"lr0", d.train.lr0},
                {"momentum", d.train.momentum}};
  const char *env = std::getenv(kOutputDirEnv);
  j["output_dir"] = env && *env ? env : "lfal_out";
  j["jobs"] = d.jobs;
  return j;
}

/** @brief Recursive merge: objects merge key by key, everything else replaces. */
inline void merge_json(nlohmann::json &base, const nlohmann::json &over) {
  if (!base.is_object() || !over.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key())) merge_json(base[it.key()], it.value());
    else base[it.key()] = it.value();
  }
}

/** @brief Set a dotted path such as "display.K" (creating objects on the way). */
inline void set_path(nlohmann::json &j, const std::string &dotted, nlohmann::json value) {
  nlohmann::json *cur = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  (*cur)[parts.back()] = std::move(value);
}

/** @brief Build and validate a config from merged JSON. Throws ConfigError. */
inline ExperimentConfig config_from_json(const nlohmann::json &j) {
  ExperimentConfig c;
  try {
    const auto &data = j.at("data");
    if (data.contains("path") && !data["path"].is_null()) c.data.path = data["path"].get<std::string>();
    c.data.chunks = data.value("chunks", kDefaultChunks);
    if (data.contains("synth")) {
      const auto &s = data["synth"];
      c.data.synth.classes = s.value("classes", c.data.synth.classes);
      c.data.synth.per_class = s.value("per_class", c.data.synth.per_class);
      c.data.synth.joints = s.value("joints", c.data.synth.joints);
      c.data.synth.frames = s.value("frames", c.data.synth.frames);
      c.data.synth.noise = s.value("noise", c.data.synth.noise);
      c.data.synth.test_per_class = s.value("test_per_class", 20);
      c.data.synth.step = s.value("step", c.data.synth.step);
      c.data.synth_seed = s.value("seed", c.data.synth_seed);
    }
    c.strategies.clear();
    for (const auto &s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    c.rates = j.at("rates").get<std::vector<double>>();
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.master_seed = j.value("seed", std::uint64_t{0});
    const auto &d = j.at("display");
    c.K = d.at("K").get<int>();
    c.display.tol = d.at("tol").get<double>();
    c.display.max_iters = d.at("max_iters").get<int>();
    c.display.sigma_ratio = d.at("sigma_ratio").get<double>();
    c.display.gamma_mode = parse_gamma_mode(d.at("gamma_mode").get<std::string>(), c.display.gamma_fixed);
    const auto &n = j.at("net");
    const auto kind = n.at("classifier").get<std::string>();
    if (kind == "stack") c.net.classifier = ClassifierKind::stack;
    else if (kind == "gcn") c.net.classifier = ClassifierKind::gcn;
    else throw ConfigError("net.classifier must be \"stack\" or \"gcn\"");
    c.net.depth = n.at("depth").get<int>();
    c.net.dim = n.at("dim").get<Eigen::Index>();
    c.net.act.u = n.at("u").get<double>();
    c.net.act.l = n.at("l").get<double>();
    if (n.contains("lambda") && !n["lambda"].is_null()) c.net.lambda = n["lambda"].get<double>();
    c.net.gcn_filters = n.value("filters", c.net.gcn_filters);
    c.net.gcn_blocks = n.value("blocks", c.net.gcn_blocks);
    c.net.gcn_hidden = n.value("hidden", c.net.gcn_hidden);
    c.net.certify_samples = n.value("certify_samples", c.net.certify_samples);
    const auto &t = j.at("train");
    c.train.epochs = t.at("epochs").get<int>();
    c.train.batch = t.at("batch").get<int>();
    c.train.lr0 = t.at("lr0").get<double>();
    c.train.momentum = t.at("momentum").get<double>();
    c.output_dir = j.at("output_dir").get<std::string>();
    c.jobs = j.value("jobs", 1);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ContractError &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  auto check = [](bool ok, const std::string &msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  check(!c.strategies.empty(), "strategies must not be empty");
  check(!c.rates.empty(), "rates must not be empty");
  for (double r : c.rates) check(r > 0.0 && r <= 1.0, "rates must lie in (0, 1]");
  check(!c.seeds.empty(), "seeds must not be empty");
  check(c.K >= 1, "display.K must be >= 1");
  check(c.display.tol > 0.0, "display.tol must be positive");
  check(c.display.max_iters >= 1, "display.max_iters must be >= 1");
  check(c.display.sigma_ratio > 0.0, "display.sigma_ratio must be positive");
  check(c.net.depth >= 2, "net.depth must be >= 2");
  check(c.net.dim >= 0, "net.dim must be >= 0");
  check(c.net.act.l > 0.0 && c.net.act.l < c.net.act.u, "net slopes need 0 < l < u");
  check(!c.net.lambda || *c.net.lambda >= 0.0, "net.lambda must be >= 0");
  check(c.net.certify_samples >= 2, "net.certify_samples must be >= 2");
  check(c.train.epochs >= 1 && c.train.batch >= 1, "train.epochs and train.batch must be >= 1");
  check(c.train.lr0 > 0.0, "train.lr0 must be positive");
  check(c.train.momentum >= 0.0 && c.train.momentum < 1.0, "train.momentum must lie in [0, 1)");
  check(c.jobs >= 1, "jobs must be >= 1");
  check(c.data.chunks >= 1, "data.chunks must be >= 1");
  if (c.data.path.empty()) {
    const auto &s = c.data.synth;
    check(s.classes >= 1 && s.per_class >= 1 && s.joints >= 1 && s.frames >= c.data.chunks,
          "synth counts must be >= 1 and frames >= chunks");
    check(s.noise >= 0.0, "synth noise must be >= 0");
    check(s.test_per_class >= 1, "synth test_per_class must be >= 1 to evaluate");
  }
  return c;
}

inline Pool load_pool(const ExperimentConfig &c) {
  PoolOptions opt;
  opt.chunks = c.data.chunks;
  if (!c.data.path.empty()) return load_dataset(c.data.path, DatasetFormat::jsonl, opt);
  Rng rng(c.data.synth_seed);
  return synth_pool(c.data.synth, rng, opt);
}

struct TableRow {
  double rate = 0.0;
  Strategy strategy = Strategy::random;
  double mean = 0.0;
  double stddev = 0.0; ///< sample standard deviation (n - 1), 0 for a single seed
  int seeds = 0;
  int failed = 0;
};

struct ResultTable {
  std::vector<TableRow> rows;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline TableRow summarize(double rate, Strategy s, const std::vector<double> &finals, int failed) {
  TableRow r;
  r.rate = rate;
  r.strategy = s;
  r.seeds = int(finals.size());
  r.failed = failed;
  if (!finals.empty()) {
    double sum = 0.0;
    for (double v : finals) sum += v;
    r.mean = sum / double(finals.size());
    if (finals.size() > 1) {
      double ss = 0.0;
      for (double v : finals) ss += (v - r.mean) * (v - r.mean);
      r.stddev = std::sqrt(ss / double(finals.size() - 1));
    }
  } else {
    r.mean = r.stddev = std::nan("");
  }
  return r;
}

inline std::string table_csv(const ResultTable &t) {
  std::ostringstream os;
  os << "rate,strategy,mean,std,seeds,failed\n";
  for (const auto &r : t.rows)
    os << fmt_double(r.rate) << ',' << to_string(r.strategy) << ',' << fmt_double(r.mean) << ','
       << fmt_double(r.stddev) << ',' << r.seeds << ',' << r.failed << '\n';
  return os.str();
}

inline std::string table_text(const ResultTable &t) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "rate" << std::setw(22) << "strategy" << "accuracy (%)\n";
  double last_rate = -1.0;
  for (const auto &r : t.rows) {
    if (r.rate != last_rate && last_rate >= 0.0) os << std::string(50, '-') << '\n';
    last_rate = r.rate;
    std::ostringstream rate;
    rate << std::fixed << std::setprecision(0) << r.rate * 100.0 << '%';
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << r.mean * 100.0 << " +/- " << r.stddev * 100.0;
    if (r.failed) acc << "  (" << r.failed << " failed)";
    os << std::setw(10) << rate.str() << std::setw(22) << to_string(r.strategy) << acc.str() << '\n';
  }
  return os.str();
}

/** @brief Write `content` to `path` through a temporary file and rename. */
inline void write_atomic(const fs::path &path, const std::string &content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string cell_name(double rate, Strategy s, std::uint64_t seed) {
  std::ostringstream os;
  os << "rate" << std::fixed << std::setprecision(4) << rate << '_' << to_string(s) << "_seed" << seed;
  return os.str();
}

/** @brief Per-run seed; shared by every strategy and rate so comparisons are paired. */
inline std::uint64_t run_seed(const ExperimentConfig &c, std::uint64_t seed) { return Rng::mix(c.master_seed, seed); }

inline ALConfig al_config(const ExperimentConfig &c, Strategy s, double rate, Eigen::Index n_train) {
  ALConfig a;
  a.strategy = s;
  a.K = c.K;
  a.rounds = rounds_for_rate(rate, n_train, c.K);
  a.display = c.display;
  a.net = c.net;
  a.train = c.train;
  return a;
}

struct CellResult {
  double rate = 0.0;
  Strategy strategy = Strategy::random;
  std::uint64_t seed = 0;
  bool ok = false;
  double final_accuracy = 0.0;
  std::string error;
};

struct GridOutcome {
  ResultTable table;
  std::vector<CellResult> cells;
  bool partial_failure() const {
    for (const auto &c : cells)
      if (!c.ok) return true;
    return false;
  }
};

/** @brief Run one cell, rewriting its record file after every round. */
inline CellResult run_cell(const Pool &pool, const ExperimentConfig &c, double rate, Strategy s, std::uint64_t seed,
                           const fs::path &records_dir) {
  CellResult res{rate, s, seed, false, 0.0, {}};
  const fs::path file = records_dir / (cell_name(rate, s, seed) + ".jsonl");
  std::string content;
  try {
    const ALConfig cfg = al_config(c, s, rate, Eigen::Index(pool.train_indices().size()));
    const ALRun run = run_active_learning(pool, cfg, run_seed(c, seed), [&](const RoundRecord &rec) {
      nlohmann::json j = to_json(rec);
      j["rate"] = rate;
      j["seed"] = seed;
      content += j.dump() + '\n';
      write_atomic(file, content);
    });
    if (run.accuracy.empty()) throw Error("run produced no rounds");
    res.final_accuracy = run.accuracy.back();
    res.ok = true;
  } catch (const std::exception &e) {
    res.error = e.what();
  }
  return res;
}

/** @brief Execute the whole grid; failed cells are recorded and skipped. */
inline GridOutcome run_grid(const ExperimentConfig &c, const Pool &pool, std::ostream *log = nullptr) {
  const fs::path out(c.output_dir);
  const fs::path records = out / "records";
  fs::create_directories(records);

  struct Job {
    double rate;
    Strategy s;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double r : c.rates)
    for (auto s : c.strategies)
      for (auto seed : c.seeds) jobs.push_back({r, s, seed});

  GridOutcome outcome;
  outcome.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      outcome.cells[i] = run_cell(pool, c, jobs[i].rate, jobs[i].s, jobs[i].seed, records);
      if (log) {
        std::lock_guard lock(log_mu);
        const auto &r = outcome.cells[i];
        *log << cell_name(r.rate, r.strategy, r.seed) << ": "
             << (r.ok ? "accuracy " + fmt_double(r.final_accuracy) : "FAILED: " + r.error) << '\n';
      }
    }
  };
  const int threads = std::max(1, std::min<int>(c.jobs, int(jobs.size())));
  std::vector<std::thread> pool_threads;
  for (int t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
  worker();
  for (auto &t : pool_threads) t.join();

  std::string failures;
  for (double r : c.rates)
    for (auto s : c.strategies) {
      std::vector<double> finals;
      int failed = 0;
      for (const auto &cell : outcome.cells) {
        if (cell.rate != r || cell.strategy != s) continue;
        if (cell.ok) finals.push_back(cell.final_accuracy);
        else {
          ++failed;
          failures += cell_name(cell.rate, cell.strategy, cell.seed) + ": " + cell.error + '\n';
        }
      }
      outcome.table.rows.push_back(summarize(r, s, finals, failed));
    }
  write_atomic(out / "results.csv", table_csv(outcome.table));
  write_atomic(out / "results.txt", table_text(outcome.table));
  if (!failures.empty()) write_atomic(out / "failures.txt", failures);
  return outcome;
}

// ---------------------------------------------------------------------------
// Reports.

struct ReportRow {
  double rate;
  std::string strategy;
  std::uint64_t seed;
  int round;
  double accuracy;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

/** @brief Collect every round record under `dir` (sorted by file name, then line). */
inline Report collect_records(const fs::path &dir) {
  Report rep;
  if (!fs::exists(dir)) throw IoError("records directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto &f : files) {
    std::ifstream in(f);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        rep.rows.push_back({j.at("rate").get<double>(), j.at("strategy").get<std::string>(),
                            j.at("seed").get<std::uint64_t>(), j.at("round").get<int>(),
                            j.at("accuracy").get<double>()});
      } catch (const nlohmann::json::exception &e) {
        rep.warnings.push_back("skipping corrupt record " + f.filename().string() + ":" + std::to_string(no) + " (" +
                               e.what() + ")");
      }
    }
  }
  return rep;
}

inline std::string report_csv(const Report &rep) {
  std::ostringstream os;
  os << "rate,strategy,seed,round,accuracy\n";
  for (const auto &r : rep.rows)
    os << fmt_double(r.rate) << ',' << r.strategy << ',' << r.seed << ',' << r.round << ','
       << fmt_double(r.accuracy) << '\n';
  return os.str();
}

/** @brief Recompute the (rate, strategy) table from round records: last round per (rate, strategy, seed). */
inline ResultTable table_from_report(const Report &rep, const std::vector<double> &rates,
                                     const std::vector<Strategy> &strategies) {
  std::map<std::tuple<double, std::string, std::uint64_t>, std::pair<int, double>> last;
  for (const auto &r : rep.rows) {
    auto &slot = last[{r.rate, r.strategy, r.seed}];
    if (r.round >= slot.first) slot = {r.round, r.accuracy};
  }
  ResultTable t;
  for (double rate : rates)
    for (auto s : strategies) {
      std::vector<double> finals;
      for (const auto &[key, v] : last)
        if (std::get<0>(key) == rate && std::get<1>(key) == to_string(s)) finals.push_back(v.second);
      t.rows.push_back(summarize(rate, s, finals, 0));
    }
  return t;
}

} // namespace lfal
