#pragma once
/**
 * @brief Skeleton sequences, their graph form and pools of flattened graphs.
 *
 * A sequence of T frames with J joints becomes a graph with one node per
 * joint. Node j carries the joint's trajectory summarised over M_c equal
 * temporal chunks (mean 3D position per chunk, concatenated), so the
 * descriptor has s = 3 * M_c entries. Frame t belongs to chunk
 * floor(t * M_c / T).
 */
#include "lfal/numerics.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lfal {

/** @brief Malformed dataset input; `line` is 1-based, 0 when unknown. */
struct FormatError : Error {
  FormatError(const std::string &what, std::size_t where = 0) : Error(what), line(where) {}
  std::size_t line;
};

inline constexpr int kDefaultChunks = 4;

enum class Split { train, test };

inline const char *to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct SkeletonSequence {
  int joints = 0;
  int frames = 0;
  /// 3 x (frames * joints); column t * joints + j is joint j at frame t.
  Eigen::Matrix3Xd coords;
  std::optional<int> label;
  std::optional<Split> split;

  Eigen::Vector3d point(int frame, int joint) const { return coords.col(Eigen::Index(frame) * joints + joint); }

  void validate() const {
    require(joints >= 1 && frames >= 1, "SkeletonSequence: empty sequence");
    require(coords.cols() == Eigen::Index(joints) * frames,
            "SkeletonSequence: expected " + std::to_string(joints * frames) + " points, got " +
                std::to_string(coords.cols()));
  }

  bool operator==(const SkeletonSequence &o) const {
    return joints == o.joints && frames == o.frames && coords == o.coords && label == o.label &&
           split == o.split;
  }
};

using Topology = std::vector<std::pair<int, int>>;

/** @brief Bones joining joint i to joint i+1. */
inline Topology chain_topology(int joints) {
  Topology t;
  for (int j = 0; j + 1 < joints; ++j) t.emplace_back(j, j + 1);
  return t;
}

struct SkeletonGraph {
  Matrix descriptors; ///< s x m, column j = descriptor of node j
  Matrix adjacency;   ///< m x m, row-normalised (A_raw + I)
  std::optional<int> label;
  int chunk_count = kDefaultChunks;

  Eigen::Index nodes() const { return descriptors.cols(); }
  Eigen::Index signal_dim() const { return descriptors.rows(); }
};

/** @brief Mean 3D position of `joint` over each of `chunks` equal time intervals, concatenated. */
inline Vector chunk_descriptor(const SkeletonSequence &seq, int joint, int chunks = kDefaultChunks) {
  seq.validate();
  require(chunks >= 1, "chunk_descriptor: chunk count must be positive");
  require(joint >= 0 && joint < seq.joints, "chunk_descriptor: joint index out of range");
  require(seq.frames >= chunks, "chunk_descriptor: need at least as many frames (" +
                                    std::to_string(seq.frames) + ") as chunks (" + std::to_string(chunks) + ")");
  Vector out = Vector::Zero(3 * chunks);
  std::vector<int> count(chunks, 0);
  for (int t = 0; t < seq.frames; ++t) {
    const int c = static_cast<int>((static_cast<long long>(t) * chunks) / seq.frames);
    out.segment<3>(3 * c) += seq.point(t, joint);
    ++count[c];
  }
  for (int c = 0; c < chunks; ++c) {
    if (count[c] == 0) throw Error("chunk_descriptor: chunk " + std::to_string(c) + " is empty");
    out.segment<3>(3 * c) /= count[c];
  }
  return out;
}

/** @brief Symmetric 0/1 bone matrix plus identity self-loops. */
inline Matrix raw_adjacency(const Topology &topology, int joints) {
  Matrix a = Matrix::Identity(joints, joints);
  for (auto [i, j] : topology) {
    require(i >= 0 && i < joints && j >= 0 && j < joints,
            "topology edge (" + std::to_string(i) + "," + std::to_string(j) + ") references a missing joint");
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

inline SkeletonGraph build_graph(const SkeletonSequence &seq, const Topology &topology,
                                 int chunks = kDefaultChunks) {
  seq.validate();
  SkeletonGraph g;
  g.chunk_count = chunks;
  g.label = seq.label;
  g.descriptors.resize(3 * chunks, seq.joints);
  for (int j = 0; j < seq.joints; ++j) g.descriptors.col(j) = chunk_descriptor(seq, j, chunks);
  Matrix a = raw_adjacency(topology, seq.joints);
  const Vector deg = a.rowwise().sum();
  for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) /= deg(i);
  g.adjacency = std::move(a);
  return g;
}

/** @brief Column-major concatenation of the descriptors, zero-padded to `target_dim`. */
inline Vector flatten(const SkeletonGraph &g, Eigen::Index target_dim) {
  const Eigen::Index used = g.descriptors.size();
  if (used > target_dim)
    throw ContractError("flatten: graph needs " + std::to_string(used) + " entries but target dimension is " +
                        std::to_string(target_dim));
  Vector v = Vector::Zero(target_dim);
  v.head(used) = Eigen::Map<const Vector>(g.descriptors.data(), used);
  return v;
}

inline Matrix unflatten(const Vector &v, Eigen::Index nodes, Eigen::Index signal_dim) {
  const Eigen::Index used = nodes * signal_dim;
  if (used > v.size())
    throw ContractError("unflatten: need " + std::to_string(used) + " entries, vector has " +
                        std::to_string(v.size()));
  return Eigen::Map<const Matrix>(v.data(), signal_dim, nodes);
}

/**
 * @brief A labelled collection of graphs plus their flattened features.
 *
 * Labels are hidden ground truth; only the oracle should read them for
 * training samples.
 */
struct Pool {
  std::vector<SkeletonSequence> sequences;
  std::vector<SkeletonGraph> graphs;
  Matrix flat; ///< p x n
  std::vector<int> labels;
  std::vector<Split> splits;
  int num_classes = 0;

  Eigen::Index size() const { return flat.cols(); }
  Eigen::Index dim() const { return flat.rows(); }

  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> train_indices() const { return indices(Split::train); }
  std::vector<int> test_indices() const { return indices(Split::test); }

  bool operator==(const Pool &o) const {
    return sequences == o.sequences && flat == o.flat && labels == o.labels && splits == o.splits &&
           num_classes == o.num_classes;
  }
};

struct PoolOptions {
  int chunks = kDefaultChunks;
  std::optional<Topology> topology; ///< default: chain over the sequence's joints
  Eigen::Index target_dim = 0;      ///< 0: max m * s over the pool
};

inline Pool make_pool(std::vector<SkeletonSequence> seqs, const PoolOptions &opt = {}) {
  require(!seqs.empty(), "make_pool: no sequences");
  Pool pool;
  Eigen::Index dim = opt.target_dim;
  for (const auto &s : seqs) dim = std::max<Eigen::Index>(dim, Eigen::Index(s.joints) * 3 * opt.chunks);
  if (opt.target_dim > 0 && dim > opt.target_dim)
    throw ContractError("make_pool: target dimension " + std::to_string(opt.target_dim) + " is too small");
  pool.flat.resize(dim, Eigen::Index(seqs.size()));
  int max_label = -1;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto &s = seqs[i];
    const Topology topo = opt.topology ? *opt.topology : chain_topology(s.joints);
    pool.graphs.push_back(build_graph(s, topo, opt.chunks));
    pool.flat.col(Eigen::Index(i)) = flatten(pool.graphs.back(), dim);
    const int lab = s.label.value_or(-1);
    pool.labels.push_back(lab);
    max_label = std::max(max_label, lab);
    pool.splits.push_back(s.split.value_or(Split::train));
  }
  pool.num_classes = max_label + 1;
  pool.sequences = std::move(seqs);
  return pool;
}

struct SynthSpec {
  int classes = 8;
  int per_class = 30;
  int joints = 6;
  int frames = 16;
  double noise = 0.5;
  int test_per_class = 0; ///< extra samples per class marked as test split
  double step = 1.0;      ///< std of the prototype random-walk steps
};

/**
 * @brief Class prototypes are per-joint random walks (cumulative Gaussian
 * steps of scale `step`); samples add i.i.d. Gaussian jitter of scale `noise`.
 * Train samples come first (class-major), then test samples.
 */
inline std::vector<SkeletonSequence> synth_sequences(const SynthSpec &spec, Rng &rng) {
  require(spec.classes >= 1 && spec.per_class >= 1 && spec.joints >= 1 && spec.frames >= 1,
          "synth: all counts must be >= 1");
  require(spec.noise >= 0.0 && spec.test_per_class >= 0, "synth: noise must be >= 0");
  const Eigen::Index pts = Eigen::Index(spec.joints) * spec.frames;
  std::vector<Eigen::Matrix3Xd> protos;
  for (int c = 0; c < spec.classes; ++c) {
    Eigen::Matrix3Xd p(3, pts);
    for (int j = 0; j < spec.joints; ++j) {
      Eigen::Vector3d pos(rng.normal(), rng.normal(), rng.normal());
      for (int t = 0; t < spec.frames; ++t) {
        pos += spec.step * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        p.col(Eigen::Index(t) * spec.joints + j) = pos;
      }
    }
    protos.push_back(std::move(p));
  }
  std::vector<SkeletonSequence> out;
  auto emit = [&](int c, Split split) {
    SkeletonSequence s;
    s.joints = spec.joints;
    s.frames = spec.frames;
    s.label = c;
    s.split = split;
    s.coords = protos[c];
    if (spec.noise > 0.0)
      for (Eigen::Index k = 0; k < pts; ++k)
        for (int a = 0; a < 3; ++a) s.coords(a, k) += spec.noise * rng.normal();
    out.push_back(std::move(s));
  };
  for (int c = 0; c < spec.classes; ++c)
    for (int i = 0; i < spec.per_class; ++i) emit(c, Split::train);
  for (int c = 0; c < spec.classes; ++c)
    for (int i = 0; i < spec.test_per_class; ++i) emit(c, Split::test);
  return out;
}

inline Pool synth_pool(const SynthSpec &spec, Rng &rng, const PoolOptions &opt = {}) {
  return make_pool(synth_sequences(spec, rng), opt);
}

// ---------------------------------------------------------------------------
// Canonical JSON-lines format: one record per line,
//   {"label":int, "joints":J, "frames":T, "coords":[[x,y,z],...], "split":"train"|"test"}
// with coords ordered frame-major (all joints of frame 0, then frame 1, ...).

enum class DatasetFormat { jsonl };

inline nlohmann::json to_json_record(const SkeletonSequence &s) {
  nlohmann::json rec;
  if (s.label) rec["label"] = *s.label;
  rec["joints"] = s.joints;
  rec["frames"] = s.frames;
  nlohmann::json coords = nlohmann::json::array();
  for (Eigen::Index k = 0; k < s.coords.cols(); ++k)
    coords.push_back({s.coords(0, k), s.coords(1, k), s.coords(2, k)});
  rec["coords"] = std::move(coords);
  if (s.split) rec["split"] = to_string(*s.split);
  return rec;
}

inline SkeletonSequence parse_record(const std::string &line, std::size_t line_no) {
  auto fail = [&](const std::string &why) -> FormatError {
    return FormatError("record at line " + std::to_string(line_no) + ": " + why, line_no);
  };
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error &e) {
    throw fail(std::string("invalid JSON (") + e.what() + ")");
  }
  if (!rec.is_object()) throw fail("not a JSON object");
  SkeletonSequence s;
  try {
    s.joints = rec.at("joints").get<int>();
    s.frames = rec.at("frames").get<int>();
    if (rec.contains("label") && !rec["label"].is_null()) s.label = rec["label"].get<int>();
    if (rec.contains("split")) {
      const auto sp = rec["split"].get<std::string>();
      if (sp == "train") s.split = Split::train;
      else if (sp == "test") s.split = Split::test;
      else throw fail("split must be \"train\" or \"test\", got \"" + sp + "\"");
    }
    if (s.joints < 1 || s.frames < 1) throw fail("joints and frames must be >= 1");
    const auto &coords = rec.at("coords");
    if (!coords.is_array()) throw fail("coords must be an array");
    const std::size_t expected = std::size_t(s.joints) * std::size_t(s.frames);
    if (coords.size() != expected) {
      const std::size_t short_frame = coords.size() / std::size_t(s.joints);
      throw fail("expected " + std::to_string(expected) + " points (" + std::to_string(s.frames) + " frames x " +
                 std::to_string(s.joints) + " joints), got " + std::to_string(coords.size()) +
                 "; frame " + std::to_string(short_frame) + " is missing joints");
    }
    s.coords.resize(3, Eigen::Index(expected));
    for (std::size_t k = 0; k < expected; ++k) {
      const auto &pt = coords[k];
      if (!pt.is_array() || pt.size() != 3) throw fail("point " + std::to_string(k) + " is not [x,y,z]");
      for (int a = 0; a < 3; ++a) s.coords(a, Eigen::Index(k)) = pt[a].get<double>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw fail(e.what());
  }
  return s;
}

inline std::vector<SkeletonSequence> read_sequences(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path);
  std::vector<SkeletonSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, line_no));
  }
  if (out.empty()) throw FormatError("dataset file " + path + " has no records");
  return out;
}

inline Pool load_dataset(const std::string &path, DatasetFormat format = DatasetFormat::jsonl,
                         const PoolOptions &opt = {}) {
  require(format == DatasetFormat::jsonl, "load_dataset: unsupported format");
  return make_pool(read_sequences(path), opt);
}

inline void save_dataset(const std::string &path, const std::vector<SkeletonSequence> &seqs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path);
  for (const auto &s : seqs) out << to_json_record(s).dump() << '\n';
  if (!out) throw IoError("write failed for " + path);
}

} // namespace lfal
