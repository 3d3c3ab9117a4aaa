#pragma once
/**
 * @brief Invertible, bi-Lipschitz dense stack used as the latent mapper.
 *
 * Layer l (l = 2..L) computes phi_l = g(W_l^T phi_{l-1}) with W_l square and g
 * a leaky ReLU of slopes u (positive side) and l (negative side), 0 < l < u.
 * With orthonormal weights the map is invertible,
 * phi_{l-1} = W_l g^{-1}(phi_l), and
 *
 *   |f(x1) - f(x2)|           <= u^(L-1)     |x1 - x2|
 *   |f^-1(y1) - f^-1(y2)|     <= (1/l)^(L-1) |y1 - y2|.
 *
 * There are no biases.
 */
#include "lfal/numerics.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace lfal {

/** @brief Orthonormality residual accepted right after polar projection. */
inline constexpr double kOrthoTolProjected = 1e-8;
/** @brief Residual accepted after penalty-only training (no projection). */
inline constexpr double kOrthoTolTrained = 1e-2;
inline constexpr double kCertSlack = 1e-9;

/** @brief Weights are not orthonormal enough to invert by transposition. */
struct CertificationError : Error {
  using Error::Error;
};

struct ActivationSpec {
  double u = 0.99; ///< slope for x >= 0
  double l = 0.95; ///< slope for x < 0

  void validate() const {
    require(l > 0.0 && l < u, "ActivationSpec: need 0 < l < u (got l=" + std::to_string(l) +
                                  ", u=" + std::to_string(u) + ")");
  }
  double apply(double x) const { return x >= 0.0 ? u * x : l * x; }
  double derivative(double x) const { return x >= 0.0 ? u : l; }
  double invert(double y) const { return y >= 0.0 ? y / u : y / l; }

  template <typename Derived>
  auto apply(const Eigen::MatrixBase<Derived> &x) const {
    return x.unaryExpr([this](double v) { return apply(v); });
  }
  template <typename Derived>
  auto invert(const Eigen::MatrixBase<Derived> &y) const {
    return y.unaryExpr([this](double v) { return invert(v); });
  }
};

struct LayerStack {
  std::vector<Matrix> weights; ///< W_2..W_L, each d x d
  ActivationSpec act;
  double lambda = 0.0;

  int depth() const { return static_cast<int>(weights.size()) + 1; }
  Eigen::Index dim() const { return weights.empty() ? 0 : weights.front().rows(); }

  void validate() const {
    act.validate();
    require(!weights.empty(), "LayerStack: needs at least one weight layer (L >= 2)");
    const auto d = weights.front().rows();
    for (const auto &w : weights)
      require(w.rows() == d && w.cols() == d, "LayerStack: weights must all be square of equal size");
  }
};

inline double ortho_residual(const Matrix &w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

inline double max_ortho_residual(const LayerStack &net) {
  double r = 0.0;
  for (const auto &w : net.weights) r = std::max(r, ortho_residual(w));
  return r;
}

/** @brief Haar-style random orthonormal matrix (QR of a Gaussian, signs fixed by R's diagonal). */
inline Matrix random_orthonormal(Eigen::Index d, Rng &rng) {
  const Matrix g = rng.normal_matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < d; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

inline LayerStack make_stack(Eigen::Index dim, int depth, ActivationSpec act, double lambda, Rng &rng) {
  require(depth >= 2, "make_stack: depth must be >= 2");
  require(dim >= 1, "make_stack: dim must be >= 1");
  act.validate();
  LayerStack net;
  net.act = act;
  net.lambda = lambda;
  for (int i = 1; i < depth; ++i) net.weights.push_back(random_orthonormal(dim, rng));
  return net;
}

/** @brief Nearest orthonormal matrix in Frobenius norm (polar factor U V^T). */
inline Matrix project_orthonormal(const Matrix &w) {
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

inline LayerStack project(LayerStack net) {
  for (auto &w : net.weights) w = project_orthonormal(w);
  return net;
}

struct ForwardTrace {
  std::vector<Vector> inputs; ///< phi_{l-1} entering each weight layer
  std::vector<Vector> pre;    ///< W_l^T phi_{l-1}
};

struct ForwardResult {
  Vector y;
  ForwardTrace trace;
};

inline ForwardResult forward(const LayerStack &net, const Vector &x) {
  require(x.size() == net.dim(), "forward: input has wrong dimension");
  ForwardResult r;
  Vector phi = x;
  for (const auto &w : net.weights) {
    r.trace.inputs.push_back(phi);
    r.trace.pre.push_back(w.transpose() * phi);
    phi = net.act.apply(r.trace.pre.back());
  }
  r.y = std::move(phi);
  return r;
}

/** @brief Column-wise forward pass without a trace. */
inline Matrix apply_stack(const LayerStack &net, const Matrix &x) {
  require(x.rows() == net.dim(), "apply_stack: input has wrong dimension");
  Matrix phi = x;
  for (const auto &w : net.weights) phi = net.act.apply(w.transpose() * phi);
  return phi;
}

/**
 * @brief Column-wise inverse by transposition; refuses (CertificationError)
 * when some W_l^T W_l deviates from I by more than `ortho_tol`.
 */
inline Matrix inverse_columns(const LayerStack &net, const Matrix &y, double ortho_tol = kOrthoTolProjected) {
  require(y.rows() == net.dim(), "inverse: input has wrong dimension");
  const double res = max_ortho_residual(net);
  if (res > ortho_tol)
    throw CertificationError("inverse: orthonormality residual " + std::to_string(res) + " exceeds " +
                             std::to_string(ortho_tol) + "; re-project the weights first");
  Matrix phi = y;
  for (auto it = net.weights.rbegin(); it != net.weights.rend(); ++it) phi = (*it) * net.act.invert(phi);
  return phi;
}

inline Vector inverse(const LayerStack &net, const Vector &y, double ortho_tol = kOrthoTolProjected) {
  return inverse_columns(net, y, ortho_tol);
}

/** @brief Exact inverse through LU solves of W_l^T; valid for any nonsingular weights. */
inline Matrix exact_inverse_columns(const LayerStack &net, const Matrix &y) {
  Matrix phi = y;
  for (auto it = net.weights.rbegin(); it != net.weights.rend(); ++it)
    phi = it->transpose().partialPivLu().solve(Matrix(net.act.invert(phi)));
  return phi;
}

struct OrthoPenalty {
  double value = 0.0;
  std::vector<Matrix> grads; ///< d/dW_l of sum_l |W_l^T W_l - I|_F
};

/** @brief Sum of Frobenius norms |W^T W - I|_F; gradient 2 W E / |E|_F, defined as 0 at E = 0. */
inline OrthoPenalty ortho_penalty(const std::vector<Matrix> &weights) {
  OrthoPenalty p;
  for (const auto &w : weights) {
    const Matrix e = w.transpose() * w - Matrix::Identity(w.cols(), w.cols());
    const double norm = e.norm();
    p.value += norm;
    p.grads.push_back(norm > 0.0 ? Matrix(2.0 * w * e / norm) : Matrix::Zero(w.rows(), w.cols()));
  }
  return p;
}

inline OrthoPenalty ortho_penalty(const LayerStack &net) { return ortho_penalty(net.weights); }

struct LipschitzCertificate {
  double K_bound = 0.0; ///< u^(L-1)
  double M_bound = 0.0; ///< (1/l)^(L-1)
  double K_emp = 0.0;
  double M_emp = 0.0;
  int samples = 0;
  double ortho_residual = 0.0;
  double ortho_tol = kOrthoTolProjected;

  bool forward_ok() const { return K_emp <= K_bound + kCertSlack; }
  bool inverse_ok() const { return M_emp <= M_bound + kCertSlack; }
  bool orthonormal() const { return ortho_residual <= ortho_tol; }
  bool passed() const { return forward_ok() && inverse_ok() && orthonormal(); }
};

inline double forward_bound(const ActivationSpec &a, int depth) { return std::pow(a.u, depth - 1); }
inline double inverse_bound(const ActivationSpec &a, int depth) { return std::pow(1.0 / a.l, depth - 1); }

/**
 * @brief Closed-form bounds plus the largest expansion ratios over `samples`
 * random pairs. Pairs are drawn as x1 ~ N(0, I) and x2 = x1 + r * z with r
 * log-uniform in [1e-3, 10], so both local and global ratios are probed.
 * The inverse side uses exact LU solves, so broken weights are still measured.
 */
inline LipschitzCertificate certify(const LayerStack &net, Rng &rng, int samples,
                                    double ortho_tol = kOrthoTolProjected) {
  net.validate();
  require(samples >= 2, "certify: need at least 2 samples");
  LipschitzCertificate c;
  c.K_bound = forward_bound(net.act, net.depth());
  c.M_bound = inverse_bound(net.act, net.depth());
  c.samples = samples;
  c.ortho_tol = ortho_tol;
  c.ortho_residual = max_ortho_residual(net);
  const auto d = net.dim();
  const int pairs = samples;
  constexpr int kBatch = 512;
  for (int done = 0; done < pairs; done += kBatch) {
    const int b = std::min(kBatch, pairs - done);
    Matrix x1 = rng.normal_matrix(d, b);
    Matrix x2(d, b);
    for (int j = 0; j < b; ++j) {
      const double r = std::pow(10.0, rng.uniform(-3.0, 1.0));
      x2.col(j) = x1.col(j) + r * rng.normal_matrix(d, 1);
    }
    const Matrix f1 = apply_stack(net, x1), f2 = apply_stack(net, x2);
    const Matrix g1 = exact_inverse_columns(net, x1), g2 = exact_inverse_columns(net, x2);
    for (int j = 0; j < b; ++j) {
      const double in = (x1.col(j) - x2.col(j)).norm();
      if (in == 0.0) continue;
      c.K_emp = std::max(c.K_emp, (f1.col(j) - f2.col(j)).norm() / in);
      c.M_emp = std::max(c.M_emp, (g1.col(j) - g2.col(j)).norm() / in);
    }
  }
  return c;
}

/** @brief Map pool columns into the latent space. */
inline Matrix latent_map(const LayerStack &net, const Matrix &flat) { return apply_stack(net, flat); }

/** @brief Map latent exemplars back; refuses unless the certificate passed. */
inline Matrix latent_unmap(const LayerStack &net, const Matrix &latent, const LipschitzCertificate &cert) {
  if (!cert.passed())
    throw CertificationError("latent_unmap: network is not certified (K_emp=" + std::to_string(cert.K_emp) +
                             ", M_emp=" + std::to_string(cert.M_emp) +
                             ", ortho residual=" + std::to_string(cert.ortho_residual) + ")");
  return inverse_columns(net, latent, cert.ortho_tol);
}

// ---------------------------------------------------------------------------
// Classifier over the stack: scores = head * f(x). Reading class scores off the
// latent layer couples the latent geometry with the decision function.

struct LatentClassifier {
  LayerStack stack;
  Matrix head; ///< classes x d

  int classes() const { return static_cast<int>(head.rows()); }

  Vector scores(const Vector &x) const { return head * forward(stack, x).y; }
  Matrix scores_columns(const Matrix &x) const { return head * apply_stack(stack, x); }

  std::vector<Matrix *> parameters() {
    std::vector<Matrix *> ps;
    for (auto &w : stack.weights) ps.push_back(&w);
    ps.push_back(&head);
    return ps;
  }

  /** @brief Adds the cross-entropy gradient of one sample into `grads`; returns its CE. */
  double accumulate(const Vector &x, int label, std::vector<Matrix> &grads) const;

  /** @brief Adds `weight` times the orthonormality penalty gradient; returns the penalty. */
  double regularize(double weight, std::vector<Matrix> &grads) const {
    const OrthoPenalty p = ortho_penalty(stack);
    if (weight != 0.0)
      for (std::size_t i = 0; i < p.grads.size(); ++i) grads[i] += weight * p.grads[i];
    return p.value;
  }
};

inline LatentClassifier make_latent_classifier(Eigen::Index dim, int depth, int classes, ActivationSpec act,
                                               double lambda, Rng &rng) {
  require(classes >= 1, "make_latent_classifier: need at least one class");
  LatentClassifier m;
  m.stack = make_stack(dim, depth, act, lambda, rng);
  m.head = rng.normal_matrix(classes, dim, 1.0 / std::sqrt(double(dim)));
  return m;
}

/** @brief Softmax cross-entropy of `scores` against `label`; writes dCE/dscores into `dz`. */
inline double softmax_ce(const Vector &scores, int label, Vector &dz) {
  require(label >= 0 && label < scores.size(), "softmax_ce: label out of range");
  const double mx = scores.maxCoeff();
  dz = (scores.array() - mx).exp().matrix();
  const double z = dz.sum();
  dz /= z;
  const double ce = -(scores(label) - mx - std::log(z));
  dz(label) -= 1.0;
  return ce;
}

inline double LatentClassifier::accumulate(const Vector &x, int label, std::vector<Matrix> &grads) const {
  const ForwardResult fr = forward(stack, x);
  Vector dz;
  const double ce = softmax_ce(head * fr.y, label, dz);
  grads.back() += dz * fr.y.transpose();
  Vector dphi = head.transpose() * dz;
  for (std::size_t k = stack.weights.size(); k-- > 0;) {
    const Vector &pre = fr.trace.pre[k];
    Vector dpre(pre.size());
    for (Eigen::Index i = 0; i < pre.size(); ++i) dpre(i) = dphi(i) * stack.act.derivative(pre(i));
    grads[k] += fr.trace.inputs[k] * dpre.transpose();
    dphi = stack.weights[k] * dpre;
  }
  return ce;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON, weights stored row-major. Doubles are written in
// shortest round-trip form, so a reload reproduces forward() bitwise.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix &m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json &j) {
  require(j.is_array(), "matrix_from_json: expected an array of rows");
  const auto rows = Eigen::Index(j.size());
  const auto cols = rows ? Eigen::Index(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(Eigen::Index(j[i].size()) == cols, "matrix_from_json: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline nlohmann::json checkpoint_json(const LatentClassifier &m, std::uint64_t seed) {
  nlohmann::json j;
  j["format"] = "lfal.latent_classifier";
  j["version"] = kCheckpointVersion;
  j["dim"] = m.stack.dim();
  j["depth"] = m.stack.depth();
  j["u"] = m.stack.act.u;
  j["l"] = m.stack.act.l;
  j["lambda"] = m.stack.lambda;
  j["seed"] = seed;
  j["classes"] = m.classes();
  j["weights"] = nlohmann::json::array();
  for (const auto &w : m.stack.weights) j["weights"].push_back(matrix_to_json(w));
  j["head"] = matrix_to_json(m.head);
  return j;
}

inline LatentClassifier classifier_from_json(const nlohmann::json &j) {
  try {
    if (j.at("format") != "lfal.latent_classifier") throw Error("checkpoint: unknown format");
    if (j.at("version").get<int>() != kCheckpointVersion) throw Error("checkpoint: unsupported version");
    LatentClassifier m;
    m.stack.act.u = j.at("u").get<double>();
    m.stack.act.l = j.at("l").get<double>();
    m.stack.lambda = j.at("lambda").get<double>();
    for (const auto &w : j.at("weights")) m.stack.weights.push_back(matrix_from_json(w));
    m.head = matrix_from_json(j.at("head"));
    m.stack.validate();
    require(m.stack.depth() == j.at("depth").get<int>(), "checkpoint: depth does not match weights");
    require(m.stack.dim() == j.at("dim").get<Eigen::Index>(), "checkpoint: dim does not match weights");
    require(m.head.cols() == m.stack.dim(), "checkpoint: head does not match dim");
    return m;
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string &path, const LatentClassifier &m, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << checkpoint_json(m, seed).dump() << '\n';
}

inline LatentClassifier load_checkpoint(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw Error("checkpoint " + path + ": " + e.what());
  }
  return classifier_from_json(j);
}

} // namespace lfal
