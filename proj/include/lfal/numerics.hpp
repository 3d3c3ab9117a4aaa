#pragma once
/**
 * @brief Dense kernels, seeded randomness and a finite-difference oracle.
 *
 * All reals are double. Matrices are Eigen column-major; a "pool" matrix
 * stores one sample per column.
 */
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/** @brief Base of every error thrown by the library. */
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/** @brief Violated precondition (dimension mismatch, bad index, ...). */
struct ContractError : Error {
  using Error::Error;
};
/** @brief A column with zero mass cannot be made stochastic. */
struct DegenerateColumnError : Error {
  using Error::Error;
};
/** @brief A file could not be opened, read or written. */
struct IoError : Error {
  using Error::Error;
};
/** @brief Non-finite value encountered; `where` is an iteration/epoch index or -1. */
struct NumericError : Error {
  NumericError(const std::string &what, long where = -1) : Error(what), index(where) {}
  long index;
};

inline void require(bool cond, const std::string &msg) {
  if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Matrix &m) { return m.allFinite(); }

/**
 * @brief Deterministic random stream.
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the C++
 * standard. Distributions are implemented here rather than taken from
 * <random> because the standard leaves their algorithms to the vendor:
 *   uniform()  = top 53 bits of one draw scaled to [0,1)
 *   normal()   = Box-Muller on two uniforms (pairs cached)
 *   below(n)   = rejection sampling on 64-bit draws
 * Identical seeds give identical sequences on every conforming platform.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /** @brief Uniform integer in [0, n). */
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * normal();
    return m;
  }

  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo = 0.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  /** @brief Independent child stream; children of equal (seed, id) are equal. */
  Rng derive(std::uint64_t id) const { return Rng(mix(seed_, id)); }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
  }

private:
  static std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/**
 * @brief Squared Euclidean distances between the columns of `a` (p x na) and
 * `b` (p x nb), via the Gram expansion |a|^2 + |b|^2 - 2 a.b clamped at 0.
 */
inline Matrix pairwise_sq_dists(const Matrix &a, const Matrix &b) {
  require(a.rows() == b.rows(), "pairwise_sq_dists: row counts differ (" +
                                    std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
  const Vector an = a.colwise().squaredNorm().transpose();
  const Vector bn = b.colwise().squaredNorm().transpose();
  Matrix d = -2.0 * (a.transpose() * b);
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

/**
 * @brief Scale every column to unit sum: out(:,k) = m(:,k) / (sum_k + ridge).
 */
inline Matrix column_normalize(const Matrix &m, double ridge = 0.0) {
  require(ridge >= 0.0, "column_normalize: ridge must be nonnegative");
  require((m.array() >= 0.0).all(), "column_normalize: entries must be nonnegative");
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    const double denom = m.col(k).sum() + ridge;
    if (!(denom > 0.0))
      throw DegenerateColumnError("column_normalize: column " + std::to_string(k) + " has zero mass");
    out.col(k) = m.col(k) / denom;
  }
  return out;
}

using ScalarField = std::function<double(const Matrix &)>;

/** @brief Central-difference gradient of `f` at `at`. */
inline Matrix finite_diff_grad(const ScalarField &f, const Matrix &at, double step) {
  require(step > 0.0, "finite_diff_grad: step must be positive");
  Matrix grad(at.rows(), at.cols());
  Matrix probe = at;
  for (Eigen::Index j = 0; j < at.cols(); ++j) {
    for (Eigen::Index i = 0; i < at.rows(); ++i) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double fp = f(probe);
      probe(i, j) = orig - step;
      const double fm = f(probe);
      probe(i, j) = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_grad: non-finite function value");
      grad(i, j) = (fp - fm) / (2.0 * step);
    }
  }
  return grad;
}

/** @brief Max-abs relative difference, scaled by max(1, |reference|_inf). */
inline double rel_diff(const Matrix &a, const Matrix &reference) {
  require(a.rows() == reference.rows() && a.cols() == reference.cols(), "rel_diff: shape mismatch");
  if (a.size() == 0) return 0.0;
  const double scale = std::max(1.0, reference.cwiseAbs().maxCoeff());
  return (a - reference).cwiseAbs().maxCoeff() / scale;
}

} // namespace lfal
