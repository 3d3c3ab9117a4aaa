#pragma once
/**
 * @brief Exemplar design by fixed-point iteration.
 *
 * Given a pool X (p x n) and previously designed exemplars H (p x N), find K
 * exemplars V (p x K) and column-stochastic memberships mu (n x K) that
 * minimise
 *
 *   sum_ik mu_ik d(x_i, V_k)                       representativity
 *   + alpha sum_kk' exp(-|V_k - H_k'|^2 / sigma)   diversity
 *   + beta tr(V^T V)                               shrinkage
 *   + gamma sum_ik mu_ik log mu_ik                 entropy
 *
 * with d the squared Euclidean distance. One iteration refreshes gamma,
 * recomputes mu as a column-wise softmin of d / gamma, then recomputes V from
 * the fresh mu.
 *
 * The adaptive gamma is the mean of -log mu over all n K entries, taken from
 * the memberships of the previous iteration (the rule would be circular on the
 * fresh ones). Log-memberships are carried exactly, so entries that underflow
 * in mu still contribute their true magnitude.
 *
 * Columns of mu are independent distributions, so exemplars do not compete
 * for pool points: each one performs a kernel mean shift with bandwidth gamma.
 * The start spreads exemplars by D^2 sampling so they settle on different
 * modes.
 */
#include "lfal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace lfal {

struct Hypers {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 1.0;
  double sigma = 1.0;
};

enum class GammaMode { adaptive, fixed };

struct DisplayProblem {
  Matrix X; ///< p x n pool
  Matrix H; ///< p x N history, N may be 0
  int K = 1;
  Hypers hypers;
  GammaMode gamma_mode = GammaMode::adaptive;

  Eigen::Index n() const { return X.cols(); }
  Eigen::Index p() const { return X.rows(); }
  Eigen::Index N() const { return H.cols(); }

  void validate() const {
    require(K >= 1, "DisplayProblem: K must be >= 1");
    require(X.cols() >= 1, "DisplayProblem: empty pool");
    require(H.cols() == 0 || H.rows() == X.rows(), "DisplayProblem: H and X differ in dimension");
    require(X.allFinite(), "DisplayProblem: pool has non-finite entries");
    require(hypers.alpha >= 0 && hypers.beta >= 0 && hypers.sigma >= 0,
            "DisplayProblem: alpha, beta, sigma must be nonnegative");
    require(gamma_mode == GammaMode::adaptive || hypers.gamma > 0, "DisplayProblem: fixed gamma must be positive");
  }
};

struct DisplayState {
  Matrix V;      ///< p x K
  Matrix mu;     ///< n x K
  Matrix log_mu; ///< n x K, exact log of mu
  int iteration = 0;
  double gamma = 1.0; ///< gamma used by the last mu update
  double objective = 0.0;
  bool converged = false;
  double last_change = 0.0;
};

/** @brief Adaptive gamma from log-memberships (n x K): mean of -log mu, or 1 when that is not positive. */
inline double adaptive_gamma(const Matrix &log_mu) {
  if (log_mu.size() == 0) return 1.0;
  const double m = -log_mu.mean();
  return m > 0.0 && std::isfinite(m) ? m : 1.0;
}

/**
 * @brief Alpha and beta balance the terms; sigma = sigma_ratio * alpha; gamma
 * follows the adaptive rule on `log_mu` (n x K) when given, otherwise 1.
 */
inline Hypers default_hypers(Eigen::Index n, Eigen::Index p, int K, Eigen::Index N,
                             const Matrix *log_mu = nullptr, double sigma_ratio = 2.0) {
  require(K >= 1 && p >= 1, "default_hypers: K and p must be >= 1");
  (void)n;
  Hypers h;
  h.alpha = N > 0 ? 1.0 / (double(K) * double(N)) : 0.0;
  h.beta = 1.0 / (double(K) * double(p));
  h.sigma = sigma_ratio * h.alpha;
  h.gamma = 1.0;
  if (log_mu && log_mu->size() > 0) h.gamma = adaptive_gamma(*log_mu);
  return h;
}

/** @brief S (N x K) = exp(-|H_k' - V_k|^2 / sigma). */
inline Matrix similarity_S(const Matrix &V, const Matrix &H, double sigma) {
  require(sigma > 0.0, "similarity_S: sigma must be positive");
  return (-pairwise_sq_dists(H, V) / sigma).array().exp().matrix();
}

/** @brief Log of the column-wise softmin of d(X, V) / gamma, via a shifted log-sum-exp. */
inline Matrix log_membership(const Matrix &X, const Matrix &V, double gamma) {
  require(gamma > 0.0, "log_membership: gamma must be positive");
  Matrix logits = -pairwise_sq_dists(X, V) / gamma;
  for (Eigen::Index k = 0; k < logits.cols(); ++k) {
    const double shift = logits.col(k).maxCoeff();
    const double lse = shift + std::log((logits.col(k).array() - shift).exp().sum());
    logits.col(k).array() -= lse;
  }
  return logits;
}

/** @brief Column-wise softmin of d(X, V) / gamma, evaluated with a per-column max shift. */
inline Matrix update_mu(const Matrix &X, const Matrix &V, double gamma) {
  require(gamma > 0.0, "update_mu: gamma must be positive");
  Matrix logits = -pairwise_sq_dists(X, V) / gamma;
  for (Eigen::Index k = 0; k < logits.cols(); ++k) {
    const double shift = logits.col(k).maxCoeff();
    logits.col(k) = (logits.col(k).array() - shift).exp().matrix();
  }
  return column_normalize(logits);
}

/**
 * @brief V_k = [X mu_k + (alpha / sigma)(V_k sum_k' S_k'k - (H S)_k)] / (sum_i mu_ik + beta).
 *
 * This is the stationarity condition of the objective in V with S frozen at
 * the current V; the diversity force pushes V_k away from nearby history.
 */
inline Matrix update_V(const Matrix &X, const Matrix &mu, const Matrix &V, const Matrix &H, const Hypers &h) {
  require(mu.rows() == X.cols() && mu.cols() == V.cols(), "update_V: membership shape mismatch");
  require(h.beta >= 0.0, "update_V: beta must be nonnegative");
  Matrix vhat = X * mu;
  if (H.cols() > 0 && h.alpha > 0.0) {
    const Matrix S = similarity_S(V, H, h.sigma);
    const double c = h.alpha / h.sigma;
    vhat += c * (V * S.colwise().sum().asDiagonal() - H * S);
  }
  const Vector denom = mu.colwise().sum().transpose().array() + h.beta;
  for (Eigen::Index k = 0; k < vhat.cols(); ++k) {
    require(denom(k) > 0.0, "update_V: zero membership mass in column " + std::to_string(k));
    vhat.col(k) /= denom(k);
  }
  return vhat;
}

inline double entropy_term(const Matrix &mu) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < mu.cols(); ++j)
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
      const double m = mu(i, j);
      if (m > 0.0) acc += m * std::log(m);
    }
  return acc;
}

inline double objective(const Matrix &X, const Matrix &H, const Matrix &V, const Matrix &mu, const Hypers &h) {
  require(mu.rows() == X.cols() && mu.cols() == V.cols(), "objective: membership shape mismatch");
  double value = (mu.array() * pairwise_sq_dists(X, V).array()).sum();
  if (H.cols() > 0 && h.alpha != 0.0) {
    if (!(h.sigma > 0.0)) throw ContractError("objective: sigma must be positive when history is present");
    value += h.alpha * similarity_S(V, H, h.sigma).sum();
  }
  value += h.beta * V.squaredNorm();
  value += h.gamma * entropy_term(mu);
  return value;
}

inline double objective(const DisplayProblem &prob, const DisplayState &state) {
  Hypers h = prob.hypers;
  h.gamma = state.gamma;
  return objective(prob.X, prob.H, state.V, state.mu, h);
}

/**
 * @brief Random start: V from pool columns drawn by D^2 sampling (the first
 * uniformly, each next one with probability proportional to its squared
 * distance to the nearest column already drawn), mu random column-stochastic.
 */
inline DisplayState initial_state(const DisplayProblem &prob, Rng &rng) {
  prob.validate();
  DisplayState s;
  const auto n = prob.n();
  s.V.resize(prob.p(), prob.K);
  s.V.col(0) = prob.X.col(Eigen::Index(rng.below(std::uint64_t(n))));
  Vector nearest = pairwise_sq_dists(prob.X, s.V.leftCols(1)).col(0);
  for (int k = 1; k < prob.K; ++k) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest(i);
        if (acc > target && nearest(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = Eigen::Index(rng.below(std::uint64_t(n)));
    }
    s.V.col(k) = prob.X.col(pick);
    nearest = nearest.cwiseMin(pairwise_sq_dists(prob.X, s.V.col(k)).col(0));
  }
  s.mu = column_normalize(rng.uniform_matrix(n, prob.K, 0.0, 1.0), 1e-300);
  s.log_mu = s.mu.array().max(std::numeric_limits<double>::min()).log().matrix();
  s.gamma = prob.gamma_mode == GammaMode::fixed ? prob.hypers.gamma : adaptive_gamma(s.log_mu);
  s.objective = objective(prob, s);
  return s;
}

/** @brief The gamma for the next iteration from state `s`. */
inline double iteration_gamma(const DisplayProblem &prob, const DisplayState &s) {
  return prob.gamma_mode == GammaMode::fixed ? prob.hypers.gamma : adaptive_gamma(s.log_mu);
}

/** @brief One (mu, V) update with the given gamma. */
inline DisplayState step(const DisplayProblem &prob, const DisplayState &s, double gamma) {
  DisplayState next;
  next.gamma = gamma;
  next.mu = update_mu(prob.X, s.V, gamma);
  next.log_mu = log_membership(prob.X, s.V, gamma);
  next.V = update_V(prob.X, next.mu, s.V, prob.H, prob.hypers);
  next.iteration = s.iteration + 1;
  next.last_change = std::max((next.mu - s.mu).cwiseAbs().maxCoeff(), (next.V - s.V).cwiseAbs().maxCoeff());
  return next;
}

struct SolveOptions {
  int max_iters = 200;
  double tol = 1e-6;
  std::function<void(const DisplayState &)> observer; ///< called after every iteration
};

struct SolverDivergence : NumericError {
  using NumericError::NumericError;
};

inline DisplayState solve(const DisplayProblem &prob, Rng &rng, const SolveOptions &opt = {}) {
  require(opt.max_iters >= 1, "solve: max_iters must be >= 1");
  require(opt.tol > 0.0, "solve: tol must be positive");
  DisplayState s = initial_state(prob, rng);
  for (int it = 0; it < opt.max_iters; ++it) {
    const double gamma = iteration_gamma(prob, s);
    DisplayState next = step(prob, s, gamma);
    if (!next.V.allFinite() || !next.mu.allFinite())
      throw SolverDivergence("display solver diverged at iteration " + std::to_string(next.iteration),
                             next.iteration);
    s = std::move(next);
    if (opt.observer) {
      s.objective = objective(prob, s);
      opt.observer(s);
    }
    if (s.last_change < opt.tol) {
      s.converged = true;
      break;
    }
  }
  s.objective = objective(prob, s);
  if (!std::isfinite(s.objective))
    throw SolverDivergence("display objective is not finite at iteration " + std::to_string(s.iteration),
                           s.iteration);
  return s;
}

} // namespace lfal
