#pragma once
/**
 * @brief Minibatch training with momentum and a loss-driven learning rate.
 *
 * Loss = mean cross-entropy + lambda * regulariser. After each epoch the rate
 * of loss change r_e = L_e - L_{e-1} is compared with r_{e-1}: if it
 * increased the learning rate is multiplied by 0.99, otherwise divided by it.
 *
 * A Model provides
 *   std::vector<Matrix*> parameters();
 *   double accumulate(const Sample&, int label, std::vector<Matrix>& grads) const;
 *   double regularize(double weight, std::vector<Matrix>& grads) const;
 *   Vector scores(const Sample&) const;
 */
#include "lfal/graph_conv.hpp"
#include "lfal/invertible_net.hpp"

#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace lfal {

struct TrainingError : NumericError {
  using NumericError::NumericError;
};

struct TrainOptions {
  int epochs = 500;
  int batch = 32;
  double lr0 = 0.003;
  double momentum = 0.9;
  double rate_factor = 0.99;
  std::optional<double> lambda; ///< default: the model's own (stack lambda, 0 for GCN)
  bool project = false;         ///< polar-project stack weights after training
};

struct TrainResult {
  std::vector<double> loss; ///< per-epoch mean minibatch loss
  std::vector<double> lr;   ///< learning rate used in each epoch
  double penalty = 0.0;     ///< final regulariser value
};

inline double default_lambda(const LatentClassifier &m) { return m.stack.lambda; }
inline double default_lambda(const GcnClassifier &) { return 0.0; }

inline void finalize(LatentClassifier &m, const TrainOptions &opt) {
  if (opt.project) m.stack = project(std::move(m.stack));
}
inline void finalize(GcnClassifier &, const TrainOptions &) {}

/** @brief Batch loss and gradient (mean CE + lambda * regulariser) over `batch` indices. */
template <class Model, class Sample>
double loss_and_grad(const Model &model, const std::vector<Sample> &samples, const std::vector<int> &labels,
                     const std::vector<std::size_t> &batch, double lambda, std::vector<Matrix> &grads) {
  for (auto &g : grads) g.setZero();
  double ce = 0.0;
  for (auto i : batch) ce += model.accumulate(samples[i], labels[i], grads);
  const double inv = 1.0 / double(batch.size());
  for (auto &g : grads) g *= inv;
  const double pen = model.regularize(lambda, grads);
  return ce * inv + lambda * pen;
}

template <class Model>
std::vector<Matrix> zero_grads(Model &model) {
  std::vector<Matrix> gs;
  for (auto *p : model.parameters()) gs.push_back(Matrix::Zero(p->rows(), p->cols()));
  return gs;
}

template <class Model, class Sample>
TrainResult train(Model &model, const std::vector<Sample> &samples, const std::vector<int> &labels,
                  const TrainOptions &opt, Rng &rng) {
  require(!samples.empty(), "train: labeled set is empty");
  require(samples.size() == labels.size(), "train: samples and labels differ in length");
  require(opt.epochs >= 1 && opt.batch >= 1, "train: epochs and batch must be >= 1");
  require(opt.lr0 > 0.0, "train: lr0 must be positive");
  const double lambda = opt.lambda.value_or(default_lambda(model));
  auto params = model.parameters();
  auto grads = zero_grads(model);
  auto velocity = zero_grads(model);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  double lr = opt.lr0;
  std::optional<double> prev_loss, prev_rate;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(opt.batch)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(opt.batch));
      const std::vector<std::size_t> batch(order.begin() + long(start), order.begin() + long(stop));
      epoch_loss += loss_and_grad(model, samples, labels, batch, lambda, grads);
      ++batches;
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = opt.momentum * velocity[k] - lr * grads[k];
        *params[k] += velocity[k];
      }
    }
    epoch_loss /= batches;
    if (!std::isfinite(epoch_loss))
      throw TrainingError("training diverged at epoch " + std::to_string(epoch), epoch);
    res.loss.push_back(epoch_loss);
    res.lr.push_back(lr);
    if (prev_loss) {
      const double rate = epoch_loss - *prev_loss;
      if (prev_rate) lr = rate > *prev_rate ? lr * opt.rate_factor : lr / opt.rate_factor;
      prev_rate = rate;
    }
    prev_loss = epoch_loss;
  }
  finalize(model, opt);
  res.penalty = model.regularize(0.0, grads);
  return res;
}

template <class Model, class Sample>
int predict(const Model &model, const Sample &x) {
  const Vector s = model.scores(x);
  Eigen::Index best = 0;
  s.maxCoeff(&best);
  return static_cast<int>(best);
}

template <class Model, class Sample>
double training_accuracy(const Model &model, const std::vector<Sample> &samples, const std::vector<int> &labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hit += predict(model, samples[i]) == labels[i];
  return samples.empty() ? 0.0 : double(hit) / double(samples.size());
}

} // namespace lfal
