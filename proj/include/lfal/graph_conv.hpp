#pragma once
/**
 * @brief Graph-convolution classifier over skeleton graphs.
 *
 * Each block maps a graph signal U (s_in x m) to g(A U^T W), an m x C matrix
 * with one row per node; the next block reads its transpose. After the last
 * block the node features are flattened node-major (node 0's C features,
 * then node 1's, ...) and pass through a fully connected layer and a
 * class-score layer, both with biases.
 */
#include "lfal/invertible_net.hpp"
#include "lfal/skeleton_data.hpp"

#include <vector>

namespace lfal {

struct GcnBlock {
  Matrix weights; ///< s_in x C
  bool use_adjacency = true;
};

inline Matrix block_apply(const GcnBlock &b, const Matrix &signal, const Matrix &adjacency, const ActivationSpec &act,
                          Matrix *pre_out = nullptr) {
  require(signal.rows() == b.weights.rows(), "GcnBlock: signal dimension " + std::to_string(signal.rows()) +
                                                 " does not match block input " + std::to_string(b.weights.rows()));
  Matrix pre = b.use_adjacency ? Matrix(adjacency * signal.transpose() * b.weights)
                               : Matrix(signal.transpose() * b.weights);
  Matrix out = act.apply(pre);
  if (pre_out) *pre_out = std::move(pre);
  return out;
}

struct GcnClassifier {
  std::vector<GcnBlock> blocks;
  Matrix fc;       ///< hidden x (m * C)
  Matrix fc_bias;  ///< hidden x 1
  Matrix out;      ///< classes x hidden
  Matrix out_bias; ///< classes x 1
  ActivationSpec act;
  Eigen::Index nodes = 0;

  int classes() const { return static_cast<int>(out.rows()); }

  Vector scores(const SkeletonGraph &g) const {
    check(g);
    Matrix signal = g.descriptors;
    for (const auto &b : blocks) signal = block_apply(b, signal, g.adjacency, act).transpose();
    const Vector z = Eigen::Map<const Vector>(signal.data(), signal.size());
    const Vector h = act.apply(fc * z + fc_bias.col(0));
    return out * h + out_bias.col(0);
  }

  std::vector<Matrix *> parameters() {
    std::vector<Matrix *> ps;
    for (auto &b : blocks) ps.push_back(&b.weights);
    ps.insert(ps.end(), {&fc, &fc_bias, &out, &out_bias});
    return ps;
  }

  double accumulate(const SkeletonGraph &g, int label, std::vector<Matrix> &grads) const {
    check(g);
    std::vector<Matrix> inputs, pres;
    Matrix signal = g.descriptors;
    for (const auto &b : blocks) {
      inputs.push_back(signal);
      Matrix pre;
      signal = block_apply(b, signal, g.adjacency, act, &pre).transpose();
      pres.push_back(std::move(pre));
    }
    const Vector z = Eigen::Map<const Vector>(signal.data(), signal.size());
    const Vector hpre = fc * z + fc_bias.col(0);
    const Vector h = act.apply(hpre);
    Vector ds;
    const double ce = softmax_ce(out * h + out_bias.col(0), label, ds);
    const std::size_t nb = blocks.size();
    grads[nb + 2] += ds * h.transpose();
    grads[nb + 3] += ds;
    Vector dh = out.transpose() * ds;
    for (Eigen::Index i = 0; i < dh.size(); ++i) dh(i) *= act.derivative(hpre(i));
    grads[nb] += dh * z.transpose();
    grads[nb + 1] += dh;
    const Vector dz = fc.transpose() * dh;
    Matrix dsignal = Eigen::Map<const Matrix>(dz.data(), signal.rows(), signal.cols());
    for (std::size_t k = nb; k-- > 0;) {
      // signal_k = g(pre_k)^T, pre_k = A U^T W
      Matrix dpre = dsignal.transpose();
      for (Eigen::Index j = 0; j < dpre.cols(); ++j)
        for (Eigen::Index i = 0; i < dpre.rows(); ++i) dpre(i, j) *= act.derivative(pres[k](i, j));
      const Matrix agg = blocks[k].use_adjacency ? Matrix(g.adjacency.transpose() * dpre) : dpre;
      grads[k] += inputs[k] * agg;
      dsignal = blocks[k].weights * agg.transpose();
    }
    return ce;
  }

  double regularize(double, std::vector<Matrix> &) const { return 0.0; }

private:
  void check(const SkeletonGraph &g) const {
    require(!blocks.empty(), "GcnClassifier: no blocks");
    require(g.nodes() == nodes, "GcnClassifier: graph has " + std::to_string(g.nodes()) + " nodes, expected " +
                                    std::to_string(nodes));
    require(g.adjacency.rows() == nodes && g.adjacency.cols() == nodes, "GcnClassifier: adjacency shape mismatch");
  }
};

struct GcnShape {
  Eigen::Index signal_dim = 12; ///< s = 3 * M_c
  Eigen::Index nodes = 15;
  int blocks = 3;
  int filters = 8;
  int hidden = 32;
  int classes = 8;
};

inline GcnClassifier make_gcn_classifier(const GcnShape &shape, ActivationSpec act, Rng &rng) {
  require(shape.blocks >= 1 && shape.filters >= 1 && shape.hidden >= 1 && shape.classes >= 1,
          "make_gcn_classifier: invalid shape");
  act.validate();
  GcnClassifier c;
  c.act = act;
  c.nodes = shape.nodes;
  Eigen::Index in = shape.signal_dim;
  for (int b = 0; b < shape.blocks; ++b) {
    c.blocks.push_back({rng.normal_matrix(in, shape.filters, 1.0 / std::sqrt(double(in))), true});
    in = shape.filters;
  }
  const Eigen::Index flat = shape.nodes * shape.filters;
  c.fc = rng.normal_matrix(shape.hidden, flat, 1.0 / std::sqrt(double(flat)));
  c.fc_bias = Matrix::Zero(shape.hidden, 1);
  c.out = rng.normal_matrix(shape.classes, shape.hidden, 1.0 / std::sqrt(double(shape.hidden)));
  c.out_bias = Matrix::Zero(shape.classes, 1);
  return c;
}

/** @brief Class scores of `g`. */
inline Vector classify(const GcnClassifier &clf, const SkeletonGraph &g) { return clf.scores(g); }

} // namespace lfal
