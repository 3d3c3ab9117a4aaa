#include "lfal/invertible_net.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace lfal;

namespace {

LayerStack identity_stack(Eigen::Index d, int depth) {
  LayerStack net;
  for (int i = 1; i < depth; ++i) net.weights.push_back(Matrix::Identity(d, d));
  return net;
}

} // namespace

TEST(Activation, SlopesAndInverse) {
  const ActivationSpec a;
  EXPECT_EQ(a.apply(2.0), 0.99 * 2.0);
  EXPECT_EQ(a.apply(-2.0), 0.95 * -2.0);
  EXPECT_EQ(a.invert(a.apply(-2.0)), -2.0);
  EXPECT_THROW((ActivationSpec{0.9, 0.95}.validate()), ContractError);
  EXPECT_THROW((ActivationSpec{0.9, 0.0}.validate()), ContractError);
}

TEST(Forward, IdentityWeightsPositiveAndNegative) {
  const LayerStack net = identity_stack(3, 2);
  Vector pos(3), neg(3);
  pos << 1, 2, 3;
  neg << -1, -2, -3;
  EXPECT_EQ(forward(net, pos).y, Vector(0.99 * pos));
  EXPECT_EQ(forward(net, neg).y, Vector(0.95 * neg));
}

TEST(Forward, ZeroMapsToZero) {
  Rng rng(1);
  const LayerStack net = make_stack(5, 4, {}, 0.0, rng);
  EXPECT_TRUE(latent_map(net, Matrix::Zero(5, 1)).isZero(0.0));
}

TEST(Forward, ContractionOnRandomPairs) {
  Rng rng(2);
  const LayerStack net = make_stack(4, 3, {}, 0.0, rng);
  for (int i = 0; i < 1000; ++i) {
    const Vector a = rng.normal_matrix(4, 1), b = rng.normal_matrix(4, 1);
    EXPECT_LE((forward(net, a).y - forward(net, b).y).norm(), 0.99 * 0.99 * (a - b).norm() + 1e-12);
  }
}

TEST(Forward, TraceMatchesColumnwise) {
  Rng rng(3);
  const LayerStack net = make_stack(6, 3, {}, 0.0, rng);
  const Matrix x = rng.normal_matrix(6, 5);
  const Matrix y = apply_stack(net, x);
  for (int j = 0; j < 5; ++j) EXPECT_EQ(forward(net, x.col(j)).y, Vector(y.col(j)));
  EXPECT_THROW(forward(net, Vector::Zero(5)), ContractError);
}

TEST(Inverse, RoundTrip) {
  Rng rng(4);
  const LayerStack net = make_stack(8, 3, {}, 0.0, rng);
  for (int i = 0; i < 1000; ++i) {
    const Vector x = 3.0 * rng.normal_matrix(8, 1);
    EXPECT_LE((inverse(net, forward(net, x).y) - x).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Inverse, RefusesNonOrthonormalWeights) {
  Rng rng(5);
  LayerStack net = make_stack(4, 3, {}, 0.0, rng);
  net.weights[0] *= 1.01;
  EXPECT_THROW(inverse(net, Vector::Ones(4)), CertificationError);
  const Vector x = rng.normal_matrix(4, 1);
  EXPECT_LE((exact_inverse_columns(net, apply_stack(net, x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((inverse(project(net), forward(project(net), x).y) - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Inverse, ExpansionWithinInverseBound) {
  Rng rng(6);
  const LayerStack net = make_stack(5, 3, {}, 0.0, rng);
  const double M = std::pow(1.0 / 0.95, 2);
  for (int i = 0; i < 1000; ++i) {
    const Vector a = rng.normal_matrix(5, 1), b = rng.normal_matrix(5, 1);
    EXPECT_LE((inverse(net, a) - inverse(net, b)).norm(), M * (a - b).norm() + 1e-9);
  }
}

TEST(Orthonormal, RandomAndProjected) {
  Rng rng(7);
  EXPECT_LE(ortho_residual(random_orthonormal(10, rng)), 1e-12);
  const Matrix w = rng.normal_matrix(6, 6);
  const Matrix q = project_orthonormal(w);
  EXPECT_LE(ortho_residual(q), 1e-12);
  // The polar factor is the nearest orthonormal matrix: no random orthonormal one is closer.
  for (int i = 0; i < 50; ++i) EXPECT_LE((w - q).norm(), (w - random_orthonormal(6, rng)).norm() + 1e-12);
}

TEST(OrthoPenalty, Examples) {
  EXPECT_EQ(ortho_penalty(identity_stack(3, 4)).value, 0.0);
  const OrthoPenalty p = ortho_penalty(std::vector<Matrix>{2.0 * Matrix::Identity(3, 3)});
  EXPECT_NEAR(p.value, 3.0 * std::sqrt(3.0), 1e-14);
  EXPECT_TRUE(ortho_penalty(identity_stack(3, 2)).grads[0].isZero(0.0));
}

TEST(OrthoPenalty, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix w = rng.normal_matrix(4, 4);
    const auto f = [](const Matrix &m) { return ortho_penalty(std::vector<Matrix>{m}).value; };
    const Matrix g = ortho_penalty(std::vector<Matrix>{w}).grads[0];
    EXPECT_LE(rel_diff(g, finite_diff_grad(f, w, 1e-6)), 1e-5);
  }
}

TEST(Certify, BoundsFromFormula) {
  Rng rng(9);
  const LayerStack net = make_stack(4, 3, {}, 0.0, rng);
  const LipschitzCertificate c = certify(net, rng, 2000);
  EXPECT_NEAR(c.K_bound, 0.9801, 1e-15);
  EXPECT_NEAR(c.M_bound, 1.0 / (0.95 * 0.95), 1e-15);
  EXPECT_NEAR(c.M_bound, 1.1080, 1e-4);
  EXPECT_TRUE(c.passed());
  EXPECT_GT(c.K_emp, 0.9);
}

TEST(Certify, MonotoneInDepth) {
  const ActivationSpec a;
  for (int L = 2; L < 5; ++L) {
    EXPECT_LT(forward_bound(a, L + 1), forward_bound(a, L));
    EXPECT_GT(inverse_bound(a, L + 1), inverse_bound(a, L));
  }
}

TEST(Certify, FlagsScaledWeights) {
  Rng rng(10);
  LayerStack net = make_stack(4, 3, {}, 0.0, rng);
  for (auto &w : net.weights) w *= 2.0;
  const LipschitzCertificate c = certify(net, rng, 2000);
  EXPECT_GT(c.K_emp, c.K_bound);
  EXPECT_FALSE(c.forward_ok());
  EXPECT_FALSE(c.orthonormal());
  EXPECT_FALSE(c.passed());
  EXPECT_THROW(latent_unmap(net, Matrix::Zero(4, 1), c), CertificationError);
}

TEST(Latent, RoundTripAndStability) {
  Rng rng(11);
  const LayerStack net = make_stack(6, 3, {}, 0.0, rng);
  const LipschitzCertificate c = certify(net, rng, 1000);
  const Matrix X = 5.0 * rng.normal_matrix(6, 30);
  EXPECT_LE((latent_unmap(net, latent_map(net, X), c) - X).cwiseAbs().maxCoeff(), 1e-6);
  const Matrix Z = latent_map(net, X);
  for (int j = 0; j < 30; ++j) {
    const Vector delta = 0.1 * rng.normal_matrix(6, 1);
    const Vector a = latent_unmap(net, Z.col(j), c), b = latent_unmap(net, Z.col(j) + delta, c);
    EXPECT_LE((a - b).norm(), c.M_bound * delta.norm() + 1e-9);
  }
}

TEST(LatentClassifier, SoftmaxCrossEntropy) {
  Vector s(3), dz;
  s << 1.0, 2.0, 3.0;
  const double ce = softmax_ce(s, 2, dz);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(ce, -std::log(std::exp(3.0) / z), 1e-14);
  EXPECT_NEAR(dz.sum(), 0.0, 1e-14);
  EXPECT_THROW(softmax_ce(s, 3, dz), ContractError);
}

TEST(LatentClassifier, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  int checked = 0;
  for (int rep = 0; rep < 10; ++rep) {
    LatentClassifier m = make_latent_classifier(4, 3, 3, {}, 0.25, rng);
    for (auto &w : m.stack.weights) w += 0.1 * rng.normal_matrix(4, 4);
    const Vector x = rng.normal_matrix(4, 1);
    const int label = int(rng.below(3));
    // Skip draws with a pre-activation close to the kink.
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
        std::vector<Matrix> unused;
        for (auto *p : c.parameters()) unused.push_back(Matrix::Zero(p->rows(), p->cols()));
        return softmax_ce(c.scores(x), label, dz) + c.stack.lambda * c.regularize(0.0, unused);
      };
      EXPECT_LE(rel_diff(grads[k], finite_diff_grad(f, *params[k], 1e-6)), 1e-6);
    }
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(Checkpoint, ReloadIsBitwiseIdentical) {
  Rng rng(13);
  LatentClassifier m = make_latent_classifier(5, 3, 4, {}, 0.2, rng);
  m.stack.weights[1] += 1e-3 * rng.normal_matrix(5, 5);
  const auto path = (std::filesystem::temp_directory_path() / "lfal_ckpt.json").string();
  save_checkpoint(path, m, 99);
  const LatentClassifier back = load_checkpoint(path);
  ASSERT_EQ(back.stack.weights.size(), m.stack.weights.size());
  for (std::size_t i = 0; i < m.stack.weights.size(); ++i) EXPECT_EQ(back.stack.weights[i], m.stack.weights[i]);
  EXPECT_EQ(back.head, m.head);
  EXPECT_EQ(back.stack.lambda, m.stack.lambda);
  const Vector x = rng.normal_matrix(5, 1);
  EXPECT_EQ(back.scores(x), m.scores(x));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(Checkpoint, RejectsForeignDocuments) {
  EXPECT_THROW(classifier_from_json(nlohmann::json{{"format", "other"}, {"version", 1}}), Error);
  Rng rng(14);
  auto j = checkpoint_json(make_latent_classifier(3, 2, 2, {}, 0.0, rng), 0);
  j["depth"] = 5;
  EXPECT_THROW(classifier_from_json(j), ContractError);
}
