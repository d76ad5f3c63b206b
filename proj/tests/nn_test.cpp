#include "opengan/models.hpp"
#include "opengan/nn.hpp"

#include <gtest/gtest.h>

using namespace opengan;
using namespace opengan::nn;

namespace {

// Random-direction loss: L = sum(out .* dir), dL/dout = dir.
LossFn projection_loss(const Matrix& dir) {
  return [dir](const Matrix& out) { return std::make_pair((out.array() * dir.array()).sum(), dir); };
}

Mlp random_net(std::vector<Layer> layers, std::uint64_t seed) {
  Mlp net(std::move(layers));
  std::mt19937_64 rng(seed);
  init_weights(net, rng);
  // Wider init than DCGAN's so the check exercises non-trivial curvature.
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& l : net.layers)
    if (auto* lin = std::get_if<Linear>(&l)) {
      lin->weight = lin->weight.unaryExpr([&](double) { return n(rng); });
      lin->bias = lin->bias.unaryExpr([&](double) { return n(rng); });
    }
  return net;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Forward, IdentityLinear) {
  Linear l = make_linear(3, 3);
  l.weight = Matrix::Identity(3, 3);
  Mlp net({l});
  const Matrix x = random_matrix(4, 3, 1);
  EXPECT_EQ(net.forward(x), x);
}

TEST(Forward, SigmoidAtZero) {
  Mlp net({make_linear(1, 1), Sigmoid{}});
  EXPECT_EQ(net.forward(Matrix::Zero(2, 1))(0, 0), 0.5);
}

TEST(Forward, LeakyReluSlope) {
  Linear l = make_linear(2, 2);
  l.weight = Matrix::Identity(2, 2);
  Mlp net({l, LeakyRelu{0.2}});
  Matrix x(1, 2);
  x << -1, 2;
  const Matrix y = net.forward(x);
  EXPECT_DOUBLE_EQ(y(0, 0), -0.2);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(Forward, DimensionMismatchAndSingleRowBatchNorm) {
  Mlp net({make_linear(3, 2), make_batchnorm(2)});
  EXPECT_THROW(net.forward(Matrix::Zero(4, 5)), Error);
  EXPECT_THROW(net.forward(Matrix::Zero(1, 3)), Error);
  net.mode = Mode::kInference;
  EXPECT_NO_THROW(net.forward(Matrix::Zero(1, 3)));
}

TEST(Forward, InvalidLayerStacksRejected) {
  EXPECT_THROW(Mlp({make_linear(3, 2), make_linear(4, 1)}), Error);
  EXPECT_THROW(Mlp({make_linear(3, 2), make_batchnorm(3)}), Error);
  EXPECT_THROW(Mlp({make_linear(3, 2), LeakyRelu{1.5}}), Error);
}

TEST(BatchNorm, TrainingOutputIsStandardized) {
  Mlp net({make_linear(4, 6), make_batchnorm(6)});
  std::mt19937_64 rng(2);
  init_weights(net, rng);
  auto& bn = std::get<BatchNorm>(net.layers[1]);
  bn.gain.setOnes();
  bn.shift.setZero();
  const Matrix y = net.forward(random_matrix(50, 4, 3) * 10);
  const RowVector mu = y.colwise().mean();
  const RowVector var = (y.rowwise() - mu).array().square().colwise().mean();
  EXPECT_LT(mu.cwiseAbs().maxCoeff(), 1e-6);
  // eps = 1e-5 shifts the variance slightly below 1.
  EXPECT_LT((var.array() - 1).abs().maxCoeff(), 1e-5 * 10);
}

TEST(BatchNorm, RunningStatsUseMomentumAndUnbiasedVariance) {
  Linear l = make_linear(1, 1);
  l.weight(0, 0) = 1;
  Mlp net({l, make_batchnorm(1)});
  Matrix x(4, 1);
  x << 1, 2, 3, 6;
  net.forward(x);
  const auto& bn = std::get<BatchNorm>(net.layers[1]);
  // mean 3, unbiased variance 14/3.
  EXPECT_NEAR(bn.running_mean(0), 0.9 * 0 + 0.1 * 3, 1e-12);
  EXPECT_NEAR(bn.running_var(0), 0.9 * 1 + 0.1 * 14.0 / 3.0, 1e-12);
  net.forward(x, nullptr, {.update_running_stats = false});
  EXPECT_NEAR(bn.running_mean(0), 0.3, 1e-12);
}

TEST(Inference, PureFunction) {
  std::mt19937_64 rng(4);
  Mlp d = build_discriminator(8, rng);
  d.forward(random_matrix(16, 8, 5));  // move running stats off their init
  d.mode = Mode::kInference;
  const Matrix x = random_matrix(7, 8, 6);
  const Matrix a = d.forward(x), b = d.forward(x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d.predict(x));
}

TEST(Backward, LinearSumLossClosedForm) {
  Mlp net = random_net({make_linear(3, 2)}, 1);
  const Matrix x = random_matrix(5, 3, 2);
  Tape tape;
  const Matrix y = net.forward(x, &tape);
  const Gradients g = net.backward(tape, Matrix::Ones(y.rows(), y.cols()));
  // dW[o,i] = sum over rows of x[:, i]; db[o] = batch size.
  const Matrix dw = Eigen::Map<const Matrix>(g.params[0].data(), 2, 3);
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(dw(o, i), x.col(i).sum(), 1e-12);
  EXPECT_NEAR(g.params[1](0), 5.0, 1e-12);
  EXPECT_NEAR(g.params[1](1), 5.0, 1e-12);
}

TEST(Backward, TanhDerivativeAtZeroIsOne) {
  Linear l = make_linear(1, 1);
  l.weight(0, 0) = 1;
  Mlp net({l, Tanh{}});
  Tape tape;
  net.forward(Matrix::Zero(1, 1), &tape);
  EXPECT_DOUBLE_EQ(net.backward(tape, Matrix::Ones(1, 1)).input(0, 0), 1.0);
}

TEST(Backward, TapeMismatchRejected) {
  Mlp a = random_net({make_linear(3, 2), Tanh{}}, 1);
  Mlp b = random_net({make_linear(3, 2)}, 1);
  Tape tape;
  a.forward(random_matrix(4, 3, 1), &tape);
  EXPECT_THROW(b.backward(tape, Matrix::Ones(4, 2)), Error);
}

TEST(GradCheck, RandomThreeLayerNets) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Mlp net = random_net({make_linear(5, 7), make_batchnorm(7), LeakyRelu{0.2}, make_linear(7, 6), Tanh{},
                          make_linear(6, 3), Sigmoid{}},
                         seed);
    const Matrix x = random_matrix(9, 5, seed + 100);
    const Matrix dir = random_matrix(9, 3, seed + 200);
    EXPECT_LT(grad_check(net, projection_loss(dir), x), 1e-3) << "seed " << seed;
  }
}

TEST(GradCheck, PureLinearIsNearExact) {
  Mlp net = random_net({make_linear(4, 3), make_linear(3, 2)}, 9);
  const Matrix x = random_matrix(6, 4, 10);
  EXPECT_LT(grad_check(net, projection_loss(random_matrix(6, 2, 11)), x), 1e-8);
}

TEST(GradCheck, CatchesCorruptedBiasGradient) {
  Mlp net = random_net({make_linear(4, 3), Tanh{}, make_linear(3, 1)}, 12);
  const Matrix x = random_matrix(6, 4, 13);
  const double err = grad_check(net, projection_loss(random_matrix(6, 1, 14)), x, {},
                                [](Gradients& g) { g.params[1](0) += 1.0; });
  EXPECT_GT(err, 1e-1);
}

TEST(GradCheck, SmallDiscriminatorWithBce) {
  std::mt19937_64 rng(21);
  Mlp d = build_discriminator(6, rng);
  const Matrix x = random_matrix(12, 6, 22);
  LossFn loss = [](const Matrix& out) {
    // BCE on the probabilities: closed target for the first half.
    Matrix g(out.rows(), 1);
    double l = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double p = out(i, 0);
      const bool closed = i < out.rows() / 2;
      l -= closed ? std::log(p) : std::log(1 - p);
      g(i, 0) = closed ? -1 / p : 1 / (1 - p);
    }
    return std::make_pair(l, g);
  };
  const auto rep = grad_check_report(d, loss, x, {.max_coords_per_block = 200, .seed = 3});
  EXPECT_LT(rep.max_relative_error, 1e-3);
  EXPECT_GT(rep.checked, 1000u);
  EXPECT_LT(rep.skipped, rep.checked / 20);
}

TEST(GradCheck, KinkCrossingIsSkippedNotScored) {
  // A pre-activation of exactly 0 sits on the LeakyReLU kink; x +- h lands on
  // different slopes, so the coordinate must be skipped.
  Mlp net{{make_linear(1, 1), LeakyRelu{0.2}}};
  std::get<Linear>(net.layers[0]).weight(0, 0) = 1;
  std::get<Linear>(net.layers[0]).bias(0) = 0;
  Matrix x(1, 1);
  x << 0;
  const auto rep = grad_check_report(net, projection_loss(Matrix::Ones(1, 1)), x);
  EXPECT_EQ(rep.skipped, 1u);  // bias
  EXPECT_EQ(rep.checked, 1u);  // weight: input is 0, no crossing
}

TEST(Bce, Examples) {
  Vector z(1);
  z << 0;
  EXPECT_NEAR(bce_terms(z, Target::kClosed).loss, std::log(2.0), 1e-15);
  z << 40;
  EXPECT_LT(bce_terms(z, Target::kClosed).loss, 1e-12);
  z << 1.5;
  EXPECT_NEAR(bce_terms(z, Target::kOpen).loss, std::log1p(std::exp(1.5)), 1e-15);
  EXPECT_NEAR(bce_terms(z, Target::kOpen).loss, 1.7014, 1e-4);
}

TEST(Bce, ClosedPlusOpenIsSoftplusPair) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 200; ++i) {
    Vector z(1);
    z << u(rng);
    EXPECT_EQ(bce_terms(z, Target::kClosed).loss + bce_terms(z, Target::kOpen).loss,
              softplus(z(0)) + softplus(-z(0)));
  }
}

TEST(Bce, StableAtExtremeLogitsAndExactGradient) {
  Vector z(4);
  z << -700, -30, 30, 700;
  for (auto t : {Target::kClosed, Target::kOpen}) {
    const auto r = bce_terms(z, t);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_TRUE(r.grad.allFinite());
  }
  Vector w = Vector::LinSpaced(7, -3, 3);
  for (auto t : {Target::kClosed, Target::kOpen}) {
    const auto r = bce_terms(w, t);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Vector up = w, down = w;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      const double fd = (bce_terms(up, t).loss - bce_terms(down, t).loss) / 2e-6;
      EXPECT_NEAR(r.grad(i), fd, 1e-8);
    }
  }
  EXPECT_EQ(bce_terms(Vector(0), Target::kOpen).loss, 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Vector p = Vector::LinSpaced(4, -1, 1);
  const Vector before = p;
  AdamState s;
  std::vector<std::span<double>> blocks{{p.data(), 4}};
  adam_step(s, blocks, {Vector::Zero(4)});
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Vector p(1);
  p << 3.0;
  AdamState s;
  s.lr = 1e-3;
  s.beta1 = 0.9;
  s.beta2 = 0.999;
  s.eps = 1e-8;
  std::vector<std::span<double>> blocks{{p.data(), 1}};
  Vector g(1);
  g << 1.0;
  adam_step(s, blocks, {g});
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps).
  EXPECT_NEAR(3.0 - p(0), 1e-3 / (1 + 1e-8), 1e-15);
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    Vector p = Vector::LinSpaced(3, 0, 1);
    AdamState s;
    std::vector<std::span<double>> blocks{{p.data(), 3}};
    for (int i = 0; i < 5; ++i) adam_step(s, blocks, {Vector::Constant(3, 0.1 * i - 0.2)});
    return p;
  };
  EXPECT_EQ(run(), run());
  Vector p(3);
  AdamState s;
  std::vector<std::span<double>> blocks{{p.data(), 3}};
  EXPECT_THROW(adam_step(s, blocks, {Vector::Zero(2)}), Error);
}

TEST(Mlp1, RoundTripPreservesLayersAndF32Parameters) {
  std::mt19937_64 rng(31);
  Mlp d = build_discriminator(10, rng);
  d.forward(random_matrix(8, 10, 32));
  nlohmann::ordered_json meta{{"epoch", 3}};
  const auto bytes = encode_mlp(d, meta);
  ASSERT_EQ(bytes.substr(0, 4), "MLP1");
  const auto dec = decode_mlp(bytes);
  EXPECT_EQ(dec.meta.at("epoch"), 3);
  EXPECT_EQ(dec.net.linear_widths(), d.linear_widths());
  EXPECT_EQ(encode_mlp(dec.net, meta), bytes);
  const auto& bn_a = std::get<BatchNorm>(d.layers[1]);
  const auto& bn_b = std::get<BatchNorm>(dec.net.layers[1]);
  for (Eigen::Index i = 0; i < bn_a.running_var.size(); ++i)
    EXPECT_EQ(static_cast<float>(bn_a.running_var(i)), bn_b.running_var(i));
}

TEST(Mlp1, CorruptInputsRejected) {
  std::mt19937_64 rng(33);
  const auto bytes = encode_mlp(build_generator(4, rng, 8));
  EXPECT_THROW(decode_mlp(bytes.substr(0, bytes.size() - 4)), FormatError);
  EXPECT_THROW(decode_mlp(bytes + "xxxx"), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_mlp(bad), FormatError);
}
