#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "scl/core/nn.hpp"
#include "scl/core/ops.hpp"
#include "scl/models.hpp"

namespace {

using scl::Shape;
using scl::Tape;
using scl::Tensor;
using scl::Var;

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

/// Max relative error between autodiff and central differences of `f` w.r.t. every input entry.
double gradcheck(const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
                 std::vector<Tensor<double>> inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  std::vector<scl::Parameter<double>> params(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params[i].value = inputs[i];
    params[i].grad = Tensor<double>(inputs[i].shape());
    vars.push_back(tape.parameter(params[i]));
  }
  tape.backward(f(tape, vars));
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      auto eval = [&](double delta) {
        auto copy = inputs;
        copy[i][k] += delta;
        Tape<double> t2(false);
        std::vector<Var<double>> v2;
        for (auto& c : copy) v2.push_back(t2.constant(c));
        return f(t2, v2).value()[0];
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double ad = params[i].grad[k];
      worst = std::max(worst, std::abs(fd - ad) / std::max(1e-6, std::abs(fd) + std::abs(ad)));
    }
  }
  return worst;
}

Var<double> sum_all(Var<double> x) {
  const std::size_t n = x.value().size();
  return scl::ops::mse(scl::ops::reshape(x, {n}), std::vector<double>(n, 0.0));
}

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), scl::ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at(1, 2), 1.5f);
}

TEST(Autograd, LinearAndActivationsMatchFiniteDifferences) {
  auto f = [](Tape<double>&, std::vector<Var<double>>& v) {
    Var<double> y = scl::ops::linear(v[0], v[1], std::optional<Var<double>>(v[2]));
    return sum_all(scl::ops::tanh(scl::ops::sigmoid(y)));
  };
  EXPECT_LT(gradcheck(f, {random_tensor({3, 4}, 1), random_tensor({2, 4}, 2), random_tensor({2}, 3)}), 1e-6);
}

TEST(Autograd, ConvolutionMatchesFiniteDifferences) {
  auto f = [](Tape<double>&, std::vector<Var<double>>& v) {
    return sum_all(scl::ops::global_avg_pool(scl::ops::conv2d(v[0], v[1], v[2], 2, 1)));
  };
  EXPECT_LT(gradcheck(f, {random_tensor({2, 2, 8, 8}, 4), random_tensor({3, 2, 3, 3}, 5), random_tensor({3}, 6)}), 1e-5);
}

TEST(Autograd, LayerNormAndSoftmaxMatchFiniteDifferences) {
  auto f = [](Tape<double>&, std::vector<Var<double>>& v) {
    Var<double> n = scl::ops::layer_norm(v[0], v[1], v[2]);
    Var<double> s = scl::ops::masked_softmax(n, {1, 1, 0, 1, 1, 1, 1, 1});
    return sum_all(scl::ops::mul(s, n));
  };
  EXPECT_LT(gradcheck(f, {random_tensor({2, 4}, 7), random_tensor({4}, 8), random_tensor({4}, 9)}), 1e-5);
}

TEST(Autograd, BceWithLogitsMatchesClosedForm) {
  Tape<double> tape(false);
  Var<double> z = tape.constant(Tensor<double>({2}, std::vector<double>{0.0, 0.0}));
  EXPECT_NEAR(scl::ops::bce_with_logits(z, {0.0, 1.0}).value()[0], std::log(2.0), 1e-12);
}

TEST(Grl, ForwardIsIdentity) {
  for (double lambda : {0.0, 0.5, 1.0, 3.0}) {
    Tape<double> tape(false);
    const Tensor<double> x = random_tensor({5, 7}, 11);
    Var<double> y = scl::grl_apply(tape.constant(x), lambda);
    EXPECT_EQ(y.value().vec(), x.vec());
  }
  Tape<double> tape(false);
  Var<double> y = scl::grl_apply(tape.constant(Tensor<double>({2}, std::vector<double>{1.5, -2.0})), 1.0);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{1.5, -2.0}));
}

TEST(Grl, SumGradientIsMinusLambda) {
  for (double lambda : {0.0, 1.0}) {
    Tape<double> tape;
    scl::Parameter<double> p;
    p.value = Tensor<double>({2}, std::vector<double>{1.5, -2.0});
    p.grad = Tensor<double>({2});
    Var<double> y = scl::grl_apply(tape.parameter(p), lambda);
    tape.backward(scl::ops::weighted_sum<double>({scl::ops::mse(y, {0.0, 0.0})}, {1.0}), 1.0);
    // d/dx of mean(x^2) is x; reversed and scaled by lambda.
    EXPECT_EQ(p.grad[0], -lambda * 1.5);
    EXPECT_EQ(p.grad[1], -lambda * -2.0);
  }
}

TEST(Grl, NegativeLambdaRejected) {
  Tape<double> tape(false);
  EXPECT_THROW(scl::grl_apply(tape.constant(Tensor<double>({1})), -0.1), scl::ValidationError);
}

TEST(Nn, DerivedSeedsDifferByLabel) {
  EXPECT_NE(scl::derive_seed(0, "backbone"), scl::derive_seed(0, "classification"));
  EXPECT_EQ(scl::derive_seed(3, "split"), scl::derive_seed(3, "split"));
}
