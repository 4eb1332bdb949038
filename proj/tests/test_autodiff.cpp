#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "deci/autodiff.hpp"
#include "deci/numeric.hpp"
#include "test_util.hpp"

namespace deci {
namespace {

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Checks every input of `build` against central differences.
double check_op(const std::vector<Tensor>& inputs, const Builder& build) {
  std::vector<std::size_t> sizes;
  for (const auto& t : inputs) sizes.push_back(t.size());
  const ValueAndGrad f = [&](const Tensor& flat) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    std::size_t off = 0;
    for (const auto& t : inputs) {
      Tensor v(t.shape());
      std::copy_n(flat.data() + off, t.size(), v.data());
      off += t.size();
      vars.push_back(tape.variable(std::move(v)));
    }
    ad::Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (auto& v : vars) grads.push_back(tape.grad(v));
    return std::pair{loss.value().item(), testing::concat(grads)};
  };
  return grad_check(f, testing::concat(inputs)).max_error;
}

// Random projection to a scalar so every output entry matters.
ad::Var project(ad::Tape& tape, ad::Var v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  ad::Var w = tape.constant(testing::random_tensor(v.value().shape(), rng));
  return ad::sum(ad::mul(v, w));
}

TEST(Tape, SumOfSquaresGradient) {
  ad::Tape tape;
  ad::Var theta = tape.variable(Tensor::vector({1.0, -2.0, 0.5}));
  tape.backward(ad::sum_squares(theta));
  const Tensor& g = tape.grad(theta);
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -4.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
}

TEST(Tape, DetachedInputsReceiveNoGradient) {
  ad::Tape tape;
  ad::Var a = tape.variable(Tensor::vector({1.0, 2.0}));
  ad::Var c = tape.constant(Tensor::vector({3.0, 4.0}));
  ad::Var loss = ad::sum(ad::mul(a, c));
  EXPECT_FALSE(tape.requires_grad(c));
  tape.backward(loss);
  EXPECT_EQ(max_abs(tape.grad(c)), 0.0);
  EXPECT_DOUBLE_EQ(tape.grad(a)[1], 4.0);
}

TEST(Tape, NonScalarLossIsAContractError) {
  ad::Tape tape;
  ad::Var a = tape.variable(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(ad::scale(a, 2.0)), ad::ContractError);
}

TEST(Tape, SharedNodeAccumulatesOnce) {
  // f = (a·a)·a with the product node reused: df/da = 3a²
  ad::Tape tape;
  ad::Var a = tape.variable(Tensor::vector({1.5}));
  ad::Var sq = ad::mul(a, a);
  ad::Var loss = ad::sum(ad::mul(sq, a));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 3 * 1.5 * 1.5);
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{1234};
  Tensor rand(Shape s, double lo = -1.0, double hi = 1.0) { return testing::random_tensor(std::move(s), rng, lo, hi); }
};

TEST_F(OpGradients, Elementwise) {
  EXPECT_LT(check_op({rand({3, 4}), rand({3, 4})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::mul(v[0], v[1])); }),
            1e-6);
  EXPECT_LT(check_op({rand({3, 4}), rand({3, 4})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::sub(v[0], ad::add(v[1], v[0]))); }),
            1e-6);
  EXPECT_LT(check_op({rand({3, 4}, -3, 3)},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::silu(v[0])); }),
            1e-6);
  EXPECT_LT(check_op({rand({3, 4}, -3, 3)},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::softplus(v[0])); }),
            1e-6);
  EXPECT_LT(check_op({rand({3, 4})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::exp(ad::scale(v[0], 0.7))); }),
            1e-6);
}

TEST_F(OpGradients, LinearAlgebra) {
  EXPECT_LT(check_op({rand({4, 3}), rand({3, 5})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::matmul(v[0], v[1])); }),
            1e-6);
  EXPECT_LT(check_op({rand({4, 3}), rand({5, 3})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::matmul_nt(v[0], v[1])); }),
            1e-6);
  EXPECT_LT(check_op({rand({4, 3}), rand({3})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::add_row_vector(v[0], v[1])); }),
            1e-6);
  EXPECT_LT(check_op({rand({4, 6}), rand({6}, 0.5, 1.5)},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::rms_norm(v[0], v[1])); }),
            1e-6);
}

TEST_F(OpGradients, Structural) {
  const std::vector<std::size_t> idx{3, 0, 3};
  EXPECT_LT(check_op({rand({4, 3})},
                     [&](ad::Tape& t, const auto& v) { return project(t, ad::gather_rows(v[0], idx)); }),
            1e-6);
  EXPECT_LT(check_op({rand({4, 6})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::slice_cols(v[0], 2, 5)); }),
            1e-6);
  const std::vector<int> ids{2, 0, 2, 1};
  EXPECT_LT(check_op({rand({3, 5})},
                     [&](ad::Tape& t, const auto& v) { return project(t, ad::embedding(v[0], ids)); }),
            1e-6);
  EXPECT_LT(check_op({rand({6, 3}), rand({4, 3}), rand({3})},
                     [](ad::Tape& t, const auto& v) { return project(t, ad::causal_conv1d(v[0], v[1], v[2])); }),
            1e-6);
}

TEST_F(OpGradients, CrossEntropy) {
  const std::vector<int> targets{1, -1, 4, 0};
  EXPECT_LT(check_op({rand({4, 5}, -2, 2)},
                     [&](ad::Tape&, const auto& v) { return ad::cross_entropy(v[0], targets); }),
            1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  ad::Tape tape;
  ad::Var logits = tape.constant(Tensor({3, 7}, 0.25));
  const std::vector<int> targets{0, 3, 6};
  EXPECT_NEAR(ad::cross_entropy(logits, targets).value().item(), std::log(7.0), 1e-14);
}

TEST(CausalConv, HandConvolution) {
  ad::Tape tape;
  ad::Var x = tape.constant(Tensor::matrix(3, 1, {1, 2, 3}));
  ad::Var w = tape.constant(Tensor::matrix(2, 1, {1, 1}));
  ad::Var b = tape.constant(Tensor::vector({0.0}));
  const Tensor out = ad::causal_conv1d(x, w, b).value();
  EXPECT_EQ(out, Tensor::matrix(3, 1, {1, 3, 5}));
}

}  // namespace
}  // namespace deci
