#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "deci/numeric.hpp"
#include "test_util.hpp"

namespace deci {
namespace {

TEST(Softplus, KnownValues) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_LT(std::abs(softplus(50.0) - 50.0), 1e-12);
  // mpmath, 40 digits: log1p(exp(-20))
  EXPECT_NEAR(softplus(-20.0), 2.061153620314380703e-9, 1e-22);
}

TEST(Softplus, BoundsAndThresholdContinuity) {
  for (double x = -60.0; x <= 60.0; x += 0.37) {
    EXPECT_GE(softplus(x), 0.0);
    EXPECT_GE(softplus(x), x);
  }
  EXPECT_NEAR(softplus(20.0 - 1e-9), softplus(20.0 + 1e-9), 1e-8);
  EXPECT_NEAR(inverse_softplus(softplus(-3.0)), -3.0, 1e-12);
  EXPECT_NEAR(inverse_softplus(softplus(25.0)), 25.0, 1e-9);
}

TEST(Silu, KnownValues) {
  EXPECT_EQ(silu(0.0), 0.0);
  EXPECT_NEAR(silu(100.0), 100.0, 1e-30 + 1e-12 * 100.0);
  EXPECT_NEAR(silu(-1.0), -0.2689414213699951207, 1e-15);
}

TEST(Silu, MonotoneAboveMinimumAndAsymptote) {
  // The minimum sits near x = -1.2785.
  double prev = silu(-1.2785);
  for (double x = -1.27; x < 30.0; x += 0.01) {
    const double v = silu(x);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_NEAR(silu(40.0) / 40.0, 1.0, 1e-15);
}

TEST(GradCheck, Quadratic) {
  const ValueAndGrad f = [](const Tensor& t) {
    return std::pair{t[0] * t[0], Tensor::vector({2.0 * t[0]})};
  };
  const auto r = grad_check(f, Tensor::vector({3.0}), 1e-5);
  EXPECT_LT(r.max_error, 1e-7);
  EXPECT_DOUBLE_EQ(r.analytic, 6.0);
}

TEST(GradCheck, SoftplusAtZero) {
  const ValueAndGrad f = [](const Tensor& t) {
    return std::pair{softplus(t[0]), Tensor::vector({sigmoid(t[0])})};
  };
  const auto r = grad_check(f, Tensor::vector({0.0}), 1e-5);
  EXPECT_LT(r.max_error, 1e-6);
  EXPECT_DOUBLE_EQ(r.analytic, 0.5);
}

TEST(GradCheck, ReportsWorstCoordinate) {
  // Deliberately wrong gradient in coordinate 2.
  const ValueAndGrad f = [](const Tensor& t) {
    Tensor g = Tensor::vector({2 * t[0], 2 * t[1], 0.0});
    return std::pair{t[0] * t[0] + t[1] * t[1] + t[2] * t[2], g};
  };
  const auto r = grad_check(f, Tensor::vector({1.0, -1.0, 4.0}));
  EXPECT_EQ(r.worst_index, 2u);
  EXPECT_GT(r.max_error, 1.0);
}

TEST(Kernels, MatmulVariantsAgreeWithTripleLoop) {
  std::mt19937_64 rng(7);
  const Tensor a = testing::random_tensor({5, 3}, rng);
  const Tensor b = testing::random_tensor({3, 4}, rng);
  Tensor ref({5, 4});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k) ref(i, j) += a(i, k) * b(k, j);
  EXPECT_LT(max_abs_diff(matmul(a, b), ref), 1e-14);

  Tensor at({3, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 3; ++k) at(k, i) = a(i, k);
  Tensor out;
  matmul_tn(at, b, out);
  EXPECT_LT(max_abs_diff(out, ref), 1e-14);

  Tensor bt({4, 3});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 4; ++j) bt(j, k) = b(k, j);
  matmul_nt(a, bt, out);
  EXPECT_LT(max_abs_diff(out, ref), 1e-14);

  EXPECT_THROW(matmul(a, a), ShapeError);
}

// Small and odd shapes, including the lm-head shape (rows × 8)·(261 × 8)ᵀ.
TEST(Kernels, MatmulShapeSweep) {
  std::mt19937_64 rng(8);
  const std::size_t sizes[] = {1, 2, 7, 8, 9, 16, 33, 261};
  for (std::size_t m : sizes)
    for (std::size_t n : sizes)
      for (std::size_t k : {1, 4, 8, 13}) {
        const Tensor a = testing::random_tensor({m, k}, rng);
        const Tensor b = testing::random_tensor({k, n}, rng);
        Tensor ref({m, n}), at({k, m}), bt({n, k});
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t q = 0; q < k; ++q) ref(i, j) += a(i, q) * b(q, j);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < k; ++q) at(q, i) = a(i, q);
        for (std::size_t q = 0; q < k; ++q)
          for (std::size_t j = 0; j < n; ++j) bt(j, q) = b(q, j);
        Tensor nn, tn, nt;
        matmul(a, b, nn);
        matmul_tn(at, b, tn);
        matmul_nt(a, bt, nt);
        ASSERT_LT(max_abs_diff(nn, ref), 1e-13) << m << "x" << k << "x" << n;
        ASSERT_LT(max_abs_diff(tn, ref), 1e-13) << m << "x" << k << "x" << n;
        ASSERT_LT(max_abs_diff(nt, ref), 1e-13) << m << "x" << k << "x" << n;
        Tensor acc = ref;
        matmul(a, b, acc, true);
        ASSERT_LT(max_abs_diff(acc, map(ref, [](double v) { return 2.0 * v; })), 1e-13);
      }
}

TEST(Kernels, RmsNormHasUnitRms) {
  std::mt19937_64 rng(3);
  const Tensor x = testing::random_tensor({4, 8}, rng);
  const Tensor y = rms_norm(x, Tensor({8}, 1.0));
  for (std::size_t i = 0; i < 4; ++i) {
    double ss = 0;
    for (double v : y.row(i)) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss / 8), 1.0, 1e-4);
  }
}

TEST(Kernels, OpCounterIsThreadLocalAndResettable) {
  ops::reset();
  matmul(Tensor({2, 3}, 1.0), Tensor({3, 4}, 1.0));
  EXPECT_EQ(ops::count(), 2u * 2 * 3 * 4);
  ops::reset();
  EXPECT_EQ(ops::count(), 0u);
}

}  // namespace
}  // namespace deci

namespace deci {
namespace {

TEST(ExpArray, WithinTwoUlpOfStdExp) {
  std::mt19937_64 rng(21);
  std::vector<double> x(20000);
  for (auto& v : x) v = std::uniform_real_distribution<double>(-700, 700)(rng);
  for (std::size_t i = 0; i < 2000; ++i) x[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
  x[0] = 0.0;
  std::vector<double> y(x.size());
  exp_array(x.data(), y.data(), x.size());
  EXPECT_EQ(y[0], 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ref = std::exp(x[i]);
    ASSERT_LE(std::abs(y[i] - ref), 2 * std::numeric_limits<double>::epsilon() * ref) << "x = " << x[i];
  }
}

TEST(ExpArray, UnderflowAndSubnormals) {
  const std::vector<double> x{-708.5, -720.0, -745.1, -800.0, -1e300};
  std::vector<double> y(x.size());
  exp_array(x.data(), y.data(), x.size());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(x[i]), 1e-320);
  EXPECT_EQ(y[3], 0.0);
  EXPECT_EQ(y[4], 0.0);
}

}  // namespace
}  // namespace deci
