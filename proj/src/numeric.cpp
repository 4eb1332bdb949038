#include "deci/numeric.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <Eigen/Core>

namespace deci {

double softplus(double x) {
  double y;
  softplus_array(&x, &y, 1);
  return y;
}

double sigmoid(double x) {
  double y;
  sigmoid_array(&x, &y, 1);
  return y;
}

double silu(double x) {
  double y;
  silu_array(&x, &y, 1);
  return y;
}

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double inverse_softplus(double y) {
  if (y > 20.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

void exp_array(const double* in, double* out, std::size_t n) {
  constexpr double log2e = 1.4426950408889634074;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  // Adding 1.5·2^52 rounds to an integer held in the low mantissa bits.
  constexpr double shifter = 0x1.8p52;
  const std::uint64_t shifter_bits = std::bit_cast<std::uint64_t>(shifter);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::min(std::max(in[i], -745.2), 709.8);
    const double nd = (x * log2e + shifter) - shifter;
    const double r = (x - nd * ln2_hi) - nd * ln2_lo;
    // Taylor to degree 13 on |r| <= ln2/2, truncation error below 1e-17.
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // 2^nd split in two factors so subnormal results stay representable.
    const double n1 = (nd * 0.5 + shifter) - shifter;
    const double n2 = nd - n1;
    const std::uint64_t e1 = std::bit_cast<std::uint64_t>(n1 + 1023.0 + shifter) - shifter_bits;
    const std::uint64_t e2 = std::bit_cast<std::uint64_t>(n2 + 1023.0 + shifter) - shifter_bits;
    out[i] = p * std::bit_cast<double>(e1 << 52) * std::bit_cast<double>(e2 << 52);
  }
}

void softplus_array(const double* in, double* out, std::size_t n) {
  // softplus(x) = max(x, 0) + log1p(e), e = exp(-|x|) in (0, 1], and
  // log1p(e) = 2·atanh(z) with z = e / (2 + e) <= 1/3.
  for (std::size_t i = 0; i < n; ++i) out[i] = -std::abs(in[i]);
  exp_array(out, out, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = out[i];
    const double z = e / (2.0 + e);
    const double s = z * z;
    double p = 1.0 / 37.0;
#pragma GCC unroll 18
    for (int k = 17; k >= 0; --k) p = p * s + 1.0 / (2 * k + 1);
    out[i] = std::max(in[i], 0.0) + 2.0 * z * p;
  }
}

void sigmoid_array(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = -std::abs(in[i]);
  exp_array(out, out, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = out[i];
    const double r = 1.0 / (1.0 + e);
    out[i] = in[i] >= 0.0 ? r : e * r;
  }
}

void silu_array(const double* in, double* out, std::size_t n) {
  sigmoid_array(in, out, n);
  for (std::size_t i = 0; i < n; ++i) out[i] *= in[i];
}

Tensor softplus(const Tensor& x) {
  Tensor out(x.shape());
  softplus_array(x.data(), out.data(), x.size());
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  sigmoid_array(x.data(), out.data(), x.size());
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.shape());
  silu_array(x.data(), out.data(), x.size());
  return out;
}

namespace ops {
namespace {
thread_local std::uint64_t counter = 0;
}
void add(std::uint64_t n) { counter += n; }
std::uint64_t count() { return counter; }
void reset() { counter = 0; }
}  // namespace ops

namespace {

void check_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + t.shape_string());
}

void prepare_out(Tensor& out, std::size_t r, std::size_t c, bool accumulate) {
  if (accumulate) {
    if (out.rank() != 2 || out.dim(0) != r || out.dim(1) != c) throw ShapeError("matmul: accumulator shape");
  } else if (out.rank() != 2 || out.dim(0) != r || out.dim(1) != c) {
    out = Tensor({r, c});
  } else {
    out.fill(0.0);
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

// Row-major out (+)= op(a)·op(b).
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const Tensor& a, const Tensor& b,
          Tensor& out) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const ConstMap am(a.data(), ei(a.dim(0)), ei(a.dim(1)));
  const ConstMap bm(b.data(), ei(b.dim(0)), ei(b.dim(1)));
  Eigen::Map<RowMat> om(out.data(), ei(m), ei(n));
  if (ta && tb) {
    om.noalias() += am.transpose() * bm.transpose();
  } else if (ta) {
    om.noalias() += am.transpose() * bm;
  } else if (tb) {
    om.noalias() += am * bm.transpose();
  } else {
    om.noalias() += am * bm;
  }
  ops::add(2 * m * k * n);
}

}  // namespace

void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + a.shape_string() + " · " + b.shape_string());
  prepare_out(out, m, n, accumulate);
  gemm(false, false, m, n, k, a, b, out);
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  check_2d(a, "matmul_tn");
  check_2d(b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul_tn: " + a.shape_string() + "ᵀ · " + b.shape_string());
  prepare_out(out, m, n, accumulate);
  gemm(true, false, m, n, k, a, b, out);
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt: " + a.shape_string() + " · " + b.shape_string() + "ᵀ");
  prepare_out(out, m, n, accumulate);
  gemm(false, true, m, n, k, a, b, out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out;
  matmul(a, b, out);
  return out;
}

Tensor map(const Tensor& x, double (*fn)(double)) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  ops::add(x.size());
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& scale) {
  const std::size_t r = x.rows(), c = x.cols();
  if (scale.size() != c) throw ShapeError("rms_norm: scale width " + std::to_string(scale.size()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data() + i * c;
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += xr[j] * xr[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(c) + kRmsEps);
    double* orow = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) orow[j] = xr[j] * inv * scale[j];
  }
  ops::add(4 * r * c);
  return out;
}

GradCheckResult grad_check(const ValueAndGrad& f, const Tensor& theta, double step) {
  GradCheckResult result;
  const Tensor analytic = f(theta).second;
  if (analytic.size() != theta.size()) throw ShapeError("grad_check: gradient size mismatch");
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe).first;
    probe[i] = orig - step;
    const double down = f(probe).first;
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (i == 0 || err > result.max_error) {
      result.max_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace deci
