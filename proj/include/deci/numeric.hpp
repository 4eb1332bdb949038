#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "deci/tensor.hpp"

namespace deci {

double softplus(double x);
double sigmoid(double x);
double silu(double x);
// d/dx silu(x)
double silu_grad(double x);
// Inverse of softplus for y > 0.
double inverse_softplus(double y);

// Elementwise forms for whole buffers; `in` and `out` must not overlap.
void softplus_array(const double* in, double* out, std::size_t n);
void sigmoid_array(const double* in, double* out, std::size_t n);
void silu_array(const double* in, double* out, std::size_t n);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// out[i] = exp(in[i]) within about 1 ulp of std::exp; written to vectorise.
// Inputs below -745 give 0, above 709.8 give a finite large value.
void exp_array(const double* in, double* out, std::size_t n);

// Floating-point operation counter used by the benchmark. Thread-local, so
// concurrent evaluations do not interfere.
namespace ops {
void add(std::uint64_t n);
std::uint64_t count();
void reset();
}  // namespace ops

// Dense kernels on row-major 2-D tensors. `accumulate` adds into `out`
// instead of overwriting it.
void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);     // a·b
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);  // aᵀ·b
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);  // a·bᵀ
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor map(const Tensor& x, double (*fn)(double));

// Rows scaled to unit RMS then multiplied by `scale`.
inline constexpr double kRmsEps = 1e-5;
Tensor rms_norm(const Tensor& x, const Tensor& scale);

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ValueAndGrad = std::function<std::pair<double, Tensor>(const Tensor&)>;

/// Compares the analytic gradient returned by `f` against central
/// differences at every coordinate of `theta`. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
GradCheckResult grad_check(const ValueAndGrad& f, const Tensor& theta, double step = 1e-5);

}  // namespace deci
