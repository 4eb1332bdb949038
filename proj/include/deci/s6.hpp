#pragma once

#include <cstddef>
#include <vector>

#include "deci/tensor.hpp"

namespace deci {

/// Learnable symbols of one selective SSM layer with D channels and N
/// state dimensions. The continuous transition is A = -exp(a_log), so it is
/// strictly negative for any finite a_log. The step-size projection is the
/// low-rank map x -> (x·dt_down)·dt_up + dt_bias.
struct S6Params {
  Tensor a_log;    // D×N
  Tensor dt_down;  // D×R
  Tensor dt_up;    // R×D
  Tensor dt_bias;  // D
  Tensor w_b;      // D×N
  Tensor w_c;      // D×N

  std::size_t channels() const { return a_log.rows(); }
  std::size_t state_dim() const { return a_log.cols(); }
  std::size_t dt_rank() const { return dt_down.cols(); }
  Tensor a() const;
  void validate() const;
};

/// Per-token SSM inputs: delta L×D (nonnegative), b L×N, c L×N.
struct SsmInputs {
  Tensor delta;
  Tensor b;
  Tensor c;
};

struct Discretized {
  Tensor a_bar;  // L×D×N, entries in (0, 1]
  Tensor b_bar;  // L×D×N
};

struct ScanResult {
  Tensor y;        // L×D
  Tensor h_final;  // D×N
};

enum class ScanMode { sequential, parallel };

SsmInputs compute_ssm_inputs(const Tensor& x, const S6Params& params);
Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b);
ScanResult scan_sequential(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x);
ScanResult scan_parallel(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x);

/// Discretize-and-scan without materialising L×D×N arrays. `h0` (D×N) may be
/// empty for a zero initial state.
ScanResult selective_scan(const Tensor& x, const SsmInputs& in, const Tensor& a, ScanMode mode,
                          const Tensor& h0 = {});

Tensor s6_forward(const Tensor& x, const S6Params& params, ScanMode mode);

/// Inclusive scan of the affine maps h -> a_i·h + b_i in place, so that
/// afterwards b_i = h_i for h_{-1} = 0. Uses an up-sweep/down-sweep tree over
/// the next power of two, padding with the identity (1, 0).
void affine_scan_inplace(std::vector<double>& a, std::vector<double>& b);

}  // namespace deci
