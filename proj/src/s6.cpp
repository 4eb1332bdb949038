#include "deci/s6.hpp"

#include <bit>
#include <cmath>

#include "deci/numeric.hpp"

namespace deci {

Tensor S6Params::a() const {
  Tensor out(a_log.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -std::exp(a_log[i]);
  return out;
}

void S6Params::validate() const {
  const std::size_t D = channels(), N = state_dim(), R = dt_rank();
  require_shape(a_log, {D, N}, "s6.a_log");
  require_shape(dt_down, {D, R}, "s6.dt_down");
  require_shape(dt_up, {R, D}, "s6.dt_up");
  require_shape(dt_bias, {D}, "s6.dt_bias");
  require_shape(w_b, {D, N}, "s6.w_b");
  require_shape(w_c, {D, N}, "s6.w_c");
}

SsmInputs compute_ssm_inputs(const Tensor& x, const S6Params& params) {
  params.validate();
  if (x.rank() != 2 || x.cols() != params.channels()) {
    throw ShapeError("compute_ssm_inputs: input " + x.shape_string() + " for " +
                     std::to_string(params.channels()) + " channels");
  }
  SsmInputs in;
  Tensor pre;
  matmul(matmul(x, params.dt_down), params.dt_up, pre);
  const std::size_t L = x.rows(), D = params.channels();
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) pre(t, d) += params.dt_bias[d];
  in.delta = softplus(pre);
  ops::add(L * D * 4);
  matmul(x, params.w_b, in.b);
  matmul(x, params.w_c, in.c);
  return in;
}

Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
  const std::size_t L = delta.rows(), D = delta.cols(), N = a.cols();
  require_shape(a, {D, N}, "discretize.a");
  require_shape(b, {L, N}, "discretize.b");
  Discretized out{Tensor({L, D, N}), Tensor({L, D, N})};
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        out.a_bar(t, d, n) = std::exp(a(d, n) * delta(t, d));
        out.b_bar(t, d, n) = delta(t, d) * b(t, n);
      }
  return out;
}

namespace {

void check_scan_args(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x) {
  if (a_bar.rank() != 3) throw ShapeError("scan: a_bar must be L×D×N");
  const std::size_t L = a_bar.dim(0), D = a_bar.dim(1), N = a_bar.dim(2);
  require_shape(b_bar, {L, D, N}, "scan.b_bar");
  require_shape(c, {L, N}, "scan.c");
  require_shape(x, {L, D}, "scan.x");
}

}  // namespace

ScanResult scan_sequential(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x) {
  check_scan_args(a_bar, b_bar, c, x);
  const std::size_t L = a_bar.dim(0), D = a_bar.dim(1), N = a_bar.dim(2);
  ScanResult r{Tensor({L, D}), Tensor({D, N})};
  double* h = r.h_final.data();
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      const double xv = x(t, d);
      for (std::size_t n = 0; n < N; ++n) {
        double& hv = h[d * N + n];
        hv = a_bar(t, d, n) * hv + b_bar(t, d, n) * xv;
        acc += c(t, n) * hv;
      }
      r.y(t, d) = acc;
    }
  }
  return r;
}

void affine_scan_inplace(std::vector<double>& a, std::vector<double>& b) {
  const std::size_t len = a.size();
  if (len <= 1) return;
  const std::size_t m = std::bit_ceil(len);
  a.resize(m, 1.0);
  b.resize(m, 0.0);
  // Up-sweep: node i absorbs the block ending at i - stride.
  for (std::size_t stride = 1; stride < m; stride *= 2) {
    for (std::size_t i = 2 * stride - 1; i < m; i += 2 * stride) {
      const std::size_t j = i - stride;
      b[i] = a[i] * b[j] + b[i];
      a[i] = a[i] * a[j];
    }
  }
  // Down-sweep: propagate prefixes into the remaining positions.
  for (std::size_t stride = m / 4; stride >= 1; stride /= 2) {
    for (std::size_t i = 3 * stride - 1; i < m; i += 2 * stride) {
      const std::size_t j = i - stride;
      b[i] = a[i] * b[j] + b[i];
      a[i] = a[i] * a[j];
    }
    if (stride == 1) break;
  }
  a.resize(len);
  b.resize(len);
}

ScanResult scan_parallel(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x) {
  check_scan_args(a_bar, b_bar, c, x);
  const std::size_t L = a_bar.dim(0), D = a_bar.dim(1), N = a_bar.dim(2);
  ScanResult r{Tensor({L, D}), Tensor({D, N})};
  std::vector<double> a(L), b(L);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t n = 0; n < N; ++n) {
      a.resize(L);
      b.resize(L);
      for (std::size_t t = 0; t < L; ++t) {
        a[t] = a_bar(t, d, n);
        b[t] = b_bar(t, d, n) * x(t, d);
      }
      affine_scan_inplace(a, b);
      for (std::size_t t = 0; t < L; ++t) r.y(t, d) += c(t, n) * b[t];
      if (L > 0) r.h_final(d, n) = b[L - 1];
    }
  }
  return r;
}

ScanResult selective_scan(const Tensor& x, const SsmInputs& in, const Tensor& a, ScanMode mode,
                          const Tensor& h0) {
  const std::size_t L = x.rows(), D = x.cols(), N = a.cols();
  require_shape(a, {D, N}, "selective_scan.a");
  require_shape(in.delta, {L, D}, "selective_scan.delta");
  require_shape(in.b, {L, N}, "selective_scan.b");
  require_shape(in.c, {L, N}, "selective_scan.c");
  const bool has_h0 = !h0.empty();
  if (has_h0) require_shape(h0, {D, N}, "selective_scan.h0");
  ScanResult r{Tensor({L, D}), has_h0 ? h0 : Tensor({D, N})};
  ops::add(L * D * N * 6);

  if (mode == ScanMode::sequential) {
    double* h = r.h_final.data();
    std::vector<double> abar(D * N);
    for (std::size_t t = 0; t < L; ++t) {
      const double* bt = in.b.data() + t * N;
      const double* ct = in.c.data() + t * N;
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t n = 0; n < N; ++n) abar[d * N + n] = a(d, n) * in.delta(t, d);
      exp_array(abar.data(), abar.data(), D * N);
      for (std::size_t d = 0; d < D; ++d) {
        const double u = in.delta(t, d) * x(t, d);
        const double* ab = abar.data() + d * N;
        double* hd = h + d * N;
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          hd[n] = ab[n] * hd[n] + bt[n] * u;
          acc += ct[n] * hd[n];
        }
        r.y(t, d) = acc;
      }
    }
    return r;
  }

  std::vector<double> av(L), bv(L);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t n = 0; n < N; ++n) {
      av.resize(L);
      bv.resize(L);
      const double adn = a(d, n);
      for (std::size_t t = 0; t < L; ++t) {
        const double dt = in.delta(t, d);
        av[t] = adn * dt;
        bv[t] = dt * in.b(t, n) * x(t, d);
      }
      exp_array(av.data(), av.data(), L);
      if (has_h0 && L > 0) bv[0] += av[0] * h0(d, n);
      affine_scan_inplace(av, bv);
      for (std::size_t t = 0; t < L; ++t) r.y(t, d) += in.c(t, n) * bv[t];
      r.h_final(d, n) = L > 0 ? bv[L - 1] : (has_h0 ? h0(d, n) : 0.0);
    }
  }
  return r;
}

Tensor s6_forward(const Tensor& x, const S6Params& params, ScanMode mode) {
  const SsmInputs in = compute_ssm_inputs(x, params);
  return selective_scan(x, in, params.a(), mode).y;
}

}  // namespace deci
