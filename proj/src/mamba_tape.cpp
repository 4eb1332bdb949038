#include "deci/mamba_tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "deci/numeric.hpp"

namespace deci {

ad::Var selective_scan(ad::Var x, ad::Var delta, ad::Var a_log, ad::Var b, ad::Var c) {
  const Tensor& xv = x.value();
  const Tensor& dv = delta.value();
  const Tensor& av = a_log.value();
  const Tensor& bv = b.value();
  const Tensor& cv = c.value();
  const std::size_t L = xv.rows(), D = xv.cols(), N = av.cols();
  require_shape(av, {D, N}, "selective_scan.a_log");
  require_shape(dv, {L, D}, "selective_scan.delta");
  require_shape(bv, {L, N}, "selective_scan.b");
  require_shape(cv, {L, N}, "selective_scan.c");

  std::vector<double> a(D * N);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(av[i]);

  // States h_1..h_L and the factors a_bar_t are kept for the reverse sweep.
  auto states = std::make_shared<std::vector<double>>(L * D * N);
  auto abars = std::make_shared<std::vector<double>>(L * D * N);
  Tensor y({L, D});
  std::vector<double> h(D * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    const double* bt = bv.data() + t * N;
    const double* ct = cv.data() + t * N;
    double* abar = abars->data() + t * D * N;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) abar[d * N + n] = a[d * N + n] * dv(t, d);
    exp_array(abar, abar, D * N);
    for (std::size_t d = 0; d < D; ++d) {
      const double u = dv(t, d) * xv(t, d);
      double* hd = h.data() + d * N;
      const double* ab = abar + d * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        hd[n] = ab[n] * hd[n] + bt[n] * u;
        acc += ct[n] * hd[n];
      }
      y(t, d) = acc;
    }
    std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(t * D * N));
  }
  ops::add(L * D * N * 6);

  return x.tape()->record(std::move(y), {x, delta, a_log, b, c}, [L, D, N, states, abars, a = std::move(a)](const ad::VjpArgs& g) {
    const Tensor& xv = *g.inputs[0];
    const Tensor& dv = *g.inputs[1];
    const Tensor& bv = *g.inputs[3];
    const Tensor& cv = *g.inputs[4];
    Tensor* gx = g.input_grads[0];
    Tensor* gd = g.input_grads[1];
    Tensor* ga = g.input_grads[2];
    Tensor* gb = g.input_grads[3];
    Tensor* gc = g.input_grads[4];
    const std::vector<double>& hs = *states;
    // gh carries dL/dh_t; the a_bar factor for step t+1 is applied when stepping back.
    std::vector<double> gh(D * N, 0.0);
    std::vector<double> ga_acc(D * N, 0.0);
    std::vector<double> gb_t(N), gc_t(N);
    for (std::size_t t = L; t-- > 0;) {
      const double* bt = bv.data() + t * N;
      const double* ct = cv.data() + t * N;
      const double* ht = hs.data() + t * D * N;
      const double* hprev = t > 0 ? hs.data() + (t - 1) * D * N : nullptr;
      const double* abar_t = abars->data() + t * D * N;
      std::fill(gb_t.begin(), gb_t.end(), 0.0);
      std::fill(gc_t.begin(), gc_t.end(), 0.0);
      for (std::size_t d = 0; d < D; ++d) {
        const double gy = g.out_grad(t, d);
        const double dt = dv(t, d);
        const double xt = xv(t, d);
        const double dx = dt * xt;
        double* ghd = gh.data() + d * N;
        double* gad = ga_acc.data() + d * N;
        const double* ad = a.data() + d * N;
        const double* hd = ht + d * N;
        const double* ab = abar_t + d * N;
        double g_delta = 0.0, g_x = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          gc_t[n] += gy * hd[n];
          const double total = ghd[n] + gy * ct[n];
          const double hp = hprev ? hprev[d * N + n] : 0.0;
          const double ah = ab[n] * hp;
          // h_t = abar·h_{t-1} + dt·b·x
          g_delta += total * (ad[n] * ah + bt[n] * xt);
          gad[n] += total * dt * ah;
          gb_t[n] += total * dx;
          g_x += total * bt[n];
          ghd[n] = total * ab[n];
        }
        if (gd) (*gd)(t, d) += g_delta;
        if (gx) (*gx)(t, d) += g_x * dt;
      }
      for (std::size_t n = 0; n < N; ++n) {
        if (gb) (*gb)(t, n) += gb_t[n];
        if (gc) (*gc)(t, n) += gc_t[n];
      }
    }
    if (ga) {
      // dA/da_log = A
      for (std::size_t i = 0; i < D * N; ++i) (*ga)[i] += ga_acc[i] * a[i];
    }
  });
}

ad::Var ParamBinder::operator()(const Tensor& t) {
  auto it = vars_.find(&t);
  if (it != vars_.end()) return it->second;
  ad::Var v = tape_.variable(t);
  vars_.emplace(&t, v);
  return v;
}

std::vector<Tensor> ParamBinder::gradients(const ModelWeights& w) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters(w)) {
    auto it = vars_.find(t);
    out.push_back(it == vars_.end() ? Tensor(t->shape()) : tape_.grad(it->second));
  }
  return out;
}

TapeForward forward_hidden_tape(ParamBinder& bind, std::span<const int> tokens,
                                const ModelWeights& w, const TokenSelector& select) {
  check_tokens(tokens, w.config.vocab_size);
  TapeForward res;
  res.positions.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) res.positions[i] = i;
  const std::size_t D = w.config.d_inner();

  ad::Var u = ad::embedding(bind(w.embedding), tokens);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const BlockParams& p = w.blocks[l];
    ad::Var normed = ad::rms_norm(u, bind(p.norm_scale));
    ad::Var xz = ad::matmul(normed, bind(p.in_proj));
    ad::Var xb = ad::slice_cols(xz, 0, D);
    ad::Var gate = ad::silu(ad::slice_cols(xz, D, 2 * D));
    ad::Var x = ad::silu(ad::causal_conv1d(xb, bind(p.conv_w), bind(p.conv_b)));
    ad::Var low = ad::matmul(x, bind(p.s6.dt_down));
    ad::Var delta = ad::softplus(ad::add_row_vector(ad::matmul(low, bind(p.s6.dt_up)), bind(p.s6.dt_bias)));
    ad::Var bmat = ad::matmul(x, bind(p.s6.w_b));
    ad::Var cmat = ad::matmul(x, bind(p.s6.w_c));
    if (select) {
      const SsmInputs view{delta.value(), bmat.value(), cmat.value()};
      const LayerTap tap{l, x.value(), view, res.positions};
      if (auto keep = select(tap)) {
        const auto& idx = *keep;
        x = ad::gather_rows(x, idx);
        gate = ad::gather_rows(gate, idx);
        delta = ad::gather_rows(delta, idx);
        bmat = ad::gather_rows(bmat, idx);
        cmat = ad::gather_rows(cmat, idx);
        u = ad::gather_rows(u, idx);
        std::vector<std::size_t> pos(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) pos[i] = res.positions[idx[i]];
        res.positions = std::move(pos);
      }
    }
    ad::Var y = selective_scan(x, delta, bind(p.s6.a_log), bmat, cmat);
    u = ad::add(u, ad::matmul(ad::mul(y, gate), bind(p.out_proj)));
  }
  res.hidden = ad::rms_norm(u, bind(w.final_norm));
  return res;
}

ad::Var lm_head_tape(ParamBinder& bind, ad::Var hidden, const ModelWeights& w) {
  return ad::matmul_nt(hidden, bind(w.embedding));
}

}  // namespace deci
