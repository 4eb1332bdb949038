#include "deci/mamba.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "deci/numeric.hpp"

namespace deci {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || expand == 0 || n_layers == 0 || d_state == 0 || d_conv == 0) {
    throw ConfigError("model config: all sizes must be positive");
  }
}

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t dm = config.d_model, D = config.d_inner(), N = config.d_state, R = config.dt_rank(),
                    K = config.d_conv;
  ModelWeights w;
  w.config = config;
  {
    std::normal_distribution<double> normal(0.0, 0.02);
    w.embedding = Tensor({config.vocab_size, dm});
    for (auto& v : w.embedding.values()) v = normal(rng);
  }
  const double dt_min = 1e-3, dt_max = 1e-1;
  std::uniform_real_distribution<double> log_dt(std::log(dt_min), std::log(dt_max));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    BlockParams b;
    b.norm_scale = Tensor({dm}, 1.0);
    b.in_proj = uniform({dm, 2 * D}, 1.0 / std::sqrt(double(dm)), rng);
    b.conv_w = uniform({K, D}, 1.0 / std::sqrt(double(K)), rng);
    b.conv_b = uniform({D}, 1.0 / std::sqrt(double(K)), rng);
    b.s6.a_log = Tensor({D, N});
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) b.s6.a_log(d, n) = std::log(double(n + 1));
    b.s6.dt_down = uniform({D, R}, 1.0 / std::sqrt(double(D)), rng);
    b.s6.dt_up = uniform({R, D}, 1.0 / std::sqrt(double(R)), rng);
    b.s6.dt_bias = Tensor({D});
    for (std::size_t d = 0; d < D; ++d) b.s6.dt_bias[d] = inverse_softplus(std::exp(log_dt(rng)));
    b.s6.w_b = uniform({D, N}, 1.0 / std::sqrt(double(D)), rng);
    b.s6.w_c = uniform({D, N}, 1.0 / std::sqrt(double(D)), rng);
    b.out_proj = uniform({D, dm}, 1.0 / std::sqrt(double(D) * double(config.n_layers)), rng);
    w.blocks.push_back(std::move(b));
  }
  w.final_norm = Tensor({dm}, 1.0);
  return w;
}

namespace {

template <class W, class T>
std::vector<std::pair<std::string, T*>> collect(W& w) {
  std::vector<std::pair<std::string, T*>> out;
  out.emplace_back("embedding", &w.embedding);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    auto& b = w.blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "norm_scale", &b.norm_scale);
    out.emplace_back(p + "in_proj", &b.in_proj);
    out.emplace_back(p + "conv_w", &b.conv_w);
    out.emplace_back(p + "conv_b", &b.conv_b);
    out.emplace_back(p + "s6.a_log", &b.s6.a_log);
    out.emplace_back(p + "s6.dt_down", &b.s6.dt_down);
    out.emplace_back(p + "s6.dt_up", &b.s6.dt_up);
    out.emplace_back(p + "s6.dt_bias", &b.s6.dt_bias);
    out.emplace_back(p + "s6.w_b", &b.s6.w_b);
    out.emplace_back(p + "s6.w_c", &b.s6.w_c);
    out.emplace_back(p + "out_proj", &b.out_proj);
  }
  out.emplace_back("final_norm", &w.final_norm);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(ModelWeights& w) {
  return collect<ModelWeights, Tensor>(w);
}

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ModelWeights& w) {
  return collect<const ModelWeights, const Tensor>(w);
}

std::size_t parameter_count(const ModelWeights& w) {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters(w)) n += t->size();
  return n;
}

Tensor causal_conv1d_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t L = x.rows(), D = x.cols(), K = w.rows();
  if (w.cols() != D || b.size() != D) throw ShapeError("causal_conv1d: weight/bias width");
  Tensor out({L, D});
  for (std::size_t t = 0; t < L; ++t) {
    double* o = out.data() + t * D;
    for (std::size_t d = 0; d < D; ++d) o[d] = b[d];
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t lag = K - 1 - k;
      if (lag > t) continue;
      const double* xr = x.data() + (t - lag) * D;
      const double* wr = w.data() + k * D;
      for (std::size_t d = 0; d < D; ++d) o[d] += wr[d] * xr[d];
    }
  }
  ops::add(2 * L * D * K);
  return out;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  return silu(causal_conv1d_linear(x, w, b));
}

BlockInternals block_internals(const Tensor& normed, const BlockParams& p) {
  const std::size_t D = p.s6.channels();
  const Tensor xz = matmul(normed, p.in_proj);
  BlockInternals bi;
  bi.x_branch = slice_cols(xz, 0, D);
  bi.gate = silu(slice_cols(xz, D, 2 * D));
  bi.s6_input = causal_conv1d(bi.x_branch, p.conv_w, p.conv_b);
  bi.ssm = compute_ssm_inputs(bi.s6_input, p.s6);
  return bi;
}

namespace {

Tensor gated_output(const Tensor& y, const Tensor& gate, const BlockParams& p) {
  Tensor yg(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) yg[i] = y[i] * gate[i];
  ops::add(y.size());
  return matmul(yg, p.out_proj);
}

Tensor conv_tail(const Tensor& x_branch, std::size_t width) {
  const std::size_t D = x_branch.cols(), L = x_branch.rows();
  Tensor window({width, D});
  for (std::size_t i = 0; i < width; ++i) {
    // window row i holds x_{L-width+i}
    if (L + i < width) continue;
    const std::size_t t = L + i - width;
    std::copy_n(x_branch.data() + t * D, D, window.data() + i * D);
  }
  return window;
}

}  // namespace

Tensor block_forward(const Tensor& u, const BlockParams& p, ScanMode mode) {
  const BlockInternals bi = block_internals(rms_norm(u, p.norm_scale), p);
  const Tensor y = selective_scan(bi.s6_input, bi.ssm, p.s6.a(), mode).y;
  Tensor out = u;
  add_scaled(out, gated_output(y, bi.gate, p));
  return out;
}

void check_tokens(std::span<const int> tokens, std::size_t vocab_size) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab_size) {
      throw std::out_of_range("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                              " outside vocabulary of " + std::to_string(vocab_size));
    }
  }
}

ForwardResult forward_hidden(std::span<const int> tokens, const ModelWeights& w, const ForwardOptions& opt) {
  check_tokens(tokens, w.config.vocab_size);
  const std::size_t dm = w.config.d_model;
  ForwardResult res;
  res.positions.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) res.positions[i] = i;

  Tensor u({tokens.size(), dm});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::copy_n(w.embedding.data() + static_cast<std::size_t>(tokens[i]) * dm, dm, u.data() + i * dm);
  }
  if (opt.block_seconds) opt.block_seconds->assign(w.blocks.size(), 0.0);

  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto start = std::chrono::steady_clock::now();
    const BlockParams& p = w.blocks[l];
    BlockInternals bi = block_internals(rms_norm(u, p.norm_scale), p);
    const LayerTap tap{l, bi.s6_input, bi.ssm, res.positions};
    if (opt.observe) opt.observe(tap);
    LayerState state;
    if (opt.keep_states) state.conv_window = conv_tail(bi.x_branch, w.config.d_conv - 1);
    if (opt.select) {
      if (auto keep = opt.select(tap)) {
        const auto& idx = *keep;
        bi.s6_input = gather_rows(bi.s6_input, idx);
        bi.gate = gather_rows(bi.gate, idx);
        bi.ssm.delta = gather_rows(bi.ssm.delta, idx);
        bi.ssm.b = gather_rows(bi.ssm.b, idx);
        bi.ssm.c = gather_rows(bi.ssm.c, idx);
        u = gather_rows(u, idx);
        std::vector<std::size_t> pos(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) pos[i] = res.positions[idx[i]];
        res.positions = std::move(pos);
      }
    }
    ScanResult scan = selective_scan(bi.s6_input, bi.ssm, p.s6.a(), opt.mode);
    add_scaled(u, gated_output(scan.y, bi.gate, p));
    if (opt.keep_states) {
      state.h = std::move(scan.h_final);
      res.states.push_back(std::move(state));
    }
    if (opt.block_seconds) {
      (*opt.block_seconds)[l] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  }
  res.hidden = rms_norm(u, w.final_norm);
  return res;
}

Tensor lm_head(const Tensor& hidden, const ModelWeights& w) {
  Tensor logits;
  matmul_nt(hidden, w.embedding, logits);
  return logits;
}

Tensor model_forward(std::span<const int> tokens, const ModelWeights& w, ScanMode mode) {
  ForwardOptions opt;
  opt.mode = mode;
  return lm_head(forward_hidden(tokens, w, opt).hidden, w);
}

Tensor decode_step(int token, const ModelWeights& w, std::vector<LayerState>& states) {
  const int one[1] = {token};
  check_tokens(one, w.config.vocab_size);
  const std::size_t dm = w.config.d_model, D = w.config.d_inner(), N = w.config.d_state,
                    K = w.config.d_conv;
  if (states.size() != w.blocks.size()) {
    states.assign(w.blocks.size(), LayerState{Tensor({K - 1, D}), Tensor({D, N})});
  }
  Tensor u({1, dm});
  std::copy_n(w.embedding.data() + static_cast<std::size_t>(token) * dm, dm, u.data());
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const BlockParams& p = w.blocks[l];
    LayerState& st = states[l];
    const Tensor xz = matmul(rms_norm(u, p.norm_scale), p.in_proj);
    // conv over [window; current]
    Tensor conv_in({K, D});
    std::copy_n(st.conv_window.data(), (K - 1) * D, conv_in.data());
    std::copy_n(xz.data(), D, conv_in.data() + (K - 1) * D);
    Tensor x({1, D});
    for (std::size_t d = 0; d < D; ++d) {
      double acc = p.conv_b[d];
      for (std::size_t k = 0; k < K; ++k) acc += p.conv_w(k, d) * conv_in(k, d);
      x[d] = silu(acc);
    }
    for (std::size_t k = 0; k + 1 < K; ++k) std::copy_n(conv_in.data() + (k + 1) * D, D, st.conv_window.data() + k * D);
    const SsmInputs in = compute_ssm_inputs(x, p.s6);
    ScanResult scan = selective_scan(x, in, p.s6.a(), ScanMode::sequential, st.h);
    st.h = std::move(scan.h_final);
    Tensor gate({1, D});
    for (std::size_t d = 0; d < D; ++d) gate[d] = silu(xz[D + d]);
    add_scaled(u, gated_output(scan.y, gate, p));
  }
  return lm_head(rms_norm(u, w.final_norm), w);
}

}  // namespace deci
