#include <gtest/gtest.h>

#include <random>

#include "deci/mamba.hpp"
#include "deci/mamba_tape.hpp"
#include "deci/numeric.hpp"
#include "test_util.hpp"

namespace deci {
namespace {

using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.expand = 2;
  c.n_layers = 2;
  c.d_state = 4;
  c.d_conv = 3;
  return c;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, static_cast<int>(vocab) - 1);
  std::vector<int> t(n);
  for (auto& v : t) v = dist(rng);
  return t;
}

TEST(CausalConv, IdentityKernelIsSilu) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({5, 3}, rng);
  Tensor w({4, 3});
  for (std::size_t d = 0; d < 3; ++d) w(3, d) = 1.0;
  EXPECT_EQ(causal_conv1d(x, w, Tensor({3})), map(x, silu));
}

TEST(CausalConv, BoundaryAndRamp) {
  const Tensor out = causal_conv1d_linear(Tensor::matrix(3, 1, {1, 2, 3}), Tensor::matrix(2, 1, {1, 1}), Tensor({1}));
  EXPECT_EQ(out, Tensor::matrix(3, 1, {1, 3, 5}));
  // First output sees only x_1 and zero padding.
  const Tensor first = causal_conv1d_linear(Tensor::matrix(2, 1, {2, 100}), Tensor::matrix(3, 1, {5, 7, 1}), Tensor({1}));
  EXPECT_EQ(first[0], 2.0);
}

TEST(BlockForward, ZeroGateReturnsResidual) {
  std::mt19937_64 rng(2);
  ModelWeights w = init_model(small_config(), 3);
  BlockParams& p = w.blocks[0];
  const std::size_t D = p.s6.channels();
  for (std::size_t i = 0; i < p.in_proj.rows(); ++i)
    for (std::size_t j = D; j < 2 * D; ++j) p.in_proj(i, j) = 0.0;
  const Tensor u = random_tensor({7, 8}, rng);
  EXPECT_EQ(block_forward(u, p, ScanMode::sequential), u);
}

TEST(BlockForward, MatchesIndependentComposition) {
  std::mt19937_64 rng(4);
  const ModelWeights w = init_model(small_config(), 5);
  const BlockParams& p = w.blocks[1];
  const std::size_t L = 16, D = p.s6.channels();
  const Tensor u = random_tensor({L, 8}, rng);
  // Compose by hand.
  Tensor normed({L, 8});
  for (std::size_t t = 0; t < L; ++t) {
    double ss = 0;
    for (std::size_t j = 0; j < 8; ++j) ss += u(t, j) * u(t, j);
    const double inv = 1.0 / std::sqrt(ss / 8 + kRmsEps);
    for (std::size_t j = 0; j < 8; ++j) normed(t, j) = u(t, j) * inv * p.norm_scale[j];
  }
  const Tensor xz = matmul(normed, p.in_proj);
  const Tensor x = causal_conv1d(slice_cols(xz, 0, D), p.conv_w, p.conv_b);
  const Tensor y = s6_forward(x, p.s6, ScanMode::sequential);
  Tensor yg({L, D});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) yg(t, d) = y(t, d) * silu(xz(t, D + d));
  Tensor expected = u;
  add_scaled(expected, matmul(yg, p.out_proj));
  for (ScanMode mode : {ScanMode::sequential, ScanMode::parallel}) {
    const Tensor got = block_forward(u, p, mode);
    EXPECT_EQ(got.shape(), u.shape());
    EXPECT_LT(max_abs_diff(got, expected), 1e-12);
  }
}

TEST(ModelForward, ShapesAndErrors) {
  const ModelWeights w = init_model(small_config(), 6);
  const std::vector<int> one{3};
  EXPECT_EQ(model_forward(one, w).shape(), (Shape{1, 11}));
  const std::vector<int> bad{3, 11};
  EXPECT_THROW(model_forward(bad, w), std::out_of_range);
}

TEST(ModelForward, AppendingATokenKeepsEarlierLogits) {
  std::mt19937_64 rng(7);
  const ModelWeights w = init_model(small_config(), 8);
  auto tokens = random_tokens(9, 11, rng);
  const Tensor before = model_forward(tokens, w);
  tokens.push_back(4);
  const Tensor after = model_forward(tokens, w);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(ModelForward, RandomEditsAfterPositionDoNotChangeIt) {
  std::mt19937_64 rng(9);
  const ModelWeights w = init_model(small_config(), 10);
  for (int rep = 0; rep < 10; ++rep) {
    auto tokens = random_tokens(12, 11, rng);
    const std::size_t t = rng() % 11;
    const Tensor base = model_forward(tokens, w);
    for (std::size_t s = t + 1; s < tokens.size(); ++s) tokens[s] = static_cast<int>(rng() % 11);
    const Tensor edited = model_forward(tokens, w, ScanMode::parallel);
    for (std::size_t s = 0; s <= t; ++s)
      for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(edited(s, v), base(s, v), 1e-12);
  }
}

TEST(ModelForward, ZeroBlocksShortCircuitToHead) {
  ModelWeights w = init_model(small_config(), 11);
  for (auto& b : w.blocks) {
    for (Tensor* t : {&b.in_proj, &b.conv_w, &b.conv_b, &b.out_proj, &b.s6.dt_down, &b.s6.dt_up, &b.s6.dt_bias,
                      &b.s6.w_b, &b.s6.w_c})
      t->fill(0.0);
  }
  const std::vector<int> tokens{1, 5, 2};
  const Tensor emb = gather_rows(w.embedding, std::vector<std::size_t>{1, 5, 2});
  const Tensor expected = lm_head(rms_norm(emb, w.final_norm), w);
  EXPECT_EQ(model_forward(tokens, w), expected);
}

TEST(Decode, RecurrentStepsMatchParallelForward) {
  std::mt19937_64 rng(12);
  const ModelWeights w = init_model(small_config(), 13);
  const auto tokens = random_tokens(10, 11, rng);
  const Tensor full = model_forward(tokens, w, ScanMode::parallel);
  // Pure recurrence from scratch.
  std::vector<LayerState> states;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Tensor logits = decode_step(tokens[t], w, states);
    for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(logits[v], full(t, v), 1e-11);
  }
  // Prefill then continue.
  ForwardOptions opt;
  opt.keep_states = true;
  const std::span<const int> prefix(tokens.data(), 6);
  ForwardResult pre = forward_hidden(prefix, w, opt);
  for (std::size_t t = 6; t < tokens.size(); ++t) {
    const Tensor logits = decode_step(tokens[t], w, pre.states);
    for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(logits[v], full(t, v), 1e-11);
  }
}

TEST(Decode, PrefillShorterThanConvWindow) {
  const ModelWeights w = init_model(small_config(), 14);
  const std::vector<int> tokens{2, 7, 1};
  const Tensor full = model_forward(tokens, w);
  ForwardOptions opt;
  opt.keep_states = true;
  ForwardResult pre = forward_hidden(std::span<const int>(tokens.data(), 1), w, opt);
  for (std::size_t t = 1; t < 3; ++t) {
    const Tensor logits = decode_step(tokens[t], w, pre.states);
    for (std::size_t v = 0; v < 11; ++v) EXPECT_NEAR(logits[v], full(t, v), 1e-12);
  }
}

TEST(TapeForward, MatchesPlainForward) {
  std::mt19937_64 rng(15);
  const ModelWeights w = init_model(small_config(), 16);
  const auto tokens = random_tokens(13, 11, rng);
  ad::Tape tape;
  ParamBinder bind(tape);
  const TapeForward tf = forward_hidden_tape(bind, tokens, w);
  const Tensor logits = lm_head_tape(bind, tf.hidden, w).value();
  EXPECT_LT(max_abs_diff(logits, model_forward(tokens, w)), 1e-12);
}

TEST(ModelGradients, TinyModelCrossEntropy) {
  std::mt19937_64 rng(17);
  ModelWeights w = init_model(small_config(), 18);
  // Move away from the symmetric initialisation.
  for (auto& [name, t] : named_parameters(w))
    for (auto& v : t->values()) v += 0.05 * std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto tokens = random_tokens(8, 11, rng);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  targets.push_back(-1);
  const ValueAndGrad f = [&](const Tensor& flat) {
    ModelWeights m = w;
    testing::unflatten(m, flat);
    ad::Tape tape;
    ParamBinder bind(tape);
    const TapeForward tf = forward_hidden_tape(bind, tokens, m);
    ad::Var loss = ad::cross_entropy(lm_head_tape(bind, tf.hidden, m), targets);
    tape.backward(loss);
    return std::pair{loss.value().item(), testing::concat(bind.gradients(m))};
  };
  const GradCheckResult r = grad_check(f, testing::flatten(w));
  EXPECT_LT(r.max_error, 1e-4) << "worst coordinate " << r.worst_index;
}

}  // namespace
}  // namespace deci
