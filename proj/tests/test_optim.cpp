#include <gtest/gtest.h>

#include <cmath>

#include "deci/optim.hpp"

namespace deci {
namespace {

TEST(AdamW, ZeroGradsZeroDecayLeaveParamsUnchanged) {
  Tensor p({3}, 0.5);
  AdamWState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  const Tensor before = p;
  adamw_step({&p}, {Tensor({3})}, {true}, st, cfg, 1e-2);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, ClipScalesBeforeMoments) {
  Tensor p({2});
  Tensor g({2});
  g[0] = 6.0;
  g[1] = 8.0;
  AdamWState st;
  AdamWConfig cfg;
  cfg.grad_clip_norm = 1.0;
  const double norm = adamw_step({&p}, {g}, {false}, st, cfg, 1e-3);
  EXPECT_DOUBLE_EQ(norm, 10.0);
  EXPECT_NEAR(st.m[0][0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(st.m[0][1], 0.1 * 0.8, 1e-15);
  EXPECT_NEAR(st.v[0][1], 0.001 * 0.64, 1e-15);
}

TEST(AdamW, ClipLeavesSmallGradsAlone) {
  std::vector<Tensor> g{Tensor({2}, 0.1)};
  const double n = clip_by_global_norm(g, 1.0);
  EXPECT_NEAR(n, std::sqrt(0.02), 1e-15);
  EXPECT_EQ(g[0][0], 0.1);
}

TEST(AdamW, ScalarQuadraticHandStep) {
  // f(p) = p², p = 1, g = 2. One step with decay 0.1 and lr 0.1:
  // p ← p·(1 − lr·wd) = 0.99; m̂ = 2, v̂ = 4; p ← 0.99 − 0.1·2/(2 + 1e−8).
  Tensor p({1}, 1.0);
  AdamWState st;
  AdamWConfig cfg;
  cfg.grad_clip_norm = 0.0;
  cfg.weight_decay = 0.1;
  adamw_step({&p}, {Tensor({1}, 2.0 * p[0])}, {true}, st, cfg, 0.1);
  EXPECT_NEAR(p[0], 0.99 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);

  // Second step, g = 2·p₁, bias corrections 1 − 0.9², 1 − 0.999².
  const double p1 = p[0], g2 = 2.0 * p1;
  const double m = 0.9 * 0.2 + 0.1 * g2, v = 0.999 * 0.004 + 0.001 * g2 * g2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  adamw_step({&p}, {Tensor({1}, g2)}, {true}, st, cfg, 0.1);
  EXPECT_NEAR(p[0], p1 * 0.99 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(AdamW, DecayMaskSkipsVectorsAndALog) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  ModelWeights w = init_model(c, 0);
  const auto mask = weight_decay_mask(w);
  const auto named = named_parameters(w);
  ASSERT_EQ(mask.size(), named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    const bool is_a_log = named[i].first.find("a_log") != std::string::npos;
    EXPECT_EQ(mask[i], named[i].second->rank() == 2 && !is_a_log) << named[i].first;
  }
}

}  // namespace
}  // namespace deci
