#include <gtest/gtest.h>

#include "deci/bench.hpp"

namespace deci {
namespace {

ModelWeights small_model() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 4;
  c.d_state = 4;
  return init_model(c, 1);
}

TEST(Quantile, InterpolatesSortedSamples) {
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 0.1), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.9), 9.0);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Bench, NoopDecimationDoesSameWork) {
  const ModelWeights w = small_model();
  DecimationConfig cfg;
  cfg.layers = {2};
  cfg.l_base = 512;
  const BenchResult base = time_prefill(w, Variant::baseline, cfg, 256, 5, 1);
  const BenchResult deci = time_prefill(w, Variant::decimated, cfg, 256, 5, 1);
  EXPECT_EQ(base.ops, deci.ops);
  EXPECT_EQ(deci.final_length, 256u);
  EXPECT_EQ(base.split_layer, 2u);
  EXPECT_EQ(base.block_median.size(), 4u);
  EXPECT_LE(base.p10, base.median);
  EXPECT_LE(base.median, base.p90);
}

TEST(Bench, DecimationCutsOpsPastLBase) {
  const ModelWeights w = small_model();
  DecimationConfig cfg;
  cfg.layers = {2};
  cfg.l_base = 64;
  cfg.min_seq_len = 8;
  const BenchResult base = time_prefill(w, Variant::baseline, cfg, 512, 5, 1);
  const BenchResult deci = time_prefill(w, Variant::decimated, cfg, 512, 5, 1);
  EXPECT_LT(deci.ops, base.ops);
  EXPECT_EQ(deci.final_length, 64u);
  EXPECT_EQ(base.final_length, 512u);
}

TEST(Bench, RejectsEmptyRuns) {
  const ModelWeights w = small_model();
  EXPECT_THROW(time_prefill(w, Variant::baseline, {}, 0, 5), std::invalid_argument);
  EXPECT_THROW(time_prefill(w, Variant::baseline, {}, 16, 0), std::invalid_argument);
}

}  // namespace
}  // namespace deci
