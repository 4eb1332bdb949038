#include "deci/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <new>
#include <random>

#include "deci/numeric.hpp"

namespace deci {

std::string to_string(Variant v) { return v == Variant::baseline ? "baseline" : "decimated"; }

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("quantile of no samples");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

BenchResult time_prefill(const ModelWeights& w, Variant variant, const DecimationConfig& cfg, std::size_t L,
                         std::size_t reps, std::size_t warmup, ScanMode mode, std::uint64_t seed) {
  if (reps == 0 || L == 0) throw std::invalid_argument("bench needs L >= 1 and at least one rep");
  const std::size_t n = w.blocks.size();
  BenchResult r;
  r.variant = variant;
  r.length = L;
  r.reps = reps;
  r.warmup = warmup;
  r.parallel_scan = mode == ScanMode::parallel;
  r.split_layer = cfg.layers.empty() ? n : cfg.layers.front();

  std::vector<int> tokens(L);
  std::mt19937_64 rng(seed);
  for (auto& t : tokens) t = static_cast<int>(rng() % 256);

  ForwardOptions opt;
  opt.mode = mode;
  if (variant == Variant::decimated && !cfg.layers.empty()) {
    cfg.validate(n);
    opt.select = make_selector(cfg);
  }
  std::vector<double> totals, before, after;
  std::vector<std::vector<double>> per_block(n);
  std::vector<double> blocks;
  opt.block_seconds = &blocks;
  try {
    for (std::size_t k = 0; k < warmup + reps; ++k) {
      ops::reset();
      const auto t0 = std::chrono::steady_clock::now();
      const ForwardResult fr = forward_hidden(tokens, w, opt);
      const std::size_t last[1] = {fr.positions.size() - 1};
      const Tensor head = lm_head(gather_rows(fr.hidden, last), w);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (k < warmup) continue;
      r.ops = ops::count();
      r.final_length = fr.positions.size();
      totals.push_back(s);
      double b = 0, a = 0;
      for (std::size_t l = 0; l < n; ++l) {
        per_block[l].push_back(blocks[l]);
        (l <= r.split_layer ? b : a) += blocks[l];
      }
      before.push_back(b);
      after.push_back(a);
    }
  } catch (const std::bad_alloc&) {
    throw ResourceError("prefill at L=" + std::to_string(L) + " could not allocate its buffers");
  }
  r.median = quantile(totals, 0.5);
  r.p10 = quantile(totals, 0.1);
  r.p90 = quantile(totals, 0.9);
  r.before_split = quantile(before, 0.5);
  r.after_split = quantile(after, 0.5);
  for (const auto& v : per_block) r.block_median.push_back(quantile(v, 0.5));
  return r;
}

void write_bench_csv(const std::vector<BenchResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(9);
  out << "variant,length,reps,median_s,p10_s,p90_s,ops,final_length,split_layer,before_split_s,after_split_s,"
         "parallel_scan\n";
  for (const auto& r : results) {
    out << to_string(r.variant) << ',' << r.length << ',' << r.reps << ',' << r.median << ',' << r.p10 << ','
        << r.p90 << ',' << r.ops << ',' << r.final_length << ',' << r.split_layer << ',' << r.before_split << ','
        << r.after_split << ',' << (r.parallel_scan ? 1 : 0) << '\n';
  }
}

}  // namespace deci
