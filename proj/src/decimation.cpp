#include "deci/decimation.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

namespace deci {

Strategy parse_strategy(const std::string& name) {
  if (name == "delta-mean" || name == "delta") return Strategy::delta_mean;
  if (name == "random") return Strategy::random;
  if (name == "max-norm") return Strategy::max_norm;
  if (name == "top-k-percent" || name == "topk") return Strategy::top_k_percent;
  throw ConfigError("unknown decimation strategy '" + name +
                    "' (expected delta-mean, random, max-norm or top-k-percent)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::delta_mean: return "delta-mean";
    case Strategy::random: return "random";
    case Strategy::max_norm: return "max-norm";
    case Strategy::top_k_percent: return "top-k-percent";
  }
  return "?";
}

void DecimationConfig::validate(std::size_t n_layers) const {
  if (min_seq_len < 1) throw ConfigError("decimation.min_seq_len must be >= 1");
  if (l_base < min_seq_len) throw ConfigError("decimation.l_base must be >= min_seq_len");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("decimation.beta must be in (0, 1]");
  if (strategy == Strategy::top_k_percent && !(top_k_percent > 0.0 && top_k_percent <= 100.0))
    throw ConfigError("decimation.top_k_percent must be in (0, 100]");
  if (decode_chunk < 1) throw ConfigError("decimation.decode_chunk must be >= 1");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] >= n_layers)
      throw ConfigError("decimation.layers: layer " + std::to_string(layers[i]) + " out of range for a " +
                        std::to_string(n_layers) + "-layer model");
    if (i > 0 && layers[i] <= layers[i - 1]) throw ConfigError("decimation.layers must be strictly ascending");
  }
}

std::size_t schedule(std::size_t s, const DecimationConfig& cfg) {
  // Relative slack so that e.g. 2000·0.7 is not floored to 1399.
  const double p = static_cast<double>(cfg.l_base) * std::pow(cfg.beta, static_cast<double>(s));
  const auto floored = static_cast<std::size_t>(std::floor(p * (1.0 + 1e-12)));
  return std::max(cfg.min_seq_len, floored);
}

std::vector<double> importance_scores(const Tensor& delta) {
  const std::size_t L = delta.rows(), D = delta.cols();
  std::vector<double> s(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) acc += std::abs(delta(t, d));
    s[t] = acc / static_cast<double>(D);
  }
  return s;
}

std::vector<double> ablation_scores(const Tensor& x, const Tensor& delta, Strategy strategy, std::uint64_t seed,
                                    std::size_t layer) {
  switch (strategy) {
    case Strategy::delta_mean:
    case Strategy::top_k_percent:
      return importance_scores(delta);
    case Strategy::max_norm: {
      std::vector<double> s(x.rows());
      for (std::size_t t = 0; t < x.rows(); ++t) {
        double ss = 0.0;
        for (double v : x.row(t)) ss += v * v;
        s[t] = std::sqrt(ss);
      }
      return s;
    }
    case Strategy::random: {
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (layer + 1)));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> s(delta.rows());
      for (auto& v : s) v = u(rng);
      return s;
    }
  }
  throw ConfigError("unknown strategy");
}

namespace {

// Top `count` of indices [0, n) by score, ties to the earlier index, ascending.
std::vector<std::size_t> top_prefix(std::span<const double> scores, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= n) return idx;
  const auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), before);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<std::size_t> select_indices(std::span<const double> scores, std::size_t P, std::size_t min_seq_len) {
  return top_prefix(scores, scores.size(), std::max(P, min_seq_len));
}

std::vector<std::size_t> select_with_tail(std::span<const double> scores, std::size_t budget,
                                          std::size_t protected_suffix) {
  const std::size_t L = scores.size();
  if (L == 0) return {};
  const std::size_t tail = protected_suffix == 0 ? 1 : std::min(protected_suffix, L);
  // The forced final token counts against the budget; a protected suffix does not.
  const std::size_t count = protected_suffix == 0 ? std::max<std::size_t>(budget, 1) - 1 : budget;
  if (L - tail <= count) {
    std::vector<std::size_t> all(L);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto keep = top_prefix(scores, L - tail, count);
  for (std::size_t t = L - tail; t < L; ++t) keep.push_back(t);
  return keep;
}

DecimatedS6 decimated_s6_forward(const Tensor& x, const S6Params& params, std::size_t P, std::size_t min_seq_len,
                                 ScanMode mode) {
  SsmInputs in = compute_ssm_inputs(x, params);
  DecimatedS6 out;
  out.kept = select_indices(importance_scores(in.delta), P, min_seq_len);
  if (out.kept.size() == x.rows()) {
    out.y = selective_scan(x, in, params.a(), mode).y;
    return out;
  }
  const SsmInputs g{gather_rows(in.delta, out.kept), gather_rows(in.b, out.kept), gather_rows(in.c, out.kept)};
  out.y = selective_scan(gather_rows(x, out.kept), g, params.a(), mode).y;
  return out;
}

nlohmann::json DecimationTrace::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& l : layers) {
    nlohmann::json ranges = nlohmann::json::array();
    for (std::size_t i = 0; i < l.kept.size();) {
      std::size_t k = i;
      while (k + 1 < l.kept.size() && l.kept[k + 1] == l.kept[k] + 1) ++k;
      ranges.push_back({l.kept[i], l.kept[k]});
      i = k + 1;
    }
    j.push_back({{"layer", l.layer},
                 {"input_length", l.input_length},
                 {"target", l.target},
                 {"kept_length", l.kept.size()},
                 {"kept_ranges", ranges},
                 {"score", {{"min", l.score_min}, {"mean", l.score_mean}, {"max", l.score_max}}}});
  }
  return j;
}

TokenSelector make_selector(const DecimationConfig& cfg, DecimationTrace* trace) {
  return [cfg, trace](const LayerTap& tap) -> std::optional<std::vector<std::size_t>> {
    const auto it = std::find(cfg.layers.begin(), cfg.layers.end(), tap.layer);
    if (it == cfg.layers.end()) return std::nullopt;
    const auto depth = static_cast<std::size_t>(it - cfg.layers.begin());
    const std::size_t L = tap.positions.size();
    std::size_t target = schedule(depth, cfg);
    if (cfg.strategy == Strategy::top_k_percent) {
      const double k = cfg.top_k_percent / 100.0 * static_cast<double>(L);
      target = std::max(cfg.min_seq_len, static_cast<std::size_t>(std::ceil(k * (1.0 - 1e-12))));
    }
    const auto scores = ablation_scores(tap.s6_input, tap.ssm.delta, cfg.strategy, cfg.seed, tap.layer);
    auto keep = select_with_tail(scores, target, cfg.protected_suffix);
    if (trace) {
      LayerTrace lt;
      lt.layer = tap.layer;
      lt.input_length = L;
      lt.target = target;
      for (std::size_t i : keep) lt.kept.push_back(tap.positions[i]);
      if (!scores.empty()) {
        const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
        lt.score_min = *mn;
        lt.score_max = *mx;
        lt.score_mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(L);
      }
      trace->layers.push_back(std::move(lt));
    }
    if (keep.size() == L) return std::nullopt;
    return keep;
  };
}

DecimatedForward decimated_model_forward(std::span<const int> tokens, const ModelWeights& w,
                                         const DecimationConfig& cfg, ScanMode mode) {
  cfg.validate(w.blocks.size());
  DecimatedForward out;
  ForwardOptions opt;
  opt.mode = mode;
  opt.select = make_selector(cfg, &out.trace);
  ForwardResult r = forward_hidden(tokens, w, opt);
  out.logits = lm_head(r.hidden, w);
  out.positions = std::move(r.positions);
  return out;
}

namespace {

int argmax_last_row(const Tensor& logits) {
  const auto row = logits.row(logits.rows() - 1);
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<int> generate_greedy(std::span<const int> prompt, std::size_t n_new, const ModelWeights& w,
                                 const DecimationConfig* cfg) {
  if (prompt.empty()) throw std::invalid_argument("generate_greedy needs a nonempty prompt");
  if (cfg) cfg->validate(w.blocks.size());
  std::vector<int> context(prompt.begin(), prompt.end());
  std::vector<int> out;
  std::vector<LayerState> states;
  int next = 0;

  const auto prefill = [&] {
    ForwardOptions opt;
    opt.keep_states = true;
    if (cfg) opt.select = make_selector(*cfg);
    ForwardResult r = forward_hidden(context, w, opt);
    states = std::move(r.states);
    // Only the last row is needed.
    const std::size_t last = r.hidden.rows() - 1;
    next = argmax_last_row(lm_head(gather_rows(r.hidden, std::vector<std::size_t>{last}), w));
  };

  prefill();
  const bool rechunk = cfg && !cfg->prefill_only && !cfg->layers.empty();
  std::size_t since_prefill = 0;
  while (out.size() < n_new) {
    out.push_back(next);
    context.push_back(next);
    if (out.size() == n_new) break;
    if (rechunk && ++since_prefill == cfg->decode_chunk) {
      since_prefill = 0;
      prefill();
    } else {
      next = argmax_last_row(decode_step(next, w, states));
    }
  }
  return out;
}

}  // namespace deci
