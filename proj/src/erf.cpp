#include "deci/erf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace deci {

std::vector<double> normalize_row(std::span<const double> row, bool* zero_row) {
  double total = 0.0;
  for (double v : row) total += std::abs(v);
  std::vector<double> p(row.size());
  const bool zero = !(total > 0.0);
  if (zero_row) *zero_row = zero;
  if (zero) {
    std::fill(p.begin(), p.end(), row.empty() ? 0.0 : 1.0 / static_cast<double>(row.size()));
    return p;
  }
  for (std::size_t j = 0; j < row.size(); ++j) p[j] = std::abs(row[j]) / total;
  return p;
}

double attention_mean_distance(std::span<const double> row, std::size_t i, bool* zero_row) {
  if (i >= row.size()) throw std::out_of_range("row index out of range");
  // One division at the end keeps integer-valued rows exact.
  double total = 0.0, weighted = 0.0;
  for (std::size_t j = 0; j <= i; ++j) {
    total += std::abs(row[j]);
    weighted += std::abs(row[j]) * static_cast<double>(i - j);
  }
  const bool zero = !(total > 0.0);
  if (zero_row) *zero_row = zero;
  if (zero) return static_cast<double>(i) / 2.0;
  return weighted / total;
}

double attention_mean_distance(const Tensor& alpha, std::size_t i, bool* zero_row) {
  return attention_mean_distance(alpha.row(i), i, zero_row);
}

double mamba_mean_distance(const Tensor& alpha, bool* zero_row) {
  if (alpha.rank() != 2 || alpha.rows() == 0) throw ShapeError("mamba_mean_distance needs a nonempty matrix");
  return attention_mean_distance(alpha, alpha.rows() - 1, zero_row);
}

double mamba_mean_distance(const ChannelSsm& ch, bool* zero_row) {
  const std::size_t L = ch.length();
  if (L == 0) throw ShapeError("mamba_mean_distance needs L >= 1");
  return attention_mean_distance(alpha_row(ch, L - 1), L - 1, zero_row);
}

namespace {

SsmInputs capture_layer(std::span<const int> tokens, const ModelWeights& w, std::size_t layer) {
  SsmInputs out;
  ForwardOptions opt;
  opt.observe = [&](const LayerTap& tap) {
    if (tap.layer == layer) out = tap.ssm;
  };
  forward_hidden(tokens, w, opt);
  return out;
}

// Σ_{k=2}^{L} Δ_k averaged over channels, for every prefix length L.
std::vector<double> prefix_delta_sums(const Tensor& delta) {
  const std::size_t L = delta.rows(), D = delta.cols();
  std::vector<double> out(L, 0.0);
  double acc = 0.0;
  for (std::size_t t = 1; t < L; ++t) {
    double row = 0.0;
    for (std::size_t d = 0; d < D; ++d) row += delta(t, d);
    acc += row / static_cast<double>(D);
    out[t] = acc;
  }
  return out;
}

void check_layer(const ModelWeights& w, std::size_t layer) {
  if (layer >= w.blocks.size()) throw ConfigError("layer " + std::to_string(layer) + " out of range");
}

}  // namespace

std::vector<CurvePoint> delta_sum_curve(const ModelWeights& w, std::size_t layer,
                                        const std::vector<std::vector<int>>& sequences,
                                        std::span<const std::size_t> lengths, bool nested) {
  check_layer(w, layer);
  std::vector<CurvePoint> curve;
  for (std::size_t L : lengths) curve.push_back({L, 0.0, 0});
  for (const auto& seq : sequences) {
    if (nested) {
      const std::size_t longest = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
      if (seq.size() < longest) throw std::invalid_argument("nested delta-sum needs sequences of the longest length");
      const auto sums = prefix_delta_sums(capture_layer(std::span(seq).first(longest), w, layer).delta);
      for (auto& pt : curve) {
        if (pt.length == 0) continue;
        pt.value += sums[pt.length - 1];
        ++pt.samples;
      }
    } else {
      for (auto& pt : curve) {
        if (seq.size() != pt.length || pt.length == 0) continue;
        pt.value += prefix_delta_sums(capture_layer(seq, w, layer).delta).back();
        ++pt.samples;
      }
    }
  }
  for (auto& pt : curve)
    if (pt.samples) pt.value /= static_cast<double>(pt.samples);
  return curve;
}

std::vector<LayerScore> rank_layers_by_distance(const ModelWeights& w,
                                                const std::vector<std::vector<int>>& calibration,
                                                std::size_t channels_per_layer) {
  if (calibration.empty()) throw std::invalid_argument("calibration set is empty");
  const std::size_t D = w.config.d_inner();
  const auto channels = evenly_spaced_channels(D, channels_per_layer == 0 ? D : channels_per_layer);
  std::vector<double> total(w.blocks.size(), 0.0);
  for (const auto& seq : calibration) {
    ForwardOptions opt;
    opt.observe = [&](const LayerTap& tap) {
      const Tensor a = w.blocks[tap.layer].s6.a();
      for (std::size_t d : channels) total[tap.layer] += mamba_mean_distance(channel_ssm(tap.ssm, a, d));
    };
    forward_hidden(seq, w, opt);
  }
  std::vector<LayerScore> out;
  const double denom = static_cast<double>(calibration.size() * channels.size());
  for (std::size_t l = 0; l < total.size(); ++l) out.push_back({l, total[l] / denom});
  std::stable_sort(out.begin(), out.end(),
                   [](const LayerScore& a, const LayerScore& b) { return a.mean_distance > b.mean_distance; });
  return out;
}

ErfReport build_erf_report(const ModelWeights& w, const std::vector<std::vector<int>>& sequences,
                           std::span<const std::size_t> lengths, const ErfOptions& opt) {
  const std::size_t D = w.config.d_inner(), n_layers = w.blocks.size();
  const auto channels = evenly_spaced_channels(D, opt.channels_per_layer == 0 ? D : opt.channels_per_layer);
  ErfReport report;
  for (std::size_t L : lengths) {
    if (L == 0) continue;
    std::vector<ErfRow> rows(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      rows[l].layer = l;
      rows[l].context_length = L;
      rows[l].channels = channels;
      rows[l].channel_mean_distance.assign(channels.size(), 0.0);
    }
    for (const auto& seq : sequences) {
      if (seq.size() < L) continue;
      ForwardOptions fo;
      fo.observe = [&](const LayerTap& tap) {
        ErfRow& row = rows[tap.layer];
        const Tensor a = w.blocks[tap.layer].s6.a();
        for (std::size_t k = 0; k < channels.size(); ++k) {
          const ChannelSsm ch = channel_ssm(tap.ssm, a, channels[k]);
          bool zero = false;
          double md = 0.0;
          if (opt.all_rows) {
            const Tensor alpha = materialize_alpha(ch, opt.alpha_cap);
            for (std::size_t i = 0; i < L; ++i) {
              bool z = false;
              md += attention_mean_distance(alpha, i, &z);
              zero = zero || z;
            }
            md /= static_cast<double>(L);
          } else {
            md = mamba_mean_distance(ch, &zero);
          }
          row.channel_mean_distance[k] += md;
          row.zero_rows += zero ? 1 : 0;
        }
        row.delta_sum += prefix_delta_sums(tap.ssm.delta).back();
        ++row.samples;
      };
      forward_hidden(std::span(seq).first(L), w, fo);
    }
    for (auto& row : rows) {
      if (row.samples == 0) continue;
      double sum = 0.0;
      for (auto& v : row.channel_mean_distance) {
        v /= static_cast<double>(row.samples);
        sum += v;
      }
      row.mean_distance = channels.empty() ? 0.0 : sum / static_cast<double>(channels.size());
      row.normalized_mean_distance = row.mean_distance / static_cast<double>(L);
      row.delta_sum /= static_cast<double>(row.samples);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void ErfReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "layer,context_length,mean_distance,normalized_mean_distance,delta_sum,samples\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << r.context_length << ',' << r.mean_distance << ',' << r.normalized_mean_distance << ','
        << r.delta_sum << ',' << r.samples << '\n';
  }
}

void ErfReport::write_json(const std::filesystem::path& path) const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"layer", r.layer},
                 {"context_length", r.context_length},
                 {"mean_distance", r.mean_distance},
                 {"normalized_mean_distance", r.normalized_mean_distance},
                 {"delta_sum", r.delta_sum},
                 {"samples", r.samples},
                 {"zero_rows", r.zero_rows},
                 {"channels", r.channels},
                 {"channel_mean_distance", r.channel_mean_distance}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace deci
