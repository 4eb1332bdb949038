#include <unistd.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "deci/bench.hpp"
#include "deci/config.hpp"
#include "deci/hidden_attention.hpp"
#include "deci/io.hpp"
#include "deci/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace deci;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string deci;  // on | off | "" (config decides)
  std::optional<std::size_t> l_base;
  std::optional<double> beta;
  std::string deci_layers;  // comma list or "auto"
  std::optional<std::size_t> min_seq_len;
  std::string strategy;
  std::string lengths;
  std::string positions;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> train_len;
  std::optional<std::size_t> steps;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
std::vector<T> split_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw UsageError(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(flag) + " needs at least one value");
  return out;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint; a seeded initial model when absent")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "seed for model init, data and sampling");
  cmd->add_option("--deci", f.deci, "enable decimation")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--l-base", f.l_base, "tokens kept after the first decimating layer");
  cmd->add_option("--beta", f.beta, "per-layer decay of the budget, in (0, 1]");
  cmd->add_option("--deci-layers", f.deci_layers, "comma separated layer indices, or auto");
  cmd->add_option("--min-seq-len", f.min_seq_len, "floor on kept tokens");
  cmd->add_option("--strategy", f.strategy, "delta-mean | random | max-norm | top-k-percent");
  cmd->add_option("--lengths", f.lengths, "comma separated context lengths");
  cmd->add_option("--positions", f.positions, "comma separated needle depths in [0, 1]");
  cmd->add_option("--reps", f.reps, "timed repetitions for bench");
  cmd->add_option("--train-len", f.train_len, "training length; eval lengths scale from it");
  cmd->add_option("--steps", f.steps, "optimiser steps for train");
}

struct Run {
  RunConfig cfg;
  fs::path out;
  bool auto_layers = false;
};

Run resolve(const Flags& f) {
  Run r;
  r.cfg = f.config.empty() ? parse_config(json::object()) : load_config(f.config);
  RunConfig& c = r.cfg;
  if (!f.out.empty()) c.out = f.out;
  if (f.seed) {
    c.seed = *f.seed;
    c.train.seed = *f.seed;
  }
  if (f.deci == "on") c.decimation_enabled = true;
  if (f.deci == "off") c.decimation_enabled = false;
  if (f.l_base) c.decimation.l_base = *f.l_base;
  if (f.beta) c.decimation.beta = *f.beta;
  if (f.min_seq_len) c.decimation.min_seq_len = *f.min_seq_len;
  if (!f.strategy.empty()) c.decimation.strategy = parse_strategy(f.strategy);
  if (f.deci_layers == "auto") {
    c.decimation.layers.clear();
  } else if (!f.deci_layers.empty()) {
    c.decimation.layers = split_list<std::size_t>(f.deci_layers, "--deci-layers");
  }
  if (!f.positions.empty()) c.passkey.task.positions = split_list<double>(f.positions, "--positions");
  if (f.reps) c.bench.reps = *f.reps;
  if (f.train_len) c.train.train_seq_len = *f.train_len;
  if (f.steps) c.train.steps = *f.steps;
  c.validate();
  r.auto_layers = c.decimation.layers.empty();
  r.out = c.out;
  fs::create_directories(r.out);
  std::ofstream(r.out / "run_config.json") << to_json(c).dump(2) << '\n';
  return r;
}

ModelWeights load_model(const Flags& f, const RunConfig& c) {
  if (f.checkpoint.empty()) return init_model(c.model, c.seed);
  ModelWeights w = load_checkpoint(f.checkpoint);
  return w;
}

std::vector<std::size_t> lengths_for(const Flags& f, const RunConfig& c, const std::vector<double>& multipliers,
                                     std::size_t floor) {
  if (!f.lengths.empty()) return split_list<std::size_t>(f.lengths, "--lengths");
  return scaled_lengths(c.train.train_seq_len, multipliers, floor);
}

std::vector<std::vector<int>> calibration_for(const RunConfig& c, std::size_t L, std::size_t n) {
  if (c.task == "lm") return corpus_calibration(load_lm_corpus(c.lm, c.seed).heldout, L, n);
  return passkey_calibration(c.passkey.task, L, n, c.seed + 1);
}

// Decimation settings with "auto" resolved to the two highest ranked layers.
std::optional<DecimationConfig> decimation_for(const Run& r, const ModelWeights& w, std::size_t top = 2) {
  if (!r.cfg.decimation_enabled) return std::nullopt;
  DecimationConfig d = r.cfg.decimation;
  if (r.auto_layers) {
    const auto calib = calibration_for(r.cfg, r.cfg.train.train_seq_len, r.cfg.erf.calibration_samples);
    d.layers = top_ranked_layers(w, calib, top, r.cfg.erf.options.channels_per_layer);
  }
  d.validate(w.blocks.size());
  return d;
}

json decimation_json(const std::optional<DecimationConfig>& d) {
  if (!d) return nullptr;
  return {{"l_base", d->l_base},         {"beta", d->beta},         {"layers", d->layers},
          {"min_seq_len", d->min_seq_len}, {"strategy", to_string(d->strategy)}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_train(const Flags& f, const std::string& task_flag) {
  Run r = resolve(f);
  RunConfig& c = r.cfg;
  if (!task_flag.empty()) c.task = task_flag;
  ModelWeights w = load_model(f, c);
  TrainHooks hooks;
  hooks.out_dir = r.out;
  TrainLog log;
  // With "auto" layers the ranking comes from the starting weights (a --checkpoint to fine-tune).
  const auto deci = decimation_for(r, w);
  if (c.task == "passkey") {
    log = train_passkey(w, c.train, c.passkey.task, deci ? &*deci : nullptr, hooks);
  } else {
    const CorpusSplit corpus = load_lm_corpus(c.lm, c.seed);
    log = train_chunked_lm(w, c.train, corpus.train, deci ? &*deci : nullptr, hooks);
  }
  const json summary{{"task", c.task},
                     {"decimation", decimation_json(deci)},
                     {"steps", log.steps.size()},
                     {"final_loss", log.steps.empty() ? 0.0 : log.steps.back().loss},
                     {"parameters", parameter_count(w)},
                     {"checkpoint", (r.out / "checkpoint.bin").string()}};
  write_json(r.out / "train_summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_eval_passkey(const Flags& f) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const auto lengths = lengths_for(f, c, c.passkey.task.length_multipliers, passkey_overhead(c.passkey.task));
  const auto deci = decimation_for(r, w);
  const PasskeyGrid grid = eval_passkey(w, c.passkey.task, lengths, c.passkey.task.positions,
                                        c.passkey.samples_per_cell, c.seed, deci ? &*deci : nullptr);
  grid.write_csv(r.out / "passkey_grid.csv");
  json per_length = json::array();
  for (std::size_t L : lengths) per_length.push_back({{"length", L}, {"mean_accuracy", grid.mean_accuracy(L)}});
  const json summary{{"decimation", decimation_json(deci)}, {"samples_per_cell", c.passkey.samples_per_cell},
                     {"lengths", per_length}};
  write_json(r.out / "passkey_summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_eval_ppl(const Flags& f) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const CorpusSplit corpus = load_lm_corpus(c.lm, c.seed);
  const auto lengths = lengths_for(f, c, c.lm.context_multipliers, 2);
  const auto deci = decimation_for(r, w);
  std::vector<PerplexityPoint> curve;
  json rows = json::array();
  for (std::size_t L : lengths) {
    const PerplexityResult p =
        lm_perplexity_farthest(w, corpus.heldout, L, c.lm.n_last, c.lm.n_windows, deci ? &*deci : nullptr);
    curve.push_back({L, p.perplexity});
    rows.push_back({{"context_length", L}, {"perplexity", p.perplexity}, {"labels", p.labels}, {"stride", p.stride}});
  }
  write_ppl_curve(curve, r.out / "ppl_curve.csv");
  const json summary{{"decimation", decimation_json(deci)}, {"n_last", c.lm.n_last}, {"curve", rows}};
  write_json(r.out / "ppl_summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_analyze_erf(const Flags& f, bool alpha) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const auto lengths = lengths_for(f, c, c.erf.length_multipliers, 2);
  const std::size_t longest = *std::max_element(lengths.begin(), lengths.end());
  // Long sequences evaluated on nested prefixes.
  const auto sequences = calibration_for(c, longest, c.erf.calibration_samples);
  const ErfReport report = build_erf_report(w, sequences, lengths, c.erf.options);
  report.write_csv(r.out / "erf.csv");
  report.write_json(r.out / "erf.json");
  if (alpha || c.erf.write_alpha) {
    const std::size_t L = std::min<std::size_t>(c.train.train_seq_len, sequences.front().size());
    const std::span<const int> tokens(sequences.front().data(), L);
    const auto channels = evenly_spaced_channels(w.config.d_inner(), c.erf.options.channels_per_layer);
    for (std::size_t l = 0; l < w.blocks.size(); ++l) {
      const HiddenAttention ha = extract_hidden_attention(tokens, w, l, channels, c.erf.options.alpha_cap);
      write_hidden_attention(ha, r.out / "alpha" / ("layer_" + std::to_string(l)));
    }
  }
  std::cout << json{{"rows", report.rows.size()}, {"csv", (r.out / "erf.csv").string()}}.dump() << '\n';
  return 0;
}

int cmd_rank_layers(const Flags& f) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const auto calib = calibration_for(c, c.train.train_seq_len, c.erf.calibration_samples);
  const auto ranking = rank_layers_by_distance(w, calib, c.erf.options.channels_per_layer);
  std::ofstream csv(r.out / "layer_ranking.csv");
  csv.precision(10);
  csv << "rank,layer,mean_distance\n";
  json j = json::array();
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    csv << i << ',' << ranking[i].layer << ',' << ranking[i].mean_distance << '\n';
    j.push_back({{"rank", i}, {"layer", ranking[i].layer}, {"mean_distance", ranking[i].mean_distance}});
  }
  write_json(r.out / "layer_ranking.json", j);
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_bench(const Flags& f) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const std::vector<std::size_t> lengths =
      f.lengths.empty() ? c.bench.lengths : split_list<std::size_t>(f.lengths, "--lengths");
  DecimationConfig d = c.decimation;
  // Mid-depth by default, so the split compares equal halves.
  if (r.auto_layers) d.layers = {w.blocks.size() / 2};
  d.validate(w.blocks.size());
  const ScanMode mode = c.bench.parallel_scan ? ScanMode::parallel : ScanMode::sequential;
  std::vector<BenchResult> results;
  json rows = json::array();
  for (std::size_t L : lengths) {
    for (Variant v : {Variant::baseline, Variant::decimated}) {
      results.push_back(time_prefill(w, v, d, L, c.bench.reps, c.bench.warmup, mode, c.seed));
      const BenchResult& b = results.back();
      rows.push_back({{"variant", to_string(v)},
                      {"length", L},
                      {"median_s", b.median},
                      {"p10_s", b.p10},
                      {"p90_s", b.p90},
                      {"ops", b.ops},
                      {"final_length", b.final_length},
                      {"before_split_s", b.before_split},
                      {"after_split_s", b.after_split},
                      {"block_median_s", b.block_median}});
    }
  }
  write_bench_csv(results, r.out / "bench.csv");
  const json summary{{"threads", 1},
                     {"parallel_scan", c.bench.parallel_scan},
                     {"warmup", c.bench.warmup},
                     {"reps", c.bench.reps},
                     {"decimation", decimation_json(d)},
                     {"results", rows}};
  write_json(r.out / "bench.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_ablate(const Flags& f, const std::string& strategies) {
  Run r = resolve(f);
  const RunConfig& c = r.cfg;
  const ModelWeights w = load_model(f, c);
  const auto lengths = lengths_for(f, c, c.passkey.task.length_multipliers, passkey_overhead(c.passkey.task));
  Run on = r;
  on.cfg.decimation_enabled = true;
  const DecimationConfig base = *decimation_for(on, w);
  std::ofstream csv(r.out / "ablation.csv");
  csv.precision(10);
  csv << "strategy,seed,length,accuracy,samples,ci_low,ci_high\n";
  json summary = json::array();
  for (const auto& name : split_list<std::string>(strategies, "--strategies")) {
    DecimationConfig d = base;
    d.strategy = parse_strategy(name);
    d.seed = c.seed;
    const PasskeyGrid grid = eval_passkey(w, c.passkey.task, lengths, c.passkey.task.positions,
                                          c.passkey.samples_per_cell, c.seed, &d);
    double extrapolation = 0.0;
    std::size_t counted = 0;
    for (std::size_t L : lengths) {
      const double acc = grid.mean_accuracy(L);
      const double n = static_cast<double>(c.passkey.samples_per_cell * c.passkey.task.positions.size());
      // Normal-approximation 95% interval on the pooled cell accuracy.
      const double half = 1.96 * std::sqrt(acc * (1.0 - acc) / n);
      csv << to_string(d.strategy) << ',' << c.seed << ',' << L << ',' << acc << ',' << n << ','
          << std::max(0.0, acc - half) << ',' << std::min(1.0, acc + half) << '\n';
      if (L > c.train.train_seq_len) {
        extrapolation += acc;
        ++counted;
      }
    }
    summary.push_back({{"strategy", to_string(d.strategy)},
                       {"seed", c.seed},
                       {"layers", d.layers},
                       {"mean_extrapolation_accuracy", counted ? extrapolation / double(counted) : 0.0}});
  }
  write_json(r.out / "ablation.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

void report_error(const char* kind, const std::string& message) {
  const bool color = std::getenv("NO_COLOR") == nullptr && isatty(STDERR_FILENO);
  std::cerr << (color ? "\033[31merror\033[0m " : "error ") << json{{"kind", kind}, {"message", message}}.dump()
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective state-space models with token decimation"};
  app.require_subcommand(1);
  Flags f;
  std::string task, strategies = "delta,random,max-norm,topk";
  bool alpha = false;

  auto* train = app.add_subcommand("train", "train a model on passkey retrieval or language modelling");
  add_common(train, f);
  train->add_option("--task", task, "passkey | lm")->check(CLI::IsMember({"passkey", "lm"}));
  auto* eval_pk = app.add_subcommand("eval-passkey", "passkey accuracy over lengths and needle depths");
  add_common(eval_pk, f);
  auto* eval_ppl = app.add_subcommand("eval-ppl", "farthest-label perplexity over context lengths");
  add_common(eval_ppl, f);
  auto* erf = app.add_subcommand("analyze-erf", "mean-distance and delta-sum report per layer and length");
  add_common(erf, f);
  erf->add_flag("--alpha", alpha, "also write hidden-attention tiles at the training length");
  auto* rank = app.add_subcommand("rank-layers", "order layers by mean distance on calibration data");
  add_common(rank, f);
  auto* bench = app.add_subcommand("bench", "prefill timing, baseline against decimated");
  add_common(bench, f);
  auto* ablate = app.add_subcommand("ablate", "passkey accuracy per decimation strategy");
  add_common(ablate, f);
  ablate->add_option("--strategies", strategies, "comma separated strategy names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(f, task);
    if (*eval_pk) return cmd_eval_passkey(f);
    if (*eval_ppl) return cmd_eval_ppl(f);
    if (*erf) return cmd_analyze_erf(f, alpha);
    if (*rank) return cmd_rank_layers(f);
    if (*bench) return cmd_bench(f);
    if (*ablate) return cmd_ablate(f, strategies);
  } catch (const UsageError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const ConfigError& e) {
    report_error("config", e.what());
    return 2;
  } catch (const IntegrityError& e) {
    report_error("integrity", e.what());
    return 1;
  } catch (const VersionError& e) {
    report_error("version", e.what());
    return 1;
  } catch (const ResourceError& e) {
    report_error("resource", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
  return 2;
}
