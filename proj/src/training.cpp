#include "deci/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "deci/autodiff.hpp"
#include "deci/io.hpp"
#include "deci/mamba_tape.hpp"

namespace deci {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be nonnegative");
  if (grad_clip_norm < 0.0) throw ConfigError("train.grad_clip_norm must be nonnegative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train_seq_len < 2) throw ConfigError("train.train_seq_len must be at least 2");
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train.min_lr_ratio must be in (0, 1]");
}

double learning_rate_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) return cfg.learning_rate * static_cast<double>(step + 1) / cfg.warmup_steps;
  if (cfg.min_lr_ratio >= 1.0 || cfg.steps <= cfg.warmup_steps) return cfg.learning_rate;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.steps - cfg.warmup_steps);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  return cfg.learning_rate * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

double accumulate_loss_and_grad(const ModelWeights& w, std::span<const int> tokens,
                                std::span<const std::size_t> positions, std::span<const int> targets,
                                const TokenSelector& select, double weight, std::vector<Tensor>& grad_sum) {
  if (positions.size() != targets.size()) throw ShapeError("positions and targets differ in length");
  ad::Tape tape;
  ParamBinder bind(tape);
  const TapeForward tf = forward_hidden_tape(bind, tokens, w, select);
  // Map requested original positions onto surviving rows.
  std::vector<std::size_t> rows;
  rows.reserve(positions.size());
  for (std::size_t p : positions) {
    const auto it = std::lower_bound(tf.positions.begin(), tf.positions.end(), p);
    if (it == tf.positions.end() || *it != p)
      throw std::logic_error("label position " + std::to_string(p) + " did not survive decimation");
    rows.push_back(static_cast<std::size_t>(it - tf.positions.begin()));
  }
  const ad::Var logits = lm_head_tape(bind, ad::gather_rows(tf.hidden, rows), w);
  const ad::Var loss = ad::cross_entropy(logits, targets);
  const double value = loss.value().item();
  if (weight != 0.0) {
    tape.backward(loss);
    auto grads = bind.gradients(w);
    if (grad_sum.empty()) {
      for (const auto& [name, t] : named_parameters(w)) grad_sum.emplace_back(t->shape());
    }
    for (std::size_t i = 0; i < grads.size(); ++i) add_scaled(grad_sum[i], grads[i], weight);
  }
  return value;
}

LabeledSequence passkey_training_example(const PasskeySample& s) {
  LabeledSequence ex;
  ex.tokens = s.prompt;
  ex.tokens.insert(ex.tokens.end(), s.answer.begin(), s.answer.end() - 1);
  for (std::size_t i = 0; i < s.answer.size(); ++i) ex.positions.push_back(s.prompt.size() - 1 + i);
  ex.targets = s.answer;
  return ex;
}

namespace {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    out_.open(dir / "metrics.csv");
    if (!out_) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    out_.precision(10);
    out_ << "step,loss,lr,grad_norm\n";
  }
  void write(const StepMetrics& m) {
    if (out_.is_open()) out_ << m.step << ',' << m.loss << ',' << m.lr << ',' << m.grad_norm << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

// Shared optimisation loop; `sample` adds one example's gradient and returns its loss.
template <class Sample>
TrainLog run_training(ModelWeights& w, const TrainConfig& cfg, const TrainHooks& hooks, Sample&& sample) {
  cfg.validate();
  const AdamWConfig opt{0.9, 0.999, 1e-8, cfg.weight_decay, cfg.grad_clip_norm};
  const auto params = parameter_pointers(w);
  const auto decay = weight_decay_mask(w);
  AdamWState state;
  MetricsWriter metrics(hooks.out_dir);
  TrainLog log;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> grads;
    double loss = 0.0;
    // Ordered reduction over the batch keeps runs bitwise reproducible.
    for (std::size_t b = 0; b < cfg.batch_size; ++b) loss += sample(rng, grads);
    for (auto& g : grads)
      for (auto& v : g.values()) v /= static_cast<double>(cfg.batch_size);
    const double lr = learning_rate_at(step, cfg);
    const double norm = adamw_step(params, std::move(grads), decay, state, opt, lr);
    const StepMetrics m{step + 1, loss / static_cast<double>(cfg.batch_size), lr, norm};
    log.steps.push_back(m);
    metrics.write(m);
    if (hooks.on_step) hooks.on_step(m);
    if (!hooks.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      save_checkpoint(w, hooks.out_dir / ("checkpoint-" + std::to_string(step + 1) + ".bin"));
    }
  }
  if (!hooks.out_dir.empty()) save_checkpoint(w, hooks.out_dir / "checkpoint.bin");
  return log;
}

}  // namespace

TrainLog train_passkey(ModelWeights& w, const TrainConfig& cfg, const PasskeyTaskConfig& task,
                       const DecimationConfig* deci, const TrainHooks& hooks) {
  TokenSelector select;
  if (deci && !deci->layers.empty()) {
    deci->validate(w.blocks.size());
    // The labelled rows are the last `digits` tokens; they always survive.
    DecimationConfig c = *deci;
    c.protected_suffix = task.digits;
    select = make_selector(c);
  }
  return run_training(w, cfg, hooks, [&](std::mt19937_64& rng, std::vector<Tensor>& grads) {
    const double position = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const LabeledSequence ex =
        passkey_training_example(generate_passkey_sample(task, cfg.train_seq_len, position, rng));
    return accumulate_loss_and_grad(w, ex.tokens, ex.positions, ex.targets, select, 1.0, grads);
  });
}

double chunked_lm_loss(const ModelWeights& w, std::span<const int> window, const DecimationConfig* deci,
                       std::vector<Tensor>* grad_sum) {
  if (window.size() < 3) throw InputError("LM window needs at least 3 tokens");
  const std::size_t L = window.size() - 1, half = L / 2;
  const auto targets = window.subspan(1);
  std::vector<Tensor> scratch;
  std::vector<Tensor>& grads = grad_sum ? *grad_sum : scratch;
  const double weight = grad_sum ? 1.0 : 0.0;

  std::vector<std::size_t> first(half), second(L - half);
  for (std::size_t i = 0; i < half; ++i) first[i] = i;
  for (std::size_t i = half; i < L; ++i) second[i - half] = i;
  const double share1 = static_cast<double>(half) / static_cast<double>(L);
  const double share2 = 1.0 - share1;

  TokenSelector select;
  if (deci && !deci->layers.empty()) {
    DecimationConfig c = *deci;
    c.protected_suffix = L - half;
    select = make_selector(c);
  }
  const double l1 =
      accumulate_loss_and_grad(w, window.first(half), first, targets.first(half), {}, weight * share1, grads);
  const double l2 = accumulate_loss_and_grad(w, window.first(L), second, targets.subspan(half), select,
                                             weight * share2, grads);
  return share1 * l1 + share2 * l2;
}

TrainLog train_chunked_lm(ModelWeights& w, const TrainConfig& cfg, std::span<const int> corpus,
                          const DecimationConfig* deci, const TrainHooks& hooks) {
  if (cfg.train_seq_len % 2 != 0) throw ConfigError("train.train_seq_len must be even for the chunked LM loss");
  if (corpus.size() < cfg.train_seq_len + 1) throw InputError("corpus shorter than one training window");
  if (deci) deci->validate(w.blocks.size());
  return run_training(w, cfg, hooks, [&](std::mt19937_64& rng, std::vector<Tensor>& grads) {
    const std::size_t start = rng() % (corpus.size() - cfg.train_seq_len);
    return chunked_lm_loss(w, corpus.subspan(start, cfg.train_seq_len + 1), deci, &grads);
  });
}

double PasskeyGrid::mean_accuracy(std::size_t length) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.length != length) continue;
    sum += c.accuracy;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

void PasskeyGrid::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "length,position,accuracy\n";
  for (const auto& c : cells) out << c.length << ',' << c.position << ',' << c.accuracy << '\n';
}

PasskeyGrid eval_passkey(const ModelWeights& w, const PasskeyTaskConfig& task, std::span<const std::size_t> lengths,
                         std::span<const double> positions, std::size_t samples_per_cell, std::uint64_t seed,
                         const DecimationConfig* deci) {
  PasskeyGrid grid;
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    for (std::size_t pi = 0; pi < positions.size(); ++pi) {
      std::size_t correct = 0;
      for (std::size_t k = 0; k < samples_per_cell; ++k) {
        std::seed_seq seq{seed, static_cast<std::uint64_t>(lengths[li]), static_cast<std::uint64_t>(pi),
                          static_cast<std::uint64_t>(k)};
        std::mt19937_64 rng(seq);
        const PasskeySample s = generate_passkey_sample(task, lengths[li], positions[pi], rng);
        if (generate_greedy(s.prompt, s.answer.size(), w, deci) == s.answer) ++correct;
      }
      grid.cells.push_back({lengths[li], positions[pi],
                            samples_per_cell ? static_cast<double>(correct) / samples_per_cell : 0.0,
                            samples_per_cell});
    }
  }
  return grid;
}

PerplexityResult lm_perplexity_farthest(const ModelWeights& w, std::span<const int> corpus, std::size_t window_len,
                                        std::size_t n_last, std::size_t n_windows, const DecimationConfig* deci) {
  if (window_len == 0 || n_windows == 0) throw InputError("window_len and n_windows must be positive");
  if (corpus.size() < window_len + 1) throw InputError("corpus shorter than one evaluation window");
  n_last = std::min(n_last, window_len);
  const std::size_t span = corpus.size() - (window_len + 1);
  PerplexityResult r;
  r.stride = n_windows > 1 ? span / (n_windows - 1) : 0;
  TokenSelector select;
  if (deci && !deci->layers.empty()) {
    deci->validate(w.blocks.size());
    DecimationConfig c = *deci;
    c.protected_suffix = n_last;
    select = make_selector(c);
  }
  double nll = 0.0;
  for (std::size_t k = 0; k < n_windows; ++k) {
    const auto window = corpus.subspan(k * r.stride, window_len + 1);
    ForwardOptions opt;
    opt.select = select;
    const ForwardResult fr = forward_hidden(window.first(window_len), w, opt);
    const std::size_t first_row = fr.positions.size() - n_last;
    std::vector<std::size_t> rows(n_last);
    for (std::size_t i = 0; i < n_last; ++i) rows[i] = first_row + i;
    const Tensor logits = lm_head(gather_rows(fr.hidden, rows), w);
    for (std::size_t i = 0; i < n_last; ++i) {
      const auto row = logits.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const int target = window[fr.positions[first_row + i] + 1];
      nll += mx + std::log(z) - row[static_cast<std::size_t>(target)];
    }
    r.labels += n_last;
    ++r.windows;
  }
  r.mean_nll = nll / static_cast<double>(r.labels);
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

void write_ppl_curve(const std::vector<PerplexityPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "context_length,perplexity\n";
  for (const auto& p : curve) out << p.context_length << ',' << p.perplexity << '\n';
}

}  // namespace deci
