#include "deci/config.hpp"

#include <fstream>
#include <set>

namespace deci {

namespace {

using json = nlohmann::json;

// Wraps one JSON object; every key read is recorded so leftovers can be
// reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  Reader sub(const std::string& key) {
    static const json empty = json::object();
    const json* v = take(key);
    return Reader(v ? *v : empty, field(key));
  }

  void get(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<long long>() < 0))
        throw ConfigError(field(key) + " must be a nonnegative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void get(const std::string& key, std::vector<T>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + " must be an array");
      std::vector<T> items;
      for (std::size_t i = 0; i < v->size(); ++i) {
        json wrap = json::object();
        wrap["v"] = (*v)[i];
        Reader r(wrap, field(key) + "[" + std::to_string(i) + "]");
        T item{};
        r.get_self(item);
        items.push_back(std::move(item));
      }
      out = std::move(items);
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + field(k) + "'");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <class T>
  void get_self(T& out) {
    // Array elements are read through a one-key wrapper.
    get("v", out);
  }

  std::string label() const { return path_.empty() ? "config" : path_; }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Element errors mention "[i].v"; strip the wrapper key.
ConfigError tidy(const ConfigError& e) {
  std::string m = e.what();
  for (auto pos = m.find("].v"); pos != std::string::npos; pos = m.find("].v")) m.erase(pos + 1, 2);
  return ConfigError(m);
}

void read_model(Reader r, ModelConfig& m) {
  r.get("vocab_size", m.vocab_size);
  r.get("d_model", m.d_model);
  r.get("expand", m.expand);
  r.get("n_layers", m.n_layers);
  r.get("d_state", m.d_state);
  r.get("d_conv", m.d_conv);
  r.finish();
}

void read_train(Reader r, TrainConfig& t) {
  r.get("learning_rate", t.learning_rate);
  r.get("weight_decay", t.weight_decay);
  r.get("grad_clip_norm", t.grad_clip_norm);
  r.get("batch_size", t.batch_size);
  r.get("steps", t.steps);
  r.get("train_seq_len", t.train_seq_len);
  r.get("warmup_steps", t.warmup_steps);
  r.get("min_lr_ratio", t.min_lr_ratio);
  r.get("checkpoint_every", t.checkpoint_every);
  r.finish();
}

void read_decimation(Reader r, RunConfig& c) {
  DecimationConfig& d = c.decimation;
  r.get("enabled", c.decimation_enabled);
  r.get("l_base", d.l_base);
  r.get("beta", d.beta);
  r.get("layers", d.layers);
  r.get("min_seq_len", d.min_seq_len);
  std::string strategy = to_string(d.strategy);
  r.get("strategy", strategy);
  try {
    d.strategy = parse_strategy(strategy);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field("strategy") + ": " + e.what());
  }
  r.get("top_k_percent", d.top_k_percent);
  r.get("prefill_only", d.prefill_only);
  r.get("decode_chunk", d.decode_chunk);
  r.get("seed", d.seed);
  r.finish();
}

void read_passkey(Reader r, PasskeyEvalConfig& p) {
  r.get("digits", p.task.digits);
  r.get("filler", p.task.filler);
  r.get("positions", p.task.positions);
  r.get("length_multipliers", p.task.length_multipliers);
  r.get("samples_per_cell", p.samples_per_cell);
  r.finish();
}

void read_lm(Reader r, LmConfig& l) {
  r.get("corpus", l.corpus);
  r.get("corpus_bytes", l.corpus_bytes);
  r.get("heldout_fraction", l.heldout_fraction);
  r.get("n_last", l.n_last);
  r.get("n_windows", l.n_windows);
  r.get("context_multipliers", l.context_multipliers);
  r.finish();
}

void read_erf(Reader r, ErfConfig& e) {
  r.get("channels_per_layer", e.options.channels_per_layer);
  r.get("all_rows", e.options.all_rows);
  r.get("alpha_cap", e.options.alpha_cap);
  r.get("calibration_samples", e.calibration_samples);
  r.get("length_multipliers", e.length_multipliers);
  r.get("write_alpha", e.write_alpha);
  r.finish();
}

void read_bench(Reader r, BenchConfig& b) {
  r.get("reps", b.reps);
  r.get("warmup", b.warmup);
  r.get("lengths", b.lengths);
  r.get("parallel_scan", b.parallel_scan);
  r.finish();
}

void positive_list(const std::vector<double>& v, const std::string& name) {
  for (double x : v)
    if (!(x > 0.0)) throw ConfigError(name + " entries must be positive");
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  train.validate();
  decimation.validate(model.n_layers);
  if (train.train_seq_len < passkey_overhead(passkey.task) && task == "passkey")
    throw ConfigError("train.train_seq_len is shorter than the passkey's fixed tokens");
  if (task != "passkey" && task != "lm") throw ConfigError("task must be \"passkey\" or \"lm\"");
  if (passkey.task.digits == 0) throw ConfigError("passkey.digits must be positive");
  for (double p : passkey.task.positions)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("passkey.positions entries must lie in [0, 1]");
  positive_list(passkey.task.length_multipliers, "passkey.length_multipliers");
  if (passkey.samples_per_cell == 0) throw ConfigError("passkey.samples_per_cell must be positive");
  if (!(lm.heldout_fraction > 0.0 && lm.heldout_fraction < 1.0))
    throw ConfigError("lm.heldout_fraction must be in (0, 1)");
  if (lm.n_last == 0 || lm.n_windows == 0) throw ConfigError("lm.n_last and lm.n_windows must be positive");
  positive_list(lm.context_multipliers, "lm.context_multipliers");
  positive_list(erf.length_multipliers, "erf.length_multipliers");
  if (erf.calibration_samples == 0) throw ConfigError("erf.calibration_samples must be positive");
  if (bench.reps < 5) throw ConfigError("bench.reps must be at least 5");
  for (std::size_t L : bench.lengths)
    if (L == 0) throw ConfigError("bench.lengths entries must be positive");
  if (out.empty()) throw ConfigError("out must not be empty");
}

RunConfig parse_config(const nlohmann::json& doc) {
  RunConfig c;
  try {
    Reader r(doc, "");
    read_model(r.sub("model"), c.model);
    read_train(r.sub("train"), c.train);
    read_decimation(r.sub("decimation"), c);
    r.get("task", c.task);
    read_passkey(r.sub("passkey"), c.passkey);
    read_lm(r.sub("lm"), c.lm);
    read_erf(r.sub("erf"), c.erf);
    read_bench(r.sub("bench"), c.bench);
    r.get("out", c.out);
    r.get("seed", c.seed);
    r.finish();
  } catch (const ConfigError& e) {
    throw tidy(e);
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

nlohmann::json to_json(const RunConfig& c) {
  const DecimationConfig& d = c.decimation;
  const TrainConfig& t = c.train;
  json filler = json::array();
  for (const auto& s : c.passkey.task.filler) filler.push_back(s);
  return {
      {"model", to_json(c.model)},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"grad_clip_norm", t.grad_clip_norm},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"train_seq_len", t.train_seq_len},
        {"warmup_steps", t.warmup_steps},
        {"min_lr_ratio", t.min_lr_ratio},
        {"checkpoint_every", t.checkpoint_every}}},
      {"decimation",
       {{"enabled", c.decimation_enabled},
        {"l_base", d.l_base},
        {"beta", d.beta},
        {"layers", d.layers},
        {"min_seq_len", d.min_seq_len},
        {"strategy", to_string(d.strategy)},
        {"top_k_percent", d.top_k_percent},
        {"prefill_only", d.prefill_only},
        {"decode_chunk", d.decode_chunk},
        {"seed", d.seed}}},
      {"task", c.task},
      {"passkey",
       {{"digits", c.passkey.task.digits},
        {"filler", filler},
        {"positions", c.passkey.task.positions},
        {"length_multipliers", c.passkey.task.length_multipliers},
        {"samples_per_cell", c.passkey.samples_per_cell}}},
      {"lm",
       {{"corpus", c.lm.corpus},
        {"corpus_bytes", c.lm.corpus_bytes},
        {"heldout_fraction", c.lm.heldout_fraction},
        {"n_last", c.lm.n_last},
        {"n_windows", c.lm.n_windows},
        {"context_multipliers", c.lm.context_multipliers}}},
      {"erf",
       {{"channels_per_layer", c.erf.options.channels_per_layer},
        {"all_rows", c.erf.options.all_rows},
        {"alpha_cap", c.erf.options.alpha_cap},
        {"calibration_samples", c.erf.calibration_samples},
        {"length_multipliers", c.erf.length_multipliers},
        {"write_alpha", c.erf.write_alpha}}},
      {"bench",
       {{"reps", c.bench.reps},
        {"warmup", c.bench.warmup},
        {"lengths", c.bench.lengths},
        {"parallel_scan", c.bench.parallel_scan}}},
      {"out", c.out},
      {"seed", c.seed},
  };
}

}  // namespace deci
