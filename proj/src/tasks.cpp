#include "deci/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace deci {

std::vector<int> encode_bytes(std::string_view text) {
  std::vector<int> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) out[i] = static_cast<unsigned char>(text[i]);
  return out;
}

std::string decode_bytes(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens)
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  return out;
}

const std::vector<std::string>& default_filler_sentences() {
  static const std::vector<std::string> s{
      "the grass is green. ",
      "the sky is blue. ",
      "the sun is yellow. ",
      "here we go. ",
      "there and back again. ",
      "the river runs to the sea. ",
      "a cat sleeps on the warm stone. ",
      "the wind moves the tall trees. ",
      "snow falls on the quiet hills. ",
      "the road goes ever on. ",
  };
  return s;
}

std::vector<int> filler_tokens(std::size_t n, const std::vector<std::string>& sentences, std::mt19937_64& rng) {
  const auto& src = sentences.empty() ? default_filler_sentences() : sentences;
  std::vector<std::size_t> order(src.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<int> out;
  out.reserve(n + 64);
  while (out.size() < n) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      for (unsigned char ch : src[i]) out.push_back(ch);
      if (out.size() >= n) break;
    }
  }
  out.resize(n);
  return out;
}

std::size_t passkey_overhead(const PasskeyTaskConfig& cfg) {
  // BOS, KEY, digits, '.', QUERY
  return cfg.digits + 4;
}

PasskeySample generate_passkey_sample(const PasskeyTaskConfig& cfg, std::size_t length, double position_fraction,
                                      std::mt19937_64& rng) {
  const std::size_t overhead = passkey_overhead(cfg);
  if (cfg.digits == 0) throw InputError("passkey needs at least one digit");
  if (length < overhead)
    throw InputError("passkey length " + std::to_string(length) + " is shorter than the " +
                     std::to_string(overhead) + " fixed tokens");
  if (!(position_fraction >= 0.0 && position_fraction <= 1.0))
    throw InputError("passkey position must lie in [0, 1]");

  PasskeySample s;
  std::uniform_int_distribution<int> digit(0, 9);
  for (std::size_t i = 0; i < cfg.digits; ++i) s.passkey.push_back(static_cast<char>('0' + digit(rng)));
  const std::size_t filler_len = length - overhead;
  const auto before = static_cast<std::size_t>(std::llround(position_fraction * static_cast<double>(filler_len)));
  const std::vector<int> filler = filler_tokens(filler_len, cfg.filler, rng);

  s.prompt.reserve(length);
  s.prompt.push_back(tok::bos);
  s.prompt.insert(s.prompt.end(), filler.begin(), filler.begin() + static_cast<std::ptrdiff_t>(before));
  s.prompt.push_back(tok::key);
  s.needle_begin = s.prompt.size();
  for (char c : s.passkey) s.prompt.push_back(static_cast<unsigned char>(c));
  s.needle_end = s.prompt.size();
  s.prompt.push_back('.');
  s.prompt.insert(s.prompt.end(), filler.begin() + static_cast<std::ptrdiff_t>(before), filler.end());
  s.prompt.push_back(tok::query);
  s.answer = encode_bytes(s.passkey);
  return s;
}

std::string generate_lm_text(std::size_t n_bytes, std::uint64_t seed) {
  static const std::vector<std::string> names{"anna", "bob", "cleo", "dan", "eve", "finn", "gus", "hana",
                                              "ivan", "jude", "kai", "lena", "milo", "nora", "otto", "pia"};
  static const std::vector<std::string> things{"apple", "boat", "candle", "drum", "egg", "flute", "glove", "hat",
                                               "kite", "lamp", "map", "nest", "oar", "pen", "ring", "sock"};
  static const std::vector<std::string> colors{"red", "blue", "green", "gold", "gray", "pink", "black", "white"};
  static const std::vector<std::string> verbs{"sees", "finds", "drops", "holds", "paints", "hides", "wants", "lends"};
  std::mt19937_64 rng(seed);
  const auto pick = [&](const std::vector<std::string>& v) -> const std::string& { return v[rng() % v.size()]; };
  std::string out;
  out.reserve(n_bytes + 128);
  while (out.size() < n_bytes) {
    // A short story: facts first, then questions answered from those facts.
    const std::string& who = pick(names);
    const std::string& what = pick(things);
    const std::string& color = pick(colors);
    out += who + " has a " + color + " " + what + ". ";
    const std::size_t middle = 1 + rng() % 6;
    for (std::size_t i = 0; i < middle; ++i) out += pick(names) + " " + pick(verbs) + " the " + pick(things) + ". ";
    out += "what color is the " + what + " of " + who + "? it is " + color + ". ";
  }
  out.resize(n_bytes);
  return out;
}

std::vector<int> load_text_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read corpus " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return encode_bytes(text);
}

}  // namespace deci
