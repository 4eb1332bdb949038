#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>
#include <iterator>

#include "deci/io.hpp"

namespace deci {
namespace {

namespace fs = std::filesystem;

ModelWeights tiny(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 13;
  c.d_model = 8;
  c.n_layers = 2;
  c.d_state = 4;
  return init_model(c, seed);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "deci_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(Checkpoint, F64RoundTripIsBitwise) {
  const ModelWeights w = tiny(1);
  const fs::path p = scratch("f64.bin");
  save_checkpoint(w, p, StorageType::f64);
  const ModelWeights r = load_checkpoint(p);
  EXPECT_EQ(r.config, w.config);
  const auto a = named_parameters(w), b = named_parameters(r);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
}

TEST(Checkpoint, F32RoundTripMatchesFloatCast) {
  const ModelWeights w = tiny(2);
  const fs::path p = scratch("f32.bin");
  save_checkpoint(w, p);
  const ModelWeights r = load_checkpoint(p);
  const auto a = named_parameters(w), b = named_parameters(r);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second->size(); ++k)
      ASSERT_EQ((*b[i].second)[k], static_cast<double>(static_cast<float>((*a[i].second)[k])));
  // A second save of the loaded weights is byte-identical.
  const fs::path q = scratch("f32b.bin");
  save_checkpoint(r, q);
  EXPECT_EQ(slurp(p), slurp(q));
}

TEST(Checkpoint, FlippedPayloadByteNamesTensor) {
  const fs::path p = scratch("flip.bin");
  save_checkpoint(tiny(3), p);
  auto bytes = slurp(p);
  bytes.back() = static_cast<char>(bytes.back() ^ 0x01);
  dump(p, bytes);
  try {
    load_checkpoint(p);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    // The last tensor in the registry is the final norm.
    EXPECT_NE(std::string(e.what()).find("final_norm"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, UnknownFormatIsVersionError) {
  const fs::path p = scratch("ver.bin");
  save_checkpoint(tiny(4), p);
  auto bytes = slurp(p);
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
  auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(len)));
  header["format"] = "deci-ssm/2";
  const std::string text = header.dump();
  std::vector<char> out(8);
  for (int b = 0; b < 8; ++b) out[b] = static_cast<char>((text.size() >> (8 * b)) & 0xff);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 8 + static_cast<long>(len), bytes.end());
  dump(p, out);
  EXPECT_THROW(load_checkpoint(p), VersionError);
  EXPECT_THROW(read_checkpoint_header(p), VersionError);
}

TEST(Checkpoint, TruncatedFileIsIntegrityError) {
  const fs::path p = scratch("trunc.bin");
  save_checkpoint(tiny(5), p);
  auto bytes = slurp(p);
  bytes.resize(bytes.size() - 16);
  dump(p, bytes);
  EXPECT_THROW(load_checkpoint(p), IntegrityError);
}

TEST(Checkpoint, HeaderListsRegistryNames) {
  const ModelWeights w = tiny(6);
  const fs::path p = scratch("names.bin");
  save_checkpoint(w, p);
  const auto header = read_checkpoint_header(p);
  EXPECT_EQ(header.at("format"), kCheckpointFormat);
  const auto named = named_parameters(w);
  ASSERT_EQ(header.at("tensors").size(), named.size());
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = header["tensors"][i];
    EXPECT_EQ(e.at("name"), named[i].first);
    EXPECT_EQ(e.at("offset").get<std::size_t>(), expected_offset);
    expected_offset += e.at("nbytes").get<std::size_t>();
  }
  EXPECT_EQ(fs::file_size(p), 8 + header.dump().size() + expected_offset);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc", 3), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace deci
