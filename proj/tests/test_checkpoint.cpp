#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace p2ex;
using namespace p2ex::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig config() {
  ModelConfig c;
  c.input_length = 24;
  c.input_channels = 2;
  c.num_classes = 3;
  c.conv_blocks = 2;
  c.latent_channels = 4;
  c.patch_len = 3;
  c.prototypes_per_class = 2;
  c.epsilon_sim = 3e-4;
  return c;
}

CheckpointMeta meta() { return {21, Normalizer{{0.5, -1.25}, {2.0, 0.1}}, {-1.0, 0.0, 7.5}}; }

fs::path path(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "p2ex_test_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

template <class M>
void expect_same_params(const M& a, const M& b) {
  std::vector<std::pair<std::string, Tensor>> pa, pb;
  a.for_each_parameter([&](const std::string& n, const Tensor& t) { pa.emplace_back(n, t); });
  b.for_each_parameter([&](const std::string& n, const Tensor& t) { pb.emplace_back(n, t); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.shape, pb[i].second.shape);
    EXPECT_EQ(pa[i].second.values, pb[i].second.values) << pa[i].first;
  }
}

}  // namespace

TEST(Checkpoint, P2ExRoundTripIsBitExact) {
  auto m = P2ExModel::create(config(), 3);
  m.bank.protos[0] = 1.0 / 3.0;
  m.weights.w[5] = -0.0;
  m.bank.class_of = {1, 1, 0, 0, 2, 2};
  auto p = path("p2ex.bin");
  save_checkpoint(m, meta(), p.string());
  Checkpoint c = load_checkpoint(p.string());
  EXPECT_EQ(c.kind, ModelKind::p2ex);
  ASSERT_TRUE(c.p2ex);
  EXPECT_FALSE(c.baseline);
  EXPECT_EQ(c.config.input_length, 24u);
  EXPECT_EQ(c.config.patch_len, 3u);
  EXPECT_EQ(c.config.epsilon_sim, 3e-4);
  EXPECT_EQ(c.meta.original_length, 21u);
  EXPECT_EQ(c.meta.normalizer.mean, meta().normalizer.mean);
  EXPECT_EQ(c.meta.normalizer.stddev, meta().normalizer.stddev);
  EXPECT_EQ(c.meta.label_values, meta().label_values);
  EXPECT_EQ(c.p2ex->bank.class_of, m.bank.class_of);
  expect_same_params(*c.p2ex, m);
  EXPECT_TRUE(std::signbit(c.p2ex->weights.w[5]));

  auto again = path("p2ex_again.bin");
  save_checkpoint(*c.p2ex, c.meta, again.string());
  EXPECT_EQ(read_bytes(p), read_bytes(again));
}

TEST(Checkpoint, BaselineRoundTrip) {
  auto m = BaselineModel::create(config(), 4);
  auto p = path("base.bin");
  save_checkpoint(m, meta(), p.string());
  Checkpoint c = load_checkpoint(p.string());
  EXPECT_EQ(c.kind, ModelKind::baseline);
  ASSERT_TRUE(c.baseline);
  EXPECT_FALSE(c.p2ex);
  expect_same_params(*c.baseline, m);
  CounterRng rng(1, Stream::data);
  Tensor x = random_tensor({24, 2}, rng);
  EXPECT_EQ(forward_baseline(*c.baseline, x).values, forward_baseline(m, x).values);
}

TEST(Checkpoint, HeaderIsLittleEndian) {
  auto p = path("hdr.bin");
  save_checkpoint(P2ExModel::create(config(), 5), meta(), p.string());
  const std::string b = read_bytes(p);
  ASSERT_GT(b.size(), 16u);
  EXPECT_EQ(b.substr(0, 4), "P2EX");
  EXPECT_EQ(b.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(b.substr(8, 4), std::string("\x00\x00\x00\x00", 4));
  EXPECT_EQ(b.substr(12, 4), std::string("\x18\x00\x00\x00", 4));  // input_length 24
}

TEST(Checkpoint, CorruptFilesRejected) {
  auto good = path("good.bin");
  save_checkpoint(P2ExModel::create(config(), 6), meta(), good.string());
  const std::string b = read_bytes(good);
  auto bad = path("bad.bin");

  std::string magic = b;
  magic[0] = 'Q';
  write_bytes(bad, magic);
  EXPECT_THROW(load_checkpoint(bad.string()), ParseError);

  std::string version = b;
  version[4] = 2;
  write_bytes(bad, version);
  EXPECT_THROW(load_checkpoint(bad.string()), ParseError);

  std::string kind = b;
  kind[8] = 9;
  write_bytes(bad, kind);
  EXPECT_THROW(load_checkpoint(bad.string()), ParseError);

  write_bytes(bad, b.substr(0, b.size() - 3));
  EXPECT_THROW(load_checkpoint(bad.string()), ParseError);

  write_bytes(bad, b + "x");
  EXPECT_THROW(load_checkpoint(bad.string()), ParseError);

  EXPECT_THROW(load_checkpoint(path("absent.bin").string()), Error);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  // Same parameter list, but the header claims more latent channels.
  auto p = path("shape.bin");
  save_checkpoint(P2ExModel::create(config(), 7), meta(), p.string());
  std::string b = read_bytes(p);
  // Header: magic, version, kind, input_length, input_channels, num_classes, conv_blocks, latent_channels.
  b[4 + 4 + 4 + 4 * 4] = 5;
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p.string()), DimensionError);
}
