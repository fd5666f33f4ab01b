#include <gtest/gtest.h>

#include "support.hpp"

using namespace p2ex;
using namespace p2ex::testing;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_length = 48;
  c.input_channels = 3;
  c.num_classes = 2;
  return c;
}

}  // namespace

TEST(ModelConfig, DerivedSizes) {
  ModelConfig c = small_config();
  EXPECT_EQ(c.latent_length(), 6u);
  EXPECT_EQ(c.num_positions(), 5u);
  EXPECT_EQ(c.num_prototypes(), 8u);
  c.input_length = 50;
  EXPECT_THROW(c.validate(), PreconditionError);
  c.input_length = 8;
  EXPECT_THROW(c.validate(), PreconditionError);  // latent length 1 < patch_len 2
}

TEST(Model, EncodeDecodeShapes) {
  const ModelConfig c = small_config();
  const auto m = P2ExModel::create(c, 1);
  CounterRng rng(1, Stream::data);
  Tensor x = random_tensor({48, 3}, rng);
  Tensor z = encode(m, x);
  EXPECT_EQ(z.shape, (Shape{6, 16}));
  for (double v : z.values) EXPECT_GE(v, 0.0);
  EXPECT_EQ(decode(m, z).shape, x.shape);
  EXPECT_EQ(decode(m, Tensor({2, 16})).shape, (Shape{16, 3}));
  EXPECT_EQ(decode(m, Tensor({1, 16})).shape, (Shape{8, 3}));
  EXPECT_THROW(encode(m, Tensor({48, 2})), DimensionError);
  EXPECT_THROW(decode(m, Tensor({2, 15})), DimensionError);
}

TEST(Model, PatchesMatchSlicing) {
  CounterRng rng(2, Stream::data);
  Tensor z = random_tensor({6, 4}, rng);
  PatchGrid g = extract_patches(z, 2);
  ASSERT_EQ(g.size(), 5u);
  for (std::size_t q = 0; q < 5; ++q) {
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(g.patches[q * 8 + i], z[q * 4 + i]);
  }
  EXPECT_EQ(extract_patches(z, 6).patches.values, z.values);
  EXPECT_THROW(extract_patches(z, 7), PreconditionError);
}

TEST(Model, SimilarityExamples) {
  PrototypeBank bank{Tensor({2, 1, 2}, {0, 0, 1, 0}), {0, 1}};
  PatchGrid grid{Tensor({1, 1, 2}, {0, 0})};
  Tensor sim = similarity_grid(grid, bank, 1e-4);
  EXPECT_NEAR(sim[0], 1e4, 1e-9);
  EXPECT_NEAR(sim[1], 1.0 / (1.0 + 1e-4), 1e-15);
}

TEST(Model, SimilarityMatchesDoubleLoop) {
  CounterRng rng(3, Stream::data);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = 1 + rng.below(8), Q = 1 + rng.below(8), l = 1 + rng.below(3), cl = 1 + rng.below(4);
    PrototypeBank bank{random_tensor({K, l, cl}, rng), std::vector<std::size_t>(K, 0)};
    PatchGrid grid{random_tensor({Q, l, cl}, rng)};
    Tensor sim = similarity_grid(grid, bank, 1e-4);
    ASSERT_EQ(sim.shape, (Shape{K, Q}));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t q = 0; q < Q; ++q) {
        const double want = 1.0 / (row_distance(bank.protos, k, grid.patches, q) + 1e-4);
        EXPECT_NEAR(sim[k * Q + q], want, 1e-12 * want);
        EXPECT_GT(sim[k * Q + q], 0.0);
        EXPECT_LE(sim[k * Q + q], 1e4);
      }
    }
  }
}

TEST(Model, LogitExamplesAndOracle) {
  CounterRng rng(4, Stream::data);
  Tensor sim = random_tensor({3, 4}, rng, 0.0, 5.0);
  EXPECT_EQ(logits(sim, {Tensor({3, 4, 2})}).values, (std::vector<double>{0.0, 0.0}));
  PrototypeWeights onehot{Tensor({3, 4, 2})};
  onehot.w[(2 * 4 + 1) * 2 + 1] = 1.0;
  EXPECT_EQ(logits(sim, onehot).values, (std::vector<double>{0.0, sim[2 * 4 + 1]}));

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = 1 + rng.below(8), Q = 1 + rng.below(8), C = 2 + rng.below(3);
    Tensor s = random_tensor({K, Q}, rng, 0.0, 10.0);
    PrototypeWeights w{random_tensor({K, Q, C}, rng)};
    Tensor got = logits(s, w);
    for (std::size_t c = 0; c < C; ++c) {
      double want = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t q = 0; q < Q; ++q) want += s[k * Q + q] * w.w[(k * Q + q) * C + c];
      }
      EXPECT_NEAR(got[c], want, 1e-12 * std::max(1.0, std::abs(want)));
    }
    Tensor scaled = s;
    for (double& v : scaled.values) v *= 3.5;
    Tensor lin = logits(scaled, w);
    for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(lin[c], 3.5 * got[c], 1e-12 * std::max(1.0, std::abs(lin[c])));
  }
  EXPECT_THROW(logits(sim, {Tensor({3, 5, 2})}), DimensionError);
}

TEST(Model, InitialisationContracts) {
  ModelConfig c = small_config();
  c.num_classes = 3;
  const auto m = P2ExModel::create(c, 5);
  const std::size_t K = c.num_prototypes(), Q = c.num_positions(), C = 3;
  std::vector<std::size_t> per_class(C, 0);
  for (std::size_t k : m.bank.class_of) ++per_class[k];
  for (std::size_t n : per_class) EXPECT_EQ(n, c.prototypes_per_class);
  for (double v : m.bank.protos.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t y = 0; y < C; ++y) {
        EXPECT_EQ(m.weights.w[(k * Q + q) * C + y], y == m.bank.class_of[k] ? 1.0 : -0.5);
      }
    }
  }
}

TEST(Model, BaselineSharesEncoderShapes) {
  const ModelConfig c = small_config();
  const auto p = P2ExModel::create(c, 1);
  const auto b = BaselineModel::create(c, 1);
  ASSERT_EQ(p.encoder.size(), b.encoder.size());
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    EXPECT_EQ(p.encoder[i].kernel.shape, b.encoder[i].kernel.shape);
    EXPECT_EQ(p.encoder[i].bias.shape, b.encoder[i].bias.shape);
  }
  CounterRng rng(6, Stream::data);
  Tensor x = random_tensor({48, 3}, rng);
  EXPECT_EQ(forward_baseline(b, x).size(), 2u);
}

TEST(Model, ForwardIsDeterministicAndNearUniformAtInit) {
  const ModelConfig c = small_config();
  const auto m = P2ExModel::create(c, 1);
  CounterRng rng(7, Stream::data);
  Tensor x = random_tensor({48, 3}, rng, -1.0, 1.0);
  auto a = forward_p2ex(m, x), b = forward_p2ex(m, x);
  EXPECT_EQ(a.logits.values, b.logits.values);
  EXPECT_EQ(a.reconstruction.values, b.reconstruction.values);
  EXPECT_EQ(a.reconstruction.shape, x.shape);
  EXPECT_TRUE(a.logits.all_finite());
  Tape t;
  Tensor p = softmax(t.constant(a.logits)).value();
  for (double v : p.values) EXPECT_GT(v, 0.05);
}

TEST(Model, CoincidentPatchesSelectTheirClass) {
  ModelConfig c = small_config();
  c.num_classes = 3;
  for (std::size_t target = 0; target < 3; ++target) {
    auto m = P2ExModel::create(c, 11 + target);
    CounterRng rng(8, Stream::data, target);
    Tensor x = random_tensor({48, 3}, rng);
    PatchGrid g = forward_p2ex(m, x).grid;
    // Every prototype of the target class is placed on some patch.
    const std::size_t width = g.patches.size() / g.size();
    for (std::size_t k = 0; k < m.bank.size(); ++k) {
      if (m.bank.class_of[k] != target) continue;
      const std::size_t q = k % g.size();
      std::copy_n(g.patches.values.begin() + q * width, width, m.bank.protos.values.begin() + k * width);
    }
    EXPECT_EQ(predict(m, x), target);
  }
}

TEST(Model, ReceptiveWindows) {
  const ModelConfig c = small_config();
  EXPECT_EQ(receptive_window(c, 0), (InputWindow{0, 16}));
  EXPECT_EQ(receptive_window(c, c.num_positions() - 1).end, c.input_length);
  for (std::size_t q = 0; q + 1 < c.num_positions(); ++q) {
    const auto a = receptive_window(c, q), b = receptive_window(c, q + 1);
    EXPECT_EQ(a.end - b.start, (c.patch_len - 1) * c.pool_factor());
  }
  EXPECT_THROW(receptive_window(c, c.num_positions()), PreconditionError);
}
