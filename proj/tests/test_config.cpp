#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace p2ex;

TEST(Config, DefaultsMatchTheDocumentedValues) {
  RunConfig c;
  EXPECT_EQ(c.get("conv_blocks"), "3");
  EXPECT_EQ(c.get("latent_channels"), "16");
  EXPECT_EQ(c.get("patch_len"), "2");
  EXPECT_EQ(c.get("prototypes_per_class"), "4");
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.max_epochs_stage1, 200u);
  EXPECT_EQ(c.train.max_epochs_stage2, 50u);
  EXPECT_EQ(c.train.patience, 15u);
  EXPECT_EQ(c.train.validation_fraction, 0.2);
  EXPECT_EQ(c.train.loss.lambda_c, 10.0);
  EXPECT_EQ(c.train.loss.lambda_sep, 1.0);
  EXPECT_EQ(c.model.epsilon_sim, 1e-4);
  EXPECT_TRUE(c.explain.align_offsets);
}

TEST(Config, ParsesKeyValueText) {
  RunConfig c;
  c.apply_text("# comment\n  seed = 11\nlambda_c=2.5  # trailing\n\nalign_offsets = false\nsynthetic_anomaly = 1\n");
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.train.loss.lambda_c, 2.5);
  EXPECT_FALSE(c.explain.align_offsets);
  EXPECT_TRUE(c.data.synthetic_anomaly);
}

TEST(Config, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
  EXPECT_THROW(c.set("seed", "1.5"), ConfigError);
  EXPECT_THROW(c.set("learning_rate", "fast"), ConfigError);
  EXPECT_THROW(c.set("align_offsets", "maybe"), ConfigError);
  try {
    c.apply_text("seed = 1\nthis line has no separator\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  try {
    c.apply_text("\n\nbogus = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Config, TextRoundTrips) {
  RunConfig a;
  a.apply_text("seed = 99\nlearning_rate = 0.00025\nlambda_div = 0.125\ndata = some/path.tsv\ntop_r = 4\n");
  RunConfig b;
  b.apply_text(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  for (const auto& k : RunConfig::keys()) EXPECT_EQ(a.get(k), b.get(k)) << k;
  EXPECT_EQ(b.train.learning_rate, 0.00025);
  EXPECT_EQ(b.data.data, "some/path.tsv");
}

TEST(Config, KeysAreUniqueAndComplete) {
  const auto& keys = RunConfig::keys();
  std::set<std::string> unique(keys.begin(), keys.end());
  EXPECT_EQ(unique.size(), keys.size());
  for (const char* k : {"lambda_c", "lambda_mse", "lambda_p2s", "lambda_s2p", "lambda_div", "lambda_clst",
                        "lambda_sep", "threads", "validation_fraction", "epsilon_sim", "test_fraction"}) {
    EXPECT_TRUE(unique.count(k)) << k;
  }
}
