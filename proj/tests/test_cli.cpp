#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "p2ex/p2ex.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kSmall =
    " --set n_samples=240 --set max_epochs_stage1=3 --set max_epochs_stage2=2 --set latent_channels=6";

fs::path root() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "p2ex_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(P2EXNET_BINARY) + " " + args + " >>" + (root() / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> rows(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    out.push_back(fields);
  }
  return out;
}

std::string column(const fs::path& p, const std::string& name, std::size_t row = 1) {
  auto r = rows(p);
  for (std::size_t i = 0; i < r.at(0).size(); ++i) {
    if (r[0][i] == name) return r.at(row).at(i);
  }
  return "";
}

/// Shared small synthetic run, trained once.
const fs::path& trained() {
  static const fs::path dir = [] {
    fs::path d = root() / "run1";
    EXPECT_EQ(run("train --synthetic-anomaly --seed 7" + kSmall + " --out " + d.string()), 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, TrainWritesARunDirectory) {
  const fs::path& d = trained();
  for (const char* f : {"config.txt", "model.p2ex", "train_report.csv", "summary.csv", "prototypes.csv"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  const std::string cfg = slurp(d / "config.txt");
  EXPECT_NE(cfg.find("seed = 7"), std::string::npos);
  EXPECT_NE(cfg.find("n_samples = 240"), std::string::npos);
  auto report = rows(d / "train_report.csv");
  EXPECT_EQ(report.size(), 1u + 3u + 2u);
}

TEST(Cli, TrainTwiceIsIdentical) {
  const fs::path again = root() / "run2";
  ASSERT_EQ(run("train --synthetic-anomaly --seed 7" + kSmall + " --out " + again.string()), 0);
  for (const char* f : {"train_report.csv", "summary.csv", "prototypes.csv", "model.p2ex"}) {
    EXPECT_EQ(slurp(trained() / f), slurp(again / f)) << f;
  }
}

TEST(Cli, ThreadCountDoesNotChangeResults) {
  const fs::path threaded = root() / "run_threads";
  ASSERT_EQ(run("train --synthetic-anomaly --seed 7 --threads 3" + kSmall + " --out " + threaded.string()), 0);
  EXPECT_EQ(slurp(trained() / "model.p2ex"), slurp(threaded / "model.p2ex"));
  EXPECT_EQ(slurp(trained() / "train_report.csv"), slurp(threaded / "train_report.csv"));
}

TEST(Cli, BaselineWritesNoPrototypes) {
  const fs::path d = root() / "base";
  ASSERT_EQ(run("train --synthetic-anomaly --baseline --seed 7" + kSmall + " --out " + d.string()), 0);
  EXPECT_TRUE(fs::exists(d / "model.p2ex"));
  EXPECT_FALSE(fs::exists(d / "prototypes.csv"));
  EXPECT_EQ(column(d / "summary.csv", "model"), "baseline");
  EXPECT_NE(run("explain --model " + (d / "model.p2ex").string() + " --samples 0 --out " + (root() / "bx").string()),
            0);
}

TEST(Cli, MissingDataIsAUsageError) {
  EXPECT_EQ(run("train --out " + (root() / "nodata").string()), 1);
  EXPECT_EQ(run("train --data " + (root() / "absent.tsv").string() + " --out " + (root() / "nodata").string()), 1);
  EXPECT_EQ(run("train --synthetic-anomaly --set bogus=1 --out " + (root() / "nodata").string()), 1);
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST(Cli, EvalReproducesTheTrainingAccuracy) {
  const fs::path& d = trained();
  const fs::path out = root() / "eval";
  ASSERT_EQ(run("eval --model " + (d / "model.p2ex").string() + " --out " + out.string()), 0);
  EXPECT_EQ(column(out / "accuracy.csv", "accuracy"), column(d / "summary.csv", "test_accuracy"));
  EXPECT_EQ(column(out / "accuracy.csv", "model"), "p2exnet");
}

TEST(Cli, EvalRejectsMismatchedData) {
  const fs::path data = root() / "three_class.tsv";
  {
    std::ofstream out(data);
    for (int i = 0; i < 12; ++i) {
      out << i % 3;
      for (int t = 0; t < 50; ++t) out << '\t' << (t * (i + 1)) % 7;
      out << '\n';
    }
  }
  const std::string before = slurp(data);
  EXPECT_EQ(run("eval --model " + (trained() / "model.p2ex").string() + " --data " + data.string() + " --out " +
                (root() / "mismatch").string()),
            1);
  EXPECT_EQ(slurp(data), before);
}

TEST(Cli, ExplainCreatesOneDirectoryPerSample) {
  const fs::path out = root() / "explain";
  ASSERT_EQ(run("explain --model " + (trained() / "model.p2ex").string() + " --samples 0,1,2 --out " + out.string()),
            0);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) dirs += e.is_directory();
  EXPECT_EQ(dirs, 3u);
  for (const char* f : {"series.csv", "attributions.csv", "class_distribution.csv", "patch_distributions.csv",
                        "meta.csv"}) {
    EXPECT_TRUE(fs::exists(out / "sample_1" / f)) << f;
  }
  EXPECT_EQ(run("explain --model " + (trained() / "model.p2ex").string() + " --samples 0,9999 --out " +
                (root() / "explain_bad").string()),
            1);
}

TEST(Cli, SanityWritesBothTables) {
  const fs::path out = root() / "sanity";
  ASSERT_EQ(run("sanity --model " + (trained() / "model.p2ex").string() + " --top-r 2 --out " + out.string()), 0);
  auto s = rows(out / "sanity.csv");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[1][1], "best_same_class");
  EXPECT_EQ(s[2][1], "most_different");
  for (std::size_t r = 1; r < 3; ++r) {
    for (std::size_t c = 4; c < 8; ++c) {
      const double v = std::stod(s[r][c]);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
  EXPECT_GE(std::stod(column(out / "closeness.csv", "with_decoder")), 0.0);
}

TEST(Cli, SanityOnAnUntrainedModelCompletes) {
  const fs::path d = root() / "untrained";
  ASSERT_EQ(run("train --synthetic-anomaly --seed 3 --set n_samples=120 --set max_epochs_stage1=0 "
                "--set max_epochs_stage2=0 --out " +
                d.string()),
            0);
  ASSERT_EQ(run("sanity --model " + (d / "model.p2ex").string() + " --out " + d.string()), 0);
  EXPECT_EQ(rows(d / "sanity.csv").size(), 3u);
}

TEST(Cli, GenDataRoundTripsThroughTrain) {
  const fs::path d = root() / "gen";
  ASSERT_EQ(run("gen-data --seed 5 --set n_samples=120 --out " + d.string()), 0);
  const std::string before = slurp(d / "anomaly.csv");
  EXPECT_EQ(rows(d / "anomaly_steps.csv").size(), 121u);
  p2ex::Dataset ds = p2ex::load_dataset((d / "anomaly.csv").string());
  EXPECT_EQ(ds.size(), 120u);
  EXPECT_EQ(ds.channels(), 3u);
  ASSERT_EQ(run("train --data " + (d / "anomaly.csv").string() +
                " --set max_epochs_stage1=1 --set max_epochs_stage2=1 --out " + (d / "run").string()),
            0);
  EXPECT_EQ(slurp(d / "anomaly.csv"), before);
}
