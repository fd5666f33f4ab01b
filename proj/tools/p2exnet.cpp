// p2exnet: train, evaluate and explain patch-prototype classifiers.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "p2ex/p2ex.hpp"

namespace fs = std::filesystem;
using namespace p2ex;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  std::string test_data;
  bool synthetic = false;
  bool baseline = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> top_r;
  std::string out;
  std::string model;
  std::string compare;
  std::string samples;
};

/// Exit status 1: bad input, config or checkpoint.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// git blob hash: sha1("blob <size>\0" + content).
std::string blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();
  const std::string head = "blob " + std::to_string(body.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, head.data(), head.size());
  EVP_DigestUpdate(ctx, body.data(), body.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key=value config file");
  cmd->add_option("--set", o.overrides, "KEY=VALUE override, repeatable");
  cmd->add_option("--data", o.data, "training data (UCR tsv or multichannel csv)");
  cmd->add_option("--test-data", o.test_data, "test data; default holds out test_fraction of --data");
  cmd->add_flag("--synthetic-anomaly", o.synthetic, "use the synthetic point-anomaly generator");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig build_config(const Options& o, const std::string& fallback_config = {}) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg.apply_file(o.config);
  } else if (!fallback_config.empty() && fs::exists(fallback_config)) {
    cfg.apply_file(fallback_config);
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.data.empty()) {
    cfg.data.data = o.data;
    cfg.data.synthetic_anomaly = false;
  }
  if (!o.test_data.empty()) cfg.data.test_data = o.test_data;
  if (o.synthetic) cfg.data.synthetic_anomaly = true;
  if (o.baseline) cfg.baseline = true;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.threads) cfg.train.threads = *o.threads;
  if (o.top_r) cfg.explain.top_r = *o.top_r;
  cfg.train.validate();
  if (!(cfg.data.test_fraction > 0.0 && cfg.data.test_fraction < 1.0)) {
    throw ConfigError("config: test_fraction must be in (0, 1)");
  }
  return cfg;
}

Dataset load_raw(const RunConfig& cfg, const LabelMap* labels) {
  if (cfg.data.synthetic_anomaly) {
    SyntheticAnomalyConfig g;
    g.n_samples = cfg.data.n_samples;
    g.length = cfg.data.length;
    g.channels = cfg.data.channels;
    g.anomaly_magnitude = cfg.data.anomaly_magnitude;
    g.seed = cfg.train.seed;
    Dataset ds = generate_anomaly(g);
    if (labels && labels->values != ds.label_values) throw UsageFailure("checkpoint labels differ from synthetic labels");
    return ds;
  }
  if (cfg.data.data.empty()) throw UsageFailure("no dataset: pass --data PATH or --synthetic-anomaly");
  return load_dataset(cfg.data.data, labels);
}

void write_config(const RunConfig& cfg, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "# effective configuration\n";
  if (cfg.data.synthetic_anomaly) {
    out << "# data: synthetic anomaly generator, seeded by 'seed'\n";
  } else {
    out << "# data_blob_sha1 " << blob_hash(cfg.data.data) << " " << cfg.data.data << "\n";
    if (!cfg.data.test_data.empty()) {
      out << "# test_data_blob_sha1 " << blob_hash(cfg.data.test_data) << " " << cfg.data.test_data << "\n";
    }
  }
  out << cfg.to_text();
}

void write_prototypes(const P2ExModel& model, const fs::path& path) {
  std::vector<std::string> header{"prototype_id", "class", "t"};
  for (std::size_t c = 0; c < model.config.input_channels; ++c) header.push_back("channel_" + std::to_string(c));
  CsvWriter csv(path.string(), header);
  for (std::size_t k = 0; k < model.bank.size(); ++k) {
    const Tensor d = decode_prototype(model, k);
    const std::size_t ch = d.dim(1);
    for (std::size_t t = 0; t < d.dim(0); ++t) {
      std::vector<std::string> row{std::to_string(k), std::to_string(model.bank.class_of[k]), std::to_string(t)};
      for (std::size_t c = 0; c < ch; ++c) row.push_back(format_double(d[t * ch + c]));
      csv.row(row);
    }
  }
}

int cmd_train(const Options& o) {
  RunConfig cfg = build_config(o);
  if (o.out.empty()) throw UsageFailure("train: --out DIR is required");
  Dataset raw = load_raw(cfg, nullptr);
  std::optional<Dataset> test;
  if (!cfg.data.test_data.empty()) {
    LabelMap map{raw.label_values};
    test = load_dataset(cfg.data.test_data, &map);
  }
  ModelConfig mc = cfg.model;
  auto prep = prepare(std::move(raw), std::move(test), cfg.data.test_fraction, cfg.train.seed, mc.pool_factor());
  mc.input_length = prep.train.length();
  mc.input_channels = prep.train.channels();
  mc.num_classes = prep.train.class_count;
  mc.validate();

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_config(cfg, dir / "config.txt");
  const CheckpointMeta meta{prep.train.original_length, prep.normalizer, prep.train.label_values};
  const std::string ckpt = (dir / "model.p2ex").string();

  TrainReport report;
  double test_acc = 0.0;
  const char* kind = cfg.baseline ? "baseline" : "p2exnet";
  try {
    if (cfg.baseline) {
      auto model = BaselineModel::create(mc, cfg.train.seed);
      report = train_baseline(model, prep.train, cfg.train);
      test_acc = accuracy(model, prep.test);
      save_checkpoint(model, meta, ckpt);
    } else {
      auto model = P2ExModel::create(mc, cfg.train.seed);
      report = train_p2ex(model, prep.train, cfg.train);
      test_acc = accuracy(model, prep.test);
      save_checkpoint(model, meta, ckpt);
      write_prototypes(model, dir / "prototypes.csv");
    }
  } catch (const Error& e) {
    std::cerr << "p2exnet: training failed: " << e.what() << "\n";
    return 2;
  }
  report.checkpoint_path = ckpt;
  report.write_csv((dir / "train_report.csv").string());
  {
    CsvWriter csv((dir / "summary.csv").string(), {"model", "dataset", "seed", "epochs", "test_accuracy", "checkpoint"});
    csv.write(kind, prep.train.name, cfg.train.seed, report.epochs.size(), test_acc, "model.p2ex");
  }
  std::cout << kind << " test accuracy " << format_double(test_acc) << " (" << report.epochs.size() << " epochs, "
            << report.seconds << " s)\n";
  return 0;
}

struct Loaded {
  RunConfig cfg;
  Checkpoint ck;
  Dataset train;
  Dataset test;
  fs::path out;
};

/// Checkpoint plus the train/test data it was fit on, normalised with the
/// stored statistics.
Loaded load_run(const Options& o) {
  std::string model = o.model;
  if (model.empty() && !o.out.empty()) model = (fs::path(o.out) / "model.p2ex").string();
  if (model.empty()) throw UsageFailure("pass --model PATH or --out DIR containing model.p2ex");
  Loaded l;
  l.cfg = build_config(o, (fs::path(model).parent_path() / "config.txt").string());
  l.ck = load_checkpoint(model);
  l.out = o.out.empty() ? fs::path(model).parent_path() : fs::path(o.out);
  if (l.out.empty()) l.out = ".";

  const ModelConfig& mc = l.ck.config;
  const LabelMap map{l.ck.meta.label_values};
  Dataset raw = load_raw(l.cfg, &map);
  std::optional<Dataset> test;
  if (!l.cfg.data.test_data.empty()) test = load_dataset(l.cfg.data.test_data, &map);
  for (const Dataset* d : {&raw, test ? &*test : nullptr}) {
    if (!d) continue;
    if (d->class_count != mc.num_classes) {
      throw UsageFailure("class count mismatch: checkpoint has " + std::to_string(mc.num_classes) + ", data has " +
                         std::to_string(d->class_count));
    }
    if (d->channels() != mc.input_channels) {
      throw UsageFailure("channel mismatch: checkpoint expects " + std::to_string(mc.input_channels) + ", data has " +
                         std::to_string(d->channels()));
    }
    if (padded_length(d->original_length, mc.pool_factor()) != mc.input_length) {
      throw UsageFailure("length mismatch: checkpoint expects " + std::to_string(mc.input_length) +
                         " steps after padding, data has " + std::to_string(d->original_length));
    }
  }
  if (test) {
    l.train = std::move(raw);
    l.test = std::move(*test);
  } else {
    auto s = split(raw, l.cfg.data.test_fraction, l.cfg.train.seed, Stream::test_split);
    l.train = std::move(s.first);
    l.test = std::move(s.second);
  }
  for (Dataset* d : {&l.train, &l.test}) {
    l.ck.meta.normalizer.apply(*d);
    pad_to_length(*d, mc.input_length);
  }
  return l;
}

int cmd_eval(const Options& o) {
  Loaded l = load_run(o);
  const bool base = l.ck.kind == ModelKind::baseline;
  const double acc = base ? accuracy(*l.ck.baseline, l.test) : accuracy(*l.ck.p2ex, l.test);
  fs::create_directories(l.out);
  CsvWriter csv((l.out / "accuracy.csv").string(), {"model", "dataset", "accuracy"});
  csv.write(base ? "baseline" : "p2exnet", l.test.name, acc);
  std::cout << "accuracy " << format_double(acc) << "\n";
  return 0;
}

std::vector<std::size_t> parse_samples(const std::string& list, std::size_t n) {
  std::vector<std::size_t> ids;
  for (auto field : split_fields(list, ',')) {
    double v = 0.0;
    if (!parse_double(field, v) || v < 0 || v != std::floor(v)) {
      throw UsageFailure("--samples: bad id '" + std::string(field) + "'");
    }
    const auto id = static_cast<std::size_t>(v);
    if (id >= n) throw UsageFailure("--samples: id " + std::to_string(id) + " outside test set of " + std::to_string(n));
    ids.push_back(id);
  }
  return ids;
}

const P2ExModel& require_p2ex(const Loaded& l, const char* cmd) {
  if (!l.ck.p2ex) throw UnsupportedError(std::string(cmd) + ": the baseline model has no prototypes");
  return *l.ck.p2ex;
}

std::size_t effective_top_r(const RunConfig& cfg, const ModelConfig& mc) {
  std::size_t r = cfg.explain.top_r ? cfg.explain.top_r : default_top_r(mc);
  if (r > mc.num_positions()) {
    std::cerr << "p2exnet: warning: top_r " << r << " exceeds " << mc.num_positions() << " positions, clipped\n";
    r = mc.num_positions();
  }
  return r;
}

int cmd_explain(const Options& o) {
  if (o.samples.empty()) throw UsageFailure("explain: --samples LIST is required");
  Loaded l = load_run(o);
  const P2ExModel& model = require_p2ex(l, "explain");
  const std::size_t top_r = effective_top_r(l.cfg, model.config);
  for (std::size_t id : parse_samples(o.samples, l.test.size())) {
    const Tensor& x = l.test.samples[id];
    auto e = explain_sample(model, x, top_r, id, l.test.labels[id]);
    auto sub = substitute_and_reclassify(model, x, SubstitutionMode::best_same_class,
                                         {top_r, l.cfg.explain.align_offsets, l.test.original_length});
    export_explanation(l.out / ("sample_" + std::to_string(id)), model.config, e, x, sub, l.test.original_length,
                       l.ck.meta.label_values);
  }
  return 0;
}

int cmd_sanity(const Options& o) {
  Loaded l = load_run(o);
  const P2ExModel& model = require_p2ex(l, "sanity");
  const std::size_t top_r = effective_top_r(l.cfg, model.config);
  fs::create_directories(l.out);
  auto rep = sanity_replacement(model, l.test, top_r, l.cfg.explain.align_offsets);
  write_sanity_csv(rep, (l.out / "sanity.csv").string());
  std::optional<Checkpoint> other;
  if (!o.compare.empty()) {
    other = load_checkpoint(o.compare);
    if (!other->p2ex || other->config.input_length != model.config.input_length ||
        other->config.input_channels != model.config.input_channels) {
      throw UsageFailure("--compare: checkpoint is not a compatible p2exnet model");
    }
  }
  auto close = closeness(model, l.train, other ? &*other->p2ex : nullptr);
  write_closeness_csv(close, (l.out / "closeness.csv").string());
  std::cout << "best_same_class equal " << format_double(rep.best_same_class.equal_prediction_percent)
            << "%, most_different equal " << format_double(rep.most_different.equal_prediction_percent) << "%\n";
  return 0;
}

int cmd_gen_data(const Options& o) {
  RunConfig cfg = build_config(o);
  if (o.out.empty()) throw UsageFailure("gen-data: --out DIR is required");
  cfg.data.synthetic_anomaly = true;
  Dataset ds = load_raw(cfg, nullptr);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_multichannel_csv(ds, (dir / "anomaly.csv").string());
  CsvWriter csv((dir / "anomaly_steps.csv").string(), {"sample", "label", "anomaly_step"});
  for (std::size_t i = 0; i < ds.size(); ++i) csv.write(i, ds.labels[i], ds.anomaly_step[i]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p2exnet: patch-prototype time-series classification"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  add_common(train, o);
  train->add_flag("--baseline", o.baseline, "train the plain CNN baseline");

  auto* eval = app.add_subcommand("eval", "test accuracy of a checkpoint");
  auto* explain = app.add_subcommand("explain", "per-sample explanation directories");
  auto* sanity = app.add_subcommand("sanity", "prototype substitution and closeness checks");
  for (auto* cmd : {eval, explain, sanity}) {
    add_common(cmd, o);
    cmd->add_option("--model", o.model, "checkpoint (default: <out>/model.p2ex)");
  }
  for (auto* cmd : {explain, sanity}) cmd->add_option("--top-r", o.top_r, "positions to substitute");
  explain->add_option("--samples", o.samples, "comma-separated test sample ids");
  sanity->add_option("--compare", o.compare, "checkpoint trained without the decoder term");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic anomaly dataset");
  add_common(gen, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (explain->parsed()) return cmd_explain(o);
    if (sanity->parsed()) return cmd_sanity(o);
    if (gen->parsed()) return cmd_gen_data(o);
  } catch (const TrainingError& e) {
    std::cerr << "p2exnet: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "p2exnet: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
