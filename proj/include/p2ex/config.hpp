#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "p2ex/csv.hpp"
#include "p2ex/model.hpp"
#include "p2ex/training.hpp"

namespace p2ex {

struct DataConfig {
  std::string data;
  std::string test_data;
  bool synthetic_anomaly = false;
  std::size_t n_samples = 2000;
  std::size_t length = 50;
  std::size_t channels = 3;
  double anomaly_magnitude = 4.0;
  /// Held-out test share when no test file is given.
  double test_fraction = 0.25;
};

struct ExplainConfig {
  std::size_t top_r = 0;  // 0: ceil(Q / 2)
  bool align_offsets = true;
};

/// Every tunable of a run. Data-derived model fields (input length,
/// channels, class count) are not keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  ExplainConfig explain;
  bool baseline = false;

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Applies `key = value` lines; `#` starts a comment.
  void apply_text(std::string_view text);
  void apply_file(const std::string& path);
  std::string to_text() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_unsigned(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  if (!parse_double(v, out) || !std::isfinite(out)) {
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true/false, got '" + std::string(v) + "'");
}

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
ConfigField size_field(std::string key, T RunConfig::*group, std::size_t T::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*group.*member = parse_unsigned(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.*group.*member); }};
}

template <class T>
ConfigField real_field(std::string key, T RunConfig::*group, double T::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*group.*member = parse_real(key, v); },
          [=](const RunConfig& c) { return format_double(c.*group.*member); }};
}

inline ConfigField lambda_field(std::string key, double LossWeights::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.train.loss.*member = parse_real(key, v); },
          [=](const RunConfig& c) { return format_double(c.train.loss.*member); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(size_field("conv_blocks", &RunConfig::model, &ModelConfig::conv_blocks));
    f.push_back(size_field("latent_channels", &RunConfig::model, &ModelConfig::latent_channels));
    f.push_back(size_field("patch_len", &RunConfig::model, &ModelConfig::patch_len));
    f.push_back(size_field("prototypes_per_class", &RunConfig::model, &ModelConfig::prototypes_per_class));
    f.push_back(real_field("epsilon_sim", &RunConfig::model, &ModelConfig::epsilon_sim));
    f.push_back({"seed", [](RunConfig& c, std::string_view v) { c.train.seed = parse_unsigned("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    f.push_back(size_field("batch_size", &RunConfig::train, &TrainConfig::batch_size));
    f.push_back(real_field("learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    f.push_back(size_field("max_epochs_stage1", &RunConfig::train, &TrainConfig::max_epochs_stage1));
    f.push_back(size_field("max_epochs_stage2", &RunConfig::train, &TrainConfig::max_epochs_stage2));
    f.push_back(size_field("patience", &RunConfig::train, &TrainConfig::patience));
    f.push_back(real_field("validation_fraction", &RunConfig::train, &TrainConfig::validation_fraction));
    f.push_back(size_field("threads", &RunConfig::train, &TrainConfig::threads));
    f.push_back(lambda_field("lambda_c", &LossWeights::lambda_c));
    f.push_back(lambda_field("lambda_mse", &LossWeights::lambda_mse));
    f.push_back(lambda_field("lambda_p2s", &LossWeights::lambda_p2s));
    f.push_back(lambda_field("lambda_s2p", &LossWeights::lambda_s2p));
    f.push_back(lambda_field("lambda_div", &LossWeights::lambda_div));
    f.push_back(lambda_field("lambda_clst", &LossWeights::lambda_clst));
    f.push_back(lambda_field("lambda_sep", &LossWeights::lambda_sep));
    f.push_back({"data", [](RunConfig& c, std::string_view v) { c.data.data = std::string(v); },
                 [](const RunConfig& c) { return c.data.data; }});
    f.push_back({"test_data", [](RunConfig& c, std::string_view v) { c.data.test_data = std::string(v); },
                 [](const RunConfig& c) { return c.data.test_data; }});
    f.push_back({"synthetic_anomaly",
                 [](RunConfig& c, std::string_view v) { c.data.synthetic_anomaly = parse_flag("synthetic_anomaly", v); },
                 [](const RunConfig& c) { return std::string(c.data.synthetic_anomaly ? "true" : "false"); }});
    f.push_back(size_field("n_samples", &RunConfig::data, &DataConfig::n_samples));
    f.push_back(size_field("length", &RunConfig::data, &DataConfig::length));
    f.push_back(size_field("channels", &RunConfig::data, &DataConfig::channels));
    f.push_back(real_field("anomaly_magnitude", &RunConfig::data, &DataConfig::anomaly_magnitude));
    f.push_back(real_field("test_fraction", &RunConfig::data, &DataConfig::test_fraction));
    f.push_back(size_field("top_r", &RunConfig::explain, &ExplainConfig::top_r));
    f.push_back({"align_offsets",
                 [](RunConfig& c, std::string_view v) { c.explain.align_offsets = parse_flag("align_offsets", v); },
                 [](const RunConfig& c) { return std::string(c.explain.align_offsets ? "true" : "false"); }});
    f.push_back({"baseline", [](RunConfig& c, std::string_view v) { c.baseline = parse_flag("baseline", v); },
                 [](const RunConfig& c) { return std::string(c.baseline ? "true" : "false"); }});
    return f;
  }();
  return fields;
}

inline const ConfigField& find_field(std::string_view key) {
  for (const auto& f : config_fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  detail::find_field(key).set(*this, detail::trim(value));
}

inline std::string RunConfig::get(std::string_view key) const { return detail::find_field(key).get(*this); }

inline const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : detail::config_fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

inline void RunConfig::apply_text(std::string_view text) {
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("config: expected key = value", lineno);
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    try {
      set(key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
}

inline void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

inline std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

}  // namespace p2ex
