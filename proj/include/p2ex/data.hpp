#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "p2ex/csv.hpp"
#include "p2ex/rng.hpp"
#include "p2ex/tensor.hpp"

namespace p2ex {

/// Labelled equal-length series. Samples are [length, channels].
struct Dataset {
  std::string name;
  std::vector<Tensor> samples;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;
  /// Length before edge padding; steps at or beyond it are padding.
  std::size_t original_length = 0;
  /// Original label value for each contiguous class id.
  std::vector<double> label_values;
  /// Injected anomaly step per sample (-1 when none). Empty for loaded files.
  std::vector<std::ptrdiff_t> anomaly_step;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().dim(0); }
  std::size_t channels() const { return samples.empty() ? 0 : samples.front().dim(1); }

  void validate() const {
    if (samples.empty()) throw PreconditionError("dataset '" + name + "': no samples");
    if (labels.size() != samples.size()) throw DimensionError("dataset '" + name + "': label count mismatch");
    std::vector<std::size_t> per_class(class_count, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].rank() != 2 || samples[i].shape != samples.front().shape) {
        throw DimensionError("dataset '" + name + "': sample " + std::to_string(i) + " has shape " +
                             shape_string(samples[i].shape));
      }
      if (labels[i] >= class_count) throw PreconditionError("dataset '" + name + "': label out of range");
      ++per_class[labels[i]];
    }
    for (std::size_t c = 0; c < class_count; ++c) {
      if (per_class[c] == 0) throw PreconditionError("dataset '" + name + "': class " + std::to_string(c) + " has no samples");
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.name = name;
    out.class_count = class_count;
    out.original_length = original_length;
    out.label_values = label_values;
    for (std::size_t i : idx) {
      out.samples.push_back(samples.at(i));
      out.labels.push_back(labels.at(i));
      if (!anomaly_step.empty()) out.anomaly_step.push_back(anomaly_step[i]);
    }
    return out;
  }
};

/// Maps raw label values onto contiguous ids in ascending order.
struct LabelMap {
  std::vector<double> values;

  std::optional<std::size_t> find(double v) const {
    auto it = std::lower_bound(values.begin(), values.end(), v);
    if (it == values.end() || *it != v) return std::nullopt;
    return static_cast<std::size_t>(it - values.begin());
  }
};

namespace detail {

/// Turns raw (label, series) rows into a Dataset, remapping labels.
inline Dataset assemble(std::string name, std::vector<double> raw_labels, std::vector<Tensor> samples,
                        const LabelMap* existing, const std::vector<std::size_t>& lines) {
  LabelMap map;
  if (existing) {
    map = *existing;
  } else {
    map.values = raw_labels;
    std::sort(map.values.begin(), map.values.end());
    map.values.erase(std::unique(map.values.begin(), map.values.end()), map.values.end());
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.samples = std::move(samples);
  ds.class_count = map.values.size();
  ds.label_values = map.values;
  ds.original_length = ds.length();
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    auto id = map.find(raw_labels[i]);
    if (!id) throw ParseError("label " + format_double(raw_labels[i]) + " not present in training labels", lines[i]);
    ds.labels.push_back(*id);
  }
  if (ds.samples.empty()) throw ParseError("no samples in '" + ds.name + "'");
  return ds;
}

inline std::string stem_of(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

inline std::vector<std::string_view> tokenize_ucr(std::string_view line) {
  if (line.find('\t') != std::string_view::npos) return split_fields(line, '\t');
  if (line.find(',') != std::string_view::npos) return split_fields(line, ',');
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_field(std::string_view field, std::size_t line, const char* what) {
  double v = 0.0;
  if (!parse_double(field, v) || !std::isfinite(v)) {
    throw ParseError(std::string("unparseable ") + what + " '" + std::string(field) + "'", line);
  }
  return v;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

/// UCR archive layout: one sample per line, label first, then the values,
/// separated by tabs, commas or spaces. Single channel.
inline Dataset load_ucr_tsv(const std::string& path, const LabelMap* labels = nullptr) {
  auto in = detail::open_input(path);
  std::vector<double> raw_labels;
  std::vector<Tensor> samples;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t lineno = 0, width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = detail::tokenize_ucr(line);
    if (fields.size() < 2) throw ParseError("row has no values", lineno);
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw ParseError("ragged row: " + std::to_string(fields.size() - 1) + " values, expected " +
                       std::to_string(width - 1), lineno);
    }
    raw_labels.push_back(detail::parse_field(fields[0], lineno, "label"));
    Tensor s({width - 1, 1});
    for (std::size_t j = 1; j < width; ++j) s[j - 1] = detail::parse_field(fields[j], lineno, "value");
    samples.push_back(std::move(s));
    lines.push_back(lineno);
  }
  return detail::assemble(detail::stem_of(path), std::move(raw_labels), std::move(samples), labels, lines);
}

/// Multichannel layout: header `sample,label,channel,v0,v1,...` and one row
/// per (sample, channel). Every sample must list channels 0..ch-1 once.
inline Dataset load_multichannel_csv(const std::string& path, const LabelMap* labels = nullptr) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file '" + path + "'");
  auto header = split_fields(line, ',');
  if (header.size() < 4 || header[0] != "sample" || header[1] != "label" || header[2] != "channel") {
    throw ParseError("expected header 'sample,label,channel,v0,...'", 1);
  }
  const std::size_t length = header.size() - 3;

  struct Rows {
    double label;
    std::size_t line;
    std::map<std::size_t, std::vector<double>> channels;
  };
  std::map<long long, Rows> by_sample;
  std::vector<long long> order;
  std::size_t lineno = 1, max_channel = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_fields(line, ',');
    if (fields.size() != header.size()) {
      throw ParseError("ragged row: " + std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()), lineno);
    }
    const double sid = detail::parse_field(fields[0], lineno, "sample id");
    const double label = detail::parse_field(fields[1], lineno, "label");
    const double ch = detail::parse_field(fields[2], lineno, "channel");
    if (sid != std::floor(sid) || ch < 0 || ch != std::floor(ch)) throw ParseError("non-integer sample or channel", lineno);
    const auto key = static_cast<long long>(sid);
    const auto channel = static_cast<std::size_t>(ch);
    auto [it, inserted] = by_sample.try_emplace(key, Rows{label, lineno, {}});
    if (inserted) order.push_back(key);
    if (it->second.label != label) throw ParseError("conflicting labels for sample " + std::to_string(key), lineno);
    std::vector<double> values(length);
    for (std::size_t j = 0; j < length; ++j) values[j] = detail::parse_field(fields[3 + j], lineno, "value");
    if (!it->second.channels.emplace(channel, std::move(values)).second) {
      throw ParseError("duplicate channel " + std::to_string(channel) + " for sample " + std::to_string(key), lineno);
    }
    max_channel = std::max(max_channel, channel);
  }
  const std::size_t channels = max_channel + 1;
  std::vector<double> raw_labels;
  std::vector<Tensor> samples;
  std::vector<std::size_t> lines;
  for (long long key : order) {
    const Rows& rows = by_sample.at(key);
    if (rows.channels.size() != channels) {
      throw ParseError("sample " + std::to_string(key) + " is missing channels (has " +
                       std::to_string(rows.channels.size()) + " of " + std::to_string(channels) + ")", rows.line);
    }
    Tensor s({length, channels});
    for (const auto& [c, values] : rows.channels) {
      for (std::size_t t = 0; t < length; ++t) s[t * channels + c] = values[t];
    }
    raw_labels.push_back(rows.label);
    samples.push_back(std::move(s));
    lines.push_back(rows.line);
  }
  return detail::assemble(detail::stem_of(path), std::move(raw_labels), std::move(samples), labels, lines);
}

/// Dispatches on the first line: a `sample,label,channel` header selects the
/// multichannel reader, anything else the UCR reader.
inline Dataset load_dataset(const std::string& path, const LabelMap* labels = nullptr) {
  auto in = detail::open_input(path);
  std::string first;
  std::getline(in, first);
  if (first.rfind("sample,label,channel", 0) == 0) return load_multichannel_csv(path, labels);
  return load_ucr_tsv(path, labels);
}

inline void write_ucr_tsv(const Dataset& ds, const std::string& path) {
  if (ds.channels() != 1) throw PreconditionError("write_ucr_tsv: only single-channel data fits the UCR layout");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << format_double(ds.label_values.at(ds.labels[i]));
    for (double v : ds.samples[i].values) out << '\t' << format_double(v);
    out << '\n';
  }
}

inline void write_multichannel_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "sample,label,channel";
  for (std::size_t t = 0; t < ds.length(); ++t) out << ",v" << t;
  out << '\n';
  const std::size_t ch = ds.channels();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      out << i << ',' << format_double(ds.label_values.at(ds.labels[i])) << ',' << c;
      for (std::size_t t = 0; t < ds.length(); ++t) out << ',' << format_double(ds.samples[i][t * ch + c]);
      out << '\n';
    }
  }
}

// --- preprocessing --------------------------------------------------------

/// Per-channel z-normalisation statistics.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  /// Statistics over the unpadded steps of every sample.
  static Normalizer fit(const Dataset& ds) {
    ds.validate();
    const std::size_t ch = ds.channels(), len = ds.original_length;
    Normalizer n{std::vector<double>(ch, 0.0), std::vector<double>(ch, 0.0)};
    const double count = static_cast<double>(ds.size() * len);
    for (const auto& s : ds.samples) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t c = 0; c < ch; ++c) n.mean[c] += s[t * ch + c];
      }
    }
    for (double& m : n.mean) m /= count;
    for (const auto& s : ds.samples) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t c = 0; c < ch; ++c) {
          const double d = s[t * ch + c] - n.mean[c];
          n.stddev[c] += d * d;
        }
      }
    }
    for (double& v : n.stddev) {
      v = std::sqrt(v / count);
      if (!(v > 0.0)) v = 1.0;
    }
    return n;
  }

  void apply(Dataset& ds) const {
    for (auto& s : ds.samples) apply(s);
  }

  void apply(Tensor& sample) const {
    const std::size_t ch = sample.dim(1);
    if (ch != mean.size()) throw DimensionError("normalizer: channel axis mismatch");
    for (std::size_t i = 0; i < sample.size(); ++i) sample[i] = (sample[i] - mean[i % ch]) / stddev[i % ch];
  }
};

/// Smallest multiple of `multiple` that is >= length.
inline std::size_t padded_length(std::size_t length, std::size_t multiple) {
  return (length + multiple - 1) / multiple * multiple;
}

/// Right-pads every sample by repeating its last value up to `target` steps.
inline void pad_to_length(Dataset& ds, std::size_t target) {
  const std::size_t len = ds.length();
  if (target < len) throw PreconditionError("pad: target shorter than data");
  if (target == len) return;
  for (auto& s : ds.samples) {
    const std::size_t ch = s.dim(1);
    Tensor p({target, ch});
    std::copy(s.values.begin(), s.values.end(), p.values.begin());
    for (std::size_t t = len; t < target; ++t) {
      for (std::size_t c = 0; c < ch; ++c) p[t * ch + c] = s[(len - 1) * ch + c];
    }
    s = std::move(p);
  }
}

inline void pad_to_multiple(Dataset& ds, std::size_t multiple) { pad_to_length(ds, padded_length(ds.length(), multiple)); }

// --- splits ---------------------------------------------------------------

struct Split {
  Dataset first;
  Dataset second;  // the held-out fraction
  std::vector<std::size_t> first_index;
  std::vector<std::size_t> second_index;
};

/// Stratified split holding out round(fraction * n_c) samples of each class
/// (at least one, never all). Index lists are in original order.
inline Split split(const Dataset& ds, double fraction, std::uint64_t seed, Stream stream = Stream::validation_split) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw PreconditionError("split: fraction must be in (0, 1)");
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::vector<std::uint8_t> held(ds.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) throw PreconditionError("split: class " + std::to_string(c) + " has fewer than 2 samples");
    CounterRng rng(seed, stream, c);
    rng.shuffle(idx);
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
    for (std::size_t j = 0; j < take; ++j) held[idx[j]] = 1;
  }
  Split s;
  for (std::size_t i = 0; i < ds.size(); ++i) (held[i] ? s.second_index : s.first_index).push_back(i);
  s.first = ds.subset(s.first_index);
  s.second = ds.subset(s.second_index);
  return s;
}

// --- synthetic point anomalies --------------------------------------------

struct SyntheticAnomalyConfig {
  std::size_t n_samples = 2000;
  std::size_t length = 50;
  std::size_t channels = 3;
  double anomaly_magnitude = 4.0;
  std::uint64_t seed = 0;
};

/// Two-class point-anomaly data. Each channel is an offset plus two
/// random-phase sinusoids (1 to 3 cycles per window) with 0.1 sigma gaussian
/// noise. Odd-indexed samples are positive: one random step of one random
/// channel moves away from the channel mean by anomaly_magnitude * sigma,
/// sigma being that channel's standard deviation.
inline Dataset generate_anomaly(const SyntheticAnomalyConfig& config) {
  if (config.n_samples < 4 || config.length < 2 || config.channels < 1 || !(config.anomaly_magnitude > 0.0)) {
    throw PreconditionError("generate_anomaly: invalid config");
  }
  const std::size_t L = config.length, ch = config.channels;
  Dataset ds;
  ds.name = "anomaly";
  ds.class_count = 2;
  ds.original_length = L;
  ds.label_values = {0.0, 1.0};

  auto channel_stats = [L, ch](const Tensor& s, std::size_t c) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 0; t < L; ++t) m += s[t * ch + c];
    m /= static_cast<double>(L);
    for (std::size_t t = 0; t < L; ++t) v += (s[t * ch + c] - m) * (s[t * ch + c] - m);
    return std::pair{m, std::sqrt(v / static_cast<double>(L))};
  };

  for (std::size_t i = 0; i < config.n_samples; ++i) {
    CounterRng rng(config.seed, Stream::data, i);
    Tensor s({L, ch});
    for (std::size_t c = 0; c < ch; ++c) {
      const double offset = rng.uniform(-1.0, 1.0);
      double amp[2], freq[2], phase[2];
      for (int j = 0; j < 2; ++j) {
        amp[j] = rng.uniform(0.5, 1.5);
        freq[j] = rng.uniform(1.0, 3.0);
        phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      for (std::size_t t = 0; t < L; ++t) {
        const double u = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(L);
        s[t * ch + c] = offset + amp[0] * std::sin(freq[0] * u + phase[0]) + amp[1] * std::sin(freq[1] * u + phase[1]);
      }
      const double sigma = channel_stats(s, c).second;
      for (std::size_t t = 0; t < L; ++t) s[t * ch + c] += 0.1 * sigma * rng.normal();
    }
    const std::size_t label = i % 2;
    std::ptrdiff_t step = -1;
    if (label == 1) {
      const auto t = static_cast<std::size_t>(rng.below(L));
      const auto c = static_cast<std::size_t>(rng.below(ch));
      const auto [m, sigma] = channel_stats(s, c);
      const double sign = s[t * ch + c] >= m ? 1.0 : -1.0;
      s[t * ch + c] += sign * config.anomaly_magnitude * sigma;
      step = static_cast<std::ptrdiff_t>(t);
    }
    ds.samples.push_back(std::move(s));
    ds.labels.push_back(label);
    ds.anomaly_step.push_back(step);
  }
  return ds;
}

// --- end-to-end preparation -----------------------------------------------

/// Normalised, padded train/test data plus the statistics used.
struct PreparedData {
  Dataset train;
  Dataset test;
  Normalizer normalizer;
};

/// Holds out a stratified test split when `test` is absent, fits the
/// normaliser on the training part only, then normalises and pads both.
inline PreparedData prepare(Dataset train, std::optional<Dataset> test, double test_fraction, std::uint64_t seed,
                            std::size_t pool_factor) {
  PreparedData out;
  if (test) {
    if (test->channels() != train.channels() || test->original_length != train.original_length) {
      throw DimensionError("prepare: test data shape differs from training data");
    }
    out.train = std::move(train);
    out.test = std::move(*test);
  } else {
    auto s = split(train, test_fraction, seed, Stream::test_split);
    out.train = std::move(s.first);
    out.test = std::move(s.second);
  }
  out.normalizer = Normalizer::fit(out.train);
  out.normalizer.apply(out.train);
  out.normalizer.apply(out.test);
  pad_to_multiple(out.train, pool_factor);
  pad_to_multiple(out.test, pool_factor);
  return out;
}

}  // namespace p2ex
