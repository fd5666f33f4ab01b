#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "p2ex/csv.hpp"
#include "p2ex/data.hpp"
#include "p2ex/losses.hpp"
#include "p2ex/model.hpp"

namespace p2ex {

/// Evidence of prototype k at latent position q for the predicted class.
struct PatchAttribution {
  std::size_t prototype_id = 0;
  std::size_t position = 0;
  InputWindow window;
  double contribution = 0.0;  // Sim[k,q] * w[k,q,predicted]
  std::size_t prototype_class = 0;
};

struct ClassDistribution {
  std::vector<double> probabilities;

  double sum() const {
    double s = 0.0;
    for (double p : probabilities) s += p;
    return s;
  }
};

struct Explanation {
  std::size_t sample_id = 0;
  std::size_t predicted = 0;
  std::optional<std::size_t> true_class;
  bool misclassified = false;
  std::vector<PatchAttribution> attributions;  // descending contribution
  ClassDistribution overall;
  std::vector<ClassDistribution> per_patch;  // one per latent position
  Tensor logits;                             // [C]
  Tensor sim;                                // [K, Q]
};

namespace detail {

inline ClassDistribution softmax_of(const std::vector<double>& scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  ClassDistribution d{std::vector<double>(scores.size())};
  double z = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) z += (d.probabilities[c] = std::exp(scores[c] - mx));
  for (double& p : d.probabilities) p /= z;
  return d;
}

inline void require_finite_model(const P2ExModel& model) {
  model.for_each_parameter([](const std::string& name, const Tensor& t) {
    if (!t.all_finite()) throw NumericError("model parameter '" + name + "' is not finite");
  });
}

}  // namespace detail

/// Ranks every (prototype, position) pair by its evidence for the predicted
/// class and derives overall and per-position class distributions.
inline Explanation explain_sample(const P2ExModel& model, const Tensor& x, std::size_t top_r,
                                  std::size_t sample_id = 0, std::optional<std::size_t> true_class = std::nullopt) {
  detail::require_finite_model(model);
  const auto out = forward_p2ex(model, x);
  const ModelConfig& cfg = model.config;
  const std::size_t K = cfg.num_prototypes(), Q = cfg.num_positions(), C = cfg.num_classes;
  const auto& w = model.weights.w.values;

  Explanation e;
  e.sample_id = sample_id;
  e.predicted = argmax(out.logits);
  e.true_class = true_class;
  e.misclassified = true_class && *true_class != e.predicted;
  e.logits = out.logits;
  e.sim = out.sim;
  e.overall = detail::softmax_of(out.logits.values);

  for (std::size_t q = 0; q < Q; ++q) {
    std::vector<double> scores(C, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < C; ++c) scores[c] += out.sim[k * Q + q] * w[(k * Q + q) * C + c];
    }
    e.per_patch.push_back(detail::softmax_of(scores));
  }

  std::vector<PatchAttribution> all;
  all.reserve(K * Q);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < Q; ++q) {
      all.push_back({k, q, receptive_window(cfg, q), out.sim[k * Q + q] * w[(k * Q + q) * C + e.predicted],
                     model.bank.class_of[k]});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const PatchAttribution& a, const PatchAttribution& b) { return a.contribution > b.contribution; });
  all.resize(std::min(top_r, all.size()));
  e.attributions = std::move(all);
  return e;
}

/// Input-space view of prototype k: [patch_len * 2^blocks, input_channels].
inline Tensor decode_prototype(const P2ExModel& model, std::size_t k) {
  if (k >= model.bank.size()) throw PreconditionError("decode_prototype: prototype " + std::to_string(k) + " out of range");
  const auto& cfg = model.config;
  const std::size_t width = cfg.patch_len * cfg.latent_channels;
  Tensor z({cfg.patch_len, cfg.latent_channels},
           std::vector<double>(model.bank.protos.values.begin() + static_cast<std::ptrdiff_t>(k * width),
                               model.bank.protos.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * width)));
  return decode(model, z);
}

inline Tensor decode_prototype(const BaselineModel&, std::size_t) {
  throw UnsupportedError("decode_prototype: the baseline model has no decoder");
}

// --- representatives and closeness ----------------------------------------

struct RepresentativePatch {
  std::size_t sample_id = 0;
  std::size_t position = 0;
  double distance = 0.0;
};

/// Latent patch grids of every sample, computed once.
inline std::vector<PatchGrid> latent_grids(const P2ExModel& model, const Dataset& data) {
  std::vector<PatchGrid> grids;
  grids.reserve(data.size());
  for (const auto& s : data.samples) grids.push_back(extract_patches(encode(model, s), model.config.patch_len));
  return grids;
}

/// Closest training patch to prototype k in latent space. Ties keep the
/// lowest (sample, position).
inline RepresentativePatch representative_patch(const P2ExModel& model, std::size_t k,
                                                const std::vector<PatchGrid>& grids) {
  if (grids.empty()) throw PreconditionError("representative_patch: empty dataset");
  if (k >= model.bank.size()) throw PreconditionError("representative_patch: prototype out of range");
  const std::size_t width = model.config.patch_len * model.config.latent_channels;
  const double* proto = model.bank.protos.values.data() + k * width;
  RepresentativePatch best{0, 0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& g = grids[i].patches;
    for (std::size_t q = 0; q < g.dim(0); ++q) {
      double acc = 0.0;
      for (std::size_t e = 0; e < width; ++e) {
        const double d = g[q * width + e] - proto[e];
        acc += d * d;
      }
      const double dist = std::sqrt(acc);
      if (dist < best.distance) best = {i, q, dist};
    }
  }
  return best;
}

inline RepresentativePatch representative_patch(const P2ExModel& model, std::size_t k, const Dataset& data) {
  return representative_patch(model, k, latent_grids(model, data));
}

struct ClosenessReport {
  std::string dataset;
  double with_decoder = 0.0;
  std::optional<double> without_decoder;
  std::vector<RepresentativePatch> representatives;  // of the with-decoder model

  /// Relative change from the with-decoder to the without-decoder distance, in percent.
  std::optional<double> improvement_percent() const {
    if (!without_decoder || with_decoder == 0.0) return std::nullopt;
    return (*without_decoder - with_decoder) / with_decoder * 100.0;
  }
};

inline double mean_representative_distance(const std::vector<RepresentativePatch>& reps) {
  double s = 0.0;
  for (const auto& r : reps) s += r.distance;
  return s / static_cast<double>(reps.size());
}

/// Mean latent distance from each prototype to its representative patch.
/// `without_decoder` is a model trained with the reconstruction term off.
inline ClosenessReport closeness(const P2ExModel& model, const Dataset& train,
                                 const P2ExModel* without_decoder = nullptr) {
  if (train.empty()) throw PreconditionError("closeness: empty dataset");
  ClosenessReport r;
  r.dataset = train.name;
  const auto grids = latent_grids(model, train);
  for (std::size_t k = 0; k < model.bank.size(); ++k) r.representatives.push_back(representative_patch(model, k, grids));
  r.with_decoder = mean_representative_distance(r.representatives);
  if (without_decoder) {
    const auto other = latent_grids(*without_decoder, train);
    std::vector<RepresentativePatch> reps;
    for (std::size_t k = 0; k < without_decoder->bank.size(); ++k) {
      reps.push_back(representative_patch(*without_decoder, k, other));
    }
    r.without_decoder = mean_representative_distance(reps);
  }
  return r;
}

// --- prototype substitution -----------------------------------------------

enum class SubstitutionMode { best_same_class, most_different };

inline const char* mode_name(SubstitutionMode m) {
  return m == SubstitutionMode::best_same_class ? "best_same_class" : "most_different";
}

struct Replacement {
  std::size_t position = 0;
  std::size_t prototype_id = 0;
  InputWindow window;
};

struct SubstitutionResult {
  Tensor modified;
  std::size_t original_prediction = 0;
  std::size_t new_prediction = 0;
  /// Replaced unpadded steps over the unpadded length.
  double replaced_fraction = 0.0;
  std::vector<Replacement> replacements;  // in rank order
  bool top_r_clipped = false;
};

struct SubstitutionOptions {
  std::size_t top_r = 0;
  bool align_offsets = true;
  /// Unpadded length; 0 means the whole input.
  std::size_t original_length = 0;
};

/// Default number of substituted positions: ceil(Q / 2).
inline std::size_t default_top_r(const ModelConfig& config) { return (config.num_positions() + 1) / 2; }

/// Replaces the receptive windows of the top_r positions (ranked by the
/// absolute evidence they give the predicted class) with decoded prototypes
/// and classifies again. best_same_class picks, per position, the prototype
/// of the predicted class with the largest contribution; most_different the
/// prototype of another class with the smallest. Earlier-ranked windows win
/// where windows overlap. With align_offsets each channel of the decoded
/// window is shifted to the mean of the window it replaces.
inline SubstitutionResult substitute_and_reclassify(const P2ExModel& model, const Tensor& x, SubstitutionMode mode,
                                                    const SubstitutionOptions& options) {
  const ModelConfig& cfg = model.config;
  const std::size_t K = cfg.num_prototypes(), Q = cfg.num_positions(), C = cfg.num_classes;
  const std::size_t T = x.dim(0), ch = x.dim(1);
  const std::size_t valid = options.original_length ? std::min(options.original_length, T) : T;
  const auto out = forward_p2ex(model, x);
  const auto& w = model.weights.w.values;

  SubstitutionResult r;
  r.modified = x;
  r.original_prediction = argmax(out.logits);
  const std::size_t y = r.original_prediction;
  std::size_t top_r = options.top_r;
  if (top_r > Q) {
    top_r = Q;
    r.top_r_clipped = true;
  }
  if (top_r == 0) {
    r.new_prediction = r.original_prediction;
    return r;
  }

  auto contribution = [&](std::size_t k, std::size_t q) { return out.sim[k * Q + q] * w[(k * Q + q) * C + y]; };
  std::vector<double> position_score(Q, 0.0);
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t k = 0; k < K; ++k) position_score[q] += contribution(k, q);
  }
  std::vector<std::size_t> ranked(Q);
  for (std::size_t q = 0; q < Q; ++q) ranked[q] = q;
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(position_score[a]) > std::abs(position_score[b]);
  });

  std::map<std::size_t, Tensor> decoded;
  std::vector<std::uint8_t> replaced(T, 0);
  for (std::size_t rank = 0; rank < top_r; ++rank) {
    const std::size_t q = ranked[rank];
    std::optional<std::size_t> pick;
    for (std::size_t k = 0; k < K; ++k) {
      const bool same = model.bank.class_of[k] == y;
      if (same != (mode == SubstitutionMode::best_same_class)) continue;
      if (!pick) {
        pick = k;
      } else if (mode == SubstitutionMode::best_same_class ? contribution(k, q) > contribution(*pick, q)
                                                           : contribution(k, q) < contribution(*pick, q)) {
        pick = k;
      }
    }
    if (!pick) continue;
    auto it = decoded.find(*pick);
    if (it == decoded.end()) it = decoded.emplace(*pick, decode_prototype(model, *pick)).first;
    const Tensor& proto = it->second;
    const InputWindow win = receptive_window(cfg, q);
    const std::size_t end = std::min(win.end, T);

    std::vector<double> offset(ch, 0.0);
    if (options.align_offsets) {
      for (std::size_t c = 0; c < ch; ++c) {
        double orig = 0.0, dec = 0.0;
        for (std::size_t t = win.start; t < end; ++t) {
          orig += x[t * ch + c];
          dec += proto[(t - win.start) * ch + c];
        }
        offset[c] = (orig - dec) / static_cast<double>(end - win.start);
      }
    }
    for (std::size_t t = win.start; t < end; ++t) {
      if (replaced[t]) continue;
      replaced[t] = 1;
      for (std::size_t c = 0; c < ch; ++c) r.modified[t * ch + c] = proto[(t - win.start) * ch + c] + offset[c];
    }
    r.replacements.push_back({q, *pick, win});
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < valid; ++t) count += replaced[t];
  r.replaced_fraction = static_cast<double>(count) / static_cast<double>(valid);
  r.new_prediction = predict(model, r.modified);
  return r;
}

// --- replacement sanity check ---------------------------------------------

struct SubstitutionRecord {
  std::size_t sample_id = 0;
  std::size_t label = 0;
  std::size_t original_prediction = 0;
  std::size_t new_prediction = 0;
  double replaced_fraction = 0.0;
};

struct SanityRow {
  SubstitutionMode mode = SubstitutionMode::best_same_class;
  double data_replaced_percent = 0.0;
  double equal_prediction_percent = 0.0;
  double original_accuracy = 0.0;
  double modified_accuracy = 0.0;
};

struct SanityReport {
  std::string dataset;
  bool aligned = true;
  std::size_t top_r = 0;
  SanityRow best_same_class;
  SanityRow most_different;
  std::vector<SubstitutionRecord> best_records;
  std::vector<SubstitutionRecord> different_records;
};

/// Percentages (0-100) over per-sample substitution records.
inline SanityRow summarize(SubstitutionMode mode, const std::vector<SubstitutionRecord>& records) {
  if (records.empty()) throw PreconditionError("sanity: no records");
  SanityRow row;
  row.mode = mode;
  double replaced = 0.0;
  std::size_t equal = 0, orig_ok = 0, mod_ok = 0;
  for (const auto& r : records) {
    replaced += r.replaced_fraction;
    equal += r.original_prediction == r.new_prediction;
    orig_ok += r.original_prediction == r.label;
    mod_ok += r.new_prediction == r.label;
  }
  const double n = static_cast<double>(records.size());
  row.data_replaced_percent = 100.0 * replaced / n;
  row.equal_prediction_percent = 100.0 * static_cast<double>(equal) / n;
  row.original_accuracy = 100.0 * static_cast<double>(orig_ok) / n;
  row.modified_accuracy = 100.0 * static_cast<double>(mod_ok) / n;
  return row;
}

inline SanityReport sanity_replacement(const P2ExModel& model, const Dataset& test, std::size_t top_r,
                                       bool align_offsets = true) {
  if (test.empty()) throw PreconditionError("sanity: empty test set");
  SanityReport rep;
  rep.dataset = test.name;
  rep.aligned = align_offsets;
  rep.top_r = top_r;
  SubstitutionOptions opts{top_r, align_offsets, test.original_length};
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (auto mode : {SubstitutionMode::best_same_class, SubstitutionMode::most_different}) {
      auto s = substitute_and_reclassify(model, test.samples[i], mode, opts);
      auto& records = mode == SubstitutionMode::best_same_class ? rep.best_records : rep.different_records;
      records.push_back({i, test.labels[i], s.original_prediction, s.new_prediction, s.replaced_fraction});
    }
  }
  rep.best_same_class = summarize(SubstitutionMode::best_same_class, rep.best_records);
  rep.most_different = summarize(SubstitutionMode::most_different, rep.different_records);
  return rep;
}

// --- CSV export -----------------------------------------------------------

inline void write_sanity_csv(const SanityReport& rep, const std::string& path) {
  CsvWriter csv(path, {"dataset", "mode", "aligned", "top_r", "data_replaced", "equal_pred", "accuracy",
                       "modified_accuracy"});
  for (const SanityRow* row : {&rep.best_same_class, &rep.most_different}) {
    csv.write(rep.dataset, mode_name(row->mode), rep.aligned ? 1 : 0, rep.top_r, row->data_replaced_percent,
              row->equal_prediction_percent, row->original_accuracy, row->modified_accuracy);
  }
}

inline void write_closeness_csv(const ClosenessReport& rep, const std::string& path) {
  CsvWriter csv(path, {"dataset", "with_decoder", "without_decoder", "improvement_percent"});
  auto imp = rep.improvement_percent();
  csv.write(rep.dataset, rep.with_decoder, rep.without_decoder ? format_double(*rep.without_decoder) : std::string(),
            imp ? format_double(*imp) : std::string());
}

/// Writes one explanation directory: series.csv, attributions.csv,
/// class_distribution.csv, patch_distributions.csv and meta.csv.
inline void export_explanation(const std::filesystem::path& dir, const ModelConfig& config, const Explanation& e,
                               const Tensor& original,
                               const SubstitutionResult& substitution, std::size_t original_length,
                               const std::vector<double>& label_values) {
  std::filesystem::create_directories(dir);
  const std::size_t T = original.dim(0), ch = original.dim(1);
  {
    std::vector<std::string> header{"t", "padding"};
    for (std::size_t c = 0; c < ch; ++c) header.push_back("original_" + std::to_string(c));
    for (std::size_t c = 0; c < ch; ++c) header.push_back("modified_" + std::to_string(c));
    CsvWriter csv((dir / "series.csv").string(), header);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::string> row{std::to_string(t), t >= original_length ? "1" : "0"};
      for (std::size_t c = 0; c < ch; ++c) row.push_back(format_double(original[t * ch + c]));
      for (std::size_t c = 0; c < ch; ++c) row.push_back(format_double(substitution.modified[t * ch + c]));
      csv.row(row);
    }
  }
  {
    CsvWriter csv((dir / "attributions.csv").string(),
                  {"rank", "prototype_id", "class", "q", "window_start", "window_end", "contribution"});
    for (std::size_t i = 0; i < e.attributions.size(); ++i) {
      const auto& a = e.attributions[i];
      csv.write(i, a.prototype_id, a.prototype_class, a.position, a.window.start, a.window.end, a.contribution);
    }
  }
  {
    CsvWriter csv((dir / "class_distribution.csv").string(), {"class", "label", "probability"});
    for (std::size_t c = 0; c < e.overall.probabilities.size(); ++c) {
      csv.write(c, c < label_values.size() ? format_double(label_values[c]) : std::string(), e.overall.probabilities[c]);
    }
  }
  {
    CsvWriter csv((dir / "patch_distributions.csv").string(),
                  {"q", "window_start", "window_end", "class", "probability"});
    for (std::size_t q = 0; q < e.per_patch.size(); ++q) {
      const InputWindow win = receptive_window(config, q);
      for (std::size_t c = 0; c < e.per_patch[q].probabilities.size(); ++c) {
        csv.write(q, win.start, win.end, c, e.per_patch[q].probabilities[c]);
      }
    }
  }
  {
    CsvWriter csv((dir / "meta.csv").string(), {"sample", "true_class", "predicted_class", "misclassified",
                                                "replaced_fraction", "windows"});
    csv.write(e.sample_id, e.true_class ? std::to_string(*e.true_class) : std::string(), e.predicted,
              e.misclassified ? 1 : 0, substitution.replaced_fraction, "pooling-stride approximation");
  }
}

}  // namespace p2ex
