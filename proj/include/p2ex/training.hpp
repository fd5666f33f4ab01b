#pragma once

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "p2ex/csv.hpp"
#include "p2ex/data.hpp"
#include "p2ex/losses.hpp"
#include "p2ex/model.hpp"
#include "p2ex/rng.hpp"

namespace p2ex {

struct TrainConfig {
  std::uint64_t seed = 7;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs_stage1 = 200;
  std::size_t max_epochs_stage2 = 50;
  std::size_t patience = 15;
  double validation_fraction = 0.2;
  LossWeights loss;
  /// Worker threads for per-sample gradients. Results do not depend on it.
  std::size_t threads = 1;

  void validate() const {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("train config: validation_fraction must be in (0, 1)");
    }
    if (patience < 1) throw ConfigError("train config: patience must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
    if (threads < 1) throw ConfigError("train config: threads must be >= 1");
  }
};

enum class Stage { stage1, stage2, baseline, all };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
    case Stage::baseline: return "baseline";
    case Stage::all: return "all";
  }
  return "?";
}

/// What the gradient is taken of. Reporting always covers every component.
enum class Objective { full, classification_only };

// --- optimiser ------------------------------------------------------------

/// Adaptive moment estimation state; moments mirror the parameter list.
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

inline void optimizer_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads,
                           OptimizerState& state, double lr) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size() || state.m[i].size() != params[i]->size()) {
      throw DimensionError("optimizer: size mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

// --- parameter selection --------------------------------------------------

inline std::vector<Tensor*> trainable_params(P2ExModel& model, Stage stage) {
  std::vector<Tensor*> out;
  model.for_each_parameter([&](const std::string&, Tensor& t) {
    const bool is_weight = &t == &model.weights.w;
    if (stage == Stage::all || (stage == Stage::stage2) == is_weight) out.push_back(&t);
  });
  return out;
}

inline std::vector<Tensor*> trainable_params(BaselineModel& model, Stage) {
  std::vector<Tensor*> out;
  model.for_each_parameter([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

// --- batch gradients ------------------------------------------------------

struct BatchResult {
  /// Batch mean of the per-sample terms, diversity added once.
  LossBreakdown breakdown;
  /// Gradient of the batch objective, aligned with the trainable list.
  std::vector<std::vector<double>> grads;
  std::size_t correct = 0;
  std::size_t count = 0;
};

namespace detail {

struct SampleResult {
  LossBreakdown breakdown;
  std::vector<std::vector<double>> grads;
  bool correct = false;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers, each over a
/// contiguous block. Exceptions are rethrown on the caller.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  const std::size_t block = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w * block; i < std::min(n, (w + 1) * block); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<std::vector<double>> collect_grads(const ParameterBinder& bind, std::span<Tensor* const> trainable) {
  std::vector<std::vector<double>> out;
  out.reserve(trainable.size());
  for (const Tensor* t : trainable) {
    const auto* g = bind.grad(*t);
    out.push_back(g ? *g : std::vector<double>(t->size(), 0.0));
  }
  return out;
}

/// Ordered reduction: sample 0 first, so the sum never depends on threading.
inline BatchResult reduce(std::vector<SampleResult>& samples, std::span<Tensor* const> trainable) {
  BatchResult r;
  r.count = samples.size();
  for (const Tensor* t : trainable) r.grads.emplace_back(t->size(), 0.0);
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (auto& s : samples) {
    r.breakdown.cross_entropy += s.breakdown.cross_entropy;
    r.breakdown.mse += s.breakdown.mse;
    r.breakdown.l_p2s += s.breakdown.l_p2s;
    r.breakdown.l_s2p += s.breakdown.l_s2p;
    r.breakdown.l_clst += s.breakdown.l_clst;
    r.breakdown.l_sep += s.breakdown.l_sep;
    r.correct += s.correct ? 1 : 0;
    for (std::size_t p = 0; p < s.grads.size(); ++p) {
      for (std::size_t j = 0; j < s.grads[p].size(); ++j) r.grads[p][j] += s.grads[p][j];
    }
  }
  r.breakdown.cross_entropy *= inv;
  r.breakdown.mse *= inv;
  r.breakdown.l_p2s *= inv;
  r.breakdown.l_s2p *= inv;
  r.breakdown.l_clst *= inv;
  r.breakdown.l_sep *= inv;
  for (auto& g : r.grads) {
    for (double& v : g) v *= inv;
  }
  return r;
}

}  // namespace detail

/// Combined-loss gradients of the P2Ex model over the samples `idx`.
/// An empty `trainable` list gives a forward-only evaluation.
inline BatchResult batch_gradients(const P2ExModel& model, const Dataset& data, std::span<const std::size_t> idx,
                                   const LossWeights& weights, std::span<Tensor* const> trainable,
                                   Objective objective = Objective::full, std::size_t threads = 1) {
  if (idx.empty()) throw PreconditionError("batch_gradients: empty batch");
  std::vector<const Tensor*> train_ptrs(trainable.begin(), trainable.end());
  std::vector<detail::SampleResult> results(idx.size());
  detail::parallel_for(idx.size(), threads, [&](std::size_t i) {
    const std::size_t n = idx[i];
    Tape tape;
    ParameterBinder bind(tape, train_ptrs);
    auto f = forward(bind, model, data.samples.at(n));
    auto terms = sample_loss_terms(f, data.labels.at(n), model.bank.class_of);
    auto& r = results[i];
    r.breakdown = breakdown_of(terms);
    r.correct = argmax(f.logits.value()) == data.labels[n];
    if (!trainable.empty()) {
      Var target = objective == Objective::full ? weighted_sample_total(terms, weights)
                                                : scale(terms.cross_entropy, weights.lambda_c);
      tape.backward(target);
      r.grads = detail::collect_grads(bind, trainable);
    }
  });
  BatchResult out = detail::reduce(results, trainable);

  Tape tape;
  ParameterBinder bind(tape, train_ptrs);
  Var div = loss_div(bind.bind(model.bank.protos));
  out.breakdown.l_div = div.value()[0];
  if (!trainable.empty() && objective == Objective::full) {
    tape.backward(scale(div, weights.lambda_div));
    auto g = detail::collect_grads(bind, trainable);
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (std::size_t j = 0; j < g[p].size(); ++j) out.grads[p][j] += g[p][j];
    }
  }
  out.breakdown.total = out.breakdown.weighted_sum(weights);
  return out;
}

/// Plain cross-entropy gradients of the baseline; only cross_entropy and
/// total of the breakdown are populated.
inline BatchResult batch_gradients(const BaselineModel& model, const Dataset& data, std::span<const std::size_t> idx,
                                   const LossWeights&, std::span<Tensor* const> trainable,
                                   Objective = Objective::full, std::size_t threads = 1) {
  if (idx.empty()) throw PreconditionError("batch_gradients: empty batch");
  std::vector<const Tensor*> train_ptrs(trainable.begin(), trainable.end());
  std::vector<detail::SampleResult> results(idx.size());
  detail::parallel_for(idx.size(), threads, [&](std::size_t i) {
    const std::size_t n = idx[i];
    Tape tape;
    ParameterBinder bind(tape, train_ptrs);
    auto f = forward(bind, model, data.samples.at(n));
    Var ce = cross_entropy(f.logits, data.labels.at(n));
    auto& r = results[i];
    r.breakdown.cross_entropy = ce.value()[0];
    r.correct = argmax(f.logits.value()) == data.labels[n];
    if (!trainable.empty()) {
      tape.backward(ce);
      r.grads = detail::collect_grads(bind, trainable);
    }
  });
  BatchResult out = detail::reduce(results, trainable);
  out.breakdown.total = out.breakdown.cross_entropy;
  return out;
}

struct Evaluation {
  LossBreakdown breakdown;
  double accuracy = 0.0;
};

template <class Model>
Evaluation evaluate(const Model& model, const Dataset& data, const LossWeights& weights, std::size_t threads = 1) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto r = batch_gradients(model, data, idx, weights, {}, Objective::full, threads);
  return {r.breakdown, static_cast<double>(r.correct) / static_cast<double>(r.count)};
}

template <class Model>
double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw PreconditionError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predict(model, data.samples[i]) == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// --- reports --------------------------------------------------------------

struct EpochRecord {
  Stage stage = Stage::stage1;
  std::size_t epoch = 0;  // 1-based within its stage
  LossBreakdown train;
  LossBreakdown val;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  /// Index into `epochs` where each stage begins.
  std::vector<std::pair<Stage, std::size_t>> stage_starts;
  double seconds = 0.0;
  std::string checkpoint_path;

  void append(const TrainReport& other) {
    for (auto [stage, start] : other.stage_starts) stage_starts.emplace_back(stage, start + epochs.size());
    epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
    seconds += other.seconds;
  }

  /// One row per epoch. Wall-clock time is left out so reruns compare equal.
  void write_csv(const std::string& path) const {
    std::vector<std::string> header{"stage", "epoch"};
    for (const char* prefix : {"train_", "val_"}) {
      for (const char* name : LossBreakdown::names) header.push_back(std::string(prefix) + name);
    }
    header.push_back("train_acc");
    header.push_back("val_acc");
    CsvWriter csv(path, header);
    for (const auto& e : epochs) {
      std::vector<std::string> row{stage_name(e.stage), std::to_string(e.epoch)};
      for (double v : e.train.as_array()) row.push_back(format_double(v));
      for (double v : e.val.as_array()) row.push_back(format_double(v));
      row.push_back(format_double(e.train_acc));
      row.push_back(format_double(e.val_acc));
      csv.row(row);
    }
  }
};

struct BatchEvent {
  Stage stage;
  std::size_t epoch;
  std::size_t batch;
  const LossBreakdown& breakdown;
};

/// Optional observation points, called on the training thread.
struct TrainHooks {
  std::function<void(const BatchEvent&)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainingSplit {
  Dataset train;
  Dataset val;
};

inline TrainingSplit make_training_split(const Dataset& data, const TrainConfig& config) {
  config.validate();
  auto s = split(data, config.validation_fraction, config.seed, Stream::validation_split);
  return {std::move(s.first), std::move(s.second)};
}

namespace detail {

template <class Model>
TrainReport run_stage(Model& model, const TrainingSplit& data, const TrainConfig& config, Stage stage,
                      std::size_t max_epochs, Objective objective, const TrainHooks* hooks) {
  config.validate();
  if (data.train.empty() || data.val.empty()) throw TrainingError(std::string(stage_name(stage)) + ": empty dataset");
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage_starts.emplace_back(stage, 0);

  std::vector<Tensor*> params = trainable_params(model, stage);
  std::vector<Tensor> best;
  for (const Tensor* p : params) best.push_back(*p);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  OptimizerState opt;

  const std::size_t n = data.train.size();
  const auto stage_key = static_cast<std::uint64_t>(stage) << 32;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, Stream::shuffle, stage_key | epoch);
    rng.shuffle(order);

    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    std::size_t correct = 0, batch_no = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_no) {
      std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, n - start));
      BatchResult r = batch_gradients(model, data.train, idx, config.loss, params, objective, config.threads);
      if (!std::isfinite(r.breakdown.total)) {
        throw TrainingError(std::string(stage_name(stage)) + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      if (hooks && hooks->on_batch) hooks->on_batch(BatchEvent{stage, epoch, batch_no, r.breakdown});
      optimizer_step(params, r.grads, opt, config.learning_rate);

      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      rec.train.cross_entropy += w * r.breakdown.cross_entropy;
      rec.train.mse += w * r.breakdown.mse;
      rec.train.l_p2s += w * r.breakdown.l_p2s;
      rec.train.l_s2p += w * r.breakdown.l_s2p;
      rec.train.l_div += w * r.breakdown.l_div;
      rec.train.l_clst += w * r.breakdown.l_clst;
      rec.train.l_sep += w * r.breakdown.l_sep;
      rec.train.total += w * r.breakdown.total;
      correct += r.correct;
    }
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    Evaluation val = evaluate(model, data.val, config.loss, config.threads);
    if (!std::isfinite(val.breakdown.total)) {
      throw TrainingError(std::string(stage_name(stage)) + ": non-finite validation loss at epoch " +
                          std::to_string(epoch));
    }
    rec.val = val.breakdown;
    rec.val_acc = val.accuracy;
    report.epochs.push_back(rec);
    if (hooks && hooks->on_epoch) hooks->on_epoch(rec);

    if (val.breakdown.total < best_val) {
      best_val = val.breakdown.total;
      since_best = 0;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = *params[i];
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (!report.epochs.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = best[i].values;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace detail

/// Prototype weights stay frozen; everything else follows the combined loss.
inline TrainReport train_stage1(P2ExModel& model, const TrainingSplit& data, const TrainConfig& config,
                                const TrainHooks* hooks = nullptr) {
  return detail::run_stage(model, data, config, Stage::stage1, config.max_epochs_stage1, Objective::full, hooks);
}

/// Only the prototype weights move. The other loss terms do not depend on
/// them, so the gradient is taken of the weighted cross-entropy alone.
inline TrainReport train_stage2(P2ExModel& model, const TrainingSplit& data, const TrainConfig& config,
                                const TrainHooks* hooks = nullptr) {
  return detail::run_stage(model, data, config, Stage::stage2, config.max_epochs_stage2,
                           Objective::classification_only, hooks);
}

/// Both stages once each, after a stratified validation split.
inline TrainReport train_p2ex(P2ExModel& model, const Dataset& data, const TrainConfig& config,
                              const TrainHooks* hooks = nullptr) {
  auto split_data = make_training_split(data, config);
  TrainReport report = train_stage1(model, split_data, config, hooks);
  report.append(train_stage2(model, split_data, config, hooks));
  return report;
}

inline TrainReport train_baseline(BaselineModel& model, const Dataset& data, const TrainConfig& config,
                                  const TrainHooks* hooks = nullptr) {
  auto split_data = make_training_split(data, config);
  return detail::run_stage(model, split_data, config, Stage::baseline, config.max_epochs_stage1, Objective::full,
                           hooks);
}

}  // namespace p2ex
