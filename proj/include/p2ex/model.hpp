#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "p2ex/ops.hpp"
#include "p2ex/rng.hpp"
#include "p2ex/tensor.hpp"

namespace p2ex {

/// Architecture hyper-parameters. input_* and num_classes come from the data.
struct ModelConfig {
  std::size_t input_length = 0;
  std::size_t input_channels = 0;
  std::size_t num_classes = 0;
  std::size_t conv_blocks = 3;
  std::size_t latent_channels = 16;
  std::size_t patch_len = 2;
  std::size_t prototypes_per_class = 4;
  double epsilon_sim = 1e-4;

  static constexpr std::size_t kernel_width = 3;

  std::size_t pool_factor() const { return std::size_t{1} << conv_blocks; }
  std::size_t latent_length() const { return input_length / pool_factor(); }
  std::size_t num_prototypes() const { return num_classes * prototypes_per_class; }
  std::size_t num_positions() const { return latent_length() - patch_len + 1; }

  void validate() const {
    if (input_length == 0 || input_channels == 0) throw PreconditionError("model config: empty input shape");
    if (num_classes < 2) throw PreconditionError("model config: need at least 2 classes");
    if (conv_blocks == 0 || conv_blocks > 16) throw PreconditionError("model config: conv_blocks out of range");
    if (latent_channels == 0 || patch_len == 0 || prototypes_per_class == 0) {
      throw PreconditionError("model config: latent_channels, patch_len and prototypes_per_class must be >= 1");
    }
    if (input_length % pool_factor() != 0) {
      throw PreconditionError("model config: input length " + std::to_string(input_length) +
                              " not divisible by pool factor " + std::to_string(pool_factor()));
    }
    if (latent_length() < patch_len) {
      throw PreconditionError("model config: latent length " + std::to_string(latent_length()) +
                              " shorter than patch length " + std::to_string(patch_len));
    }
    if (!(epsilon_sim > 0.0)) throw PreconditionError("model config: epsilon_sim must be positive");
  }
};

/// Half-open input interval [start, end) covered by latent patch position q.
/// Only the pooling stride is accounted for; convolution halos are ignored.
struct InputWindow {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - start; }
  bool operator==(const InputWindow&) const = default;
};

inline InputWindow receptive_window(const ModelConfig& config, std::size_t q) {
  if (q >= config.num_positions()) {
    throw PreconditionError("receptive_window: position " + std::to_string(q) + " out of range [0, " +
                            std::to_string(config.num_positions()) + ")");
  }
  const std::size_t r = config.pool_factor();
  return {q * r, (q + config.patch_len) * r};
}

struct ConvLayer {
  Tensor kernel;  // [k, ch_in, ch_out]
  Tensor bias;    // [ch_out]
};

struct PrototypeBank {
  Tensor protos;                      // [K, patch_len, latent_channels]
  std::vector<std::size_t> class_of;  // K entries

  std::size_t size() const { return class_of.size(); }
};

struct PrototypeWeights {
  Tensor w;  // [K, Q, C]
};

/// Latent patches of one sample, [Q, patch_len, latent_channels].
struct PatchGrid {
  Tensor patches;
  std::size_t size() const { return patches.dim(0); }
};

enum class ModelKind : std::uint32_t { p2ex = 0, baseline = 1 };

namespace detail {

inline ConvLayer make_conv(std::size_t cin, std::size_t cout, CounterRng& rng) {
  const std::size_t k = ModelConfig::kernel_width;
  ConvLayer layer{Tensor({k, cin, cout}), Tensor({cout})};
  const double bound = std::sqrt(6.0 / static_cast<double>(k * cin));
  for (double& v : layer.kernel.values) v = rng.uniform(-bound, bound);
  return layer;
}

inline std::vector<ConvLayer> make_encoder(const ModelConfig& config, CounterRng& rng) {
  std::vector<ConvLayer> layers;
  std::size_t cin = config.input_channels;
  for (std::size_t b = 0; b < config.conv_blocks; ++b) {
    layers.push_back(make_conv(cin, config.latent_channels, rng));
    cin = config.latent_channels;
  }
  return layers;
}

inline std::vector<ConvLayer> make_decoder(const ModelConfig& config, CounterRng& rng) {
  std::vector<ConvLayer> layers;
  for (std::size_t b = 0; b < config.conv_blocks; ++b) {
    const bool last = b + 1 == config.conv_blocks;
    layers.push_back(make_conv(config.latent_channels, last ? config.input_channels : config.latent_channels, rng));
  }
  return layers;
}

template <class Layers, class F>
void visit_layers(const std::string& prefix, Layers& layers, F&& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    f(prefix + "." + std::to_string(i) + ".kernel", layers[i].kernel);
    f(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
  }
}

}  // namespace detail

struct P2ExModel {
  ModelConfig config;
  std::vector<ConvLayer> encoder;
  std::vector<ConvLayer> decoder;
  PrototypeBank bank;
  PrototypeWeights weights;

  static constexpr ModelKind kind = ModelKind::p2ex;

  static P2ExModel create(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    CounterRng enc_rng(seed, Stream::init, 0);
    CounterRng dec_rng(seed, Stream::init, 1);
    CounterRng proto_rng(seed, Stream::init, 2);
    P2ExModel m;
    m.config = config;
    m.encoder = detail::make_encoder(config, enc_rng);
    m.decoder = detail::make_decoder(config, dec_rng);

    const std::size_t K = config.num_prototypes(), Q = config.num_positions(), C = config.num_classes;
    m.bank.protos = Tensor({K, config.patch_len, config.latent_channels});
    for (double& v : m.bank.protos.values) v = proto_rng.uniform(-1.0, 1.0);
    m.bank.class_of.resize(K);
    for (std::size_t k = 0; k < K; ++k) m.bank.class_of[k] = k / config.prototypes_per_class;

    m.weights.w = Tensor({K, Q, C}, -0.5);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t q = 0; q < Q; ++q) m.weights.w[(k * Q + q) * C + m.bank.class_of[k]] = 1.0;
    }
    return m;
  }

  template <class F>
  void for_each_parameter(F&& f) {
    detail::visit_layers("encoder", encoder, f);
    detail::visit_layers("decoder", decoder, f);
    f(std::string("prototypes"), bank.protos);
    f(std::string("prototype_weights"), weights.w);
  }
  template <class F>
  void for_each_parameter(F&& f) const {
    detail::visit_layers("encoder", encoder, f);
    detail::visit_layers("decoder", decoder, f);
    f(std::string("prototypes"), bank.protos);
    f(std::string("prototype_weights"), weights.w);
  }
};

/// Same encoder, followed by flatten and a dense classifier.
struct BaselineModel {
  ModelConfig config;
  std::vector<ConvLayer> encoder;
  Tensor classifier_weight;  // [latent_length * latent_channels, C]
  Tensor classifier_bias;    // [C]

  static constexpr ModelKind kind = ModelKind::baseline;

  static BaselineModel create(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    CounterRng enc_rng(seed, Stream::init, 0);
    CounterRng cls_rng(seed, Stream::init, 3);
    BaselineModel m;
    m.config = config;
    m.encoder = detail::make_encoder(config, enc_rng);
    const std::size_t in = config.latent_length() * config.latent_channels, out = config.num_classes;
    m.classifier_weight = Tensor({in, out});
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : m.classifier_weight.values) v = cls_rng.uniform(-bound, bound);
    m.classifier_bias = Tensor({out});
    return m;
  }

  template <class F>
  void for_each_parameter(F&& f) {
    detail::visit_layers("encoder", encoder, f);
    f(std::string("classifier.weight"), classifier_weight);
    f(std::string("classifier.bias"), classifier_bias);
  }
  template <class F>
  void for_each_parameter(F&& f) const {
    detail::visit_layers("encoder", encoder, f);
    f(std::string("classifier.weight"), classifier_weight);
    f(std::string("classifier.bias"), classifier_bias);
  }
};

/// Maps model parameters onto leaves of one tape. Parameters listed as
/// trainable become requires_grad leaves; everything else is a constant.
class ParameterBinder {
 public:
  explicit ParameterBinder(Tape& tape, std::vector<const Tensor*> trainable = {})
      : tape_(tape), trainable_(std::move(trainable)) {}

  Tape& tape() { return tape_; }

  Var bind(const Tensor& param) {
    if (auto it = bound_.find(&param); it != bound_.end()) return it->second;
    bool train = false;
    for (const Tensor* t : trainable_) train = train || t == &param;
    Var v = tape_.leaf(param, train);
    bound_.emplace(&param, v);
    return v;
  }

  /// Gradient of a bound trainable parameter, or nullptr when it never
  /// received one.
  const std::vector<double>* grad(const Tensor& param) const {
    auto it = bound_.find(&param);
    if (it == bound_.end()) return nullptr;
    const auto& g = tape_.grad(it->second);
    return g ? &*g : nullptr;
  }

 private:
  Tape& tape_;
  std::vector<const Tensor*> trainable_;
  std::unordered_map<const Tensor*, Var> bound_;
};

// --- differentiable forward pieces ----------------------------------------

inline Var input_var(Tape& tape, const ModelConfig& config, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("model: sample must be [time, channels], got " + shape_string(x.shape));
  if (x.dim(1) != config.input_channels) {
    throw DimensionError("model: channel axis mismatch (" + std::to_string(x.dim(1)) + " vs " +
                         std::to_string(config.input_channels) + ")");
  }
  if (x.dim(0) != config.input_length) {
    throw DimensionError("model: time axis mismatch (" + std::to_string(x.dim(0)) + " vs " +
                         std::to_string(config.input_length) + ")");
  }
  return tape.constant(Tensor({1, x.dim(0), x.dim(1)}, x.values));
}

/// [1, T, ch] -> [1, T / 2^blocks, latent_channels]
inline Var encode(ParameterBinder& bind, const std::vector<ConvLayer>& encoder, Var x) {
  Var h = x;
  for (const auto& layer : encoder) {
    h = maxpool1d(relu(conv1d(h, bind.bind(layer.kernel), bind.bind(layer.bias))), 2);
  }
  return h;
}

/// [1, L, latent_channels] -> [1, L * 2^blocks, ch]; any L >= 1.
inline Var decode(ParameterBinder& bind, const std::vector<ConvLayer>& decoder, Var z) {
  Var h = z;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    h = conv1d(upsample1d(h, 2), bind.bind(decoder[i].kernel), bind.bind(decoder[i].bias));
    if (i + 1 < decoder.size()) h = relu(h);
  }
  return h;
}

/// [1, T_l, Cl] latent -> [Q, patch_len, Cl] patch grid.
inline Var extract_patches(Var z, std::size_t patch_len) {
  const Shape s = z.shape();
  return unfold(reshape(z, {s[1], s[2]}), patch_len);
}

/// Sim[k, q] = 1 / (||patch_q - proto_k|| + eps); also returns the distances.
struct SimilarityVars {
  Var distances;  // [K, Q]
  Var sim;        // [K, Q]
};

inline SimilarityVars similarity_grid(Var patches, Var protos, double epsilon_sim) {
  Var d = pairwise_l2(protos, patches);
  return {d, reciprocal(add_scalar(d, epsilon_sim))};
}

/// logit_c = sum_{k,q} Sim[k,q] * w[k,q,c]
inline Var prototype_logits(Var sim, Var weights) {
  const Shape ws = weights.shape();
  const Shape ss = sim.shape();
  if (ws.size() != 3 || ss.size() != 2 || ws[0] != ss[0] || ws[1] != ss[1]) {
    throw DimensionError("logits: similarity " + shape_string(ss) + " incompatible with weights " + shape_string(ws));
  }
  Var flat_sim = reshape(sim, {1, ss[0] * ss[1]});
  Var flat_w = reshape(weights, {ws[0] * ws[1], ws[2]});
  return reshape(matmul(flat_sim, flat_w), {ws[2]});
}

struct P2ExForward {
  Var input;           // [1, T, ch]
  Var latent;          // [1, T_l, Cl]
  Var reconstruction;  // [1, T, ch]
  Var patches;         // [Q, patch_len, Cl]
  Var protos;          // [K, patch_len, Cl]
  Var distances;       // [K, Q]
  Var sim;             // [K, Q]
  Var logits;          // [C]
};

inline P2ExForward forward(ParameterBinder& bind, const P2ExModel& model, const Tensor& x) {
  P2ExForward f;
  f.input = input_var(bind.tape(), model.config, x);
  f.latent = encode(bind, model.encoder, f.input);
  f.reconstruction = decode(bind, model.decoder, f.latent);
  f.patches = extract_patches(f.latent, model.config.patch_len);
  f.protos = bind.bind(model.bank.protos);
  auto s = similarity_grid(f.patches, f.protos, model.config.epsilon_sim);
  f.distances = s.distances;
  f.sim = s.sim;
  f.logits = prototype_logits(f.sim, bind.bind(model.weights.w));
  return f;
}

struct BaselineForward {
  Var input;
  Var latent;
  Var logits;  // [C]
};

inline BaselineForward forward(ParameterBinder& bind, const BaselineModel& model, const Tensor& x) {
  BaselineForward f;
  f.input = input_var(bind.tape(), model.config, x);
  f.latent = encode(bind, model.encoder, f.input);
  const Shape s = f.latent.shape();
  Var flat = reshape(f.latent, {1, s[1] * s[2]});
  Var out = affine(flat, bind.bind(model.classifier_weight), bind.bind(model.classifier_bias));
  f.logits = reshape(out, {model.config.num_classes});
  return f;
}

// --- value-level conveniences ---------------------------------------------

/// [T, ch] -> [T_l, latent_channels]
template <class Model>
Tensor encode(const Model& model, const Tensor& x) {
  Tape tape;
  ParameterBinder bind(tape);
  Var z = encode(bind, model.encoder, input_var(tape, model.config, x));
  Tensor out = z.value();
  out.shape = {out.dim(1), out.dim(2)};
  return out;
}

/// [L, latent_channels] -> [L * 2^blocks, input_channels]
inline Tensor decode(const P2ExModel& model, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != model.config.latent_channels) {
    throw DimensionError("decode: latent must be [L, " + std::to_string(model.config.latent_channels) + "], got " +
                         shape_string(z.shape));
  }
  Tape tape;
  ParameterBinder bind(tape);
  Var out = decode(bind, model.decoder, tape.constant(Tensor({1, z.dim(0), z.dim(1)}, z.values)));
  Tensor r = out.value();
  r.shape = {r.dim(1), r.dim(2)};
  return r;
}

inline PatchGrid extract_patches(const Tensor& z, std::size_t patch_len) {
  if (z.rank() != 2) throw DimensionError("extract_patches: latent must be [T_l, channels]");
  Tape tape;
  return {unfold(tape.constant(z), patch_len).value()};
}

inline Tensor similarity_grid(const PatchGrid& grid, const PrototypeBank& bank, double epsilon_sim) {
  Tape tape;
  return similarity_grid(tape.constant(grid.patches), tape.constant(bank.protos), epsilon_sim).sim.value();
}

inline Tensor logits(const Tensor& sim, const PrototypeWeights& weights) {
  Tape tape;
  return prototype_logits(tape.constant(sim), tape.constant(weights.w)).value();
}

struct P2ExOutputs {
  Tensor logits;          // [C]
  Tensor reconstruction;  // [T, ch]
  PatchGrid grid;
  Tensor distances;  // [K, Q]
  Tensor sim;        // [K, Q]
};

inline P2ExOutputs forward_p2ex(const P2ExModel& model, const Tensor& x) {
  Tape tape;
  ParameterBinder bind(tape);
  auto f = forward(bind, model, x);
  P2ExOutputs out{f.logits.value(), f.reconstruction.value(), {f.patches.value()}, f.distances.value(), f.sim.value()};
  out.reconstruction.shape = {x.dim(0), x.dim(1)};
  return out;
}

inline Tensor forward_baseline(const BaselineModel& model, const Tensor& x) {
  Tape tape;
  ParameterBinder bind(tape);
  return forward(bind, model, x).logits.value();
}

inline std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

inline Tensor model_logits(const P2ExModel& model, const Tensor& x) { return forward_p2ex(model, x).logits; }
inline Tensor model_logits(const BaselineModel& model, const Tensor& x) { return forward_baseline(model, x); }

template <class Model>
std::size_t predict(const Model& model, const Tensor& x) {
  return argmax(model_logits(model, x));
}

}  // namespace p2ex
