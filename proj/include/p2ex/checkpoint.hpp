#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "p2ex/data.hpp"
#include "p2ex/model.hpp"

namespace p2ex {

/// Everything needed to reuse a trained model on raw data.
struct CheckpointMeta {
  std::size_t original_length = 0;
  Normalizer normalizer;
  std::vector<double> label_values;
};

struct Checkpoint {
  ModelKind kind = ModelKind::p2ex;
  ModelConfig config;
  CheckpointMeta meta;
  std::optional<P2ExModel> p2ex;
  std::optional<BaselineModel> baseline;
};

inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint64_t v) {
    if (v > 0xffffffffULL) throw PreconditionError("checkpoint: field exceeds u32");
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::string bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError("checkpoint: truncated file", 0);
  }

  std::string data_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(name.size());
  w.raw(name);
  w.u32(t.rank());
  for (std::size_t d : t.shape) w.u32(d);
  for (double v : t.values) w.f64(v);
}

inline Tensor vector_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }

template <class Model>
std::string encode_checkpoint(const Model& model, const CheckpointMeta& meta) {
  ByteWriter w;
  w.raw("P2EX");
  w.u32(checkpoint_version);
  const ModelConfig& c = model.config;
  w.u32(static_cast<std::uint32_t>(Model::kind));
  for (std::size_t v : {c.input_length, c.input_channels, c.num_classes, c.conv_blocks, c.latent_channels,
                        c.patch_len, c.prototypes_per_class, meta.original_length}) {
    w.u32(v);
  }
  w.f64(c.epsilon_sim);

  std::vector<std::pair<std::string, const Tensor*>> params;
  model.for_each_parameter([&](const std::string& name, const Tensor& t) { params.emplace_back(name, &t); });
  Tensor mean = vector_tensor(meta.normalizer.mean), stddev = vector_tensor(meta.normalizer.stddev);
  Tensor labels = vector_tensor(meta.label_values);
  Tensor class_of;
  params.emplace_back("normalizer.mean", &mean);
  params.emplace_back("normalizer.std", &stddev);
  params.emplace_back("labels.values", &labels);
  if constexpr (Model::kind == ModelKind::p2ex) {
    std::vector<double> ids(model.bank.class_of.begin(), model.bank.class_of.end());
    class_of = vector_tensor(ids);
    params.emplace_back("prototypes.class_of", &class_of);
  }
  w.u32(params.size());
  for (const auto& [name, t] : params) write_tensor(w, name, *t);
  return std::move(w.bytes);
}

template <class Model>
void assign_parameters(Model& model, std::map<std::string, Tensor>& tensors) {
  model.for_each_parameter([&](const std::string& name, Tensor& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint: missing parameter '" + name + "'", 0);
    if (it->second.shape != t.shape) {
      throw DimensionError("checkpoint: parameter '" + name + "' has shape " + shape_string(it->second.shape) +
                           ", expected " + shape_string(t.shape));
    }
    t = std::move(it->second);
    tensors.erase(it);
  });
}

inline std::vector<double> take_vector(std::map<std::string, Tensor>& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParseError("checkpoint: missing entry '" + name + "'", 0);
  auto v = std::move(it->second.values);
  tensors.erase(it);
  return v;
}

}  // namespace detail

template <class Model>
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path) {
  const std::string bytes = detail::encode_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(data));
  if (r.raw(4) != "P2EX") throw ParseError("checkpoint: bad magic", 0);
  if (const auto v = r.u32(); v != checkpoint_version) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(v), 0);
  }
  Checkpoint ck;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw ParseError("checkpoint: unknown model kind " + std::to_string(kind), 0);
  ck.kind = static_cast<ModelKind>(kind);
  ModelConfig& c = ck.config;
  c.input_length = r.u32();
  c.input_channels = r.u32();
  c.num_classes = r.u32();
  c.conv_blocks = r.u32();
  c.latent_channels = r.u32();
  c.patch_len = r.u32();
  c.prototypes_per_class = r.u32();
  ck.meta.original_length = r.u32();
  c.epsilon_sim = r.f64();
  c.validate();

  std::map<std::string, Tensor> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.raw(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    for (double& v : t.values) v = r.f64();
    if (!tensors.emplace(name, std::move(t)).second) throw ParseError("checkpoint: duplicate entry '" + name + "'", 0);
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", 0);

  ck.meta.normalizer.mean = detail::take_vector(tensors, "normalizer.mean");
  ck.meta.normalizer.stddev = detail::take_vector(tensors, "normalizer.std");
  ck.meta.label_values = detail::take_vector(tensors, "labels.values");
  if (ck.kind == ModelKind::p2ex) {
    P2ExModel m = P2ExModel::create(c, 0);
    detail::assign_parameters(m, tensors);
    const auto ids = detail::take_vector(tensors, "prototypes.class_of");
    if (ids.size() != m.bank.size()) throw ParseError("checkpoint: class_of size mismatch", 0);
    for (std::size_t k = 0; k < ids.size(); ++k) m.bank.class_of[k] = static_cast<std::size_t>(ids[k]);
    ck.p2ex = std::move(m);
  } else {
    BaselineModel m = BaselineModel::create(c, 0);
    detail::assign_parameters(m, tensors);
    ck.baseline = std::move(m);
  }
  if (!tensors.empty()) throw ParseError("checkpoint: unexpected entry '" + tensors.begin()->first + "'", 0);
  return ck;
}

}  // namespace p2ex
