// Copyright (c) 2026 The tinyptq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tinyptq/io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "tinyptq/error.h"

namespace tinyptq {

namespace {

constexpr char kMagic[4] = {'T', 'Q', 'T', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated container: ") + what + " needs " + std::to_string(n) +
                            " bytes, " + std::to_string(bytes_.size() - pos_) + " left",
                        pos_);
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const char* what) { return *take(1, what); }
  std::uint16_t u16(const char* what) {
    const std::uint8_t* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const char* what) { return get_u32(take(4, what)); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint32_t> dims_of(const Shape& s) {
  std::vector<std::uint32_t> d;
  for (std::int64_t v : s) {
    if (v < 0 || v > static_cast<std::int64_t>(UINT32_MAX)) throw FormatError("dimension out of range", 0);
    d.push_back(static_cast<std::uint32_t>(v));
  }
  return d;
}

Shape shape_of(const std::vector<std::uint32_t>& dims) { return Shape(dims.begin(), dims.end()); }

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32:
    case DType::kI32: return 4;
    case DType::kU8: return 1;
  }
  return 0;
}

std::int64_t ContainerEntry::elements() const {
  std::int64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

ContainerEntry ContainerEntry::f32(std::string name, const Tensor& t) {
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = DType::kF32;
  e.dims = dims_of(t.shape());
  e.payload.reserve(static_cast<std::size_t>(t.size()) * 4);
  for (double v : t.values()) put_u32(e.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return e;
}

ContainerEntry ContainerEntry::i32(std::string name, std::vector<std::uint32_t> dims,
                                   std::span<const std::int32_t> values) {
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = DType::kI32;
  e.dims = std::move(dims);
  if (e.elements() != static_cast<std::int64_t>(values.size())) {
    throw StructuralError("entry '" + e.name + "': dims do not match the value count");
  }
  for (std::int32_t v : values) put_u32(e.payload, static_cast<std::uint32_t>(v));
  return e;
}

ContainerEntry ContainerEntry::text(std::string name, std::string_view bytes) {
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = DType::kU8;
  e.dims = {static_cast<std::uint32_t>(bytes.size())};
  e.payload.assign(bytes.begin(), bytes.end());
  return e;
}

Tensor ContainerEntry::to_tensor() const {
  Tensor t(shape_of(dims));
  const std::uint8_t* p = payload.data();
  for (std::int64_t i = 0; i < t.size(); ++i, p += 4) {
    const std::uint32_t raw = get_u32(p);
    if (dtype == DType::kF32) {
      t[i] = static_cast<double>(std::bit_cast<float>(raw));
    } else if (dtype == DType::kI32) {
      t[i] = static_cast<double>(static_cast<std::int32_t>(raw));
    } else {
      throw FormatError("entry '" + name + "' is not numeric", 0);
    }
  }
  return t;
}

std::vector<std::int32_t> ContainerEntry::to_i32() const {
  if (dtype != DType::kI32) throw FormatError("entry '" + name + "' is not i32", 0);
  std::vector<std::int32_t> out(static_cast<std::size_t>(elements()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int32_t>(get_u32(payload.data() + 4 * i));
  return out;
}

std::string ContainerEntry::to_text() const {
  if (dtype != DType::kU8) throw FormatError("entry '" + name + "' is not u8", 0);
  return {payload.begin(), payload.end()};
}

void TensorContainer::add(ContainerEntry entry) {
  if (find(entry.name)) throw FormatError("duplicate entry '" + entry.name + "'", 0);
  if (entry.payload.size() != static_cast<std::size_t>(entry.elements()) * dtype_size(entry.dtype)) {
    throw FormatError("entry '" + entry.name + "' payload does not match its dims", 0);
  }
  entries_.push_back(std::move(entry));
}

const ContainerEntry* TensorContainer::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const ContainerEntry& TensorContainer::at(std::string_view name) const {
  const ContainerEntry* e = find(name);
  if (!e) throw FormatError("missing entry '" + std::string(name) + "'", 0);
  return *e;
}

std::vector<std::uint8_t> serialize(const TensorContainer& c) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u16(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(c.entries().size()));
  for (const ContainerEntry& e : c.entries()) {
    if (e.name.size() > UINT16_MAX) throw FormatError("entry name too long: '" + e.name + "'", out.size());
    if (e.dims.size() > UINT8_MAX) throw FormatError("rank too large for '" + e.name + "'", out.size());
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) put_u32(out, d);
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

TensorContainer parse_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, expected \"TQT1\"", 0);
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("entry count");
  TensorContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    ContainerEntry e;
    const std::uint16_t len = r.u16("name length");
    const std::uint8_t* name = r.take(len, "name");
    e.name.assign(reinterpret_cast<const char*>(name), len);
    const std::size_t dtype_at = r.offset();
    const std::uint8_t code = r.u8("dtype");
    if (code > static_cast<std::uint8_t>(DType::kU8)) {
      throw FormatError("unknown dtype code " + std::to_string(code) + " for entry '" + e.name + "'", dtype_at);
    }
    e.dtype = static_cast<DType>(code);
    const std::uint8_t rank = r.u8("rank");
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      e.dims.push_back(r.u32("dims"));
      elements *= e.dims.back();
      if (elements > bytes.size()) {
        throw FormatError("entry '" + e.name + "' declares more elements than the file holds", r.offset());
      }
    }
    const std::size_t n = static_cast<std::size_t>(elements) * dtype_size(e.dtype);
    const std::uint8_t* payload = r.take(n, "payload");
    e.payload.assign(payload, payload + n);
    if (c.find(e.name)) throw FormatError("duplicate entry '" + e.name + "'", entry_at);
    c.add(std::move(e));
  }
  if (r.offset() != bytes.size()) {
    throw FormatError(std::to_string(bytes.size() - r.offset()) + " trailing bytes after the last entry", r.offset());
  }
  return c;
}

void save_container(const TensorContainer& c, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

TensorContainer load_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_container(bytes);
}

void save_weights(const ParameterSet& params, const std::string& path) {
  TensorContainer c;
  for (const auto& [name, t] : params) c.add(ContainerEntry::f32(name, t));
  save_container(c, path);
}

ParameterSet load_weights(const std::string& path) {
  const TensorContainer c = load_container(path);
  ParameterSet p;
  for (const ContainerEntry& e : c.entries()) {
    if (e.dtype != DType::kF32) continue;
    p.emplace(e.name, e.to_tensor());
  }
  return p;
}

Dataset load_dataset(const std::string& path, std::optional<std::int64_t> limit) {
  const TensorContainer c = load_container(path);
  const ContainerEntry& in = c.at("inputs");
  if (in.dtype != DType::kF32 || in.dims.empty()) throw FormatError("'inputs' must be a non-scalar f32 entry", 0);
  Dataset d;
  d.inputs = in.to_tensor();
  if (const ContainerEntry* labels = c.find("labels")) {
    if (labels->dtype != DType::kI32 || labels->dims.size() != 1) {
      throw FormatError("'labels' must be a rank-1 i32 entry", 0);
    }
    if (labels->dims[0] != in.dims[0]) {
      throw FormatError("'labels' holds " + std::to_string(labels->dims[0]) + " samples but 'inputs' holds " +
                            std::to_string(in.dims[0]),
                        0);
    }
    d.labels = labels->to_i32();
  }
  if (limit) {
    if (*limit < 0) throw ConfigError("dataset limit must be non-negative");
    const std::int64_t n = std::min<std::int64_t>(*limit, d.inputs.dim(0));
    d.inputs = slice_rows(d.inputs, 0, n);
    if (!d.labels.empty()) d.labels.resize(static_cast<std::size_t>(n));
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  TensorContainer c;
  c.add(ContainerEntry::f32("inputs", d.inputs));
  if (!d.labels.empty()) {
    c.add(ContainerEntry::i32("labels", {static_cast<std::uint32_t>(d.labels.size())}, d.labels));
  }
  save_container(c, path);
}

// ---- quantized models ----

namespace {

nlohmann::json quantizer_json(const QuantizerState& q) {
  return {{"scheme", q.scheme == Scheme::kSymmetric ? "symmetric" : "asymmetric"},
          {"bits", q.bits},
          {"channel_axis", q.channel_axis},
          {"qmin", q.qmin},
          {"qmax", q.qmax},
          {"scale", q.scale},
          {"zero_point", q.zero_point},
          {"degenerate", q.degenerate}};
}

QuantizerState quantizer_from_json(const nlohmann::json& j) {
  QuantizerState q;
  q.scheme = j.at("scheme").get<std::string>() == "symmetric" ? Scheme::kSymmetric : Scheme::kAsymmetric;
  q.bits = j.at("bits").get<int>();
  q.channel_axis = j.at("channel_axis").get<int>();
  q.qmin = j.at("qmin").get<std::int64_t>();
  q.qmax = j.at("qmax").get<std::int64_t>();
  q.scale = j.at("scale").get<std::vector<double>>();
  q.zero_point = j.at("zero_point").get<std::vector<std::int64_t>>();
  q.degenerate = j.at("degenerate").get<std::vector<bool>>();
  return q;
}

}  // namespace

TensorContainer quantized_container(const QuantizedGraph& q, const std::string& model,
                                    const PipelineConfig& config) {
  TensorContainer c;
  nlohmann::json meta;
  meta["weights"] = nlohmann::json::object();
  meta["biases"] = nlohmann::json::object();
  meta["activations"] = nlohmann::json::array();
  for (int l = 0; l < q.graph.size(); ++l) {
    const Layer& layer = q.graph.layers[static_cast<std::size_t>(l)];
    if (!layer.has_weights()) continue;
    const WeightQuantizer& wq = q.weights[static_cast<std::size_t>(l)];
    meta["weights"][layer.name] = quantizer_json(wq.q);
    meta["biases"][layer.name] = std::vector<double>(layer.bias.values().begin(), layer.bias.values().end());
  }
  for (const auto& [edge, aq] : q.activations) {
    nlohmann::json a = quantizer_json(aq.q);
    a["edge"] = edge;
    a["producer"] = edge == kGraphInput ? std::string("input") : q.graph.layers[static_cast<std::size_t>(edge)].name;
    meta["activations"].push_back(std::move(a));
  }
  c.add(ContainerEntry::text("meta.model", nlohmann::json(model).dump()));
  c.add(ContainerEntry::text("meta.config", config_to_json(config)));
  c.add(ContainerEntry::text("meta.quantizers", meta.dump()));
  for (int l = 0; l < q.graph.size(); ++l) {
    const Layer& layer = q.graph.layers[static_cast<std::size_t>(l)];
    if (!layer.has_weights()) continue;
    const WeightQuantizer& wq = q.weights[static_cast<std::size_t>(l)];
    if (wq.q.enabled()) {
      const std::vector<std::int32_t> codes = q.weight_codes(l);
      c.add(ContainerEntry::i32(layer.name + ".weight_codes", dims_of(wq.latent.shape()), codes));
    }
    c.add(ContainerEntry::f32(layer.name + ".weight", q.effective_weight(l)));
    c.add(ContainerEntry::f32(layer.name + ".bias", layer.bias));
  }
  return c;
}

void save_quantized(const QuantizedGraph& q, const std::string& model, const PipelineConfig& config,
                    const std::string& path) {
  save_container(quantized_container(q, model, config), path);
}

bool is_quantized(const TensorContainer& c) { return c.find("meta.quantizers") != nullptr; }

LoadedQuantized load_quantized(const TensorContainer& c) {
  LoadedQuantized out;
  nlohmann::json meta;
  try {
    out.model = nlohmann::json::parse(c.at("meta.model").to_text()).get<std::string>();
    meta = nlohmann::json::parse(c.at("meta.quantizers").to_text());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed quantized-model metadata: ") + e.what(), 0);
  }
  out.config = config_from_json(c.at("meta.config").to_text());
  QuantizedGraph& q = out.graph;
  q.graph = fold_batchnorm(build_model(out.model));
  q.weights.resize(q.graph.layers.size());
  try {
    for (int l = 0; l < q.graph.size(); ++l) {
      Layer& layer = q.graph.layers[static_cast<std::size_t>(l)];
      if (!layer.has_weights()) continue;
      WeightQuantizer& wq = q.weights[static_cast<std::size_t>(l)];
      wq.q = quantizer_from_json(meta.at("weights").at(layer.name));
      wq.frozen = true;
      const auto bias = meta.at("biases").at(layer.name).get<std::vector<double>>();
      if (static_cast<std::int64_t>(bias.size()) != layer.bias.size()) {
        throw FormatError("bias of '" + layer.name + "' has the wrong length", 0);
      }
      std::copy(bias.begin(), bias.end(), layer.bias.values().begin());
      Tensor w;
      if (wq.q.enabled()) {
        const ContainerEntry& e = c.at(layer.name + ".weight_codes");
        w = e.to_tensor();
        if (w.shape() != layer.weight.shape()) throw FormatError("codes of '" + layer.name + "' have the wrong shape", 0);
        wq.q.validate(w.shape());
        for (std::int64_t i = 0; i < w.size(); ++i) {
          const auto g = static_cast<std::size_t>(group_of(i, w.shape(), wq.q.channel_axis));
          w[i] = wq.q.scale[g] * (w[i] - static_cast<double>(wq.q.zero_point[g]));
        }
      } else {
        w = c.at(layer.name + ".weight").to_tensor();
        if (w.shape() != layer.weight.shape()) throw FormatError("weight of '" + layer.name + "' has the wrong shape", 0);
      }
      layer.weight = w;
      wq.latent = std::move(w);
    }
    for (const auto& a : meta.at("activations")) {
      ActivationQuantizer aq;
      aq.q = quantizer_from_json(a);
      aq.frozen = true;
      q.activations[a.at("edge").get<int>()] = std::move(aq);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed quantized-model metadata: ") + e.what(), 0);
  }
  return out;
}

}  // namespace tinyptq
