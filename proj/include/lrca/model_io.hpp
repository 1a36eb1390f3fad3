/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "lrca/common.hpp"
#include "lrca/gat_autoencoder.hpp"
#include "lrca/graph_builder.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lrca {

/// Everything inference needs: feature context (projectors, standardizers,
/// templates, layout), trained network and the training configuration.
struct TrainedModel {
  FeatureContext features;
  GatAutoEncoder network;
  TrainConfig train_config;
  std::vector<double> epoch_loss;
};

// Container layout, all integers and floats little-endian:
//   magic "LRCAMODL" | u32 version | u32 reserved
//   u64 input_dim, hidden_dim, d_log, p, d
//   config: u64 epochs, f64 lr, u64 batch, u64 seed, f64 beta1, beta2, eps, leaky; u64 feature seed
//   u64 n_keys, strings                      (classification keys)
//   layout: u64 n_segments, (string name, u64 offset, u64 size)*
//   4 x layer: u64 rows, cols, f64[rows*cols] W, u64 len, f64[len] a, u8 relu
//   3 x projector: string channel, u64 p, d, f64[p] W, f64[p] b, f64[p*d] E, f64 mean, f64 std
//   4 x latency standardizer by node kind: f64 mean, f64 std
//   templates: u64 depth, f64 threshold, u64 max_children, u64 n, (u64 n_tokens, strings)*
//   u64 n_epochs, f64[n] epoch loss
// Strings are u64 length + bytes.
inline constexpr char kModelMagic[8] = {'L', 'R', 'C', 'A', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename Derived>
  void doubles(const Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t limit = 1u << 28) {
    const auto n = u64();
    if (n > limit) throw DataError("model file: implausible length " + std::to_string(n));
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const auto n = count();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    return m;
  }
  Vector vector(std::size_t n) {
    Vector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError("model file is truncated");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const TrainedModel& m) {
  detail::ByteWriter w;
  const auto& cfg = m.train_config;
  const auto& fc = m.features.config;
  w.raw(kModelMagic, sizeof kModelMagic);
  w.u32(kModelVersion);
  w.u32(0);
  w.u64(static_cast<std::uint64_t>(m.network.input_dim()));
  w.u64(static_cast<std::uint64_t>(m.network.hidden_dim()));
  w.u64(static_cast<std::uint64_t>(fc.d_log));
  w.u64(static_cast<std::uint64_t>(fc.p));
  w.u64(static_cast<std::uint64_t>(fc.d));
  w.u64(static_cast<std::uint64_t>(cfg.epochs));
  w.f64(cfg.learning_rate);
  w.u64(static_cast<std::uint64_t>(cfg.batch_size));
  w.u64(cfg.seed);
  w.f64(cfg.beta1);
  w.f64(cfg.beta2);
  w.f64(cfg.eps);
  w.f64(cfg.leaky_slope);
  w.u64(fc.seed);
  w.u64(fc.classification_keys.size());
  for (const auto& k : fc.classification_keys) w.str(k);

  const auto layout = m.features.layout();
  w.u64(kAllSegments.size());
  for (auto s : kAllSegments) {
    w.str(to_string(s));
    w.u64(static_cast<std::uint64_t>(layout.offset(s)));
    w.u64(static_cast<std::uint64_t>(layout.size(s)));
  }

  for (const auto& layer : m.network.layers) {
    w.u64(static_cast<std::uint64_t>(layer.w.rows()));
    w.u64(static_cast<std::uint64_t>(layer.w.cols()));
    w.doubles(layer.w);
    w.u64(static_cast<std::uint64_t>(layer.a.size()));
    w.doubles(layer.a);
    w.u8(layer.relu ? 1 : 0);
  }

  for (const auto* proj : {&m.features.projectors.cpu, &m.features.projectors.memory, &m.features.projectors.latency}) {
    w.str(proj->channel_id);
    w.u64(static_cast<std::uint64_t>(proj->p()));
    w.u64(static_cast<std::uint64_t>(proj->d()));
    w.doubles(proj->w);
    w.doubles(proj->b);
    w.doubles(proj->e);
    w.f64(proj->standardizer.mean);
    w.f64(proj->standardizer.std);
  }
  for (const auto& st : m.features.projectors.latency_by_kind) {
    w.f64(st.mean);
    w.f64(st.std);
  }

  const auto& opts = m.features.templates.options();
  w.u64(static_cast<std::uint64_t>(opts.depth));
  w.f64(opts.similarity_threshold);
  w.u64(opts.max_children);
  w.u64(m.features.templates.size());
  for (const auto& t : m.features.templates.templates()) {
    w.u64(t.tokens.size());
    for (const auto& tok : t.tokens) w.str(tok);
  }

  w.u64(m.epoch_loss.size());
  for (double l : m.epoch_loss) w.f64(l);
  return w.bytes();
}

inline TrainedModel deserialize_model(std::string_view bytes) {
  detail::ByteReader r(bytes);
  char magic[8];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0) throw DataError("not a model file (bad magic)");
  const auto version = r.u32();
  if (version != kModelVersion)
    throw DataError("unsupported model version " + std::to_string(version) + " (expected " +
                    std::to_string(kModelVersion) + ")");
  r.u32();

  TrainedModel m;
  const auto input_dim = r.count(1u << 20);
  const auto hidden_dim = r.count(1u << 20);
  auto& fc = m.features.config;
  fc.d_log = static_cast<int>(r.count(1u << 20));
  fc.p = static_cast<int>(r.count(1u << 20));
  fc.d = static_cast<int>(r.count(1u << 20));
  auto& cfg = m.train_config;
  cfg.epochs = static_cast<int>(r.count());
  cfg.learning_rate = r.f64();
  cfg.batch_size = static_cast<int>(r.count());
  cfg.seed = r.u64();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.eps = r.f64();
  cfg.leaky_slope = r.f64();
  cfg.hidden_dim = static_cast<int>(hidden_dim);
  fc.seed = r.u64();
  fc.classification_keys.resize(r.count(1024));
  for (auto& k : fc.classification_keys) k = r.str();

  const auto layout = fc.layout();
  if (static_cast<std::size_t>(layout.width()) != input_dim) throw DataError("model file: layout width mismatch");
  const auto n_segments = r.count(64);
  if (n_segments != kAllSegments.size()) throw DataError("model file: unexpected segment count");
  for (auto s : kAllSegments) {
    const auto name = r.str();
    const auto offset = r.u64();
    const auto size = r.u64();
    if (name != to_string(s) || offset != static_cast<std::uint64_t>(layout.offset(s)) ||
        size != static_cast<std::uint64_t>(layout.size(s)))
      throw DataError("model file: attribute layout descriptor does not match segment " + std::string(to_string(s)));
  }

  for (auto& layer : m.network.layers) {
    const auto rows = r.count(1u << 20);
    const auto cols = r.count(1u << 20);
    layer.w = r.matrix(rows, cols);
    layer.a = r.vector(r.count(1u << 21));
    layer.relu = r.u8() != 0;
    layer.leaky_slope = cfg.leaky_slope;
  }
  if (static_cast<std::size_t>(m.network.input_dim()) != input_dim ||
      static_cast<std::size_t>(m.network.hidden_dim()) != hidden_dim)
    throw DataError("model file: layer dimensions disagree with header");

  for (auto* proj : {&m.features.projectors.cpu, &m.features.projectors.memory, &m.features.projectors.latency}) {
    proj->channel_id = r.str();
    const auto p = r.count(1u << 16);
    const auto d = r.count(1u << 16);
    proj->w = r.vector(p);
    proj->b = r.vector(p);
    proj->e = r.matrix(p, d);
    proj->standardizer.mean = r.f64();
    proj->standardizer.std = r.f64();
  }
  for (auto& st : m.features.projectors.latency_by_kind) {
    st.mean = r.f64();
    st.std = r.f64();
  }

  TemplateMiner::Options opts;
  opts.depth = static_cast<int>(r.count(64));
  opts.similarity_threshold = r.f64();
  opts.max_children = r.count();
  std::vector<LogTemplate> templates(r.count());
  for (std::size_t i = 0; i < templates.size(); ++i) {
    templates[i].template_id = static_cast<int>(i);
    templates[i].tokens.resize(r.count(1u << 16));
    for (auto& tok : templates[i].tokens) tok = r.str();
  }
  m.features.templates = TemplateMiner::restore(opts, std::move(templates));

  m.epoch_loss.resize(r.count());
  for (double& l : m.epoch_loss) l = r.f64();
  if (!r.at_end()) throw DataError("model file has trailing bytes");
  return m;
}

inline std::uint64_t model_fingerprint(const TrainedModel& m) { return fnv1a64(serialize_model(m)); }

inline void save_model(const std::filesystem::path& path, const TrainedModel& m) {
  write_file_atomic(path, serialize_model(m));
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_text_file(path);
  try {
    return deserialize_model(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace lrca
