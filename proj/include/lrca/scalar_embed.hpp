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
#include "lrca/obs_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace lrca {

inline constexpr double kStdFloor = 1e-6;

/// Training-set statistics used to standardize a raw scalar before projection.
struct Standardizer {
  double mean = 0.0;
  double std = 1.0;

  double apply(double x) const { return (x - mean) / std::max(std, kStdFloor); }

  /// Population mean/std of `values`; identity when `values` is empty.
  static Standardizer fit(std::span<const double> values) {
    if (values.empty()) return {};
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
  }

  bool operator==(const Standardizer&) const = default;
};

/// Frozen random projection of a scalar onto a d-dimensional vector:
/// s = softmax(w x + b), output = s E (E is p x d).
struct ScalarProjector {
  std::string channel_id;
  Vector w;
  Vector b;
  Matrix e;
  Standardizer standardizer;

  Eigen::Index p() const { return w.size(); }
  Eigen::Index d() const { return e.cols(); }

  bool operator==(const ScalarProjector& o) const {
    return channel_id == o.channel_id && w == o.w && b == o.b && e == o.e && standardizer == o.standardizer;
  }
};

/// W, b and E drawn i.i.d. uniform on [-0.5, 0.5] from the counter stream
/// keyed by (master_seed, channel_id), in that order.
inline ScalarProjector init_projector(const std::string& channel_id, int p, int d, std::uint64_t master_seed) {
  if (p < 2) throw UsageError("projector width p must be >= 2");
  if (d < 8) throw UsageError("projector output dimension d must be >= 8");
  CounterRng rng(master_seed, "projector/" + channel_id);
  ScalarProjector proj;
  proj.channel_id = channel_id;
  proj.w.resize(p);
  proj.b.resize(p);
  proj.e.resize(p, d);
  for (int i = 0; i < p; ++i) proj.w[i] = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < p; ++i) proj.b[i] = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < d; ++j) proj.e(i, j) = rng.uniform(-0.5, 0.5);
  return proj;
}

/// Softmax weights for an already-standardized input.
inline Vector softmax_weights(double standardized, const ScalarProjector& proj) {
  Vector logits = proj.w * standardized + proj.b;
  const double max = logits.maxCoeff();
  Vector s = (logits.array() - max).exp().matrix();
  return s / s.sum();
}

/// Projects x after standardizing it with `standardizer`.
inline Vector project_scalar(double x, const ScalarProjector& proj, const Standardizer& standardizer) {
  if (!std::isfinite(x)) throw NumericError("non-finite scalar for channel " + proj.channel_id);
  const Vector s = softmax_weights(standardizer.apply(x), proj);
  return proj.e.transpose() * s;
}

inline Vector project_scalar(double x, const ScalarProjector& proj) {
  return project_scalar(x, proj, proj.standardizer);
}

inline double duration_ms(std::int64_t duration_us) { return static_cast<double>(duration_us) / 1000.0; }

inline Vector embed_latency(std::int64_t duration_us, const ScalarProjector& proj) {
  return project_scalar(duration_ms(duration_us), proj);
}

inline Vector embed_latency(std::int64_t duration_us, const ScalarProjector& proj, const Standardizer& standardizer) {
  return project_scalar(duration_ms(duration_us), proj, standardizer);
}

/// One projector per scalar channel. Latency shares one projector across node
/// kinds but is standardized per kind: pod start-up runs an order of magnitude
/// longer than controller reconciliation, and a pooled scale would flatten
/// every other kind's latency to a constant.
struct ProjectorSet {
  ScalarProjector cpu;
  ScalarProjector memory;
  ScalarProjector latency;
  std::array<Standardizer, 4> latency_by_kind{};  // indexed by NodeKind

  static ProjectorSet init(int p, int d, std::uint64_t seed) {
    return {init_projector("cpu", p, d, seed), init_projector("memory", p, d, seed),
            init_projector("latency", p, d, seed), {}};
  }

  Vector latency_embedding(NodeKind kind, std::int64_t duration_us) const {
    return embed_latency(duration_us, latency, latency_by_kind[static_cast<std::size_t>(kind)]);
  }

  bool operator==(const ProjectorSet&) const = default;
};

// ---------------------------------------------------------------------------
// Attribute layout
// ---------------------------------------------------------------------------

enum class Segment { audit_log, event_log, app_log, cpu, memory, latency };

inline constexpr std::array<Segment, 6> kAllSegments = {Segment::audit_log, Segment::event_log, Segment::app_log,
                                                        Segment::cpu,       Segment::memory,    Segment::latency};

inline const char* to_string(Segment s) {
  switch (s) {
    case Segment::audit_log: return "audit_log";
    case Segment::event_log: return "event_log";
    case Segment::app_log: return "app_log";
    case Segment::cpu: return "cpu";
    case Segment::memory: return "memory";
    case Segment::latency: return "latency";
  }
  return "?";
}

/// Row layout: audit | event | app (d_log each) | cpu | memory | latency (d each).
struct AttributeLayout {
  int d_log = 32;
  int d = 32;

  static constexpr int kMetricChannels = 2;

  int width() const { return 3 * d_log + kMetricChannels * d + d; }

  int offset(Segment s) const {
    switch (s) {
      case Segment::audit_log: return 0;
      case Segment::event_log: return d_log;
      case Segment::app_log: return 2 * d_log;
      case Segment::cpu: return 3 * d_log;
      case Segment::memory: return 3 * d_log + d;
      case Segment::latency: return 3 * d_log + 2 * d;
    }
    return 0;
  }

  int size(Segment s) const {
    switch (s) {
      case Segment::audit_log:
      case Segment::event_log:
      case Segment::app_log: return d_log;
      default: return d;
    }
  }

  void zero_segment(Matrix& x, Segment s) const { x.middleCols(offset(s), size(s)).setZero(); }

  bool operator==(const AttributeLayout&) const = default;
};

/// Concatenates the six segments in layout order.
inline Vector fuse_attributes(const AttributeLayout& layout, const std::array<Vector, 3>& log_vecs,
                              const std::array<Vector, 2>& metric_vecs, const Vector& latency_vec) {
  Vector row(layout.width());
  auto place = [&](Segment s, const Vector& v) {
    if (v.size() != layout.size(s))
      throw NumericError(std::string("segment ") + to_string(s) + " has dimension " + std::to_string(v.size()) +
                         ", expected " + std::to_string(layout.size(s)));
    row.segment(layout.offset(s), layout.size(s)) = v;
  };
  place(Segment::audit_log, log_vecs[0]);
  place(Segment::event_log, log_vecs[1]);
  place(Segment::app_log, log_vecs[2]);
  place(Segment::cpu, metric_vecs[0]);
  place(Segment::memory, metric_vecs[1]);
  place(Segment::latency, latency_vec);
  return row;
}

}  // namespace lrca
