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
#include "lrca/graph_builder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace lrca {

// ---------------------------------------------------------------------------
// Neighborhoods
// ---------------------------------------------------------------------------

/// Compressed attention neighborhoods: for node i, in-neighbors plus i itself,
/// sorted ascending, stored in `index[offset[i] .. offset[i+1])`.
struct Neighborhood {
  std::vector<int> offset;
  std::vector<int> index;

  int num_nodes() const { return static_cast<int>(offset.size()) - 1; }

  static Neighborhood from_edges(int n, std::span<const Edge> edges) {
    std::vector<std::vector<int>> in(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) in[static_cast<std::size_t>(i)].push_back(i);
    for (auto [src, dst] : edges) {
      if (src < 0 || dst < 0 || src >= n || dst >= n) throw NumericError("edge endpoint out of range");
      if (src != dst) in[static_cast<std::size_t>(dst)].push_back(src);
    }
    Neighborhood nb;
    nb.offset.reserve(static_cast<std::size_t>(n) + 1);
    nb.offset.push_back(0);
    for (auto& list : in) {
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      nb.index.insert(nb.index.end(), list.begin(), list.end());
      nb.offset.push_back(static_cast<int>(nb.index.size()));
    }
    return nb;
  }

  static Neighborhood of(const GlobalCallGraph& g) { return from_edges(g.num_nodes(), g.edges); }
};

// ---------------------------------------------------------------------------
// Single attention layer
// ---------------------------------------------------------------------------

struct GatLayer {
  Matrix w;  // in_dim x out_dim
  Vector a;  // 2 * out_dim: [source half | neighbor half]
  double leaky_slope = 0.2;
  bool relu = true;

  Eigen::Index in_dim() const { return w.rows(); }
  Eigen::Index out_dim() const { return w.cols(); }

  bool operator==(const GatLayer& o) const {
    return w == o.w && a == o.a && leaky_slope == o.leaky_slope && relu == o.relu;
  }
};

/// Intermediate values kept for the backward pass. Per-edge arrays follow the
/// neighborhood's CSR order.
struct LayerCache {
  Matrix input;
  Matrix wh;
  Vector src_score;
  Vector nbr_score;
  std::vector<double> logit;  // pre-LeakyReLU src + nbr
  std::vector<double> alpha;
  Matrix pre;  // before the output activation
};

/// out_i = act( sum_{j in N_i} alpha_ij W x_j ), alpha = softmax_j LeakyReLU(a^T [W x_i || W x_j]).
inline Matrix gat_layer_forward(const Matrix& h, const Neighborhood& nb, const GatLayer& layer,
                                LayerCache* cache = nullptr, int layer_index = 0) {
  if (h.cols() != layer.in_dim() || layer.a.size() != 2 * layer.out_dim())
    throw NumericError("layer " + std::to_string(layer_index) + ": shape mismatch (input has " +
                       std::to_string(h.cols()) + " columns, layer expects " + std::to_string(layer.in_dim()) + ")");
  if (h.rows() != nb.num_nodes()) throw NumericError("layer " + std::to_string(layer_index) + ": row count mismatch");
  const Eigen::Index out = layer.out_dim();
  Matrix wh = h * layer.w;
  Vector src = wh * layer.a.head(out);
  Vector nbr = wh * layer.a.tail(out);
  Matrix pre = Matrix::Zero(h.rows(), out);
  std::vector<double> logit(nb.index.size()), alpha(nb.index.size());
  for (int i = 0; i < nb.num_nodes(); ++i) {
    const auto begin = static_cast<std::size_t>(nb.offset[static_cast<std::size_t>(i)]);
    const auto end = static_cast<std::size_t>(nb.offset[static_cast<std::size_t>(i) + 1]);
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t e = begin; e < end; ++e) {
      logit[e] = src[i] + nbr[nb.index[e]];
      const double act = logit[e] > 0.0 ? logit[e] : layer.leaky_slope * logit[e];
      alpha[e] = act;
      max = std::max(max, act);
    }
    double sum = 0.0;
    for (std::size_t e = begin; e < end; ++e) {
      alpha[e] = std::exp(alpha[e] - max);
      sum += alpha[e];
    }
    for (std::size_t e = begin; e < end; ++e) {
      alpha[e] /= sum;
      pre.row(i) += alpha[e] * wh.row(nb.index[e]);
    }
  }
  Matrix result = layer.relu ? Matrix(pre.cwiseMax(0.0)) : pre;
  if (!result.allFinite()) throw NumericError("layer " + std::to_string(layer_index) + ": non-finite activation");
  if (cache) {
    cache->input = h;
    cache->wh = std::move(wh);
    cache->src_score = std::move(src);
    cache->nbr_score = std::move(nbr);
    cache->logit = std::move(logit);
    cache->alpha = std::move(alpha);
    cache->pre = std::move(pre);
  }
  return result;
}

struct LayerGradient {
  Matrix w;
  Vector a;
};

/// Reverse pass of gat_layer_forward. Returns dL/dInput; fills `grad`.
inline Matrix gat_layer_backward(const Matrix& d_out, const Neighborhood& nb, const GatLayer& layer,
                                 const LayerCache& c, LayerGradient& grad) {
  const Eigen::Index out = layer.out_dim();
  Matrix d_pre = layer.relu ? Matrix(d_out.cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix())) : d_out;
  Matrix d_wh = Matrix::Zero(c.wh.rows(), out);
  Vector d_src = Vector::Zero(c.wh.rows());
  Vector d_nbr = Vector::Zero(c.wh.rows());
  std::vector<double> d_alpha;
  for (int i = 0; i < nb.num_nodes(); ++i) {
    const auto begin = static_cast<std::size_t>(nb.offset[static_cast<std::size_t>(i)]);
    const auto end = static_cast<std::size_t>(nb.offset[static_cast<std::size_t>(i) + 1]);
    d_alpha.assign(end - begin, 0.0);
    double weighted = 0.0;
    for (std::size_t e = begin; e < end; ++e) {
      const int j = nb.index[e];
      d_alpha[e - begin] = d_pre.row(i).dot(c.wh.row(j));
      d_wh.row(j) += c.alpha[e] * d_pre.row(i);
      weighted += c.alpha[e] * d_alpha[e - begin];
    }
    for (std::size_t e = begin; e < end; ++e) {
      const double d_act = c.alpha[e] * (d_alpha[e - begin] - weighted);
      const double d_logit = d_act * (c.logit[e] > 0.0 ? 1.0 : layer.leaky_slope);
      d_src[i] += d_logit;
      d_nbr[nb.index[e]] += d_logit;
    }
  }
  grad.a.resize(2 * out);
  grad.a.head(out) = c.wh.transpose() * d_src;
  grad.a.tail(out) = c.wh.transpose() * d_nbr;
  d_wh += d_src * layer.a.head(out).transpose();
  d_wh += d_nbr * layer.a.tail(out).transpose();
  grad.w = c.input.transpose() * d_wh;
  return d_wh * layer.w.transpose();
}

// ---------------------------------------------------------------------------
// Auto-encoder
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.004;
  int batch_size = 128;
  int hidden_dim = 32;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double leaky_slope = 0.2;
};

/// Two encoder layers (D -> h -> h) and two decoder layers (h -> h -> D).
/// The last decoder layer is linear so signed attributes can be reconstructed.
struct GatAutoEncoder {
  static constexpr std::size_t kLayers = 4;
  std::array<GatLayer, kLayers> layers;

  int input_dim() const { return static_cast<int>(layers[0].in_dim()); }
  int hidden_dim() const { return static_cast<int>(layers[0].out_dim()); }

  /// Uniform on +-sqrt(6 / (fan_in + fan_out)) for every W and a.
  static GatAutoEncoder init(int input_dim, int hidden_dim, std::uint64_t seed, double leaky_slope = 0.2) {
    if (input_dim < 1 || hidden_dim < 1) throw UsageError("layer dimensions must be positive");
    const std::array<std::pair<int, int>, kLayers> dims = {
        {{input_dim, hidden_dim}, {hidden_dim, hidden_dim}, {hidden_dim, hidden_dim}, {hidden_dim, input_dim}}};
    GatAutoEncoder m;
    for (std::size_t l = 0; l < kLayers; ++l) {
      auto [in, out] = dims[l];
      CounterRng rng(seed, "gat-layer/" + std::to_string(l));
      auto& layer = m.layers[l];
      layer.leaky_slope = leaky_slope;
      layer.relu = l + 1 < kLayers;
      const double w_bound = std::sqrt(6.0 / (in + out));
      layer.w.resize(in, out);
      for (int r = 0; r < in; ++r)
        for (int c = 0; c < out; ++c) layer.w(r, c) = rng.uniform(-w_bound, w_bound);
      const double a_bound = std::sqrt(6.0 / (2 * out + 1));
      layer.a.resize(2 * out);
      for (int i = 0; i < 2 * out; ++i) layer.a[i] = rng.uniform(-a_bound, a_bound);
    }
    return m;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.a.size());
    return n;
  }

  bool operator==(const GatAutoEncoder&) const = default;
};

struct ForwardResult {
  Matrix z;      // latent, |V| x h
  Matrix x_hat;  // reconstruction, |V| x D
};

struct ForwardTrace {
  std::array<LayerCache, GatAutoEncoder::kLayers> caches;
};

inline ForwardResult forward(const GatAutoEncoder& model, const Matrix& x, const Neighborhood& nb,
                             ForwardTrace* trace = nullptr) {
  if (x.cols() != model.input_dim())
    throw NumericError("attribute width " + std::to_string(x.cols()) + " does not match model input " +
                       std::to_string(model.input_dim()));
  ForwardResult r;
  Matrix h = x;
  for (std::size_t l = 0; l < GatAutoEncoder::kLayers; ++l) {
    h = gat_layer_forward(h, nb, model.layers[l], trace ? &trace->caches[l] : nullptr, static_cast<int>(l));
    if (l == 1) r.z = h;
  }
  r.x_hat = std::move(h);
  return r;
}

inline ForwardResult forward(const GatAutoEncoder& model, const GlobalCallGraph& g) {
  return forward(model, g.x, Neighborhood::of(g));
}

/// Squared Frobenius norm of X - X_hat.
inline double reconstruction_loss(const Matrix& x, const Matrix& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw NumericError("loss: shape mismatch");
  return (x - x_hat).squaredNorm();
}

/// Per-node L2 distance between attribute rows and their reconstruction.
inline Vector node_scores(const Matrix& x, const Matrix& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw NumericError("node_scores: shape mismatch");
  return (x - x_hat).rowwise().norm();
}

inline Vector node_scores(const GatAutoEncoder& model, const GlobalCallGraph& g) {
  return node_scores(g.x, forward(model, g).x_hat);
}

struct Gradients {
  std::array<LayerGradient, GatAutoEncoder::kLayers> layers;
  double loss = 0.0;
};

/// Loss and its gradient with respect to every W and a.
inline Gradients backward(const GatAutoEncoder& model, const Matrix& x, const Neighborhood& nb) {
  ForwardTrace trace;
  const auto fwd = forward(model, x, nb, &trace);
  Gradients g;
  g.loss = reconstruction_loss(x, fwd.x_hat);
  Matrix d = 2.0 * (fwd.x_hat - x);
  for (std::size_t l = GatAutoEncoder::kLayers; l-- > 0;)
    d = gat_layer_backward(d, nb, model.layers[l], trace.caches[l], g.layers[l]);
  return g;
}

inline Gradients backward(const GatAutoEncoder& model, const GlobalCallGraph& graph) {
  return backward(model, graph.x, Neighborhood::of(graph));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Disjoint union of graphs: stacked attribute rows, block-diagonal edges.
struct Batch {
  Matrix x;
  Neighborhood nb;
};

inline Batch make_batch(std::span<const GlobalCallGraph* const> graphs) {
  Eigen::Index rows = 0;
  for (const auto* g : graphs) rows += g->x.rows();
  Batch b;
  b.x.resize(rows, graphs.empty() ? 0 : graphs.front()->x.cols());
  std::vector<Edge> edges;
  int base = 0;
  for (const auto* g : graphs) {
    if (g->x.cols() != b.x.cols()) throw NumericError("graphs in a batch differ in attribute width");
    b.x.middleRows(base, g->x.rows()) = g->x;
    for (auto [s, t] : g->edges) edges.emplace_back(s + base, t + base);
    base += static_cast<int>(g->x.rows());
  }
  b.nb = Neighborhood::from_edges(base, edges);
  return b;
}

class AdamOptimizer {
 public:
  AdamOptimizer(const GatAutoEncoder& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (std::size_t l = 0; l < GatAutoEncoder::kLayers; ++l) {
      m_w_[l] = v_w_[l] = Matrix::Zero(model.layers[l].w.rows(), model.layers[l].w.cols());
      m_a_[l] = v_a_[l] = Vector::Zero(model.layers[l].a.size());
    }
  }

  void step(GatAutoEncoder& model, const Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t l = 0; l < GatAutoEncoder::kLayers; ++l) {
      update(model.layers[l].w, g.layers[l].w, m_w_[l], v_w_[l], c1, c2);
      update(model.layers[l].a, g.layers[l].a, m_a_[l], v_a_[l], c1, c2);
    }
  }

 private:
  template <typename P>
  void update(P& param, const P& grad, P& m, P& v, double c1, double c2) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }

  TrainConfig cfg_;
  int t_ = 0;
  std::array<Matrix, GatAutoEncoder::kLayers> m_w_, v_w_;
  std::array<Vector, GatAutoEncoder::kLayers> m_a_, v_a_;
};

struct TrainResult {
  GatAutoEncoder model;
  std::vector<double> epoch_loss;  // mean per-graph loss of each epoch
};

/// Called after every epoch with (epoch index, mean per-graph loss).
using EpochCallback = std::function<void(int, double)>;

inline TrainResult train(std::span<const GlobalCallGraph> graphs, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (graphs.empty()) throw DataError("training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.hidden_dim < 1 || !(cfg.learning_rate > 0.0))
    throw UsageError("training hyperparameters must be positive");
  const auto width = graphs.front().x.cols();
  for (const auto& g : graphs)
    if (g.x.cols() != width) throw DataError("training graphs differ in attribute width");

  TrainResult result{GatAutoEncoder::init(static_cast<int>(width), cfg.hidden_dim, cfg.seed, cfg.leaky_slope), {}};
  AdamOptimizer adam(result.model, cfg);
  CounterRng shuffle_rng(cfg.seed, "shuffle");
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const GlobalCallGraph*> members;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double total = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      members.clear();
      for (std::size_t k = start; k < stop; ++k) members.push_back(&graphs[order[k]]);
      const auto batch = make_batch(members);
      Gradients grad;
      try {
        grad = backward(result.model, batch.x, batch.nb);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(grad.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      adam.step(result.model, grad);
      total += grad.loss;
      ++batch_index;
    }
    const double mean = total / static_cast<double>(graphs.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace lrca
