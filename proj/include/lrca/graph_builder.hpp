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
#include "lrca/log_pipeline.hpp"
#include "lrca/obs_model.hpp"
#include "lrca/scalar_embed.hpp"

#include <algorithm>
#include <array>
#include <compare>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace lrca {

enum class Stage { creation, execution };

inline const char* to_string(Stage s) { return s == Stage::creation ? "creation" : "execution"; }

struct NodeIdentity {
  Side side = Side::application;
  NodeKind kind = NodeKind::function;
  std::string name;

  NodeIdentity() = default;
  NodeIdentity(NodeKind k, std::string n) : side(side_of(k)), kind(k), name(std::move(n)) {}

  Stage stage() const { return side == Side::platform ? Stage::creation : Stage::execution; }
  NodeRef ref() const { return {kind, name}; }

  /// "kind/name", e.g. "pod/get-order-by-id".
  std::string label() const { return std::string(to_string(kind)) + "/" + name; }

  auto operator<=>(const NodeIdentity&) const = default;
};

using Edge = std::pair<int, int>;

struct Topology {
  std::vector<NodeIdentity> nodes;
  std::vector<Edge> edges;

  std::optional<int> index_of(const NodeIdentity& id) const {
    auto it = std::find(nodes.begin(), nodes.end(), id);
    if (it == nodes.end()) return std::nullopt;
    return static_cast<int>(it - nodes.begin());
  }
};

struct GlobalCallGraph {
  std::string request_type;
  std::string trace_id;
  std::vector<NodeIdentity> nodes;
  std::vector<Edge> edges;
  Matrix x;
  std::optional<std::vector<int>> ground_truth;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
};

namespace detail {

inline bool weakly_connected(std::size_t n, const std::vector<Edge>& edges) {
  if (n == 0) return true;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::size_t components = n;
  for (auto [a, b] : edges) {
    const auto ra = find(static_cast<std::size_t>(a));
    const auto rb = find(static_cast<std::size_t>(b));
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components == 1;
}

}  // namespace detail

/// Ownership chains deployment -> replicaset -> pod, one per function name.
inline Topology build_platform_edges(std::span<const Span> spans) {
  std::map<std::string, std::array<bool, 3>> chains;
  for (const auto& s : spans) {
    if (s.side != Side::platform) continue;
    chains[s.node_name][static_cast<std::size_t>(s.node_kind)] = true;
  }
  Topology t;
  for (const auto& [name, present] : chains) {
    for (std::size_t k = 0; k < 3; ++k)
      if (!present[k])
        throw DataError("platform chain of function \"" + name + "\" has no " + to_string(static_cast<NodeKind>(k)) +
                        " span");
    const int base = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back(NodeKind::deployment, name);
    t.nodes.emplace_back(NodeKind::replicaset, name);
    t.nodes.emplace_back(NodeKind::pod, name);
    t.edges.emplace_back(base, base + 1);
    t.edges.emplace_back(base + 1, base + 2);
  }
  return t;
}

/// One node per function; caller -> callee edges from application parent links.
inline Topology build_application_edges(std::span<const Span> spans) {
  std::map<std::string, const Span*> by_id;
  for (const auto& s : spans) by_id[s.span_id] = &s;
  std::set<std::string> functions;
  std::set<std::pair<std::string, std::string>> calls;
  for (const auto& s : spans) {
    if (s.side != Side::application) continue;
    functions.insert(s.node_name);
    if (!s.parent_span_id) continue;
    auto it = by_id.find(*s.parent_span_id);
    if (it == by_id.end())
      throw DataError("span " + s.span_id + " references unknown parent " + *s.parent_span_id);
    const Span& parent = *it->second;
    if (parent.side == Side::application && parent.node_name != s.node_name) calls.emplace(parent.node_name, s.node_name);
  }
  Topology t;
  std::map<std::string, int> index;
  for (const auto& f : functions) {
    index[f] = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back(NodeKind::function, f);
  }
  for (const auto& [caller, callee] : calls) t.edges.emplace_back(index[caller], index[callee]);
  return t;
}

/// Joins the two subgraphs on function name: pod(F) -> F for every function
/// and A -> deployment(B) for every call A -> B. Nodes are sorted by
/// (side, kind, name).
inline Topology merge_global(const Topology& platform, const Topology& application) {
  std::set<std::string> platform_names, app_names;
  for (const auto& n : platform.nodes) platform_names.insert(n.name);
  for (const auto& n : application.nodes) app_names.insert(n.name);
  for (const auto& n : app_names)
    if (!platform_names.contains(n)) throw DataError("function \"" + n + "\" has no platform creation chain");
  for (const auto& n : platform_names)
    if (!app_names.contains(n)) throw DataError("platform chain \"" + n + "\" has no function span");

  Topology out;
  out.nodes = platform.nodes;
  out.nodes.insert(out.nodes.end(), application.nodes.begin(), application.nodes.end());
  std::sort(out.nodes.begin(), out.nodes.end());
  std::map<NodeIdentity, int> index;
  for (std::size_t i = 0; i < out.nodes.size(); ++i) index[out.nodes[i]] = static_cast<int>(i);

  std::set<Edge> edges;
  auto remap = [&](const Topology& t, Edge e) {
    return Edge{index.at(t.nodes[static_cast<std::size_t>(e.first)]), index.at(t.nodes[static_cast<std::size_t>(e.second)])};
  };
  for (auto e : platform.edges) edges.insert(remap(platform, e));
  for (const auto& name : app_names)
    edges.emplace(index.at({NodeKind::pod, name}), index.at({NodeKind::function, name}));
  for (auto e : application.edges) {
    const auto& callee = application.nodes[static_cast<std::size_t>(e.second)].name;
    edges.emplace(index.at(application.nodes[static_cast<std::size_t>(e.first)]),
                  index.at({NodeKind::deployment, callee}));
  }
  for (auto [a, b] : edges)
    if (a == b) throw DataError("self-loop on " + out.nodes[static_cast<std::size_t>(a)].label());
  out.edges.assign(edges.begin(), edges.end());
  if (!detail::weakly_connected(out.nodes.size(), out.edges))
    throw DataError("global call graph is not weakly connected");
  return out;
}

inline const std::vector<std::string>& default_classification_keys() {
  static const std::vector<std::string> keys = {"http.host", "http.target", "branch"};
  return keys;
}

/// Sorted "k=v" pairs of the classification keys present, joined by "&".
inline std::string classify_request(const std::map<std::string, std::string>& params,
                                    std::span<const std::string> keys) {
  std::vector<std::string> parts;
  for (const auto& k : keys)
    if (auto it = params.find(k); it != params.end()) parts.push_back(k + "=" + it->second);
  if (parts.empty()) throw DataError("request is unclassifiable: none of the classification keys is present");
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "&" : "") + parts[i];
  return out;
}

/// Parameters of the request's entry span: the earliest parentless application
/// span, falling back to the earliest parentless span of any side.
inline const std::map<std::string, std::string>& root_request_params(std::span<const Span> spans) {
  const Span* best = nullptr;
  for (int pass = 0; pass < 2 && !best; ++pass) {
    for (const auto& s : spans) {
      if (s.parent_span_id || (pass == 0 && s.side != Side::application)) continue;
      if (!best || std::tie(s.start_us, s.span_id) < std::tie(best->start_us, best->span_id)) best = &s;
    }
  }
  if (!best) throw DataError("trace has no root span");
  return best->request_params;
}

// ---------------------------------------------------------------------------
// Feature context: everything needed to turn a bundle into attribute rows
// ---------------------------------------------------------------------------

struct FeatureConfig {
  int d_log = 32;
  int p = 16;
  int d = 32;
  std::vector<std::string> classification_keys = default_classification_keys();
  std::uint64_t seed = 42;

  AttributeLayout layout() const { return {d_log, d}; }
};

struct FeatureContext {
  FeatureConfig config;
  ProjectorSet projectors;
  TemplateMiner templates;

  AttributeLayout layout() const { return config.layout(); }
};

namespace detail {

/// Routes a platform log to the component whose span window contains its
/// timestamp (latest-starting window wins). Logs outside every window fold
/// into the pod.
inline NodeKind platform_owner(const LogRecord& r, const std::map<NodeKind, const Span*>& chain) {
  const Span* best = nullptr;
  for (const auto& [kind, s] : chain) {
    if (r.timestamp_us >= s->start_us && r.timestamp_us <= s->end_us() && (!best || s->start_us >= best->start_us))
      best = s;
  }
  return best ? best->node_kind : NodeKind::pod;
}

}  // namespace detail

/// Builds the attributed graph of one request. Mining happens on a copy of
/// the context's template store, so the context stays untouched and graphs
/// do not influence each other.
inline GlobalCallGraph assemble(const RequestBundle& bundle, const FeatureContext& ctx) {
  auto topology = merge_global(build_platform_edges(bundle.spans), build_application_edges(bundle.spans));
  GlobalCallGraph g;
  g.trace_id = bundle.trace_id;
  g.request_type = classify_request(root_request_params(bundle.spans), ctx.config.classification_keys);
  g.nodes = std::move(topology.nodes);
  g.edges = std::move(topology.edges);

  std::map<NodeIdentity, int> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i]] = static_cast<int>(i);

  std::map<std::string, std::map<NodeKind, const Span*>> chains;
  std::map<NodeIdentity, std::int64_t> duration;
  for (const auto& s : bundle.spans) {
    NodeIdentity id(s.node_kind, s.node_name);
    duration[id] += s.duration_us;
    if (s.side == Side::platform) chains[s.node_name][s.node_kind] = &s;
  }

  const std::size_t n = g.nodes.size();
  std::vector<std::array<std::vector<const LogRecord*>, 3>> logs(n);
  for (const auto& r : bundle.logs) {
    NodeKind kind = NodeKind::function;
    if (r.stream != LogStream::app) {
      auto chain = chains.find(r.node_name);
      if (chain == chains.end()) throw DataError("platform log for unknown function \"" + r.node_name + "\"");
      kind = detail::platform_owner(r, chain->second);
    }
    auto it = index.find({kind, r.node_name});
    if (it == index.end()) throw DataError("log record for unknown node " + NodeIdentity(kind, r.node_name).label());
    logs[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(r.stream)].push_back(&r);
  }
  std::vector<std::array<std::optional<double>, 2>> metrics(n);
  for (const auto& m : bundle.metrics) {
    auto it = index.find({NodeKind::function, m.node_name});
    if (it == index.end()) throw DataError("metric sample for unknown function \"" + m.node_name + "\"");
    auto& slot = metrics[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(m.channel)];
    if (slot) throw DataError("duplicate " + std::string(to_string(m.channel)) + " sample for " + m.node_name);
    slot = m.value;
  }

  const auto layout = ctx.layout();
  TemplateMiner miner = ctx.templates;
  g.x.resize(static_cast<Eigen::Index>(n), layout.width());
  for (std::size_t i = 0; i < n; ++i) {
    std::array<Vector, 3> log_vecs;
    for (std::size_t s = 0; s < 3; ++s)
      log_vecs[s] = embed_log_sequence(std::span<const LogRecord* const>(logs[i][s]), layout.d_log, miner);
    std::array<Vector, 2> metric_vecs = {Vector::Zero(layout.d), Vector::Zero(layout.d)};
    if (metrics[i][0]) metric_vecs[0] = project_scalar(*metrics[i][0], ctx.projectors.cpu);
    if (metrics[i][1]) metric_vecs[1] = project_scalar(*metrics[i][1], ctx.projectors.memory);
    const Vector latency = ctx.projectors.latency_embedding(g.nodes[i].kind, duration.at(g.nodes[i]));
    g.x.row(static_cast<Eigen::Index>(i)) = fuse_attributes(layout, log_vecs, metric_vecs, latency).transpose();
  }

  if (bundle.ground_truth) {
    std::vector<int> truth;
    for (const auto& ref : *bundle.ground_truth) {
      auto it = index.find({ref.kind, ref.name});
      if (it == index.end())
        throw DataError("ground-truth node " + NodeIdentity(ref.kind, ref.name).label() + " is not in trace " +
                        bundle.trace_id);
      truth.push_back(it->second);
    }
    std::sort(truth.begin(), truth.end());
    truth.erase(std::unique(truth.begin(), truth.end()), truth.end());
    g.ground_truth = std::move(truth);
  }
  return g;
}

/// Fits the feature context on training bundles: mines every training log
/// message in input order, then fits per-channel standardizers on the raw
/// scalars (latency in milliseconds, additionally per node kind).
inline FeatureContext fit_features(std::span<const RequestBundle> train, const FeatureConfig& config) {
  FeatureContext ctx{config, ProjectorSet::init(config.p, config.d, config.seed), TemplateMiner{}};
  std::vector<double> cpu, memory, latency;
  std::array<std::vector<double>, 4> latency_by_kind;
  for (const auto& b : train) {
    for (const auto& r : b.logs) ctx.templates.add(r.message);
    for (const auto& m : b.metrics) (m.channel == MetricChannel::cpu ? cpu : memory).push_back(m.value);
    std::map<NodeIdentity, std::int64_t> duration;
    for (const auto& s : b.spans) duration[{s.node_kind, s.node_name}] += s.duration_us;
    for (const auto& [id, us] : duration) {
      latency.push_back(duration_ms(us));
      latency_by_kind[static_cast<std::size_t>(id.kind)].push_back(duration_ms(us));
    }
  }
  ctx.projectors.cpu.standardizer = Standardizer::fit(cpu);
  ctx.projectors.memory.standardizer = Standardizer::fit(memory);
  ctx.projectors.latency.standardizer = Standardizer::fit(latency);
  for (std::size_t k = 0; k < latency_by_kind.size(); ++k)
    ctx.projectors.latency_by_kind[k] = Standardizer::fit(latency_by_kind[k]);
  return ctx;
}

/// Tab-separated dump: a node table ("node<TAB>index<TAB>kind<TAB>name")
/// followed by the adjacency list ("edge<TAB>src<TAB>dst").
inline void write_graph_tsv(std::ostream& out, const GlobalCallGraph& g) {
  out << "# trace " << g.trace_id << "\trequest_type " << g.request_type << '\n';
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    out << "node\t" << i << '\t' << to_string(g.nodes[i].kind) << '\t' << g.nodes[i].name << '\n';
  for (auto [a, b] : g.edges) out << "edge\t" << a << '\t' << b << '\n';
}

}  // namespace lrca
