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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lrca {

struct NormalPattern {
  std::string request_type;
  NodeIdentity node;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n_samples = 0;

  bool operator==(const NormalPattern&) const = default;
};

inline double zscore(double score, const NormalPattern& p) { return (score - p.mu) / std::max(p.sigma, kStdFloor); }

/// Per (request type, node identity) score distribution of fault-free graphs.
class NormalPatternStore {
 public:
  using Key = std::pair<std::string, NodeIdentity>;

  void insert(NormalPattern p) {
    types_.insert(p.request_type);
    Key key{p.request_type, p.node};
    patterns_.insert_or_assign(std::move(key), std::move(p));
  }

  bool has_type(const std::string& type) const { return types_.contains(type); }

  const NormalPattern* find(const std::string& type, const NodeIdentity& node) const {
    auto it = patterns_.find({type, node});
    return it == patterns_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return patterns_.size(); }
  const std::map<Key, NormalPattern>& patterns() const { return patterns_; }

  /// Fingerprint of the model the store was fitted under (0 when unknown).
  std::uint64_t model_fingerprint = 0;

  /// Header line "#model<TAB><hex fingerprint>", then one
  /// "request_type<TAB>node_kind<TAB>node_name<TAB>mu<TAB>sigma<TAB>n" per line.
  void write_tsv(std::ostream& out) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model_fingerprint));
    out << "#model\t" << buf << '\n';
    for (const auto& [_, p] : patterns_) {
      out << p.request_type << '\t' << to_string(p.node.kind) << '\t' << p.node.name << '\t';
      std::snprintf(buf, sizeof buf, "%.17g", p.mu);
      out << buf << '\t';
      std::snprintf(buf, sizeof buf, "%.17g", p.sigma);
      out << buf << '\t' << p.n_samples << '\n';
    }
  }

  static NormalPatternStore read_tsv(std::istream& in) {
    NormalPatternStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
      auto fail = [&](const std::string& what) {
        return DataError("store line " + std::to_string(line_no) + ": " + what);
      };
      try {
        if (line.starts_with("#")) {
          if (cols.size() == 2 && cols[0] == "#model") store.model_fingerprint = std::stoull(cols[1], nullptr, 16);
          continue;
        }
        if (cols.size() != 6) throw fail("expected 6 tab-separated columns");
        auto kind = parse_node_kind(cols[1]);
        if (!kind) throw fail("unknown node kind \"" + cols[1] + "\"");
        NormalPattern p{cols[0], NodeIdentity(*kind, cols[2]), std::stod(cols[3]), std::stod(cols[4]),
                        static_cast<std::size_t>(std::stoull(cols[5]))};
        if (p.n_samples < 1 || !(p.sigma >= 0.0) || !std::isfinite(p.mu)) throw fail("invalid statistics");
        store.insert(std::move(p));
      } catch (const std::logic_error&) {
        throw fail("unparsable number");
      }
    }
    return store;
  }

 private:
  std::set<std::string> types_;
  std::map<Key, NormalPattern> patterns_;
};

/// Groups fault-free graphs by request type and records the population mean
/// and standard deviation of every node's score.
inline NormalPatternStore fit_normal_patterns(const GatAutoEncoder& model, std::span<const GlobalCallGraph> graphs) {
  std::map<std::string, std::map<NodeIdentity, std::vector<double>>> scores;
  std::map<std::string, std::size_t> graphs_per_type;
  for (const auto& g : graphs) {
    if (g.ground_truth) throw DataError("graph " + g.trace_id + " is labeled faulty; normal patterns need fault-free data");
    const Vector s = node_scores(model, g);
    auto& per_node = scores[g.request_type];
    for (int i = 0; i < g.num_nodes(); ++i) per_node[g.nodes[static_cast<std::size_t>(i)]].push_back(s[i]);
    ++graphs_per_type[g.request_type];
  }
  NormalPatternStore store;
  for (const auto& [type, per_node] : scores) {
    for (const auto& [node, values] : per_node) {
      if (values.size() != graphs_per_type[type])
        throw DataError("node " + node.label() + " appears in only " + std::to_string(values.size()) + " of " +
                        std::to_string(graphs_per_type[type]) + " graphs of request type " + type);
      const double n = static_cast<double>(values.size());
      const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double sq = 0.0;
      for (double v : values) sq += (v - mu) * (v - mu);
      store.insert({type, node, mu, std::sqrt(sq / n), values.size()});
    }
  }
  return store;
}

struct RankedNode {
  NodeIdentity node;
  double z = 0.0;
};

struct RankedRootCauses {
  std::string trace_id;
  std::vector<RankedNode> ranking;

  std::vector<NodeIdentity> order() const {
    std::vector<NodeIdentity> out;
    out.reserve(ranking.size());
    for (const auto& r : ranking) out.push_back(r.node);
    return out;
  }
};

/// Descending by value, ties broken by node identity ascending.
inline RankedRootCauses rank_nodes(const GlobalCallGraph& g, const Vector& values) {
  RankedRootCauses out;
  out.trace_id = g.trace_id;
  for (int i = 0; i < g.num_nodes(); ++i) out.ranking.push_back({g.nodes[static_cast<std::size_t>(i)], values[i]});
  std::sort(out.ranking.begin(), out.ranking.end(), [](const RankedNode& a, const RankedNode& b) {
    if (a.z != b.z) return a.z > b.z;
    return a.node < b.node;
  });
  return out;
}

/// z-scores of `scores` against the store. Nodes without a pattern get +inf.
inline Vector node_zscores(const NormalPatternStore& store, const GlobalCallGraph& g, const Vector& scores) {
  if (!store.has_type(g.request_type))
    throw DataError("request type \"" + g.request_type + "\" has no normal pattern (trace " + g.trace_id + ")");
  Vector z(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) {
    const auto* p = store.find(g.request_type, g.nodes[static_cast<std::size_t>(i)]);
    z[i] = p ? zscore(scores[i], *p) : std::numeric_limits<double>::infinity();
  }
  return z;
}

inline RankedRootCauses localize(const GatAutoEncoder& model, const NormalPatternStore& store,
                                 const GlobalCallGraph& g) {
  return rank_nodes(g, node_zscores(store, g, node_scores(model, g)));
}

/// Baseline: rank by raw reconstruction score, no normal patterns.
inline RankedRootCauses localize_direct(const GatAutoEncoder& model, const GlobalCallGraph& g) {
  return rank_nodes(g, node_scores(model, g));
}

}  // namespace lrca
