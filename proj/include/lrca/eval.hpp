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
#include "lrca/rca.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lrca {

/// 1 if any ground-truth node is within the first min(k, |ranking|) entries.
inline int hr_at_k(std::span<const NodeIdentity> ranking, std::span<const NodeIdentity> truth, int k) {
  if (k < 1) throw UsageError("k must be >= 1");
  if (truth.empty()) throw DataError("hit ratio needs a non-empty ground truth");
  const auto limit = std::min(static_cast<std::size_t>(k), ranking.size());
  for (std::size_t i = 0; i < limit; ++i)
    if (std::find(truth.begin(), truth.end(), ranking[i]) != truth.end()) return 1;
  return 0;
}

/// DCG@k / IDCG@k with binary relevance and gain 2^rel - 1 discounted by
/// log2(position + 1). IDCG places min(k, |truth|) relevant items first.
inline double ndcg_at_k(std::span<const NodeIdentity> ranking, std::span<const NodeIdentity> truth, int k) {
  if (k < 1) throw UsageError("k must be >= 1");
  if (truth.empty()) throw DataError("NDCG needs a non-empty ground truth");
  const auto limit = std::min(static_cast<std::size_t>(k), ranking.size());
  double dcg = 0.0;
  for (std::size_t i = 0; i < limit; ++i)
    if (std::find(truth.begin(), truth.end(), ranking[i]) != truth.end()) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  const auto ideal = std::min(static_cast<std::size_t>(k), truth.size());
  double idcg = 0.0;
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

enum class Method { zscore, direct };

inline const char* to_string(Method m) { return m == Method::zscore ? "zscore" : "direct"; }

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "zscore") return Method::zscore;
  if (s == "direct") return Method::direct;
  return std::nullopt;
}

/// Metric averages as percentages.
struct MetricRow {
  std::string method;
  std::string request_type;  // "ALL" for the dataset-wide row
  std::size_t n = 0;
  double hr_k = 0.0;
  double hr_k2 = 0.0;
  double ndcg_k = 0.0;
  double ndcg_k2 = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::size_t n_graphs = 0;
  /// Mean wall-clock localization time per graph, per method, in milliseconds.
  std::map<std::string, double> ms_per_graph;

  const MetricRow* find(const std::string& method, const std::string& type = "ALL") const {
    for (const auto& r : rows)
      if (r.method == method && r.request_type == type) return &r;
    return nullptr;
  }

  std::string to_csv() const {
    std::string out = "method,request_type,n,hr_k,hr_k2,ndcg_k,ndcg_k2\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.2f,%.2f,%.2f,%.2f\n", r.method.c_str(), r.request_type.c_str(), r.n,
                    r.hr_k, r.hr_k2, r.ndcg_k, r.ndcg_k2);
      out += buf;
    }
    return out;
  }

  std::string to_table() const {
    std::size_t method_w = 6, type_w = 12;
    for (const auto& r : rows) {
      method_w = std::max(method_w, r.method.size());
      type_w = std::max(type_w, r.request_type.size());
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %6s  %8s  %8s  %8s  %8s\n", static_cast<int>(method_w), "method",
                  static_cast<int>(type_w), "request_type", "n", "HR@k", "HR@k+2", "NDCG@k", "NDCG@k+2");
    std::string out = buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%-*s  %-*s  %6zu  %8.2f  %8.2f  %8.2f  %8.2f\n", static_cast<int>(method_w),
                    r.method.c_str(), static_cast<int>(type_w), r.request_type.c_str(), r.n, r.hr_k, r.hr_k2,
                    r.ndcg_k, r.ndcg_k2);
      out += buf;
    }
    return out;
  }
};

/// Per-graph metric values for one ranking, with k = |truth|.
struct GraphMetrics {
  int hr_k = 0;
  int hr_k2 = 0;
  double ndcg_k = 0.0;
  double ndcg_k2 = 0.0;
};

inline GraphMetrics graph_metrics(const GlobalCallGraph& g, const RankedRootCauses& ranked) {
  if (!g.ground_truth || g.ground_truth->empty()) throw DataError("graph " + g.trace_id + " has no ground truth");
  std::vector<NodeIdentity> truth;
  for (int i : *g.ground_truth) truth.push_back(g.nodes[static_cast<std::size_t>(i)]);
  const auto order = ranked.order();
  const int k = static_cast<int>(truth.size());
  return {hr_at_k(order, truth, k), hr_at_k(order, truth, k + 2), ndcg_at_k(order, truth, k),
          ndcg_at_k(order, truth, k + 2)};
}

/// Averages per-graph metrics over the dataset (weighted by graph count) and
/// per request type. Rows: for each method, "ALL" then types in sorted order.
inline EvalReport aggregate(const std::vector<std::pair<std::string, std::vector<std::pair<std::string, GraphMetrics>>>>&
                                per_method) {
  EvalReport report;
  for (const auto& [method, entries] : per_method) {
    struct Sum {
      std::size_t n = 0;
      double hr_k = 0, hr_k2 = 0, ndcg_k = 0, ndcg_k2 = 0;
    };
    Sum all;
    std::map<std::string, Sum> by_type;
    for (const auto& [type, m] : entries) {
      for (Sum* s : {&all, &by_type[type]}) {
        ++s->n;
        s->hr_k += m.hr_k;
        s->hr_k2 += m.hr_k2;
        s->ndcg_k += m.ndcg_k;
        s->ndcg_k2 += m.ndcg_k2;
      }
    }
    auto row = [&](const std::string& type, const Sum& s) {
      const double n = s.n ? static_cast<double>(s.n) : 1.0;
      report.rows.push_back({method, type, s.n, 100.0 * s.hr_k / n, 100.0 * s.hr_k2 / n, 100.0 * s.ndcg_k / n,
                             100.0 * s.ndcg_k2 / n});
    };
    row("ALL", all);
    for (const auto& [type, s] : by_type) row(type, s);
    report.n_graphs = entries.size();
  }
  return report;
}

/// Runs each method over every labeled graph. `ms_per_graph` is wall-clock
/// and therefore the only nondeterministic part of the report.
inline EvalReport evaluate(const GatAutoEncoder& model, const NormalPatternStore& store,
                           std::span<const GlobalCallGraph> graphs, std::span<const Method> methods) {
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, GraphMetrics>>>> per_method;
  std::map<std::string, double> timing;
  for (Method m : methods) {
    std::vector<std::pair<std::string, GraphMetrics>> entries;
    entries.reserve(graphs.size());
    double elapsed_ms = 0.0;
    for (const auto& g : graphs) {
      if (!g.ground_truth) throw DataError("graph " + g.trace_id + " is unlabeled");
      const auto start = std::chrono::steady_clock::now();
      auto ranked = m == Method::zscore ? localize(model, store, g) : localize_direct(model, g);
      elapsed_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      entries.emplace_back(g.request_type, graph_metrics(g, ranked));
    }
    timing[to_string(m)] = graphs.empty() ? 0.0 : elapsed_ms / static_cast<double>(graphs.size());
    per_method.emplace_back(to_string(m), std::move(entries));
  }
  auto report = aggregate(per_method);
  report.ms_per_graph = std::move(timing);
  return report;
}

}  // namespace lrca
