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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lrca {

enum class FaultCategory {
  pod_failure,
  replicaset_failure,
  kube_scheduler_delay,
  kubelet_delay,
  network_failure,
  code_defect,
  memory_stress,
  cpu_contention,
};

inline constexpr std::array<FaultCategory, 8> kAllFaultCategories = {
    FaultCategory::pod_failure,   FaultCategory::replicaset_failure, FaultCategory::kube_scheduler_delay,
    FaultCategory::kubelet_delay, FaultCategory::network_failure,    FaultCategory::code_defect,
    FaultCategory::memory_stress, FaultCategory::cpu_contention};

inline const char* to_string(FaultCategory c) {
  switch (c) {
    case FaultCategory::pod_failure: return "pod_failure";
    case FaultCategory::replicaset_failure: return "replicaset_failure";
    case FaultCategory::kube_scheduler_delay: return "kube_scheduler_delay";
    case FaultCategory::kubelet_delay: return "kubelet_delay";
    case FaultCategory::network_failure: return "network_failure";
    case FaultCategory::code_defect: return "code_defect";
    case FaultCategory::memory_stress: return "memory_stress";
    case FaultCategory::cpu_contention: return "cpu_contention";
  }
  return "?";
}

inline std::optional<FaultCategory> parse_fault_category(std::string_view s) {
  for (auto c : kAllFaultCategories)
    if (s == to_string(c)) return c;
  return std::nullopt;
}

inline bool is_platform_fault(FaultCategory c) {
  return c != FaultCategory::code_defect && c != FaultCategory::memory_stress && c != FaultCategory::cpu_contention;
}

/// Node kind that carries the root-cause label of each category.
inline NodeKind fault_label_kind(FaultCategory c) {
  switch (c) {
    case FaultCategory::pod_failure:
    case FaultCategory::kubelet_delay:
    case FaultCategory::network_failure: return NodeKind::pod;
    case FaultCategory::replicaset_failure: return NodeKind::replicaset;
    case FaultCategory::kube_scheduler_delay: return NodeKind::deployment;
    default: return NodeKind::function;
  }
}

/// Baseline behaviour of one function: latency per node kind (ms, indexed by
/// NodeKind), CPU as a fraction of its limit, memory in bytes.
struct FunctionProfile {
  std::array<double, 4> latency_ms{};
  double cpu = 0.0;
  double memory_bytes = 0.0;

  bool operator==(const FunctionProfile&) const = default;
};

struct RequestTypeSpec {
  std::string name;
  std::vector<std::string> functions;       // functions[0] is the entry point
  std::vector<std::pair<int, int>> calls;   // caller index -> callee index
  double weight = 1.0;

  bool operator==(const RequestTypeSpec&) const = default;
};

struct WorkloadSpec {
  std::vector<RequestTypeSpec> request_types;
  std::map<std::string, FunctionProfile> profiles;  // explicit overrides
  std::size_t n_normal_train = 500;
  std::size_t n_normal_fit = 500;
  std::size_t n_faulty = 400;
  double latency_sigma = 0.2;  // lognormal sigma of duration multipliers
  double metric_sigma = 0.1;  // gaussian sigma, relative to the base level
  std::uint64_t seed = 7;
  std::map<FaultCategory, double> fault_mix;  // empty = uniform over all categories

  bool operator==(const WorkloadSpec&) const = default;

  /// Explicit profile if given, otherwise one derived from the function name.
  FunctionProfile profile(const std::string& fn) const {
    if (auto it = profiles.find(fn); it != profiles.end()) return it->second;
    CounterRng rng(fnv1a64(fn), "profile");
    FunctionProfile p;
    p.latency_ms[static_cast<std::size_t>(NodeKind::deployment)] = rng.uniform(30.0, 50.0);
    p.latency_ms[static_cast<std::size_t>(NodeKind::replicaset)] = rng.uniform(15.0, 30.0);
    p.latency_ms[static_cast<std::size_t>(NodeKind::pod)] = rng.uniform(400.0, 800.0);
    p.latency_ms[static_cast<std::size_t>(NodeKind::function)] = rng.uniform(60.0, 200.0);
    p.cpu = rng.uniform(0.15, 0.5);
    p.memory_bytes = std::round(rng.uniform(64.0, 256.0)) * 1024.0 * 1024.0;
    return p;
  }

  std::map<FaultCategory, double> effective_mix() const {
    if (!fault_mix.empty()) return fault_mix;
    std::map<FaultCategory, double> mix;
    for (auto c : kAllFaultCategories) mix[c] = 1.0;
    return mix;
  }

  void validate() const {
    if (request_types.empty()) throw DataError("workload defines no request types");
    std::set<std::string> names;
    for (const auto& t : request_types) {
      if (!names.insert(t.name).second) throw DataError("duplicate request type " + t.name);
      if (t.functions.empty() || t.functions.size() > 6)
        throw DataError("request type " + t.name + " must have 1-6 functions");
      if (std::set<std::string>(t.functions.begin(), t.functions.end()).size() != t.functions.size())
        throw DataError("request type " + t.name + " lists a function twice");
      if (!(t.weight > 0.0)) throw DataError("request type " + t.name + " needs a positive weight");
      // Rooted tree: every non-entry function has exactly one caller and is reachable from the entry.
      std::vector<int> callers(t.functions.size(), 0);
      for (auto [a, b] : t.calls) {
        const auto n = static_cast<int>(t.functions.size());
        if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw DataError("request type " + t.name + " has a bad call");
        ++callers[static_cast<std::size_t>(b)];
      }
      if (callers[0] != 0) throw DataError("entry function of " + t.name + " must not be called");
      for (std::size_t i = 1; i < callers.size(); ++i)
        if (callers[i] != 1) throw DataError("call graph of " + t.name + " is not a rooted tree");
      if (t.calls.size() + 1 != t.functions.size()) throw DataError("call graph of " + t.name + " is not a rooted tree");
    }
    for (const auto& t : request_types)
      for (const auto& f : t.functions) {
        const auto p = profile(f);
        for (double v : p.latency_ms)
          if (!(v > 0.0)) throw DataError("latencies of " + f + " must be positive");
        if (!(p.cpu > 0.0) || !(p.memory_bytes > 0.0)) throw DataError("metric levels of " + f + " must be positive");
      }
    if (!(latency_sigma >= 0.0) || !(metric_sigma >= 0.0)) throw DataError("noise levels must be non-negative");
    double total = 0.0;
    for (auto [_, w] : effective_mix()) {
      if (w < 0.0) throw DataError("fault mix weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw DataError("fault mix is empty");
  }

  /// Two request types, 3 and 4 functions, one function shared.
  static WorkloadSpec default_spec() {
    WorkloadSpec s;
    s.request_types.push_back({"query-orders", {"query-orders", "get-order-by-id", "check-payment"}, {{0, 1}, {0, 2}}, 1.0});
    s.request_types.push_back({"calculate-refund",
                               {"calculate-refund", "get-order-by-id", "get-price", "update-account"},
                               {{0, 1}, {0, 2}, {2, 3}},
                               1.0});
    return s;
  }
};

// ---------------------------------------------------------------------------
// Key-value workload files
//
//   seed = 7
//   n_normal_train = 500   n_normal_fit = 500   n_faulty = 400
//   latency_sigma = 0.2    metric_sigma = 0.1
//   [request_type:NAME]    functions = a, b, c   calls = a>b, a>c   weight = 1
//   [function:NAME]        deployment_ms, replicaset_ms, pod_ms, function_ms, cpu, memory_mb
//   [fault_mix]            <category> = weight
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

template <typename T>
T ptree_value(const boost::property_tree::ptree& node, const std::string& key, const std::string& where) {
  try {
    return node.get<T>(boost::property_tree::ptree::path_type(key, '\0'));
  } catch (const boost::property_tree::ptree_error&) {
    throw DataError(where + ": invalid or missing value for \"" + key + "\"");
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline WorkloadSpec parse_workload(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw DataError(std::string("workload file: ") + e.what());
  }
  WorkloadSpec spec;
  std::map<std::string, const pt::ptree*> functions_sections;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      const std::string where = "workload key";
      if (key == "seed") spec.seed = detail::ptree_value<std::uint64_t>(tree, key, where);
      else if (key == "n_normal_train") spec.n_normal_train = detail::ptree_value<std::size_t>(tree, key, where);
      else if (key == "n_normal_fit") spec.n_normal_fit = detail::ptree_value<std::size_t>(tree, key, where);
      else if (key == "n_faulty") spec.n_faulty = detail::ptree_value<std::size_t>(tree, key, where);
      else if (key == "latency_sigma") spec.latency_sigma = detail::ptree_value<double>(tree, key, where);
      else if (key == "metric_sigma") spec.metric_sigma = detail::ptree_value<double>(tree, key, where);
      else throw DataError("unknown workload key \"" + key + "\"");
    } else if (key.starts_with("request_type:")) {
      RequestTypeSpec t;
      t.name = key.substr(13);
      const std::string where = "[" + key + "]";
      t.functions = detail::split_list(detail::ptree_value<std::string>(node, "functions", where));
      std::map<std::string, int> index;
      for (std::size_t i = 0; i < t.functions.size(); ++i) index[t.functions[i]] = static_cast<int>(i);
      for (const auto& call : detail::split_list(node.get<std::string>("calls", ""))) {
        const auto arrow = call.find('>');
        if (arrow == std::string::npos) throw DataError(where + ": call \"" + call + "\" must look like caller>callee");
        auto a = index.find(call.substr(0, arrow));
        auto b = index.find(call.substr(arrow + 1));
        if (a == index.end() || b == index.end()) throw DataError(where + ": call \"" + call + "\" names an unknown function");
        t.calls.emplace_back(a->second, b->second);
      }
      if (node.count("weight")) t.weight = detail::ptree_value<double>(node, "weight", where);
      spec.request_types.push_back(std::move(t));
    } else if (key.starts_with("function:")) {
      const std::string fn = key.substr(9);
      const std::string where = "[" + key + "]";
      FunctionProfile p = spec.profile(fn);
      const std::array<const char*, 4> names = {"deployment_ms", "replicaset_ms", "pod_ms", "function_ms"};
      for (std::size_t k = 0; k < 4; ++k)
        if (node.count(names[k])) p.latency_ms[k] = detail::ptree_value<double>(node, names[k], where);
      if (node.count("cpu")) p.cpu = detail::ptree_value<double>(node, "cpu", where);
      if (node.count("memory_mb")) p.memory_bytes = detail::ptree_value<double>(node, "memory_mb", where) * 1024.0 * 1024.0;
      spec.profiles[fn] = p;
    } else if (key == "fault_mix") {
      for (const auto& [cat, _] : node) {
        auto c = parse_fault_category(cat);
        if (!c) throw DataError("[fault_mix]: unknown fault category \"" + cat + "\"");
        spec.fault_mix[*c] = detail::ptree_value<double>(node, cat, "[fault_mix]");
      }
    } else {
      throw DataError("unknown workload section [" + key + "]");
    }
  }
  if (spec.request_types.empty()) spec.request_types = WorkloadSpec::default_spec().request_types;
  spec.validate();
  return spec;
}

/// Canonical text form; parse_workload(to_text(s)) == s.
inline std::string to_text(const WorkloadSpec& spec) {
  std::ostringstream out;
  out << "seed = " << spec.seed << '\n'
      << "n_normal_train = " << spec.n_normal_train << '\n'
      << "n_normal_fit = " << spec.n_normal_fit << '\n'
      << "n_faulty = " << spec.n_faulty << '\n'
      << "latency_sigma = " << detail::format_double(spec.latency_sigma) << '\n'
      << "metric_sigma = " << detail::format_double(spec.metric_sigma) << '\n';
  for (const auto& t : spec.request_types) {
    out << "\n[request_type:" << t.name << "]\nfunctions = ";
    for (std::size_t i = 0; i < t.functions.size(); ++i) out << (i ? ", " : "") << t.functions[i];
    out << "\ncalls = ";
    for (std::size_t i = 0; i < t.calls.size(); ++i)
      out << (i ? ", " : "") << t.functions[static_cast<std::size_t>(t.calls[i].first)] << '>'
          << t.functions[static_cast<std::size_t>(t.calls[i].second)];
    out << "\nweight = " << detail::format_double(t.weight) << '\n';
  }
  for (const auto& [fn, p] : spec.profiles) {
    out << "\n[function:" << fn << "]\n"
        << "deployment_ms = " << detail::format_double(p.latency_ms[0]) << '\n'
        << "replicaset_ms = " << detail::format_double(p.latency_ms[1]) << '\n'
        << "pod_ms = " << detail::format_double(p.latency_ms[2]) << '\n'
        << "function_ms = " << detail::format_double(p.latency_ms[3]) << '\n'
        << "cpu = " << detail::format_double(p.cpu) << '\n'
        << "memory_mb = " << detail::format_double(p.memory_bytes / (1024.0 * 1024.0)) << '\n';
  }
  if (!spec.fault_mix.empty()) {
    out << "\n[fault_mix]\n";
    for (const auto& [c, w] : spec.fault_mix) out << to_string(c) << " = " << detail::format_double(w) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Request generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::string random_suffix(CounterRng& rng, std::size_t len) {
  static constexpr std::string_view alphabet = "bcdfghjklmnpqrstvwxz2456789";
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return s;
}

/// Per-function names that vary from request to request.
struct InstanceNames {
  std::string replicaset;
  std::string pod;
  std::string node;
  std::string image;
};

class RequestWriter {
 public:
  RequestWriter(const WorkloadSpec& spec, std::string trace_id, CounterRng& rng)
      : spec_(spec), rng_(rng) {
    bundle_.trace_id = std::move(trace_id);
  }

  void function_lifecycle(const RequestTypeSpec& type, int fn_index, const std::string* caller_span, std::int64_t& t) {
    const auto& fn = type.functions[static_cast<std::size_t>(fn_index)];
    const auto profile = spec_.profile(fn);
    InstanceNames names;
    names.replicaset = fn + "-" + random_suffix(rng_, 10);
    names.pod = names.replicaset + "-" + random_suffix(rng_, 5);
    names.node = "node-" + std::to_string(1 + rng_.below(3));
    names.image = "\"registry.local/serving/" + fn + ":v1\"";

    std::optional<std::string> parent = caller_span ? std::optional<std::string>(*caller_span) : std::nullopt;
    for (auto kind : {NodeKind::deployment, NodeKind::replicaset, NodeKind::pod, NodeKind::function}) {
      const double base_ms = profile.latency_ms[static_cast<std::size_t>(kind)];
      const auto dur = static_cast<std::int64_t>(std::llround(base_ms * 1000.0 * std::exp(spec_.latency_sigma * rng_.normal())));
      Span s;
      s.trace_id = bundle_.trace_id;
      s.span_id = bundle_.trace_id + "-s" + std::to_string(bundle_.spans.size());
      s.side = side_of(kind);
      s.node_kind = kind;
      s.node_name = fn;
      s.start_us = t;
      s.duration_us = std::max<std::int64_t>(dur, 1);
      if (kind == NodeKind::function) {
        s.parent_span_id = caller_span ? std::optional<std::string>(*caller_span) : std::nullopt;
        if (!caller_span) s.request_params = {{"http.host", type.name}, {"http.method", "POST"}};
      } else {
        s.parent_span_id = parent;
      }
      bundle_.spans.push_back(s);
      normal_logs(kind, fn, names, s);
      if (kind != NodeKind::function) parent = s.span_id;
      t = s.end_us() + static_cast<std::int64_t>(rng_.uniform(100.0, 2000.0));
    }
    const std::string app_span = bundle_.spans.back().span_id;
    const double cpu = std::max(0.0, profile.cpu * (1.0 + spec_.metric_sigma * rng_.normal()));
    const double mem = std::max(0.0, profile.memory_bytes * (1.0 + spec_.metric_sigma * rng_.normal()));
    bundle_.metrics.push_back({bundle_.trace_id, fn, MetricChannel::cpu, cpu});
    bundle_.metrics.push_back({bundle_.trace_id, fn, MetricChannel::memory, std::round(mem)});

    for (auto [caller, callee] : type.calls)
      if (caller == fn_index) function_lifecycle(type, callee, &app_span, t);
  }

  RequestBundle take() { return std::move(bundle_); }

 private:
  void log(const Span& s, LogStream stream, double position, std::string message) {
    const auto ts = s.start_us + static_cast<std::int64_t>(position * static_cast<double>(s.duration_us));
    bundle_.logs.push_back({bundle_.trace_id, s.node_name, stream, ts, std::move(message)});
  }

  void normal_logs(NodeKind kind, const std::string& fn, const InstanceNames& n, const Span& s) {
    switch (kind) {
      case NodeKind::deployment:
        log(s, LogStream::audit, 0.1,
            "create deployments " + fn + " in namespace default by user system:serviceaccount:knative-serving:controller");
        log(s, LogStream::event, 0.8, "Scaled up replica set " + n.replicaset + " to 1");
        break;
      case NodeKind::replicaset:
        log(s, LogStream::audit, 0.1,
            "update replicasets " + n.replicaset + " status by user system:serviceaccount:kube-system:replicaset-controller");
        log(s, LogStream::event, 0.8, "Created pod: " + n.pod);
        break;
      case NodeKind::pod:
        log(s, LogStream::audit, 0.05, "create pods " + n.pod + " binding by user system:kube-scheduler");
        log(s, LogStream::event, 0.1, "Successfully assigned default/" + n.pod + " to " + n.node);
        if (rng_.uniform() < 0.5) {
          log(s, LogStream::event, 0.2, "Container image " + n.image + " already present on machine");
        } else {
          log(s, LogStream::event, 0.2, "Pulling image " + n.image);
          log(s, LogStream::event, 0.6,
              "Successfully pulled image " + n.image + " in " + std::to_string(200 + rng_.below(800)) + " ms");
        }
        log(s, LogStream::event, 0.8, "Created container user-container");
        log(s, LogStream::event, 0.9, "Started container user-container");
        break;
      case NodeKind::function: {
        const std::string req = random_suffix(rng_, 12);
        log(s, LogStream::app, 0.05, "received request " + req + " path /" + fn);
        log(s, LogStream::app, 0.95,
            "request " + req + " completed with status 200 in " + std::to_string(s.duration_us / 1000) + " ms");
        break;
      }
    }
  }

  const WorkloadSpec& spec_;
  CounterRng& rng_;
  RequestBundle bundle_;
};

inline const RequestTypeSpec& pick_type(const WorkloadSpec& spec, CounterRng& rng) {
  double total = 0.0;
  for (const auto& t : spec.request_types) total += t.weight;
  double u = rng.uniform() * total;
  for (const auto& t : spec.request_types) {
    if (u < t.weight) return t;
    u -= t.weight;
  }
  return spec.request_types.back();
}

inline std::string trace_name(std::string_view split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%06zu", index);
  return std::string(split) + buf;
}

}  // namespace detail

/// Deterministic epoch for a trace index; traces are spaced 10 s apart.
inline std::int64_t trace_start_us(std::size_t index) {
  return 1'700'000'000'000'000LL + static_cast<std::int64_t>(index) * 10'000'000LL;
}

/// One fault-free request of `type`, drawn from the counter stream of `rng`.
inline RequestBundle generate_request(const WorkloadSpec& spec, const RequestTypeSpec& type, const std::string& trace_id,
                                      CounterRng& rng, std::int64_t start_us) {
  detail::RequestWriter writer(spec, trace_id, rng);
  std::int64_t t = start_us;
  writer.function_lifecycle(type, 0, nullptr, t);
  return writer.take();
}

/// `count` normal bundles with trace ids "<split>-000000", ... Each trace has
/// its own counter stream keyed by (seed, split, index).
inline std::vector<RequestBundle> generate_normal(const WorkloadSpec& spec, std::string_view split, std::size_t count) {
  std::vector<RequestBundle> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(spec.seed, std::string(split) + "/" + std::to_string(i));
    const auto& type = detail::pick_type(spec, rng);
    out.push_back(generate_request(spec, type, detail::trace_name(split, i), rng, trace_start_us(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fault injection
// ---------------------------------------------------------------------------

struct FaultSpec {
  FaultCategory category = FaultCategory::code_defect;
  std::string function;  // target function within the bundle's request
  /// Primary multiplier; 0 draws from the category's default range.
  double magnitude = 0.0;
};

/// Default multiplier range of the primary perturbation.
inline std::pair<double, double> default_magnitude_range(FaultCategory c) {
  switch (c) {
    case FaultCategory::kube_scheduler_delay:
    case FaultCategory::kubelet_delay: return {5.0, 20.0};
    case FaultCategory::code_defect: return {3.0, 10.0};
    case FaultCategory::memory_stress:
    case FaultCategory::cpu_contention: return {3.0, 8.0};
    default: return {3.0, 6.0};
  }
}

namespace detail {

inline Span& find_span(RequestBundle& b, NodeKind kind, const std::string& fn) {
  for (auto& s : b.spans)
    if (s.node_kind == kind && s.node_name == fn) return s;
  throw DataError("fault target " + std::string(to_string(kind)) + "/" + fn + " is not in trace " + b.trace_id);
}

/// Scales one span's duration and shifts everything that started after it.
inline void stretch_span(RequestBundle& b, NodeKind kind, const std::string& fn, double factor) {
  Span& target = find_span(b, kind, fn);
  const std::int64_t old_end = target.end_us();
  const auto new_duration = static_cast<std::int64_t>(std::llround(static_cast<double>(target.duration_us) * factor));
  const std::int64_t delta = new_duration - target.duration_us;
  for (auto& s : b.spans)
    if (&s != &target && s.start_us >= old_end) s.start_us += delta;
  for (auto& r : b.logs)
    if (r.timestamp_us >= old_end) r.timestamp_us += delta;
  target.duration_us = new_duration;
}

inline void add_event(RequestBundle& b, NodeKind kind, const std::string& fn, double position, std::string message) {
  const Span& s = find_span(b, kind, fn);
  const auto ts = s.start_us + static_cast<std::int64_t>(position * static_cast<double>(s.duration_us));
  b.logs.push_back({b.trace_id, fn, LogStream::event, ts, std::move(message)});
}

inline void scale_metric(RequestBundle& b, MetricChannel channel, const std::string& fn, double factor) {
  for (auto& m : b.metrics)
    if (m.node_name == fn && m.channel == channel) {
      m.value *= factor;
      return;
    }
  throw DataError("fault target function " + fn + " has no " + to_string(channel) + " sample");
}

}  // namespace detail

/// Perturbs the channels associated with the category and labels the
/// affected node at its lifecycle stage.
inline RequestBundle inject_fault(RequestBundle bundle, const FaultSpec& fault, std::uint64_t seed) {
  bool present = std::any_of(bundle.spans.begin(), bundle.spans.end(), [&](const Span& s) {
    return s.node_kind == NodeKind::function && s.node_name == fault.function;
  });
  if (!present) throw DataError("fault target function \"" + fault.function + "\" is not in trace " + bundle.trace_id);
  CounterRng rng(seed, "fault/" + bundle.trace_id);
  const auto [lo, hi] = default_magnitude_range(fault.category);
  const double m = fault.magnitude > 0.0 ? fault.magnitude : rng.uniform(lo, hi);
  const auto& fn = fault.function;
  const std::string pod = fn + "-" + detail::random_suffix(rng, 10) + "-" + detail::random_suffix(rng, 5);

  switch (fault.category) {
    case FaultCategory::pod_failure:
      detail::stretch_span(bundle, NodeKind::pod, fn, m);
      detail::add_event(bundle, NodeKind::pod, fn, 0.5, "Back-off restarting failed container user-container in pod " + pod);
      detail::add_event(bundle, NodeKind::pod, fn, 0.55, "Liveness probe failed: HTTP probe failed with statuscode: 503");
      break;
    case FaultCategory::replicaset_failure:
      detail::stretch_span(bundle, NodeKind::replicaset, fn, m);
      detail::add_event(bundle, NodeKind::replicaset, fn, 0.4,
                        "Error creating: pods \"" + pod + "\" is forbidden: exceeded quota: compute-resources");
      detail::add_event(bundle, NodeKind::replicaset, fn, 0.45, "FailedCreate replicaset controller could not create pod " + pod);
      break;
    case FaultCategory::kube_scheduler_delay:
      detail::stretch_span(bundle, NodeKind::deployment, fn, m);
      detail::add_event(bundle, NodeKind::deployment, fn, 0.5,
                        "FailedScheduling 0/3 nodes are available: 3 Insufficient cpu, scheduler queue backlog");
      break;
    case FaultCategory::kubelet_delay:
      detail::stretch_span(bundle, NodeKind::pod, fn, m);
      detail::add_event(bundle, NodeKind::pod, fn, 0.5, "Timed out waiting for kubelet to sync pod " + pod);
      detail::add_event(bundle, NodeKind::pod, fn, 0.55, "PLEG is not healthy: pleg was last seen active 3m0s ago");
      break;
    case FaultCategory::network_failure:
      detail::stretch_span(bundle, NodeKind::deployment, fn, rng.uniform(1.2, 1.5));
      detail::stretch_span(bundle, NodeKind::replicaset, fn, rng.uniform(1.2, 1.5));
      detail::stretch_span(bundle, NodeKind::pod, fn, m);
      detail::add_event(bundle, NodeKind::pod, fn, 0.3,
                        "Failed to pull image \"registry.local/serving/" + fn + ":v1\": dial tcp 10.96.0.12:443: i/o timeout");
      detail::add_event(bundle, NodeKind::pod, fn, 0.35, "Error: ErrImagePull");
      break;
    case FaultCategory::code_defect:
      detail::stretch_span(bundle, NodeKind::function, fn, m);
      break;
    case FaultCategory::memory_stress:
      detail::scale_metric(bundle, MetricChannel::memory, fn, m);
      break;
    case FaultCategory::cpu_contention:
      detail::scale_metric(bundle, MetricChannel::cpu, fn, m);
      break;
  }
  std::stable_sort(bundle.logs.begin(), bundle.logs.end(),
                   [](const LogRecord& a, const LogRecord& b) { return a.timestamp_us < b.timestamp_us; });
  const NodeRef label{fault_label_kind(fault.category), fn};
  if (!bundle.ground_truth) bundle.ground_truth.emplace();
  if (std::find(bundle.ground_truth->begin(), bundle.ground_truth->end(), label) == bundle.ground_truth->end())
    bundle.ground_truth->push_back(label);
  return bundle;
}

struct GeneratedDataset {
  std::vector<RequestBundle> train;
  std::vector<RequestBundle> fit;
  std::vector<RequestBundle> faulty;
  std::vector<FaultLabel> labels;  // parallel to `faulty`
};

/// Category per faulty trace: largest-remainder allocation of the mix, then a
/// seeded shuffle, so categories are balanced exactly as the mix prescribes.
inline std::vector<FaultCategory> allocate_faults(const WorkloadSpec& spec) {
  const auto mix = spec.effective_mix();
  double total = 0.0;
  for (auto [_, w] : mix) total += w;
  std::vector<std::pair<double, FaultCategory>> remainders;
  std::vector<FaultCategory> out;
  for (auto [c, w] : mix) {
    const double exact = static_cast<double>(spec.n_faulty) * w / total;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    out.insert(out.end(), whole, c);
    remainders.emplace_back(exact - static_cast<double>(whole), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; out.size() < spec.n_faulty; ++i) out.push_back(remainders[i % remainders.size()].second);
  CounterRng rng(spec.seed, "fault-allocation");
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  return out;
}

inline GeneratedDataset generate_in_memory(const WorkloadSpec& spec) {
  spec.validate();
  GeneratedDataset ds;
  ds.train = generate_normal(spec, "train", spec.n_normal_train);
  ds.fit = generate_normal(spec, "fit", spec.n_normal_fit);
  const auto categories = allocate_faults(spec);
  for (std::size_t i = 0; i < spec.n_faulty; ++i) {
    CounterRng rng(spec.seed, "faulty/" + std::to_string(i));
    const auto& type = detail::pick_type(spec, rng);
    const auto trace_id = detail::trace_name("faulty", i);
    auto bundle = generate_request(spec, type, trace_id, rng, trace_start_us(i));
    FaultSpec fault{categories[i], type.functions[rng.below(type.functions.size())], 0.0};
    bundle = inject_fault(std::move(bundle), fault, spec.seed);
    ds.labels.push_back({trace_id, *bundle.ground_truth, to_string(fault.category)});
    ds.faulty.push_back(std::move(bundle));
  }
  return ds;
}

/// Writes the dataset directory layout plus manifest.json (spec text, its
/// hash, seed and file counts).
inline nlohmann::json generate_dataset(const WorkloadSpec& spec, const std::filesystem::path& root) {
  const auto ds = generate_in_memory(spec);
  for (const auto& b : ds.train) write_bundle(root / "normal" / "train", b);
  for (const auto& b : ds.fit) write_bundle(root / "normal" / "fit", b);
  for (const auto& b : ds.faulty) write_bundle(root / "faulty", b);
  std::string labels;
  for (const auto& l : ds.labels) labels += to_json(l).dump() + "\n";
  write_file_atomic(root / "faulty" / "labels.jsonl", labels);
  std::filesystem::create_directories(root / "normal" / "train");
  std::filesystem::create_directories(root / "normal" / "fit");
  std::filesystem::create_directories(root / "faulty");

  const auto text = to_text(spec);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  nlohmann::json manifest = {{"seed", spec.seed},
                             {"spec_hash", hash},
                             {"workload", text},
                             {"files",
                              {{"normal/train", ds.train.size()},
                               {"normal/fit", ds.fit.size()},
                               {"faulty", ds.faulty.size()}}}};
  write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace lrca
