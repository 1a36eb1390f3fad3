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

#include <json.hpp>

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace lrca {

enum class Side { platform, application };
enum class NodeKind { deployment, replicaset, pod, function };
enum class LogStream { audit, event, app };
enum class MetricChannel { cpu, memory };

inline const char* to_string(Side s) { return s == Side::platform ? "platform" : "application"; }

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::deployment: return "deployment";
    case NodeKind::replicaset: return "replicaset";
    case NodeKind::pod: return "pod";
    case NodeKind::function: return "function";
  }
  return "?";
}

inline const char* to_string(LogStream s) {
  switch (s) {
    case LogStream::audit: return "audit";
    case LogStream::event: return "event";
    case LogStream::app: return "app";
  }
  return "?";
}

inline const char* to_string(MetricChannel c) { return c == MetricChannel::cpu ? "cpu" : "memory"; }

inline std::optional<Side> parse_side(std::string_view s) {
  if (s == "platform") return Side::platform;
  if (s == "application") return Side::application;
  return std::nullopt;
}

inline std::optional<NodeKind> parse_node_kind(std::string_view s) {
  if (s == "deployment") return NodeKind::deployment;
  if (s == "replicaset") return NodeKind::replicaset;
  if (s == "pod") return NodeKind::pod;
  if (s == "function") return NodeKind::function;
  return std::nullopt;
}

inline std::optional<LogStream> parse_log_stream(std::string_view s) {
  if (s == "audit") return LogStream::audit;
  if (s == "event") return LogStream::event;
  if (s == "app") return LogStream::app;
  return std::nullopt;
}

inline std::optional<MetricChannel> parse_metric_channel(std::string_view s) {
  if (s == "cpu") return MetricChannel::cpu;
  if (s == "memory") return MetricChannel::memory;
  return std::nullopt;
}

inline bool is_platform_kind(NodeKind k) { return k != NodeKind::function; }
inline Side side_of(NodeKind k) { return is_platform_kind(k) ? Side::platform : Side::application; }

struct Span {
  std::string trace_id;
  std::string span_id;
  std::optional<std::string> parent_span_id;
  Side side = Side::application;
  NodeKind node_kind = NodeKind::function;
  std::string node_name;
  std::int64_t start_us = 0;
  std::int64_t duration_us = 0;
  std::map<std::string, std::string> request_params;

  std::int64_t end_us() const { return start_us + duration_us; }
  bool operator==(const Span&) const = default;
};

struct LogRecord {
  std::string trace_id;
  std::string node_name;
  LogStream stream = LogStream::event;
  std::int64_t timestamp_us = 0;
  std::string message;

  bool operator==(const LogRecord&) const = default;
};

struct MetricSample {
  std::string trace_id;
  std::string node_name;
  MetricChannel channel = MetricChannel::cpu;
  double value = 0.0;

  bool operator==(const MetricSample&) const = default;
};

/// Root-cause label: a node is addressed by (kind, name) within one trace.
struct NodeRef {
  NodeKind kind = NodeKind::function;
  std::string name;

  auto operator<=>(const NodeRef&) const = default;
};

struct RequestBundle {
  std::string trace_id;
  std::vector<Span> spans;
  std::vector<LogRecord> logs;
  std::vector<MetricSample> metrics;
  std::optional<std::vector<NodeRef>> ground_truth;

  bool is_faulty() const { return ground_truth.has_value(); }
};

// ---------------------------------------------------------------------------
// JSON line codecs
// ---------------------------------------------------------------------------

namespace detail {

inline DataError line_error(std::size_t line, const std::string& what) {
  return DataError("line " + std::to_string(line) + ": " + what);
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) throw line_error(line, std::string("missing required field \"") + field + "\"");
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* field, std::size_t line) {
  const auto& v = require(obj, field, line);
  if (!v.is_string()) throw line_error(line, std::string("field \"") + field + "\" must be a string");
  return v.get<std::string>();
}

inline std::int64_t require_int(const nlohmann::json& obj, const char* field, std::size_t line) {
  const auto& v = require(obj, field, line);
  if (!v.is_number_integer()) throw line_error(line, std::string("field \"") + field + "\" must be an integer");
  return v.get<std::int64_t>();
}

template <typename Parse>
auto require_enum(const nlohmann::json& obj, const char* field, std::size_t line, Parse parse) {
  auto text = require_string(obj, field, line);
  auto value = parse(text);
  if (!value) throw line_error(line, std::string("field \"") + field + "\" has unknown value \"" + text + "\"");
  return *value;
}

inline nlohmann::json parse_json_line(const std::string& text, std::size_t line) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw line_error(line, std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw line_error(line, "expected a JSON object");
  return obj;
}

/// Calls `fn(obj, line_number)` for every non-blank line.
template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_json_line(text, line), line);
  }
}

}  // namespace detail

inline Span span_from_json(const nlohmann::json& obj, std::size_t line) {
  using namespace detail;
  Span s;
  s.trace_id = require_string(obj, "trace_id", line);
  s.span_id = require_string(obj, "span_id", line);
  if (auto it = obj.find("parent_span_id"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw line_error(line, "field \"parent_span_id\" must be a string");
    s.parent_span_id = it->get<std::string>();
  }
  s.side = require_enum(obj, "side", line, parse_side);
  s.node_kind = require_enum(obj, "node_kind", line, parse_node_kind);
  s.node_name = require_string(obj, "node_name", line);
  s.start_us = require_int(obj, "start_us", line);
  s.duration_us = require_int(obj, "duration_us", line);
  if (s.duration_us < 0) throw line_error(line, "duration_us must be >= 0");
  if (side_of(s.node_kind) != s.side)
    throw line_error(line, std::string("node_kind \"") + to_string(s.node_kind) + "\" is not valid on the " +
                               to_string(s.side) + " side");
  if (auto it = obj.find("request_params"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw line_error(line, "field \"request_params\" must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw line_error(line, "request_params values must be strings");
      s.request_params.emplace(k, v.get<std::string>());
    }
  }
  return s;
}

inline LogRecord log_from_json(const nlohmann::json& obj, std::size_t line) {
  using namespace detail;
  LogRecord r;
  r.trace_id = require_string(obj, "trace_id", line);
  r.node_name = require_string(obj, "node_name", line);
  r.stream = require_enum(obj, "stream", line, parse_log_stream);
  r.timestamp_us = require_int(obj, "timestamp_us", line);
  r.message = require_string(obj, "message", line);
  if (r.message.empty()) throw line_error(line, "message must be non-empty");
  return r;
}

inline MetricSample metric_from_json(const nlohmann::json& obj, std::size_t line) {
  using namespace detail;
  MetricSample m;
  m.trace_id = require_string(obj, "trace_id", line);
  m.node_name = require_string(obj, "node_name", line);
  m.channel = require_enum(obj, "channel", line, parse_metric_channel);
  const auto& v = require(obj, "value", line);
  if (!v.is_number()) throw line_error(line, "field \"value\" must be a number");
  m.value = v.get<double>();
  if (!std::isfinite(m.value)) throw line_error(line, "metric value must be finite");
  if (m.value < 0.0) throw line_error(line, "negative metric value");
  return m;
}

inline nlohmann::json to_json(const Span& s) {
  nlohmann::json j = {{"trace_id", s.trace_id},       {"span_id", s.span_id},
                      {"side", to_string(s.side)},    {"node_kind", to_string(s.node_kind)},
                      {"node_name", s.node_name},     {"start_us", s.start_us},
                      {"duration_us", s.duration_us}};
  if (s.parent_span_id) j["parent_span_id"] = *s.parent_span_id;
  if (!s.request_params.empty()) j["request_params"] = s.request_params;
  return j;
}

inline nlohmann::json to_json(const LogRecord& r) {
  return {{"trace_id", r.trace_id},
          {"node_name", r.node_name},
          {"stream", to_string(r.stream)},
          {"timestamp_us", r.timestamp_us},
          {"message", r.message}};
}

inline nlohmann::json to_json(const MetricSample& m) {
  return {{"trace_id", m.trace_id}, {"node_name", m.node_name}, {"channel", to_string(m.channel)}, {"value", m.value}};
}

template <typename Record>
std::string to_jsonl(const std::vector<Record>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Span> parse_spans(std::istream& in) {
  std::vector<Span> out;
  detail::for_each_json_line(in, [&](const nlohmann::json& o, std::size_t line) { out.push_back(span_from_json(o, line)); });
  return out;
}

inline std::vector<LogRecord> parse_logs(std::istream& in) {
  std::vector<LogRecord> out;
  detail::for_each_json_line(in, [&](const nlohmann::json& o, std::size_t line) { out.push_back(log_from_json(o, line)); });
  return out;
}

inline std::vector<MetricSample> parse_metrics(std::istream& in) {
  std::vector<MetricSample> out;
  detail::for_each_json_line(in,
                             [&](const nlohmann::json& o, std::size_t line) { out.push_back(metric_from_json(o, line)); });
  return out;
}

namespace detail {

template <typename Parse>
auto parse_file(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline std::vector<Span> parse_spans(const std::filesystem::path& path) {
  return detail::parse_file(path, [](std::istream& in) { return parse_spans(in); });
}
inline std::vector<LogRecord> parse_logs(const std::filesystem::path& path) {
  return detail::parse_file(path, [](std::istream& in) { return parse_logs(in); });
}
inline std::vector<MetricSample> parse_metrics(const std::filesystem::path& path) {
  return detail::parse_file(path, [](std::istream& in) { return parse_metrics(in); });
}

/// Partitions records by trace_id. Output is sorted by trace_id; records keep
/// their input order within a bundle.
inline std::vector<RequestBundle> group_into_bundles(std::vector<Span> spans, std::vector<LogRecord> logs,
                                                     std::vector<MetricSample> metrics) {
  std::map<std::string, RequestBundle> by_trace;
  std::map<std::string, std::set<std::string>> span_ids;
  for (auto& s : spans) {
    if (!span_ids[s.trace_id].insert(s.span_id).second)
      throw DataError("duplicate span_id \"" + s.span_id + "\" in trace " + s.trace_id);
    auto& b = by_trace[s.trace_id];
    b.trace_id = s.trace_id;
    b.spans.push_back(std::move(s));
  }
  for (auto& r : logs) {
    auto it = by_trace.find(r.trace_id);
    if (it == by_trace.end()) throw DataError("log record references trace without spans: " + r.trace_id);
    it->second.logs.push_back(std::move(r));
  }
  for (auto& m : metrics) {
    auto it = by_trace.find(m.trace_id);
    if (it == by_trace.end()) throw DataError("metric sample references trace without spans: " + m.trace_id);
    it->second.metrics.push_back(std::move(m));
  }
  std::vector<RequestBundle> out;
  out.reserve(by_trace.size());
  for (auto& [_, b] : by_trace) out.push_back(std::move(b));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout
//   <root>/normal/{train,fit}/<trace_id>.{spans,logs,metrics}.jsonl
//   <root>/faulty/<trace_id>.{spans,logs,metrics}.jsonl
//   <root>/faulty/labels.jsonl
// ---------------------------------------------------------------------------

struct FaultLabel {
  std::string trace_id;
  std::vector<NodeRef> root_causes;
  std::string category;
};

inline nlohmann::json to_json(const FaultLabel& l) {
  nlohmann::json causes = nlohmann::json::array();
  for (const auto& r : l.root_causes) causes.push_back({{"node_kind", to_string(r.kind)}, {"node_name", r.name}});
  nlohmann::json j = {{"trace_id", l.trace_id}, {"root_causes", causes}};
  if (!l.category.empty()) j["category"] = l.category;
  return j;
}

inline std::vector<FaultLabel> parse_labels(std::istream& in) {
  using namespace detail;
  std::vector<FaultLabel> out;
  for_each_json_line(in, [&](const nlohmann::json& o, std::size_t line) {
    FaultLabel l;
    l.trace_id = require_string(o, "trace_id", line);
    const auto& causes = require(o, "root_causes", line);
    if (!causes.is_array() || causes.empty()) throw line_error(line, "root_causes must be a non-empty array");
    for (const auto& c : causes) {
      if (!c.is_object()) throw line_error(line, "root cause entries must be objects");
      l.root_causes.push_back({require_enum(c, "node_kind", line, parse_node_kind), require_string(c, "node_name", line)});
    }
    if (auto it = o.find("category"); it != o.end() && it->is_string()) l.category = it->get<std::string>();
    out.push_back(std::move(l));
  });
  return out;
}

inline std::vector<std::string> list_trace_ids(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  static constexpr std::string_view suffix = ".spans.jsonl";
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::vector<RequestBundle> read_traces(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
  std::vector<Span> spans;
  std::vector<LogRecord> logs;
  std::vector<MetricSample> metrics;
  for (const auto& id : ids) {
    auto s = parse_spans(dir / (id + ".spans.jsonl"));
    auto l = parse_logs(dir / (id + ".logs.jsonl"));
    auto m = parse_metrics(dir / (id + ".metrics.jsonl"));
    spans.insert(spans.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    logs.insert(logs.end(), std::make_move_iterator(l.begin()), std::make_move_iterator(l.end()));
    metrics.insert(metrics.end(), std::make_move_iterator(m.begin()), std::make_move_iterator(m.end()));
  }
  return group_into_bundles(std::move(spans), std::move(logs), std::move(metrics));
}

/// Reads every trace in one split directory. When `labels.jsonl` is present
/// in that directory, each bundle's ground truth is attached and every trace
/// must be labeled.
inline std::vector<RequestBundle> read_split(const std::filesystem::path& dir) {
  auto bundles = read_traces(dir, list_trace_ids(dir));
  const auto labels_path = dir / "labels.jsonl";
  if (std::filesystem::exists(labels_path)) {
    std::map<std::string, std::vector<NodeRef>> labels;
    auto parsed = detail::parse_file(labels_path, [](std::istream& in) { return parse_labels(in); });
    for (auto& l : parsed) labels[l.trace_id] = std::move(l.root_causes);
    for (auto& b : bundles) {
      auto it = labels.find(b.trace_id);
      if (it == labels.end()) throw DataError("trace " + b.trace_id + " has no entry in " + labels_path.string());
      b.ground_truth = it->second;
    }
  }
  return bundles;
}

inline void write_bundle(const std::filesystem::path& dir, const RequestBundle& b) {
  write_file_atomic(dir / (b.trace_id + ".spans.jsonl"), to_jsonl(b.spans));
  write_file_atomic(dir / (b.trace_id + ".logs.jsonl"), to_jsonl(b.logs));
  write_file_atomic(dir / (b.trace_id + ".metrics.jsonl"), to_jsonl(b.metrics));
}

}  // namespace lrca
