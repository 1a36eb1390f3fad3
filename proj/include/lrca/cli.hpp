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
#include "lrca/eval.hpp"
#include "lrca/faultgen.hpp"
#include "lrca/model_io.hpp"
#include "lrca/pipeline.hpp"
#include "lrca/rca.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace lrca::cli {

namespace fs = std::filesystem;

/// Effective settings of one invocation: defaults, then the run-config file,
/// then command-line flags.
struct RunConfig {
  fs::path dataset;
  fs::path model;
  fs::path store;
  fs::path out;
  fs::path workload;
  std::optional<std::uint64_t> seed;
  std::string trace;
  std::string split = "faulty";
  std::vector<std::string> methods = {"zscore", "direct"};
  FeatureConfig features;
  TrainConfig train;

  nlohmann::json to_json() const {
    return {{"dataset", dataset.string()},
            {"model", model.string()},
            {"store", store.string()},
            {"out", out.string()},
            {"workload", workload.string()},
            {"seed", seed ? nlohmann::json(*seed) : nlohmann::json()},
            {"methods", methods},
            {"d_log", features.d_log},
            {"p", features.p},
            {"d", features.d},
            {"classification_keys", features.classification_keys},
            {"feature_seed", features.seed},
            {"epochs", train.epochs},
            {"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"hidden_dim", train.hidden_dim},
            {"train_seed", train.seed},
            {"leaky_slope", train.leaky_slope}};
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

/// Applies `key = value` lines of a run-config file onto `cfg`.
inline void apply_config_file(RunConfig& cfg, const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(read_text_file(path));
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  for (const auto& [key, node] : tree) {
    if (!node.empty()) throw UsageError("config " + path.string() + ": sections are not supported ([" + key + "])");
    const std::string v = node.data();
    try {
      if (key == "dataset") cfg.dataset = v;
      else if (key == "model") cfg.model = v;
      else if (key == "store") cfg.store = v;
      else if (key == "out") cfg.out = v;
      else if (key == "workload") cfg.workload = v;
      else if (key == "seed") cfg.seed = std::stoull(v);
      else if (key == "methods") cfg.methods = split_csv(v);
      else if (key == "d_log") cfg.features.d_log = std::stoi(v);
      else if (key == "p") cfg.features.p = std::stoi(v);
      else if (key == "d") cfg.features.d = std::stoi(v);
      else if (key == "classification_keys") cfg.features.classification_keys = split_csv(v);
      else if (key == "epochs") cfg.train.epochs = std::stoi(v);
      else if (key == "learning_rate") cfg.train.learning_rate = std::stod(v);
      else if (key == "batch_size") cfg.train.batch_size = std::stoi(v);
      else if (key == "hidden_dim") cfg.train.hidden_dim = std::stoi(v);
      else if (key == "leaky_slope") cfg.train.leaky_slope = std::stod(v);
      else throw UsageError("config " + path.string() + ": unknown key \"" + key + "\"");
    } catch (const std::logic_error&) {
      throw UsageError("config " + path.string() + ": bad value for \"" + key + "\"");
    }
  }
}

inline void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string("missing ") + flag + " (flag or config file)");
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_manifest(const fs::path& path, const std::string& command, const RunConfig& cfg,
                           nlohmann::json extra) {
  nlohmann::json m = {{"command", command}, {"config", cfg.to_json()}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_file_atomic(path, m.dump(2) + "\n");
}

inline fs::path sidecar(const fs::path& p) {
  auto s = p;
  s += ".manifest.json";
  return s;
}

inline std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  if (names.empty()) throw UsageError("--methods needs at least one method");
  std::vector<Method> out;
  for (const auto& n : names) {
    auto m = parse_method(n);
    if (!m) throw UsageError("unknown method \"" + n + "\" (expected zscore or direct)");
    out.push_back(*m);
  }
  return out;
}

inline NormalPatternStore load_store(const fs::path& path, const TrainedModel& model) {
  std::istringstream in(read_text_file(path));
  auto store = NormalPatternStore::read_tsv(in);
  const auto fp = model_fingerprint(model);
  if (store.model_fingerprint != 0 && store.model_fingerprint != fp)
    throw DataError("store " + path.string() + " was fitted with a different model (fingerprint " +
                    hex64(store.model_fingerprint) + ", model " + hex64(fp) + "); rerun fit-normal");
  return store;
}

inline nlohmann::json ranking_json(const GlobalCallGraph& g, const RankedRootCauses& r) {
  nlohmann::json ranking = nlohmann::json::array();
  for (const auto& n : r.ranking) {
    nlohmann::json z = std::isfinite(n.z) ? nlohmann::json(n.z) : nlohmann::json(n.z > 0 ? "inf" : "-inf");
    ranking.push_back({{"node_kind", to_string(n.node.kind)},
                       {"node_name", n.node.name},
                       {"stage", to_string(n.node.stage())},
                       {"z", z}});
  }
  return {{"trace_id", r.trace_id}, {"request_type", g.request_type}, {"ranking", ranking}};
}

inline std::string per_type_csv(const EvalReport& report) {
  std::string out = "method,request_type,metric,value\n";
  char buf[256];
  for (const auto& r : report.rows) {
    for (auto [name, v] : {std::pair<const char*, double>{"hr_k", r.hr_k}, {"hr_k2", r.hr_k2},
                           {"ndcg_k", r.ndcg_k}, {"ndcg_k2", r.ndcg_k2}}) {
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%.2f\n", r.method.c_str(), r.request_type.c_str(), name, v);
      out += buf;
    }
  }
  return out;
}

}  // namespace detail

inline void cmd_gen(const RunConfig& cfg, std::ostream& err) {
  detail::require(cfg.out, "--out");
  auto spec = cfg.workload.empty() ? WorkloadSpec::default_spec() : parse_workload(read_text_file(cfg.workload));
  if (cfg.seed) spec.seed = *cfg.seed;
  spec.validate();
  const auto manifest = generate_dataset(spec, cfg.out);
  err << "wrote " << manifest["files"]["normal/train"] << " train, " << manifest["files"]["normal/fit"] << " fit and "
      << manifest["files"]["faulty"] << " faulty traces to " << cfg.out.string() << '\n';
}

inline void cmd_train(RunConfig cfg, std::ostream& out) {
  detail::require(cfg.dataset, "--dataset");
  detail::require(cfg.model, "--model");
  if (cfg.seed) cfg.features.seed = cfg.train.seed = *cfg.seed;
  const auto bundles = read_split(cfg.dataset / "normal" / "train");
  if (bundles.empty()) throw DataError("no training traces in " + (cfg.dataset / "normal" / "train").string());
  char line[96];
  const auto model = train_model(bundles, cfg.features, cfg.train, [&](int epoch, double loss) {
    std::snprintf(line, sizeof line, "epoch %d loss %.6f\n", epoch + 1, loss);
    out << line << std::flush;
  });
  save_model(cfg.model, model);
  detail::write_manifest(detail::sidecar(cfg.model), "train", cfg,
                         {{"n_graphs", bundles.size()},
                          {"input_dim", model.network.input_dim()},
                          {"parameters", model.network.num_parameters()},
                          {"templates", model.features.templates.size()},
                          {"first_epoch_loss", model.epoch_loss.front()},
                          {"final_epoch_loss", model.epoch_loss.back()},
                          {"model_fingerprint", detail::hex64(model_fingerprint(model))}});
}

inline void cmd_fit_normal(const RunConfig& cfg, std::ostream& err) {
  detail::require(cfg.dataset, "--dataset");
  detail::require(cfg.model, "--model");
  detail::require(cfg.store, "--store");
  const auto model = load_model(cfg.model);
  const auto bundles = read_split(cfg.dataset / "normal" / "fit");
  if (bundles.empty()) throw DataError("no fault-free traces in " + (cfg.dataset / "normal" / "fit").string());
  const auto graphs = assemble_all(bundles, model.features);
  auto store = fit_normal_patterns(model.network, graphs);
  store.model_fingerprint = model_fingerprint(model);
  std::ostringstream tsv;
  store.write_tsv(tsv);
  write_file_atomic(cfg.store, tsv.str());
  std::set<std::string> types;
  for (const auto& g : graphs) types.insert(g.request_type);
  detail::write_manifest(detail::sidecar(cfg.store), "fit-normal", cfg,
                         {{"n_graphs", graphs.size()},
                          {"request_types", types},
                          {"patterns", store.size()},
                          {"model_fingerprint", detail::hex64(store.model_fingerprint)}});
  err << "fitted " << store.size() << " node patterns over " << types.size() << " request types\n";
}

inline void cmd_localize(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.dataset, "--dataset");
  detail::require(cfg.model, "--model");
  detail::require(cfg.store, "--store");
  const auto model = load_model(cfg.model);
  const auto store = detail::load_store(cfg.store, model);
  const auto dir = cfg.dataset / cfg.split;
  if (!cfg.trace.empty() && !fs::exists(dir / (cfg.trace + ".spans.jsonl")))
    throw DataError("trace " + cfg.trace + " not found in " + dir.string());
  auto bundles = cfg.trace.empty() ? read_traces(dir, list_trace_ids(dir)) : read_traces(dir, {cfg.trace});
  std::string jsonl;
  for (const auto& b : bundles) {
    auto unlabeled = b;
    unlabeled.ground_truth.reset();
    const auto g = assemble(unlabeled, model.features);
    jsonl += detail::ranking_json(g, localize(model.network, store, g)).dump() + "\n";
  }
  if (cfg.out.empty()) {
    out << jsonl;
  } else {
    write_file_atomic(cfg.out, jsonl);
    detail::write_manifest(detail::sidecar(cfg.out), "localize", cfg, {{"n_traces", bundles.size()}});
  }
}

inline void cmd_eval(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.dataset, "--dataset");
  detail::require(cfg.model, "--model");
  detail::require(cfg.store, "--store");
  detail::require(cfg.out, "--out");
  const auto methods = detail::parse_methods(cfg.methods);
  const auto model = load_model(cfg.model);
  const auto store = detail::load_store(cfg.store, model);
  const auto bundles = read_split(cfg.dataset / "faulty");
  if (bundles.empty()) throw DataError("no faulty traces in " + (cfg.dataset / "faulty").string());
  const auto graphs = assemble_all(bundles, model.features);
  const auto report = evaluate(model.network, store, graphs, methods);
  write_file_atomic(cfg.out / "report.csv", report.to_csv());
  write_file_atomic(cfg.out / "report.txt", report.to_table());
  write_file_atomic(cfg.out / "per_type.csv", detail::per_type_csv(report));
  detail::write_manifest(cfg.out / "manifest.json", "eval", cfg,
                         {{"n_graphs", report.n_graphs},
                          {"model_fingerprint", detail::hex64(model_fingerprint(model))}});
  out << report.to_table();
  char line[128];
  for (Method m : methods) {
    std::snprintf(line, sizeof line, "elapsed %s %.4f ms/graph\n", to_string(m), report.ms_per_graph.at(to_string(m)));
    out << line;
  }
}

/// Parses argv, runs one command and maps failures to exit codes
/// (0 ok, 1 usage, 2 data, 3 numeric).
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Full-lifecycle root-cause localization for serverless request traces"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_path, methods;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, hidden, batch;
  std::optional<double> lr;

  auto add_common = [&](CLI::App* sub) { sub->add_option("--config", config_path, "run-config key=value file"); };
  auto* gen = app.add_subcommand("gen", "generate a synthetic labeled dataset");
  add_common(gen);
  gen->add_option("--workload", flags.workload, "workload description (default: built-in two-type workload)");
  gen->add_option("--out", flags.out, "dataset root to write");
  gen->add_option("--seed", seed, "overrides the workload seed");

  auto* train = app.add_subcommand("train", "train the graph auto-encoder on normal/train");
  add_common(train);
  train->add_option("--dataset", flags.dataset, "dataset root");
  train->add_option("--model", flags.model, "model file to write");
  train->add_option("--seed", seed, "seed for projectors and training");
  train->add_option("--epochs", epochs);
  train->add_option("--learning-rate", lr);
  train->add_option("--batch-size", batch);
  train->add_option("--hidden-dim", hidden);

  auto* fit = app.add_subcommand("fit-normal", "fit per-node normal score patterns on normal/fit");
  add_common(fit);
  fit->add_option("--dataset", flags.dataset, "dataset root");
  fit->add_option("--model", flags.model, "trained model");
  fit->add_option("--store", flags.store, "pattern store to write");

  auto* loc = app.add_subcommand("localize", "rank root-cause candidates per trace (JSONL)");
  add_common(loc);
  loc->add_option("--dataset", flags.dataset, "dataset root");
  loc->add_option("--split", flags.split, "split directory under the dataset root")->capture_default_str();
  loc->add_option("--trace", flags.trace, "localize only this trace id");
  loc->add_option("--model", flags.model, "trained model");
  loc->add_option("--store", flags.store, "pattern store");
  loc->add_option("--out", flags.out, "JSONL output (default: stdout)");

  auto* ev = app.add_subcommand("eval", "HR@k / NDCG@k over the labeled faulty split");
  add_common(ev);
  ev->add_option("--dataset", flags.dataset, "dataset root");
  ev->add_option("--model", flags.model, "trained model");
  ev->add_option("--store", flags.store, "pattern store");
  ev->add_option("--methods", methods, "comma-separated: zscore,direct");
  ev->add_option("--out", flags.out, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) detail::apply_config_file(cfg, config_path);
    for (auto [field, value] : {std::pair{&cfg.dataset, &flags.dataset}, {&cfg.model, &flags.model},
                                {&cfg.store, &flags.store}, {&cfg.out, &flags.out}, {&cfg.workload, &flags.workload}})
      if (!value->empty()) *field = *value;
    if (!flags.trace.empty()) cfg.trace = flags.trace;
    cfg.split = flags.split;
    if (seed) cfg.seed = seed;
    if (!methods.empty()) cfg.methods = detail::split_csv(methods);
    if (epochs) cfg.train.epochs = *epochs;
    if (lr) cfg.train.learning_rate = *lr;
    if (batch) cfg.train.batch_size = *batch;
    if (hidden) cfg.train.hidden_dim = *hidden;

    if (gen->parsed()) cmd_gen(cfg, err);
    else if (train->parsed()) cmd_train(cfg, out);
    else if (fit->parsed()) cmd_fit_normal(cfg, err);
    else if (loc->parsed()) cmd_localize(cfg, out);
    else cmd_eval(cfg, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace lrca::cli
