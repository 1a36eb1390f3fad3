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

// Simulator, fault injection and the command-line front end.

#include "lrca/lrca.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace lrca;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lrca-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  return files;
}

WorkloadSpec small_spec() {
  auto spec = WorkloadSpec::default_spec();
  spec.n_normal_train = 40;
  spec.n_normal_fit = 40;
  spec.n_faulty = 16;
  return spec;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "lrca");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

// --- workload files --------------------------------------------------------

TEST(Workload, TextRoundTrip) {
  auto spec = WorkloadSpec::default_spec();
  spec.seed = 99;
  spec.latency_sigma = 0.35;
  spec.fault_mix = {{FaultCategory::code_defect, 2.0}, {FaultCategory::pod_failure, 1.0}};
  spec.profiles["get-price"] = spec.profile("get-price");
  spec.profiles["get-price"].cpu = 0.75;
  EXPECT_EQ(parse_workload(to_text(spec)), spec);
}

TEST(Workload, InvalidCallTreeRejected) {
  auto spec = WorkloadSpec::default_spec();
  spec.request_types[0].calls.push_back({1, 2});
  EXPECT_THROW(spec.validate(), DataError);
}

// --- normal traffic --------------------------------------------------------

TEST(Simulator, ZeroCountIsEmpty) { EXPECT_TRUE(generate_normal(WorkloadSpec::default_spec(), "x", 0).empty()); }

TEST(Simulator, SameSeedSameTraffic) {
  const auto spec = WorkloadSpec::default_spec();
  const auto a = generate_normal(spec, "train", 30);
  const auto b = generate_normal(spec, "train", 30);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].spans, b[i].spans);
    EXPECT_EQ(a[i].logs, b[i].logs);
    EXPECT_EQ(a[i].metrics, b[i].metrics);
  }
}

TEST(Simulator, BundlesCarryAllFourKindsPerFunction) {
  const auto bundles = generate_normal(WorkloadSpec::default_spec(), "k", 20);
  for (const auto& b : bundles) {
    std::map<std::string, std::set<NodeKind>> kinds;
    for (const auto& s : b.spans) kinds[s.node_name].insert(s.node_kind);
    for (const auto& [fn, k] : kinds) EXPECT_EQ(k.size(), 4u) << fn;
    EXPECT_EQ(b.metrics.size(), 2 * kinds.size());
  }
}

// --- fault injection -------------------------------------------------------

TEST(FaultInjection, CpuContentionTouchesOnlyCpu) {
  const auto base = generate_normal(WorkloadSpec::default_spec(), "f", 1).front();
  const auto fn = base.metrics.front().node_name;
  const auto faulty = inject_fault(base, {FaultCategory::cpu_contention, fn, 5.0}, 1);
  EXPECT_EQ(faulty.spans, base.spans);
  EXPECT_EQ(faulty.logs, base.logs);
  ASSERT_EQ(faulty.metrics.size(), base.metrics.size());
  for (std::size_t i = 0; i < base.metrics.size(); ++i) {
    const bool target = base.metrics[i].node_name == fn && base.metrics[i].channel == MetricChannel::cpu;
    EXPECT_DOUBLE_EQ(faulty.metrics[i].value, target ? 5.0 * base.metrics[i].value : base.metrics[i].value);
  }
  ASSERT_TRUE(faulty.ground_truth);
  EXPECT_EQ(*faulty.ground_truth, (std::vector<NodeRef>{{NodeKind::function, fn}}));
}

TEST(FaultInjection, PodFailureLabelsPod) {
  const auto base = generate_normal(WorkloadSpec::default_spec(), "f", 1).front();
  const auto fn = base.metrics.front().node_name;
  const auto faulty = inject_fault(base, {FaultCategory::pod_failure, fn, 0.0}, 1);
  EXPECT_EQ(*faulty.ground_truth, (std::vector<NodeRef>{{NodeKind::pod, fn}}));
  EXPECT_GT(faulty.logs.size(), base.logs.size());
}

TEST(FaultInjection, LabelKindPerCategory) {
  const auto base = generate_normal(WorkloadSpec::default_spec(), "f", 1).front();
  const auto fn = base.metrics.front().node_name;
  for (auto c : kAllFaultCategories) {
    const auto faulty = inject_fault(base, {c, fn, 0.0}, 3);
    ASSERT_EQ(faulty.ground_truth->size(), 1u);
    EXPECT_EQ(faulty.ground_truth->front().kind, fault_label_kind(c)) << to_string(c);
    EXPECT_EQ(is_platform_fault(c), is_platform_kind(fault_label_kind(c)));
  }
}

TEST(FaultInjection, UnknownTargetRejected) {
  const auto base = generate_normal(WorkloadSpec::default_spec(), "f", 1).front();
  EXPECT_THROW(inject_fault(base, {FaultCategory::code_defect, "nope", 0.0}, 1), DataError);
}

TEST(FaultInjection, BalancedAllocation) {
  const auto categories = allocate_faults(WorkloadSpec::default_spec());
  std::map<FaultCategory, int> counts;
  for (auto c : categories) ++counts[c];
  ASSERT_EQ(counts.size(), 8u);
  for (auto [_, n] : counts) EXPECT_EQ(n, 50);
}

TEST(FaultInjection, CodeDefectOnlyMix) {
  auto spec = small_spec();
  spec.fault_mix = {{FaultCategory::code_defect, 1.0}};
  const auto ds = generate_in_memory(spec);
  ASSERT_EQ(ds.labels.size(), spec.n_faulty);
  for (const auto& l : ds.labels) {
    EXPECT_EQ(l.category, "code_defect");
    for (const auto& r : l.root_causes) EXPECT_EQ(r.kind, NodeKind::function);
  }
}

TEST(Dataset, FilesMatchManifestAndRegenerateIdentically) {
  const auto spec = small_spec();
  const auto a = scratch_dir("ds-a"), b = scratch_dir("ds-b");
  const auto manifest = generate_dataset(spec, a);
  generate_dataset(parse_workload(manifest["workload"].get<std::string>()), b);
  EXPECT_EQ(list_trace_ids(a / "normal" / "train").size(), manifest["files"]["normal/train"].get<std::size_t>());
  EXPECT_EQ(list_trace_ids(a / "normal" / "fit").size(), manifest["files"]["normal/fit"].get<std::size_t>());
  EXPECT_EQ(list_trace_ids(a / "faulty").size(), manifest["files"]["faulty"].get<std::size_t>());
  EXPECT_EQ(read_tree(a), read_tree(b));
  const auto faulty = read_split(a / "faulty");
  ASSERT_EQ(faulty.size(), spec.n_faulty);
  for (const auto& f : faulty) EXPECT_TRUE(f.is_faulty());
}

TEST(Dataset, DiskMatchesMemory) {
  const auto spec = small_spec();
  const auto dir = scratch_dir("ds-mem");
  generate_dataset(spec, dir);
  const auto mem = generate_in_memory(spec);
  const auto disk = read_split(dir / "normal" / "train");
  ASSERT_EQ(disk.size(), mem.train.size());
  for (std::size_t i = 0; i < disk.size(); ++i) {
    EXPECT_EQ(disk[i].spans, mem.train[i].spans);
    EXPECT_EQ(disk[i].logs, mem.train[i].logs);
    EXPECT_EQ(disk[i].metrics, mem.train[i].metrics);
  }
}

// --- command line ----------------------------------------------------------

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch_dir("cli"));
    write_file_atomic(*root_ / "workload.ini", to_text(small_spec()));
    ASSERT_EQ(invoke({"gen", "--workload", (*root_ / "workload.ini").string(), "--out", ds()}).code, 0);
    ASSERT_EQ(invoke({"train", "--dataset", ds(), "--model", model(), "--epochs", "3", "--hidden-dim", "8"}).code, 0);
    ASSERT_EQ(invoke({"fit-normal", "--dataset", ds(), "--model", model(), "--store", store()}).code, 0);
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static std::string ds() { return (*root_ / "data").string(); }
  static std::string model() { return (*root_ / "model.bin").string(); }
  static std::string store() { return (*root_ / "store.tsv").string(); }
  static fs::path* root_;
};

fs::path* Cli::root_ = nullptr;

TEST_F(Cli, ArtifactsAndManifestsExist) {
  EXPECT_TRUE(fs::exists(model()));
  EXPECT_TRUE(fs::exists(model() + ".manifest.json"));
  EXPECT_TRUE(fs::exists(store() + ".manifest.json"));
  EXPECT_TRUE(fs::exists(fs::path(ds()) / "manifest.json"));
  const auto m = nlohmann::json::parse(read_text_file(model() + ".manifest.json"));
  EXPECT_EQ(m["command"], "train");
}

TEST_F(Cli, EvalIsDeterministic) {
  const auto out1 = (*root_ / "eval1").string(), out2 = (*root_ / "eval2").string();
  const auto r1 = invoke({"eval", "--dataset", ds(), "--model", model(), "--store", store(), "--out", out1});
  const auto r2 = invoke({"eval", "--dataset", ds(), "--model", model(), "--store", store(), "--out", out2});
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(r2.code, 0) << r2.err;
  for (const char* f : {"report.csv", "report.txt", "per_type.csv"})
    EXPECT_EQ(read_text_file(fs::path(out1) / f), read_text_file(fs::path(out2) / f)) << f;
  EXPECT_NE(r1.out.find("elapsed zscore"), std::string::npos);
  EXPECT_NE(read_text_file(fs::path(out1) / "report.csv").find("zscore,ALL,16,"), std::string::npos);
}

TEST_F(Cli, RetrainingIsDeterministic) {
  const auto other = (*root_ / "model2.bin").string();
  ASSERT_EQ(invoke({"train", "--dataset", ds(), "--model", other, "--epochs", "3", "--hidden-dim", "8"}).code, 0);
  EXPECT_EQ(read_text_file(other), read_text_file(model()));
}

TEST_F(Cli, LocalizeOneTrace) {
  const auto ids = list_trace_ids(fs::path(ds()) / "faulty");
  const auto r = invoke({"localize", "--dataset", ds(), "--model", model(), "--store", store(), "--trace", ids.front()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["trace_id"], ids.front());
  EXPECT_FALSE(j["ranking"].empty());
  EXPECT_TRUE(j["ranking"][0].contains("stage"));
}

TEST_F(Cli, LocalizeWholeSplitToFile) {
  const auto out = (*root_ / "ranked.jsonl").string();
  const auto r = invoke({"localize", "--dataset", ds(), "--split", "normal/fit", "--model", model(), "--store", store(),
                      "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(read_text_file(out));
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line);) ++n;
  EXPECT_EQ(n, 40u);
}

TEST_F(Cli, UnknownTraceIsDataError) {
  const auto r = invoke({"localize", "--dataset", ds(), "--model", model(), "--store", store(), "--trace", "nope"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST_F(Cli, UnknownRequestTypeNamed) {
  auto spec = small_spec();
  spec.request_types = {{"checkout", {"checkout", "get-price"}, {{0, 1}}, 1.0}};
  const auto other = (*root_ / "other").string();
  write_file_atomic(*root_ / "other.ini", to_text(spec));
  ASSERT_EQ(invoke({"gen", "--workload", (*root_ / "other.ini").string(), "--out", other}).code, 0);
  const auto r = invoke({"localize", "--dataset", other, "--model", model(), "--store", store()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("checkout"), std::string::npos) << r.err;
}

TEST_F(Cli, StoreFromAnotherModelRejected) {
  const auto other = (*root_ / "model3.bin").string();
  ASSERT_EQ(invoke({"train", "--dataset", ds(), "--model", other, "--epochs", "2", "--hidden-dim", "8"}).code, 0);
  const auto r = invoke({"localize", "--dataset", ds(), "--model", other, "--store", store()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, ConfigFileSuppliesPaths) {
  const auto cfg = *root_ / "run.ini";
  write_file_atomic(cfg, "dataset = " + ds() + "\nmodel = " + model() + "\nstore = " + store() + "\nmethods = direct\n");
  const auto out = (*root_ / "eval-cfg").string();
  const auto r = invoke({"eval", "--config", cfg.string(), "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(fs::path(out) / "report.csv").find("zscore"), std::string::npos);
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"train", "--dataset", "x"}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({"fit-normal", "--dataset", "/nonexistent", "--model", "/nonexistent/m", "--store", "/tmp/x"}).code, 2);
  const auto dir = scratch_dir("cfg-bad");
  write_file_atomic(dir / "bad.ini", "colour = blue\n");
  EXPECT_EQ(invoke({"eval", "--config", (dir / "bad.ini").string()}).code, 1);
}
