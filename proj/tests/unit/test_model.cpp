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

// Attention auto-encoder, normal patterns, ranking, metrics and model files.

#include "lrca/lrca.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace lrca;
namespace oracle = lrca::testing;

namespace {

/// A model whose decoder outputs zeros, so node scores are the row norms of X.
GatAutoEncoder zero_output_model(int d, int h = 4) {
  auto m = GatAutoEncoder::init(d, h, 1);
  m.layers.back().w.setZero();
  return m;
}

/// Function nodes named by `names`, one attribute column holding `values`.
GlobalCallGraph scored_graph(const std::vector<std::string>& names, const std::vector<double>& values,
                             const std::string& type = "t", const std::string& id = "g") {
  GlobalCallGraph g;
  g.request_type = type;
  g.trace_id = id;
  for (const auto& n : names) g.nodes.emplace_back(NodeKind::function, n);
  g.x.resize(static_cast<Eigen::Index>(names.size()), 2);
  for (std::size_t i = 0; i < values.size(); ++i) g.x.row(static_cast<Eigen::Index>(i)) << values[i], 0.0;
  return g;
}

std::vector<NodeIdentity> fns(std::initializer_list<const char*> names) {
  std::vector<NodeIdentity> out;
  for (const char* n : names) out.emplace_back(NodeKind::function, n);
  return out;
}

}  // namespace

// --- attention layer -------------------------------------------------------

TEST(GatLayer, IsolatedNodeAttendsToItself) {
  CounterRng rng(1, "iso");
  auto model = GatAutoEncoder::init(3, 4, 2);
  const auto& layer = model.layers[0];
  Matrix x(1, 3);
  x << 0.3, -1.2, 0.8;
  LayerCache cache;
  const Matrix out = gat_layer_forward(x, Neighborhood::from_edges(1, {}), layer, &cache);
  ASSERT_EQ(cache.alpha.size(), 1u);
  EXPECT_EQ(cache.alpha[0], 1.0);
  EXPECT_TRUE(out.isApprox(Matrix((x * layer.w).cwiseMax(0.0)), 1e-15));
}

TEST(GatLayer, EqualLogitsGiveUniformAttention) {
  auto layer = GatAutoEncoder::init(3, 4, 2).layers[0];
  layer.a.setZero();
  CounterRng rng(2, "uniform");
  const auto g = oracle::random_graph(rng, 6, 3, 0.5);
  const auto nb = Neighborhood::of(g);
  LayerCache cache;
  gat_layer_forward(g.x, nb, layer, &cache);
  for (int i = 0; i < nb.num_nodes(); ++i) {
    const int n = nb.offset[static_cast<std::size_t>(i) + 1] - nb.offset[static_cast<std::size_t>(i)];
    for (int e = nb.offset[static_cast<std::size_t>(i)]; e < nb.offset[static_cast<std::size_t>(i) + 1]; ++e)
      EXPECT_NEAR(cache.alpha[static_cast<std::size_t>(e)], 1.0 / n, 1e-15);
  }
}

TEST(GatLayer, PathGraphWithIdentityWeightsAveragesNeighbors) {
  GatLayer layer;
  layer.w = Matrix::Identity(2, 2);
  layer.a = Vector::Zero(4);
  Matrix x(3, 2);
  x << 1.0, -4.0, 3.0, 2.0, -5.0, 6.0;
  const std::vector<Edge> edges = {{0, 1}, {1, 2}};
  const Matrix out = gat_layer_forward(x, Neighborhood::from_edges(3, edges), layer);
  const auto dense = oracle::dense_layer(oracle::to_dense(x), oracle::adjacency(3, edges), layer).out;
  // Node 1 sees {0, 1}, node 2 sees {1, 2}, node 0 only itself.
  Matrix expected(3, 2);
  expected << 1.0, 0.0, 2.0, 0.0, 0.0, 4.0;
  EXPECT_TRUE(out.isApprox(expected, 1e-15));
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(out(i, c), dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)], 1e-15);
}

TEST(GatLayer, ShapeMismatchRejected) {
  const auto layer = GatAutoEncoder::init(3, 4, 2).layers[0];
  EXPECT_THROW(gat_layer_forward(Matrix::Zero(2, 5), Neighborhood::from_edges(2, {}), layer), NumericError);
}

// --- auto-encoder ----------------------------------------------------------

TEST(AutoEncoder, ZeroInputReconstructsZero) {
  const auto model = GatAutoEncoder::init(6, 4, 3);
  const auto r = forward(model, Matrix::Zero(5, 6), Neighborhood::from_edges(5, std::vector<Edge>{{0, 1}, {1, 2}}));
  EXPECT_TRUE(r.x_hat.isZero());
}

TEST(AutoEncoder, OutputShapes) {
  const auto model = GatAutoEncoder::init(192, 32, 3);
  CounterRng rng(4, "shape");
  const auto g = oracle::random_graph(rng, 12, 192, 0.2);
  const auto r = forward(model, g);
  EXPECT_EQ(r.z.rows(), 12);
  EXPECT_EQ(r.z.cols(), 32);
  EXPECT_EQ(r.x_hat.rows(), 12);
  EXPECT_EQ(r.x_hat.cols(), 192);
}

TEST(AutoEncoder, LossArithmetic) {
  Matrix x = Matrix::Random(2, 3);
  EXPECT_EQ(reconstruction_loss(x, x), 0.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, Matrix(x.array() + 1.0)), 6.0);
  EXPECT_TRUE(node_scores(x, x).isZero());
}

TEST(AutoEncoder, StationaryAtExactReconstruction) {
  const auto model = GatAutoEncoder::init(6, 4, 3);
  const auto g = backward(model, Matrix::Zero(4, 6), Neighborhood::from_edges(4, std::vector<Edge>{{0, 1}, {2, 3}}));
  EXPECT_EQ(g.loss, 0.0);
  for (const auto& l : g.layers) {
    EXPECT_TRUE(l.w.isZero());
    EXPECT_TRUE(l.a.isZero());
  }
}

TEST(AutoEncoder, GradientsMatchFiniteDifferences) {
  CounterRng rng(5, "grad");
  const auto g = oracle::random_graph(rng, 5, 6, 0.4);
  const auto model = GatAutoEncoder::init(6, 4, 11);
  EXPECT_LE(oracle::gradient_check(model, g.x, g.edges), 1e-4);
}

TEST(Training, SameSeedIsBitwiseIdentical) {
  CounterRng rng(6, "train");
  std::vector<GlobalCallGraph> graphs;
  for (int i = 0; i < 10; ++i) graphs.push_back(oracle::random_graph(rng, 5, 6, 0.4));
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden_dim = 4;
  cfg.batch_size = 3;
  const auto a = train(graphs, cfg);
  const auto b = train(graphs, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

// A single-function request: the four-node ownership path. Random graphs with
// directed cycles are a poor target here, since attention ranks neighbors the
// same way for every receiving node and cannot isolate both ends of a cycle.
TEST(Training, OverfitsSingleTinyGraph) {
  auto spec = WorkloadSpec::default_spec();
  spec.request_types = {{"solo", {"solo"}, {}, 1.0}};
  const auto bundles = generate_normal(spec, "t", 1);
  const std::vector<GlobalCallGraph> graphs = {assemble(bundles[0], fit_features(bundles, FeatureConfig{}))};
  ASSERT_EQ(graphs[0].num_nodes(), 4);
  TrainConfig cfg;
  cfg.epochs = 500;
  const auto r = train(graphs, cfg);
  ASSERT_EQ(r.epoch_loss.size(), 500u);
  EXPECT_LT(r.epoch_loss.back(), 1e-2 * r.epoch_loss.front());
}

TEST(Training, EmptySetRejected) {
  EXPECT_THROW(train(std::vector<GlobalCallGraph>{}, TrainConfig{}), DataError);
}

// --- normal patterns and localization --------------------------------------

TEST(NormalPatterns, SingleGraphHasZeroSigma) {
  const auto model = zero_output_model(2);
  const std::vector<GlobalCallGraph> graphs = {scored_graph({"a", "b"}, {1.0, 2.0})};
  const auto store = fit_normal_patterns(model, graphs);
  ASSERT_EQ(store.size(), 2u);
  for (const auto& [_, p] : store.patterns()) EXPECT_EQ(p.sigma, 0.0);
}

TEST(NormalPatterns, TwoSamplesMeanAndSpread) {
  const auto model = zero_output_model(2);
  const std::vector<GlobalCallGraph> graphs = {scored_graph({"a"}, {1.0}), scored_graph({"a"}, {3.0})};
  const auto store = fit_normal_patterns(model, graphs);
  const auto* p = store.find("t", {NodeKind::function, "a"});
  ASSERT_NE(p, nullptr);
  EXPECT_DOUBLE_EQ(p->mu, 2.0);
  EXPECT_DOUBLE_EQ(p->sigma, 1.0);
  EXPECT_EQ(p->n_samples, 2u);
}

TEST(NormalPatterns, InconsistentTopologyRejected) {
  const auto model = zero_output_model(2);
  const std::vector<GlobalCallGraph> graphs = {scored_graph({"a", "b"}, {1.0, 1.0}), scored_graph({"a"}, {3.0})};
  EXPECT_THROW(fit_normal_patterns(model, graphs), DataError);
}

TEST(NormalPatterns, MatchesTwoPassOracleOnSimulatedGraphs) {
  auto spec = WorkloadSpec::default_spec();
  spec.request_types.resize(1);
  const auto bundles = generate_normal(spec, "fit", 100);
  FeatureConfig fc;
  const auto ctx = fit_features(bundles, fc);
  const auto graphs = assemble_all(bundles, ctx);
  const auto model = GatAutoEncoder::init(192, 32, 3);
  const auto store = fit_normal_patterns(model, graphs);
  for (int i = 0; i < graphs.front().num_nodes(); ++i) {
    std::vector<double> values;
    for (const auto& g : graphs) values.push_back(oracle::loop_scores(oracle::to_dense(g.x), oracle::to_dense(forward(model, g).x_hat))[static_cast<std::size_t>(i)]);
    const auto [mean, std] = oracle::two_pass(values);
    const auto* p = store.find(graphs.front().request_type, graphs.front().nodes[static_cast<std::size_t>(i)]);
    ASSERT_NE(p, nullptr);
    EXPECT_NEAR(p->mu, mean, 1e-12);
    EXPECT_NEAR(p->sigma, std, 1e-12);
  }
}

TEST(NormalPatterns, TsvRoundTrip) {
  NormalPatternStore store;
  store.model_fingerprint = 0xabcdef0123456789ULL;
  store.insert({"t", {NodeKind::pod, "fn-a"}, 0.1234567890123, 1.0 / 3.0, 17});
  store.insert({"u", {NodeKind::function, "fn-b"}, 2.5, 0.0, 1});
  std::stringstream ss;
  store.write_tsv(ss);
  const auto back = NormalPatternStore::read_tsv(ss);
  EXPECT_EQ(back.model_fingerprint, store.model_fingerprint);
  EXPECT_EQ(back.patterns(), store.patterns());
}

TEST(NormalPatterns, MalformedTsvRejected) {
  std::stringstream ss("t\tpod\tfn\tnot-a-number\t1\t2\n");
  EXPECT_THROW(NormalPatternStore::read_tsv(ss), DataError);
  std::stringstream kinds("t\tcontainer\tfn\t1\t1\t2\n");
  EXPECT_THROW(NormalPatternStore::read_tsv(kinds), DataError);
}

TEST(ZScore, Arithmetic) {
  const NormalPattern p{"t", {}, 5.0, 2.0, 10};
  EXPECT_EQ(zscore(5.0, p), 0.0);
  EXPECT_DOUBLE_EQ(zscore(9.0, p), 2.0);
  const NormalPattern flat{"t", {}, 5.0, 0.0, 1};
  EXPECT_NEAR(zscore(5.001, flat), 1000.0, 1e-6);
}

TEST(Localize, AtMeansRanksLexicographically) {
  const auto model = zero_output_model(2);
  const auto g = scored_graph({"c", "a", "b"}, {1.0, 2.0, 3.0});
  const auto store = fit_normal_patterns(model, std::vector<GlobalCallGraph>{g});
  const auto r = localize(model, store, g);
  EXPECT_EQ(r.order(), fns({"a", "b", "c"}));
  for (const auto& n : r.ranking) EXPECT_EQ(n.z, 0.0);
}

TEST(Localize, PerturbedNodeRanksFirst) {
  const auto model = zero_output_model(2);
  const std::vector<GlobalCallGraph> normal = {scored_graph({"a", "b", "c"}, {1.0, 2.0, 3.0}),
                                               scored_graph({"a", "b", "c"}, {1.2, 2.2, 3.2})};
  const auto store = fit_normal_patterns(model, normal);
  const auto r = localize(model, store, scored_graph({"a", "b", "c"}, {1.1, 2.9, 3.1}));
  EXPECT_EQ(r.ranking.front().node.name, "b");
}

TEST(Localize, UnknownTypeNamesIt) {
  const auto model = zero_output_model(2);
  const auto store = fit_normal_patterns(model, std::vector<GlobalCallGraph>{scored_graph({"a"}, {1.0})});
  try {
    localize(model, store, scored_graph({"a"}, {1.0}, "checkout"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("checkout"), std::string::npos);
  }
}

TEST(Localize, UnseenNodeRanksFirstWithInfiniteScore) {
  const auto model = zero_output_model(2);
  const auto store = fit_normal_patterns(model, std::vector<GlobalCallGraph>{scored_graph({"a", "b"}, {1.0, 1.0})});
  const auto r = localize(model, store, scored_graph({"a", "b", "z"}, {50.0, 1.0, 0.0}));
  EXPECT_EQ(r.ranking.front().node.name, "z");
  EXPECT_TRUE(std::isinf(r.ranking.front().z));
}

TEST(LocalizeDirect, RanksByRawScore) {
  const auto model = zero_output_model(2);
  EXPECT_EQ(localize_direct(model, scored_graph({"a", "b", "c"}, {5.0, 1.0, 3.0})).order(), fns({"a", "c", "b"}));
  EXPECT_EQ(localize_direct(model, scored_graph({"c", "b", "a"}, {1.0, 1.0, 1.0})).order(), fns({"a", "b", "c"}));
}

TEST(Ranking, RaisingOneValueNeverLowersItsRank) {
  CounterRng rng(8, "monotone");
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::random_graph(rng, 9, 1, 0.0);
    Vector v(9);
    for (int i = 0; i < 9; ++i) v[i] = std::round(rng.normal() * 4.0);
    const int target = static_cast<int>(rng.below(9));
    auto position = [&](const Vector& values) {
      const auto order = rank_nodes(g, values).order();
      return std::find(order.begin(), order.end(), g.nodes[static_cast<std::size_t>(target)]) - order.begin();
    };
    Vector raised = v;
    raised[target] += 1.0 + rng.uniform() * 3.0;
    EXPECT_LE(position(raised), position(v));
  }
}

// --- metrics ---------------------------------------------------------------

TEST(Metrics, HitRatioExamples) {
  const auto r = fns({"a", "b", "c"});
  EXPECT_EQ(hr_at_k(r, fns({"a"}), 1), 1);
  EXPECT_EQ(hr_at_k(r, fns({"c"}), 1), 0);
  EXPECT_EQ(hr_at_k(r, fns({"c"}), 3), 1);
  EXPECT_EQ(hr_at_k(r, fns({"c"}), 10), 1);
  EXPECT_THROW(hr_at_k(r, fns({}), 1), DataError);
}

TEST(Metrics, NdcgExamples) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(fns({"a", "b", "c"}), fns({"a"}), 3), 1.0);
  EXPECT_NEAR(ndcg_at_k(fns({"a", "b"}), fns({"b"}), 2), 1.0 / std::log2(3.0), 1e-12);
  EXPECT_DOUBLE_EQ(ndcg_at_k(fns({"a", "b", "c"}), fns({"a", "b"}), 2), 1.0);
}

TEST(Metrics, AgreeWithBruteForce) {
  CounterRng rng(9, "metrics");
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    auto ranking = oracle::random_graph(rng, n, 1, 0.0).nodes;
    std::set<NodeIdentity> truth;
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    while (static_cast<int>(truth.size()) < t) truth.insert(ranking[rng.below(static_cast<std::uint64_t>(n))]);
    const std::vector<NodeIdentity> truth_v(truth.begin(), truth.end());
    for (std::size_t i = ranking.size(); i > 1; --i) std::swap(ranking[i - 1], ranking[rng.below(i)]);
    for (int k = 1; k <= n + 2; ++k) {
      EXPECT_EQ(hr_at_k(ranking, truth_v, k), oracle::brute_hr(ranking, truth, k));
      EXPECT_NEAR(ndcg_at_k(ranking, truth_v, k), oracle::brute_ndcg(ranking, truth, k), 1e-12);
    }
  }
}

TEST(Evaluate, PerfectRankingsScoreHundred) {
  const auto model = zero_output_model(2);
  auto g = scored_graph({"a", "b", "c"}, {9.0, 1.0, 2.0});
  g.ground_truth = std::vector<int>{0};
  const std::vector<GlobalCallGraph> graphs = {g, g};
  const std::vector<Method> methods = {Method::direct};
  const auto report = evaluate(model, NormalPatternStore{}, graphs, methods);
  const auto* row = report.find("direct");
  ASSERT_NE(row, nullptr);
  EXPECT_EQ(row->n, 2u);
  EXPECT_EQ(row->hr_k, 100.0);
  EXPECT_EQ(row->hr_k2, 100.0);
  EXPECT_EQ(row->ndcg_k, 100.0);
  EXPECT_EQ(row->ndcg_k2, 100.0);
  EXPECT_NE(report.find("direct", "t"), nullptr);
}

TEST(Evaluate, TruthAtSecondPlace) {
  const auto model = zero_output_model(2);
  auto g = scored_graph({"a", "b", "c"}, {9.0, 5.0, 2.0});
  g.ground_truth = std::vector<int>{1};
  const std::vector<Method> methods = {Method::direct};
  const auto report = evaluate(model, NormalPatternStore{}, std::vector<GlobalCallGraph>{g}, methods);
  EXPECT_EQ(report.find("direct")->hr_k, 0.0);
  EXPECT_EQ(report.find("direct")->hr_k2, 100.0);
}

TEST(Evaluate, UnlabeledGraphRejected) {
  const auto model = zero_output_model(2);
  const std::vector<Method> methods = {Method::direct};
  EXPECT_THROW(evaluate(model, NormalPatternStore{}, std::vector<GlobalCallGraph>{scored_graph({"a"}, {1.0})}, methods),
               DataError);
}

// --- model files -----------------------------------------------------------

class ModelFile : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto bundles = generate_normal(WorkloadSpec::default_spec(), "train", 20);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.hidden_dim = 8;
    model_ = new TrainedModel(train_model(bundles, FeatureConfig{}, cfg));
  }
  static void TearDownTestSuite() {
    delete model_;
    model_ = nullptr;
  }
  static TrainedModel* model_;
};

TrainedModel* ModelFile::model_ = nullptr;

TEST_F(ModelFile, RoundTripPreservesEverything) {
  const auto bytes = serialize_model(*model_);
  const auto back = deserialize_model(bytes);
  EXPECT_EQ(back.network, model_->network);
  EXPECT_EQ(back.features.projectors, model_->features.projectors);
  EXPECT_EQ(back.features.templates.templates(), model_->features.templates.templates());
  EXPECT_EQ(back.epoch_loss, model_->epoch_loss);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(model_fingerprint(back), model_fingerprint(*model_));
}

TEST_F(ModelFile, LoadedModelScoresIdentically) {
  const auto back = deserialize_model(serialize_model(*model_));
  const auto bundles = generate_normal(WorkloadSpec::default_spec(), "other", 4);
  for (const auto& b : bundles) {
    const auto g1 = assemble(b, model_->features);
    const auto g2 = assemble(b, back.features);
    EXPECT_EQ(g1.x, g2.x);
    EXPECT_EQ(node_scores(model_->network, g1), node_scores(back.network, g2));
  }
}

TEST_F(ModelFile, CorruptInputRejected) {
  const auto bytes = serialize_model(*model_);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(deserialize_model(bytes + "x"), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize_model(bad_version), DataError);
  EXPECT_THROW(deserialize_model(""), DataError);
}
