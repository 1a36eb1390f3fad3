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

#include "lrca/gat_autoencoder.hpp"
#include "lrca/graph_builder.hpp"
#include "lrca/model_io.hpp"

#include <span>
#include <vector>

namespace lrca {

inline std::vector<GlobalCallGraph> assemble_all(std::span<const RequestBundle> bundles, const FeatureContext& ctx) {
  std::vector<GlobalCallGraph> graphs;
  graphs.reserve(bundles.size());
  for (const auto& b : bundles) {
    try {
      graphs.push_back(assemble(b, ctx));
    } catch (const DataError& e) {
      throw DataError("trace " + b.trace_id + ": " + e.what());
    }
  }
  return graphs;
}

/// Fits features on the training bundles, builds their graphs and trains the
/// auto-encoder.
inline TrainedModel train_model(std::span<const RequestBundle> train_bundles, const FeatureConfig& features,
                                const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  TrainedModel m;
  m.features = fit_features(train_bundles, features);
  m.train_config = config;
  const auto graphs = assemble_all(train_bundles, m.features);
  auto result = train(graphs, config, on_epoch);
  m.network = std::move(result.model);
  m.epoch_loss = std::move(result.epoch_loss);
  return m;
}

}  // namespace lrca
