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

// End-to-end use of the library without touching the filesystem: simulate
// traffic, train, fit normal patterns, then rank the nodes of a few faulty
// requests.

#include "lrca/lrca.hpp"

#include <cstdio>

int main() {
  auto spec = lrca::WorkloadSpec::default_spec();
  spec.n_normal_train = 200;
  spec.n_normal_fit = 200;
  spec.n_faulty = 8;
  const auto data = lrca::generate_in_memory(spec);

  lrca::TrainConfig train;
  train.epochs = 40;
  const auto model = lrca::train_model(data.train, lrca::FeatureConfig{}, train);
  std::printf("trained: loss %.3f -> %.3f\n", model.epoch_loss.front(), model.epoch_loss.back());

  const auto store = lrca::fit_normal_patterns(model.network, lrca::assemble_all(data.fit, model.features));

  for (std::size_t i = 0; i < data.faulty.size(); ++i) {
    auto bundle = data.faulty[i];
    bundle.ground_truth.reset();
    const auto g = lrca::assemble(bundle, model.features);
    const auto ranked = lrca::localize(model.network, store, g);
    const auto& truth = data.labels[i].root_causes.front();
    std::printf("%-18s truth %-28s top-3:", data.labels[i].category.c_str(),
                lrca::NodeIdentity(truth.kind, truth.name).label().c_str());
    for (std::size_t r = 0; r < 3 && r < ranked.ranking.size(); ++r)
      std::printf("  %s (z=%.1f)", ranked.ranking[r].node.label().c_str(), ranked.ranking[r].z);
    std::printf("\n");
  }
}
