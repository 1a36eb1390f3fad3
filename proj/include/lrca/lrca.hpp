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

#include "lrca/cli.hpp"
#include "lrca/common.hpp"
#include "lrca/eval.hpp"
#include "lrca/faultgen.hpp"
#include "lrca/gat_autoencoder.hpp"
#include "lrca/graph_builder.hpp"
#include "lrca/log_pipeline.hpp"
#include "lrca/model_io.hpp"
#include "lrca/obs_model.hpp"
#include "lrca/pipeline.hpp"
#include "lrca/rca.hpp"
#include "lrca/scalar_embed.hpp"
