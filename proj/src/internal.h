// Copyright (c) 2026 The tinyptq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <map>
#include <vector>

#include "tinyptq/engine.h"
#include "tinyptq/graph.h"

namespace tinyptq::internal {

/// last_use[edge + 1]: index of the last layer reading the edge, -1 if none.
std::vector<int> last_uses(const Graph& graph);

// Runs layers [first, last] one at a time over every sample held in
// `frontier` (raw edge values with a leading sample axis). Afterwards the
// frontier holds the edges still read after `last`, plus the output of
// `last`. `on_output` sees every produced edge.
void advance(const Graph& graph, int first, int last, std::map<int, Tensor>& frontier,
             const ExecOptions& options, const std::vector<int>& last_use,
             const std::function<void(int, const Tensor&)>& on_output = {});

}  // namespace tinyptq::internal
