// Copyright 2026 the tdla authors. All rights reserved.
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

#ifndef TDLA_CHECKPOINT_HPP_
#define TDLA_CHECKPOINT_HPP_

#include <string>

#include "tdla/net.hpp"

namespace tdla {

inline constexpr const char* kCheckpointTag = "tdla-v1";

/// Self-describing binary container: version tag, JSON config block (model
/// config, taxonomy, codec dims), then named little-endian double arrays.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace tdla

#endif  // TDLA_CHECKPOINT_HPP_
