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

#ifndef TDLA_COCO_HPP_
#define TDLA_COCO_HPP_

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdla/types.hpp"

namespace tdla {

/// Reads a COCO object-detection annotation document. When no taxonomy is
/// given it is built from the file's categories block. The returned dataset
/// always passes validate_dataset; anything else raises ParseError or
/// SchemaError naming the offending field.
Dataset load_coco(const std::string& path, const std::optional<Taxonomy>& taxonomy = {});
Dataset load_coco_text(const std::string& json_text, const std::optional<Taxonomy>& taxonomy = {},
                       const std::string& origin = "<memory>");

/// Lenient variant for the validate workflow: parses structure strictly but
/// returns invariant breaches as violations instead of throwing.
std::pair<Dataset, std::vector<Violation>> load_coco_lenient(const std::string& path);

void save_coco(const Dataset& d, const std::string& path);
std::string save_coco_text(const Dataset& d);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

/// Total page cover: every image_id maps to exactly one split.
struct SplitAssignment {
  std::map<std::int64_t, Split> by_image;
};

/// Per-category tallies and percentage shares, one column per split
/// (single "all" column when no assignment is given).
struct DatasetStats {
  std::vector<std::string> split_names;
  std::vector<int> category_ids;
  std::vector<std::string> category_names;
  std::vector<std::vector<std::int64_t>> counts;  // [category][split]
  std::vector<std::int64_t> totals;               // [split]
  std::vector<std::int64_t> pages;                // [split]

  real share_pct(size_t category_index, size_t split_index) const;
};

/// count / split_total * 100; 0 when the split is empty.
real share_pct(std::int64_t count, std::int64_t total);

DatasetStats dataset_stats(const Dataset& d,
                           const std::optional<SplitAssignment>& split = {});

std::string format_stats(const DatasetStats& s);

/// Page-level stratified split targeting per-category instance shares equal
/// across splits (greedy largest-remaining-demand over category histograms,
/// seeded deterministic tie-breaks). Sizes follow the ratios within +-1 page.
SplitAssignment stratified_split(const Dataset& d, const std::array<real, 3>& ratios,
                                 std::uint64_t seed);

/// The three per-split datasets, in Split order.
std::array<Dataset, 3> split_datasets(const Dataset& d, const SplitAssignment& a);

std::string format_split_manifest(const SplitAssignment& a);

}  // namespace tdla

#endif  // TDLA_COCO_HPP_
