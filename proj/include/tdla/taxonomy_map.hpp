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

#ifndef TDLA_TAXONOMY_MAP_HPP_
#define TDLA_TAXONOMY_MAP_HPP_

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tdla/types.hpp"

namespace tdla {

struct MappingError : Error {
  using Error::Error;
};

struct LabelMapEntry {
  std::string source_name;
  std::optional<std::string> target_name;  // nullopt = drop

  bool is_drop() const { return !target_name.has_value(); }
};

/// Source -> target relabeling; every source category appears in exactly one
/// entry. Name matching is case-sensitive throughout.
struct LabelMap {
  std::string source_taxonomy_id;
  std::string target_taxonomy_id;
  std::vector<LabelMapEntry> entries;

  const LabelMapEntry* find(const std::string& source_name) const;
};

/// Builtin taxonomies: m6doc, docbank, doclaynet, publaynet, note_v1, note_v2.
Taxonomy builtin_taxonomy(const std::string& id);

/// Builtin maps: m6doc_to_docbank, m6doc_to_doclaynet, m6doc_to_publaynet,
/// note_v1_to_v2. Each is shipped as a data file transcribing the published
/// mapping table; "-" rows become drops.
LabelMap builtin_map(const std::string& name);
std::vector<std::string> builtin_map_names();

/// Path of the data file behind a builtin map.
std::string builtin_map_path(const std::string& name);

/// Line-oriented map file: source_name<TAB>target_name|DROP, '#' comments,
/// optional "# source:"/"# target:" taxonomy directives.
LabelMap load_label_map(const std::string& path);
LabelMap parse_label_map(const std::string& text, const std::string& origin = "<memory>");

/// Relabels or removes every instance per its entry; pages are kept even when
/// emptied. The result carries the map's target taxonomy.
Dataset apply_map(const Dataset& d, const LabelMap& m);

struct CoverageReport {
  std::vector<std::string> unmapped;  // source categories without an entry
  std::vector<std::string> dropped;
  std::vector<std::string> mapped;
  std::set<std::string> target_names;  // distinct targets of mapped entries

  std::string to_string() const;
};

CoverageReport coverage_report(const LabelMap& m, const Taxonomy& source);

}  // namespace tdla

#endif  // TDLA_TAXONOMY_MAP_HPP_
