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

#include "tdla/taxonomy_map.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tdla/io_util.hpp"

namespace tdla {

namespace {

std::vector<std::string> read_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

}  // namespace

const LabelMapEntry* LabelMap::find(const std::string& source_name) const {
  for (const LabelMapEntry& e : entries)
    if (e.source_name == source_name) return &e;
  return nullptr;
}

Taxonomy builtin_taxonomy(const std::string& id) {
  static const std::unordered_set<std::string> known = {"m6doc",     "docbank", "doclaynet",
                                                        "publaynet", "note_v1", "note_v2"};
  if (!known.count(id)) throw ConfigError("unknown builtin taxonomy: " + id);
  std::vector<std::string> names;
  for (const std::string& line : read_lines(read_file(data_dir() + "/taxonomies/" + id + ".txt")))
    if (!line.empty() && line[0] != '#') names.push_back(line);
  return Taxonomy::from_names(id, names);
}

std::vector<std::string> builtin_map_names() {
  return {"m6doc_to_docbank", "m6doc_to_doclaynet", "m6doc_to_publaynet", "note_v1_to_v2"};
}

std::string builtin_map_path(const std::string& name) {
  const auto names = builtin_map_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ConfigError("unknown builtin map: " + name);
  return data_dir() + "/maps/" + name + ".map";
}

LabelMap parse_label_map(const std::string& text, const std::string& origin) {
  LabelMap m;
  int lineno = 0;
  std::unordered_set<std::string> seen;
  for (const std::string& line : read_lines(text)) {
    ++lineno;
    if (line.rfind("# source:", 0) == 0) {
      m.source_taxonomy_id = line.substr(9);
      m.source_taxonomy_id.erase(0, m.source_taxonomy_id.find_first_not_of(' '));
      continue;
    }
    if (line.rfind("# target:", 0) == 0) {
      m.target_taxonomy_id = line.substr(9);
      m.target_taxonomy_id.erase(0, m.target_taxonomy_id.find_first_not_of(' '));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("label map " + origin + " line " + std::to_string(lineno) +
                       ": expected source<TAB>target");
    LabelMapEntry e;
    e.source_name = line.substr(0, tab);
    const std::string target = line.substr(tab + 1);
    if (target != "DROP") e.target_name = target;
    if (!seen.insert(e.source_name).second)
      throw ParseError("label map " + origin + " line " + std::to_string(lineno) +
                       ": duplicate source '" + e.source_name + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

LabelMap load_label_map(const std::string& path) {
  return parse_label_map(read_file(path), path);
}

LabelMap builtin_map(const std::string& name) {
  return load_label_map(builtin_map_path(name));
}

Dataset apply_map(const Dataset& d, const LabelMap& m) {
  if (!m.source_taxonomy_id.empty() && d.taxonomy.id != m.source_taxonomy_id)
    throw MappingError("apply_map: dataset taxonomy '" + d.taxonomy.id +
                       "' does not match map source '" + m.source_taxonomy_id + "'");

  // Target taxonomy: the builtin universe when the id names one, otherwise the
  // distinct targets in entry order.
  Taxonomy target;
  try {
    target = builtin_taxonomy(m.target_taxonomy_id);
  } catch (const ConfigError&) {
    std::vector<std::string> names;
    for (const LabelMapEntry& e : m.entries)
      if (e.target_name && std::find(names.begin(), names.end(), *e.target_name) == names.end())
        names.push_back(*e.target_name);
    target = Taxonomy::from_names(m.target_taxonomy_id.empty() ? "mapped" : m.target_taxonomy_id,
                                  names);
  }

  // source id -> target id (0 = drop)
  std::unordered_map<int, int> relabel;
  for (const Category& c : d.taxonomy.categories) {
    const LabelMapEntry* e = m.find(c.name);
    if (!e)
      throw MappingError("apply_map: source category '" + c.name + "' has no map entry");
    if (e->is_drop()) {
      relabel[c.id] = 0;
    } else {
      const Category* t = target.find(*e->target_name);
      if (!t)
        throw MappingError("apply_map: target '" + *e->target_name +
                           "' missing from target taxonomy '" + target.id + "'");
      relabel[c.id] = t->id;
    }
  }

  Dataset out;
  out.taxonomy = target;
  for (const PageRecord& page : d.pages) {
    PageRecord mapped = page;
    mapped.instances.clear();
    for (const Instance& inst : page.instances) {
      auto it = relabel.find(inst.category_id);
      if (it == relabel.end())
        throw MappingError("apply_map: instance category id " +
                           std::to_string(inst.category_id) + " unknown to source taxonomy");
      if (it->second == 0) continue;
      Instance moved = inst;
      moved.category_id = it->second;
      mapped.instances.push_back(std::move(moved));
    }
    out.pages.push_back(std::move(mapped));
  }
  return out;
}

CoverageReport coverage_report(const LabelMap& m, const Taxonomy& source) {
  CoverageReport r;
  for (const Category& c : source.categories) {
    const LabelMapEntry* e = m.find(c.name);
    if (!e) {
      r.unmapped.push_back(c.name);
    } else if (e->is_drop()) {
      r.dropped.push_back(c.name);
    } else {
      r.mapped.push_back(c.name);
      r.target_names.insert(*e->target_name);
    }
  }
  return r;
}

std::string CoverageReport::to_string() const {
  std::ostringstream os;
  os << "mapped: " << mapped.size() << ", dropped: " << dropped.size()
     << ", unmapped: " << unmapped.size() << ", distinct targets: " << target_names.size() << "\n";
  auto list = [&](const char* label, const std::vector<std::string>& v) {
    if (v.empty()) return;
    os << label << ":";
    for (const std::string& n : v) os << " '" << n << "'";
    os << "\n";
  };
  list("unmapped", unmapped);
  list("dropped", dropped);
  return os.str();
}

}  // namespace tdla
