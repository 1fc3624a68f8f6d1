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

#include "tdla/types.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tdla/geometry.hpp"

namespace tdla {

const Category* Taxonomy::find(int category_id) const {
  for (const Category& c : categories)
    if (c.id == category_id) return &c;
  return nullptr;
}

const Category* Taxonomy::find(const std::string& name) const {
  for (const Category& c : categories)
    if (c.name == name) return &c;
  return nullptr;
}

Taxonomy Taxonomy::from_names(const std::string& taxonomy_id,
                              const std::vector<std::string>& names) {
  Taxonomy t;
  t.id = taxonomy_id;
  int next_id = 1;
  for (const std::string& n : names) t.categories.push_back({next_id++, n, taxonomy_id});
  return t;
}

std::string to_string(Subset s) {
  switch (s) {
    case Subset::kScientificArticle: return "scientific_article";
    case Subset::kTextbook: return "textbook";
    case Subset::kTestPaper: return "test_paper";
    case Subset::kMagazineCh: return "magazine_ch";
    case Subset::kMagazineEn: return "magazine_en";
    case Subset::kNewspaperCh: return "newspaper_ch";
    case Subset::kNewspaperEn: return "newspaper_en";
    case Subset::kNote: return "note";
    case Subset::kBook: return "book";
    case Subset::kSynthetic: return "synthetic";
  }
  return "synthetic";
}

Subset subset_from_string(const std::string& name) {
  static const std::unordered_map<std::string, Subset> table = {
      {"scientific_article", Subset::kScientificArticle},
      {"textbook", Subset::kTextbook},
      {"test_paper", Subset::kTestPaper},
      {"magazine_ch", Subset::kMagazineCh},
      {"magazine_en", Subset::kMagazineEn},
      {"newspaper_ch", Subset::kNewspaperCh},
      {"newspaper_en", Subset::kNewspaperEn},
      {"note", Subset::kNote},
      {"book", Subset::kBook},
      {"synthetic", Subset::kSynthetic},
  };
  auto it = table.find(name);
  if (it == table.end()) throw SchemaError("unknown subset name: " + name);
  return it->second;
}

std::string subset_group(Subset s) {
  switch (s) {
    case Subset::kMagazineCh:
    case Subset::kMagazineEn: return "magazine";
    case Subset::kNewspaperCh:
    case Subset::kNewspaperEn: return "newspaper";
    default: return to_string(s);
  }
}

std::int64_t Dataset::instance_count() const {
  std::int64_t n = 0;
  for (const PageRecord& p : pages) n += static_cast<std::int64_t>(p.instances.size());
  return n;
}

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  auto add = [&](std::int64_t img, int idx, std::string rule, std::string detail) {
    out.push_back({img, idx, std::move(rule), std::move(detail)});
  };

  // Taxonomy: ids contiguous from 1, names unique within the taxonomy.
  std::unordered_set<std::string> names;
  for (size_t i = 0; i < d.taxonomy.categories.size(); ++i) {
    const Category& c = d.taxonomy.categories[i];
    if (c.id != static_cast<int>(i) + 1)
      add(-1, -1, "taxonomy ids", "category '" + c.name + "' has id " + std::to_string(c.id) +
                      ", expected " + std::to_string(i + 1));
    if (!names.insert(c.name).second)
      add(-1, -1, "taxonomy names", "duplicate category name '" + c.name + "'");
  }

  std::unordered_set<std::int64_t> seen_ids;
  for (const PageRecord& page : d.pages) {
    if (!seen_ids.insert(page.image_id).second)
      add(page.image_id, -1, "duplicate image_id", "image_id appears more than once");
    if (page.width <= 0 || page.height <= 0) {
      add(page.image_id, -1, "page size", "non-positive width or height");
      continue;
    }
    for (size_t k = 0; k < page.instances.size(); ++k) {
      const Instance& inst = page.instances[k];
      const int idx = static_cast<int>(k);
      if (!d.taxonomy.contains(inst.category_id))
        add(page.image_id, idx, "unknown category",
            "category_id " + std::to_string(inst.category_id) + " not in taxonomy '" +
                d.taxonomy.id + "'");
      if (!inst.bbox.finite()) {
        add(page.image_id, idx, "bbox finite", "non-finite bbox coordinate");
        continue;
      }
      if (!inst.bbox.ordered()) {
        add(page.image_id, idx, "bbox order", "x_min > x_max or y_min > y_max");
        continue;
      }
      if (inst.bbox.x_min < 0 || inst.bbox.y_min < 0 || inst.bbox.x_max > page.width ||
          inst.bbox.y_max > page.height)
        add(page.image_id, idx, "bbox bounds", "bbox extends outside the page");
      if (inst.score && (*inst.score < 0 || *inst.score > 1 || !std::isfinite(*inst.score)))
        add(page.image_id, idx, "score range", "score outside [0, 1]");
      if (inst.mask) {
        if (inst.mask->is_polygons()) {
          bool degenerate = false;
          for (const Polygon& p : inst.mask->polygons())
            if (p.size() < 3) degenerate = true;
          if (degenerate) {
            add(page.image_id, idx, "polygon arity", "polygon with fewer than 3 vertices");
            continue;
          }
        } else {
          const Mask2D& r = inst.mask->raster();
          if (r.width != page.width || r.height != page.height) {
            add(page.image_id, idx, "raster size", "raster dimensions differ from the page");
            continue;
          }
        }
        // bbox must equal or contain the mask's minimum bounding rectangle (1 px slack).
        try {
          const BBox mbr = box_from_mask(*inst.mask);
          if (mbr.x_min < inst.bbox.x_min - 1 || mbr.y_min < inst.bbox.y_min - 1 ||
              mbr.x_max > inst.bbox.x_max + 1 || mbr.y_max > inst.bbox.y_max + 1)
            add(page.image_id, idx, "bbox-mask mismatch",
                "mask bounding rectangle escapes bbox by more than 1 px");
        } catch (const Error&) {
          // Empty masks carry no pixels to contain.
        }
      }
    }
  }
  return out;
}

std::string format_violations(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (const Violation& v : violations) {
    os << "violation: " << v.rule;
    if (v.image_id >= 0) os << " (image " << v.image_id;
    if (v.instance_index >= 0) os << ", instance " << v.instance_index;
    if (v.image_id >= 0) os << ")";
    os << ": " << v.detail << "\n";
  }
  return os.str();
}

}  // namespace tdla
