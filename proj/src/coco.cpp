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

#include "tdla/coco.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tdla/io_util.hpp"
#include "tdla/mask.hpp"

namespace tdla {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* field, const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end())
    throw ParseError("coco: missing field '" + std::string(field) + "' in " + where);
  return *it;
}

Dataset parse_coco(const json& doc, const std::optional<Taxonomy>& taxonomy,
                   const std::string& origin) {
  if (!doc.is_object()) throw ParseError("coco: top level is not an object in " + origin);

  // categories
  Taxonomy tax;
  const json& cats = require(doc, "categories", origin);
  std::vector<std::pair<int, std::string>> file_cats;
  for (const json& c : cats) {
    file_cats.emplace_back(require(c, "id", "categories").get<int>(),
                           require(c, "name", "categories").get<std::string>());
  }
  std::sort(file_cats.begin(), file_cats.end());
  if (taxonomy) {
    tax = *taxonomy;
    for (const auto& [id, name] : file_cats) {
      const Category* known = tax.find(id);
      if (!known || known->name != name)
        throw SchemaError("coco: category (" + std::to_string(id) + ", '" + name +
                          "') clashes with taxonomy '" + tax.id + "'");
    }
  } else {
    tax.id = doc.value("taxonomy", "coco");
    int expect = 1;
    for (const auto& [id, name] : file_cats) {
      if (id != expect)
        throw SchemaError("coco: category ids not contiguous from 1 (saw id " +
                          std::to_string(id) + ")");
      tax.categories.push_back({id, name, tax.id});
      ++expect;
    }
  }

  Dataset d;
  d.taxonomy = tax;

  const json& images = require(doc, "images", origin);
  std::unordered_map<std::int64_t, size_t> page_of;
  for (const json& im : images) {
    PageRecord page;
    page.image_id = require(im, "id", "images").get<std::int64_t>();
    page.width = require(im, "width", "images").get<int>();
    page.height = require(im, "height", "images").get<int>();
    page.file_name = im.value("file_name", "");
    page.subset = subset_from_string(im.value("subset", "synthetic"));
    if (page_of.count(page.image_id))
      throw SchemaError("coco: duplicate image id " + std::to_string(page.image_id));
    page_of[page.image_id] = d.pages.size();
    d.pages.push_back(std::move(page));
  }

  const json& anns = require(doc, "annotations", origin);
  for (const json& an : anns) {
    const std::int64_t ann_id = an.value("id", std::int64_t(-1));
    const std::string where = "annotation " + std::to_string(ann_id);
    const std::int64_t image_id = require(an, "image_id", where).get<std::int64_t>();
    auto it = page_of.find(image_id);
    if (it == page_of.end())
      throw ParseError("coco: dangling annotation: " + where + " references missing image_id " +
                       std::to_string(image_id));
    if (an.value("iscrowd", 0) != 0)
      throw SchemaError("coco: iscrowd=1 unsupported (" + where + ")");

    Instance inst;
    inst.category_id = require(an, "category_id", where).get<int>();
    const json& bb = require(an, "bbox", where);
    if (!bb.is_array() || bb.size() != 4)
      throw ParseError("coco: bbox must be [x,y,w,h] in " + where);
    inst.bbox = BBox::from_xywh(bb[0].get<real>(), bb[1].get<real>(), bb[2].get<real>(),
                                bb[3].get<real>());
    if (inst.bbox.area() <= 0)
      throw SchemaError("coco: zero-area bbox rejected in " + where);
    if (auto seg = an.find("segmentation"); seg != an.end() && seg->is_array() && !seg->empty()) {
      std::vector<Polygon> polys;
      for (const json& ring : *seg) {
        if (!ring.is_array() || ring.size() < 6 || ring.size() % 2 != 0)
          throw ParseError("coco: polygon needs >= 3 (x, y) pairs in " + where);
        Polygon p;
        for (size_t k = 0; k + 1 < ring.size(); k += 2)
          p.push_back({ring[k].get<real>(), ring[k + 1].get<real>()});
        polys.push_back(std::move(p));
      }
      inst.mask = InstanceMask::from_polygons(std::move(polys));
    }
    if (auto sc = an.find("score"); sc != an.end()) inst.score = sc->get<real>();
    d.pages[it->second].instances.push_back(std::move(inst));
  }
  return d;
}

json to_json(const Dataset& d) {
  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  for (const Category& c : d.taxonomy.categories)
    categories.push_back({{"id", c.id}, {"name", c.name}});

  std::int64_t next_ann = 1;
  for (const PageRecord& page : d.pages) {
    images.push_back({{"id", page.image_id},
                      {"width", page.width},
                      {"height", page.height},
                      {"file_name", page.file_name},
                      {"subset", to_string(page.subset)}});
    for (const Instance& inst : page.instances) {
      json an;
      an["id"] = next_ann++;
      an["image_id"] = page.image_id;
      an["category_id"] = inst.category_id;
      an["bbox"] = {inst.bbox.x_min, inst.bbox.y_min, inst.bbox.width(), inst.bbox.height()};
      an["iscrowd"] = 0;
      if (inst.mask) {
        const std::vector<Polygon> polys =
            inst.mask->is_polygons() ? inst.mask->polygons() : polygonize(inst.mask->raster());
        json seg = json::array();
        for (const Polygon& p : polys) {
          json ring = json::array();
          for (const auto& v : p) {
            ring.push_back(v[0]);
            ring.push_back(v[1]);
          }
          seg.push_back(std::move(ring));
        }
        an["segmentation"] = std::move(seg);
        an["area"] = polygon_area(polys);
      } else {
        an["segmentation"] = json::array();
        an["area"] = inst.bbox.area();
      }
      if (inst.score) an["score"] = *inst.score;
      annotations.push_back(std::move(an));
    }
  }
  return json{{"taxonomy", d.taxonomy.id},
              {"images", std::move(images)},
              {"annotations", std::move(annotations)},
              {"categories", std::move(categories)}};
}

}  // namespace

Dataset load_coco_text(const std::string& text, const std::optional<Taxonomy>& taxonomy,
                       const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("coco: " + std::string(e.what()) + " in " + origin);
  }
  Dataset d = parse_coco(doc, taxonomy, origin);
  if (auto v = validate_dataset(d); !v.empty())
    throw SchemaError("coco: document violates dataset invariants in " + origin + ":\n" +
                      format_violations(v));
  return d;
}

Dataset load_coco(const std::string& path, const std::optional<Taxonomy>& taxonomy) {
  return load_coco_text(read_file(path), taxonomy, path);
}

std::pair<Dataset, std::vector<Violation>> load_coco_lenient(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("coco: " + std::string(e.what()) + " in " + path);
  }
  Dataset d = parse_coco(doc, {}, path);
  return {d, validate_dataset(d)};
}

std::string save_coco_text(const Dataset& d) { return to_json(d).dump(1) + "\n"; }

void save_coco(const Dataset& d, const std::string& path) {
  write_file(path, save_coco_text(d));
}

real share_pct(std::int64_t count, std::int64_t total) {
  return total > 0 ? 100.0 * static_cast<real>(count) / static_cast<real>(total) : 0.0;
}

real DatasetStats::share_pct(size_t category_index, size_t split_index) const {
  return tdla::share_pct(counts[category_index][split_index], totals[split_index]);
}

DatasetStats dataset_stats(const Dataset& d, const std::optional<SplitAssignment>& split) {
  DatasetStats s;
  const size_t n_splits = split ? 3 : 1;
  s.split_names = split ? std::vector<std::string>{kSplitNames.begin(), kSplitNames.end()}
                        : std::vector<std::string>{"all"};
  for (const Category& c : d.taxonomy.categories) {
    s.category_ids.push_back(c.id);
    s.category_names.push_back(c.name);
    s.counts.emplace_back(n_splits, 0);
  }
  s.totals.assign(n_splits, 0);
  s.pages.assign(n_splits, 0);

  std::unordered_map<int, size_t> row;
  for (size_t i = 0; i < s.category_ids.size(); ++i) row[s.category_ids[i]] = i;

  for (const PageRecord& page : d.pages) {
    size_t col = 0;
    if (split) {
      auto it = split->by_image.find(page.image_id);
      if (it == split->by_image.end())
        throw Error("dataset_stats: image " + std::to_string(page.image_id) +
                    " missing from split assignment");
      col = static_cast<size_t>(it->second);
    }
    s.pages[col] += 1;
    for (const Instance& inst : page.instances) {
      auto it = row.find(inst.category_id);
      if (it == row.end()) continue;  // validate_dataset reports these
      s.counts[it->second][col] += 1;
      s.totals[col] += 1;
    }
  }
  return s;
}

std::string format_stats(const DatasetStats& s) {
  std::ostringstream os;
  size_t name_w = 8;
  for (const std::string& n : s.category_names) name_w = std::max(name_w, n.size());
  os << std::left << std::setw(static_cast<int>(name_w)) << "category";
  for (const std::string& sp : s.split_names) os << std::right << std::setw(10) << sp
                                                 << std::setw(9) << "%";
  os << "\n";
  for (size_t i = 0; i < s.category_names.size(); ++i) {
    os << std::left << std::setw(static_cast<int>(name_w)) << s.category_names[i];
    for (size_t k = 0; k < s.split_names.size(); ++k)
      os << std::right << std::setw(10) << s.counts[i][k] << std::setw(9) << std::fixed
         << std::setprecision(3) << s.share_pct(i, k);
    os << "\n";
  }
  os << std::left << std::setw(static_cast<int>(name_w)) << "total";
  for (size_t k = 0; k < s.split_names.size(); ++k)
    os << std::right << std::setw(10) << s.totals[k] << std::setw(9) << "";
  os << "\n";
  return os.str();
}

SplitAssignment stratified_split(const Dataset& d, const std::array<real, 3>& ratios,
                                 std::uint64_t seed) {
  const real ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (!(ratio_sum > 0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw ConfigError("stratified_split: infeasible ratios");
  if (d.pages.size() < 10) throw ConfigError("stratified_split: need at least 10 pages");

  const size_t n_pages = d.pages.size();
  // Page capacities by largest remainder so sizes are exact for the given ratios.
  std::array<std::int64_t, 3> cap{};
  std::array<real, 3> frac{};
  std::int64_t assigned_total = 0;
  for (int s = 0; s < 3; ++s) {
    const real want = static_cast<real>(n_pages) * ratios[s] / ratio_sum;
    cap[s] = static_cast<std::int64_t>(std::floor(want));
    frac[s] = want - static_cast<real>(cap[s]);
    assigned_total += cap[s];
  }
  std::vector<int> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; assigned_total < static_cast<std::int64_t>(n_pages); ++k, ++assigned_total)
    cap[order[static_cast<size_t>(k) % 3]] += 1;

  // Per-page category histograms and global per-category totals.
  const int n_cats = d.taxonomy.size();
  std::vector<std::unordered_map<int, int>> hist(n_pages);
  std::vector<std::int64_t> total_per_cat(static_cast<size_t>(n_cats) + 1, 0);
  for (size_t p = 0; p < n_pages; ++p)
    for (const Instance& inst : d.pages[p].instances) {
      hist[p][inst.category_id] += 1;
      if (inst.category_id >= 1 && inst.category_id <= n_cats)
        total_per_cat[static_cast<size_t>(inst.category_id)] += 1;
    }

  // desired[s][c]: instances of category c still wanted by split s.
  std::array<std::vector<real>, 3> desired;
  for (int s = 0; s < 3; ++s) {
    desired[s].resize(static_cast<size_t>(n_cats) + 1, 0);
    for (int c = 1; c <= n_cats; ++c)
      desired[s][static_cast<size_t>(c)] =
          static_cast<real>(total_per_cat[static_cast<size_t>(c)]) * ratios[s] / ratio_sum;
  }
  std::vector<std::int64_t> remaining_per_cat = total_per_cat;

  std::vector<char> placed(n_pages, 0);
  SplitAssignment out;
  auto page_tiebreak = [&](size_t p) { return mix_hash(seed, static_cast<std::uint64_t>(d.pages[p].image_id)); };
  auto assign = [&](size_t p, int s) {
    out.by_image[d.pages[p].image_id] = static_cast<Split>(s);
    placed[p] = 1;
    cap[s] -= 1;
    for (const auto& [c, n] : hist[p]) {
      if (c >= 1 && c <= n_cats) {
        desired[s][static_cast<size_t>(c)] -= n;
        remaining_per_cat[static_cast<size_t>(c)] -= n;
      }
    }
  };

  size_t left = n_pages;
  while (left > 0) {
    // Rarest category with unplaced instances drives the next placement.
    int cstar = -1;
    for (int c = 1; c <= n_cats; ++c) {
      const std::int64_t r = remaining_per_cat[static_cast<size_t>(c)];
      if (r > 0 && (cstar < 0 || r < remaining_per_cat[static_cast<size_t>(cstar)])) cstar = c;
    }
    size_t pick = n_pages;
    if (cstar >= 0) {
      // The unplaced page holding the most instances of that category.
      int best_n = -1;
      std::uint64_t best_tie = 0;
      for (size_t p = 0; p < n_pages; ++p) {
        if (placed[p]) continue;
        auto it = hist[p].find(cstar);
        if (it == hist[p].end()) continue;
        const std::uint64_t tie = page_tiebreak(p);
        if (it->second > best_n || (it->second == best_n && tie < best_tie)) {
          best_n = it->second;
          best_tie = tie;
          pick = p;
        }
      }
    }
    if (pick == n_pages) {
      // No category demand left (e.g. empty pages): place by remaining capacity.
      std::uint64_t best_tie = 0;
      for (size_t p = 0; p < n_pages; ++p) {
        if (placed[p]) continue;
        const std::uint64_t tie = page_tiebreak(p);
        if (pick == n_pages || tie < best_tie) {
          pick = p;
          best_tie = tie;
        }
      }
      int s_best = 0;
      for (int s = 1; s < 3; ++s)
        if (cap[s] > cap[s_best]) s_best = s;
      assign(pick, s_best);
      --left;
      continue;
    }
    // Split with the largest remaining demand for cstar; ties by remaining
    // capacity, then by split order. Full splits are excluded.
    int s_best = -1;
    for (int s = 0; s < 3; ++s) {
      if (cap[s] <= 0) continue;
      if (s_best < 0 ||
          desired[s][static_cast<size_t>(cstar)] > desired[s_best][static_cast<size_t>(cstar)] ||
          (desired[s][static_cast<size_t>(cstar)] == desired[s_best][static_cast<size_t>(cstar)] &&
           cap[s] > cap[s_best]))
        s_best = s;
    }
    assign(pick, s_best);
    --left;
  }

  // Refinement: seeded page-swap hill climb on the squared share deviation.
  // Swaps keep split sizes exact; greedy placement alone is too lumpy when a
  // split holds few pages.
  std::vector<int> split_of(n_pages);
  for (size_t p = 0; p < n_pages; ++p)
    split_of[p] = static_cast<int>(out.by_image.at(d.pages[p].image_id));

  std::array<std::vector<std::int64_t>, 3> counts;
  std::array<std::int64_t, 3> split_total{0, 0, 0};
  for (int s = 0; s < 3; ++s) counts[static_cast<size_t>(s)].assign(static_cast<size_t>(n_cats) + 1, 0);
  for (size_t p = 0; p < n_pages; ++p)
    for (const auto& [c, n] : hist[p])
      if (c >= 1 && c <= n_cats) {
        counts[static_cast<size_t>(split_of[p])][static_cast<size_t>(c)] += n;
        split_total[static_cast<size_t>(split_of[p])] += n;
      }

  std::vector<real> gshare(static_cast<size_t>(n_cats) + 1, 0);
  std::int64_t grand = 0;
  for (int c = 1; c <= n_cats; ++c) grand += total_per_cat[static_cast<size_t>(c)];
  for (int c = 1; c <= n_cats; ++c)
    gshare[static_cast<size_t>(c)] =
        grand > 0 ? 100.0 * static_cast<real>(total_per_cat[static_cast<size_t>(c)]) / grand : 0;

  auto objective = [&]() {
    real obj = 0;
    for (int c = 1; c <= n_cats; ++c) {
      if (total_per_cat[static_cast<size_t>(c)] == 0) continue;
      const real w = total_per_cat[static_cast<size_t>(c)] >= 5 ? 1.0 : 0.1;
      for (int s = 0; s < 3; ++s) {
        const real share =
            split_total[static_cast<size_t>(s)] > 0
                ? 100.0 * static_cast<real>(counts[static_cast<size_t>(s)][static_cast<size_t>(c)]) /
                      static_cast<real>(split_total[static_cast<size_t>(s)])
                : 0;
        const real dev = share - gshare[static_cast<size_t>(c)];
        obj += w * dev * dev;
      }
    }
    return obj;
  };
  auto move_page = [&](size_t p, int to) {
    const int from = split_of[p];
    for (const auto& [c, n] : hist[p])
      if (c >= 1 && c <= n_cats) {
        counts[static_cast<size_t>(from)][static_cast<size_t>(c)] -= n;
        counts[static_cast<size_t>(to)][static_cast<size_t>(c)] += n;
        split_total[static_cast<size_t>(from)] -= n;
        split_total[static_cast<size_t>(to)] += n;
      }
    split_of[p] = to;
  };

  if (n_pages >= 2) {
    Rng swap_rng(mix_hash(seed, 0x51ab));
    real current = objective();
    const std::int64_t trials = 40000 + 60 * static_cast<std::int64_t>(n_pages);
    for (std::int64_t t = 0; t < trials; ++t) {
      const size_t p = static_cast<size_t>(swap_rng.uniform_int(0, static_cast<int>(n_pages) - 1));
      const size_t q = static_cast<size_t>(swap_rng.uniform_int(0, static_cast<int>(n_pages) - 1));
      if (split_of[p] == split_of[q]) continue;
      const int sp = split_of[p], sq = split_of[q];
      move_page(p, sq);
      move_page(q, sp);
      const real candidate = objective();
      if (candidate + 1e-12 < current) {
        current = candidate;
      } else {
        move_page(p, sp);
        move_page(q, sq);
      }
    }
  }
  for (size_t p = 0; p < n_pages; ++p)
    out.by_image[d.pages[p].image_id] = static_cast<Split>(split_of[p]);
  return out;
}

std::array<Dataset, 3> split_datasets(const Dataset& d, const SplitAssignment& a) {
  std::array<Dataset, 3> out;
  for (Dataset& x : out) x.taxonomy = d.taxonomy;
  for (const PageRecord& page : d.pages) {
    auto it = a.by_image.find(page.image_id);
    if (it == a.by_image.end())
      throw Error("split_datasets: image " + std::to_string(page.image_id) + " unassigned");
    out[static_cast<size_t>(it->second)].pages.push_back(page);
  }
  return out;
}

std::string format_split_manifest(const SplitAssignment& a) {
  std::ostringstream os;
  for (const auto& [image_id, split] : a.by_image)
    os << image_id << "\t" << kSplitNames[static_cast<size_t>(split)] << "\n";
  return os.str();
}

}  // namespace tdla
