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

#include "tdla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tdla/geometry.hpp"
#include "tdla/mask.hpp"

namespace tdla {

namespace {

constexpr real kIouEps = 1e-9;  // absorbs fp noise at exact-threshold matches
const real kNan = std::numeric_limits<real>::quiet_NaN();

}  // namespace

EvalConfig EvalConfig::coco_default() {
  EvalConfig c;
  for (int k = 50; k <= 95; k += 5) c.iou_thresholds.push_back(k / 100.0);
  c.max_detections = 100;
  return c;
}

real EvalResult::map() const {
  real sum = 0;
  int n = 0;
  for (size_t c = 0; c < ap.size(); ++c) {
    if (gt_counts[c] == 0) continue;
    for (real v : ap[c]) sum += v;
    n += static_cast<int>(ap[c].size());
  }
  return n > 0 ? sum / n : kNan;
}

real EvalResult::ap_at(real threshold) const {
  size_t t = thresholds.size();
  for (size_t i = 0; i < thresholds.size(); ++i)
    if (std::abs(thresholds[i] - threshold) < 1e-9) t = i;
  if (t == thresholds.size()) throw Error("ap_at: threshold not evaluated");
  real sum = 0;
  int n = 0;
  for (size_t c = 0; c < ap.size(); ++c) {
    if (gt_counts[c] == 0) continue;
    sum += ap[c][t];
    ++n;
  }
  return n > 0 ? sum / n : kNan;
}

real EvalResult::ar() const {
  real sum = 0;
  int n = 0;
  for (size_t c = 0; c < recall.size(); ++c) {
    if (gt_counts[c] == 0) continue;
    for (real v : recall[c]) sum += v;
    n += static_cast<int>(recall[c].size());
  }
  return n > 0 ? sum / n : kNan;
}

real EvalResult::category_ap(size_t index) const {
  if (gt_counts[index] == 0) return kNan;
  real sum = 0;
  for (real v : ap[index]) sum += v;
  return sum / static_cast<real>(ap[index].size());
}

std::vector<std::pair<std::string, real>> EvalResult::metrics() const {
  std::vector<std::pair<std::string, real>> out;
  out.emplace_back("mAP", map());
  out.emplace_back("AP50", ap_at(0.50));
  out.emplace_back("AP75", ap_at(0.75));
  out.emplace_back("AR", ar());
  for (size_t c = 0; c < category_names.size(); ++c)
    out.emplace_back("cat:" + category_names[c], category_ap(c));
  return out;
}

EvalResult evaluate(const Predictions& preds, const Dataset& gt, const EvalConfig& cfg,
                    EvalMode mode) {
  if (cfg.iou_thresholds.empty()) throw ConfigError("evaluate: no thresholds");
  for (size_t i = 0; i < cfg.iou_thresholds.size(); ++i) {
    const real t = cfg.iou_thresholds[i];
    if (t <= 0 || t > 1 || (i > 0 && t <= cfg.iou_thresholds[i - 1]))
      throw ConfigError("evaluate: thresholds must be strictly increasing in (0, 1]");
  }

  std::map<std::int64_t, const PageRecord*> page_of;
  for (const PageRecord& p : gt.pages) page_of[p.image_id] = &p;
  for (const auto& [image_id, insts] : preds) {
    if (!page_of.count(image_id))
      throw SchemaError("evaluate: predictions reference unknown image " +
                        std::to_string(image_id));
    for (const Instance& inst : insts) {
      if (!gt.taxonomy.contains(inst.category_id))
        throw SchemaError("evaluate: prediction category " + std::to_string(inst.category_id) +
                          " not in taxonomy '" + gt.taxonomy.id + "'");
      if (!inst.score)
        throw SchemaError("evaluate: prediction without score on image " +
                          std::to_string(image_id));
    }
  }

  const size_t n_thr = cfg.iou_thresholds.size();
  const int n_cats = gt.taxonomy.size();

  EvalResult res;
  res.mode = mode;
  res.taxonomy_id = gt.taxonomy.id;
  res.thresholds = cfg.iou_thresholds;
  for (const Category& c : gt.taxonomy.categories) {
    res.category_ids.push_back(c.id);
    res.category_names.push_back(c.name);
  }
  res.gt_counts.assign(static_cast<size_t>(n_cats), 0);
  res.ap.assign(static_cast<size_t>(n_cats), std::vector<real>(n_thr, kNan));
  res.recall.assign(static_cast<size_t>(n_cats), std::vector<real>(n_thr, kNan));

  // The overlap measure; box mode substitutes the mask's bounding rectangle
  // for degenerate boxes, mask mode substitutes a box-filled raster.
  auto pair_iou = [&](const Instance& pred, const Instance& truth, const PageRecord& page) {
    if (mode == EvalMode::kBoxes) {
      BBox pb = pred.bbox;
      if (pb.area() <= 0 && pred.mask) pb = box_from_mask(*pred.mask);
      BBox tb = truth.bbox;
      if (tb.area() <= 0 && truth.mask) tb = box_from_mask(*truth.mask);
      return iou(pb, tb);
    }
    const Mask2D pm = pred.mask ? as_raster(*pred.mask, page.width, page.height)
                                : mask_from_box(pred.bbox, page.width, page.height);
    const Mask2D tm = truth.mask ? as_raster(*truth.mask, page.width, page.height)
                                 : mask_from_box(truth.bbox, page.width, page.height);
    return mask_iou(pm, tm);
  };

  struct Det {
    real score;
    std::int64_t image_id;
    int index;  // position within the page's prediction list (tie-break)
    std::vector<real> iou_row;  // vs each gt of this (image, category)
  };

  for (int ci = 0; ci < n_cats; ++ci) {
    const int cat_id = gt.taxonomy.categories[static_cast<size_t>(ci)].id;

    // Gather per-image gt lists and detections with per-pair overlaps.
    std::map<std::int64_t, std::vector<const Instance*>> gts;
    std::int64_t npos = 0;
    for (const PageRecord& p : gt.pages)
      for (const Instance& inst : p.instances)
        if (inst.category_id == cat_id) {
          gts[p.image_id].push_back(&inst);
          ++npos;
        }
    res.gt_counts[static_cast<size_t>(ci)] = npos;

    std::vector<Det> dets;
    for (const auto& [image_id, insts] : preds) {
      const PageRecord& page = *page_of[image_id];
      std::vector<Det> local;
      for (size_t k = 0; k < insts.size(); ++k) {
        if (insts[k].category_id != cat_id) continue;
        Det d;
        d.score = *insts[k].score;
        d.image_id = image_id;
        d.index = static_cast<int>(k);
        local.push_back(std::move(d));
      }
      std::stable_sort(local.begin(), local.end(), [](const Det& a, const Det& b) {
        return a.score > b.score;
      });
      if (static_cast<int>(local.size()) > cfg.max_detections)
        local.resize(static_cast<size_t>(cfg.max_detections));
      const auto git = gts.find(image_id);
      for (Det& d : local) {
        if (git != gts.end())
          for (const Instance* t : git->second)
            d.iou_row.push_back(pair_iou(insts[static_cast<size_t>(d.index)], *t, page));
        dets.push_back(std::move(d));
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return a.index < b.index;
    });

    if (npos == 0) continue;  // AP undefined; reported as NaN

    for (size_t ti = 0; ti < n_thr; ++ti) {
      const real thr = cfg.iou_thresholds[ti];
      std::map<std::int64_t, std::vector<char>> used;
      for (const auto& [img, v] : gts) used[img].assign(v.size(), 0);

      std::vector<char> is_tp(dets.size(), 0);
      std::int64_t tp_total = 0;
      for (size_t di = 0; di < dets.size(); ++di) {
        const Det& d = dets[di];
        auto uit = used.find(d.image_id);
        if (uit == used.end()) continue;
        int best = -1;
        real best_iou = thr - kIouEps;
        for (size_t gi = 0; gi < d.iou_row.size(); ++gi) {
          if (uit->second[gi]) continue;
          if (d.iou_row[gi] > best_iou || (best < 0 && d.iou_row[gi] >= best_iou)) {
            best = static_cast<int>(gi);
            best_iou = d.iou_row[gi];
          }
        }
        if (best >= 0) {
          uit->second[static_cast<size_t>(best)] = 1;
          is_tp[di] = 1;
          ++tp_total;
        }
      }

      // 101-point interpolated AP over the cumulative PR curve.
      std::vector<real> prec(dets.size()), rec(dets.size());
      std::int64_t tp = 0;
      for (size_t di = 0; di < dets.size(); ++di) {
        tp += is_tp[di];
        prec[di] = static_cast<real>(tp) / static_cast<real>(di + 1);
        rec[di] = static_cast<real>(tp) / static_cast<real>(npos);
      }
      for (size_t di = dets.size(); di-- > 1;) prec[di - 1] = std::max(prec[di - 1], prec[di]);
      real ap_sum = 0;
      size_t k = 0;
      for (int ri = 0; ri <= 100; ++ri) {
        const real r = ri / 100.0;
        while (k < dets.size() && rec[k] < r - 1e-12) ++k;
        if (k < dets.size()) ap_sum += prec[k];
      }
      res.ap[static_cast<size_t>(ci)][ti] = ap_sum / 101.0;
      res.recall[static_cast<size_t>(ci)][ti] =
          static_cast<real>(tp_total) / static_cast<real>(npos);
    }
  }
  return res;
}

std::string per_category_report(const EvalResult& r) {
  std::ostringstream os;
  size_t w = 8;
  for (const std::string& n : r.category_names) w = std::max(w, n.size());
  os << std::left << std::setw(static_cast<int>(w)) << "category" << std::right
     << std::setw(10) << "AP" << "\n";
  for (size_t c = 0; c < r.category_names.size(); ++c) {
    os << std::left << std::setw(static_cast<int>(w)) << r.category_names[c] << std::right;
    const real v = r.category_ap(c);
    if (std::isnan(v)) {
      os << std::setw(10) << "nan";
    } else {
      os << std::setw(10) << std::fixed << std::setprecision(3) << v * 100;
    }
    os << "\n";
  }
  return os.str();
}

RunDiff compare_metric_tables(const std::vector<std::pair<std::string, real>>& a,
                              const std::vector<std::pair<std::string, real>>& b) {
  std::map<std::string, real> bmap(b.begin(), b.end());
  RunDiff d;
  for (const auto& [name, av] : a) {
    auto it = bmap.find(name);
    if (it == bmap.end()) continue;
    if (std::isnan(av) || std::isnan(it->second)) continue;
    d.rows.push_back({name, av, it->second, av - it->second});
  }
  std::stable_sort(d.rows.begin(), d.rows.end(), [](const MetricDelta& x, const MetricDelta& y) {
    return std::abs(x.delta) > std::abs(y.delta);
  });
  return d;
}

RunDiff compare_runs(const EvalResult& a, const EvalResult& b) {
  if (a.taxonomy_id != b.taxonomy_id)
    throw SchemaError("compare_runs: taxonomy mismatch ('" + a.taxonomy_id + "' vs '" +
                      b.taxonomy_id + "')");
  if (a.thresholds != b.thresholds)
    throw SchemaError("compare_runs: threshold grids differ");
  return compare_metric_tables(a.metrics(), b.metrics());
}

std::string format_diff(const RunDiff& d) {
  std::ostringstream os;
  size_t w = 8;
  for (const MetricDelta& row : d.rows) w = std::max(w, row.name.size());
  os << std::left << std::setw(static_cast<int>(w)) << "metric" << std::right << std::setw(12)
     << "a" << std::setw(12) << "b" << std::setw(12) << "delta" << "\n";
  for (const MetricDelta& row : d.rows)
    os << std::left << std::setw(static_cast<int>(w)) << row.name << std::right << std::setw(12)
       << std::fixed << std::setprecision(4) << row.a << std::setw(12) << row.b << std::setw(12)
       << row.delta << "\n";
  return os.str();
}

std::string eval_result_to_jsonl(const EvalResult& r) {
  using nlohmann::json;
  std::ostringstream os;
  json header{{"mode", r.mode == EvalMode::kBoxes ? "boxes" : "masks"},
              {"taxonomy", r.taxonomy_id},
              {"thresholds", r.thresholds}};
  os << header.dump() << "\n";
  auto row = [](const std::vector<real>& v) {
    json arr = json::array();
    for (real x : v)
      arr.push_back(std::isnan(x) ? json() : json(x));
    return arr;
  };
  for (size_t c = 0; c < r.category_names.size(); ++c) {
    json line{{"category", r.category_names[c]},
              {"id", r.category_ids[c]},
              {"gt", r.gt_counts[c]},
              {"ap", row(r.ap[c])},
              {"recall", row(r.recall[c])}};
    os << line.dump() << "\n";
  }
  return os.str();
}

EvalResult eval_result_from_jsonl(const std::string& text) {
  using nlohmann::json;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("results: empty file");
  EvalResult r;
  json header = json::parse(line);
  r.mode = header.at("mode") == "masks" ? EvalMode::kMasks : EvalMode::kBoxes;
  r.taxonomy_id = header.at("taxonomy");
  r.thresholds = header.at("thresholds").get<std::vector<real>>();
  auto arr = [](const json& j) {
    std::vector<real> v;
    for (const json& x : j) v.push_back(x.is_null() ? kNan : x.get<real>());
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line);
    r.category_names.push_back(row.at("category"));
    r.category_ids.push_back(row.at("id"));
    r.gt_counts.push_back(row.at("gt"));
    r.ap.push_back(arr(row.at("ap")));
    r.recall.push_back(arr(row.at("recall")));
  }
  return r;
}

}  // namespace tdla
