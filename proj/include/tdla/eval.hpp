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

#ifndef TDLA_EVAL_HPP_
#define TDLA_EVAL_HPP_

#include <map>
#include <string>
#include <vector>

#include "tdla/types.hpp"

namespace tdla {

struct EvalConfig {
  std::vector<real> iou_thresholds;  // strictly increasing, in (0, 1]
  int max_detections = 100;          // per image per category

  /// 0.50:0.05:0.95, 10 thresholds, 100 detections.
  static EvalConfig coco_default();
};

enum class EvalMode { kBoxes, kMasks };

/// Per-category AP/recall per IoU threshold. Categories absent from the
/// ground truth carry NaN and are excluded from the aggregates.
struct EvalResult {
  EvalMode mode = EvalMode::kBoxes;
  std::string taxonomy_id;
  std::vector<real> thresholds;
  std::vector<int> category_ids;
  std::vector<std::string> category_names;
  std::vector<std::int64_t> gt_counts;    // [category]
  std::vector<std::vector<real>> ap;      // [category][threshold]
  std::vector<std::vector<real>> recall;  // [category][threshold], at max_detections

  real map() const;
  real ap_at(real threshold) const;
  real ar() const;
  real category_ap(size_t index) const;  // mean over thresholds, NaN without gt

  /// Named metric table: mAP, AP50, AP75, AR, then cat:<name> rows.
  std::vector<std::pair<std::string, real>> metrics() const;
};

using Predictions = std::map<std::int64_t, std::vector<Instance>>;

/// COCO-style evaluation: greedy score-descending matching, each ground truth
/// used at most once, 101-point interpolated AP. Box mode falls back to the
/// mask's bounding rectangle for zero-area boxes; mask mode fills the box for
/// predictions without masks.
EvalResult evaluate(const Predictions& preds, const Dataset& gt, const EvalConfig& cfg,
                    EvalMode mode);

/// Rows (category, AP) in the layout of the per-subset result tables;
/// categories without ground truth print "nan".
std::string per_category_report(const EvalResult& r);

struct MetricDelta {
  std::string name;
  real a = 0, b = 0, delta = 0;  // delta = a - b
};

struct RunDiff {
  std::vector<MetricDelta> rows;  // sorted by |delta|, largest first
};

RunDiff compare_runs(const EvalResult& a, const EvalResult& b);
RunDiff compare_metric_tables(const std::vector<std::pair<std::string, real>>& a,
                              const std::vector<std::pair<std::string, real>>& b);
std::string format_diff(const RunDiff& d);

/// Line-delimited results file, loadable for later comparison.
std::string eval_result_to_jsonl(const EvalResult& r);
EvalResult eval_result_from_jsonl(const std::string& text);

}  // namespace tdla

#endif  // TDLA_EVAL_HPP_
