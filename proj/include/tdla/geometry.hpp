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

#ifndef TDLA_GEOMETRY_HPP_
#define TDLA_GEOMETRY_HPP_

#include <utility>
#include <vector>

#include "tdla/mask.hpp"
#include "tdla/types.hpp"

namespace tdla {

real iou(const BBox& a, const BBox& b);

/// Generalized IoU: iou - |hull \ union| / |hull|, in [-1, 1].
real giou(const BBox& a, const BBox& b);

real mask_iou(const Mask2D& a, const Mask2D& b);

/// Tightest axis-aligned box around the on-pixels (half-open pixel spans).
BBox box_from_mask(const Mask2D& m);
BBox box_from_mask(const InstanceMask& m);

/// Filled-rectangle raster of b in a width x height page.
Mask2D mask_from_box(const BBox& b, int width, int height);

/// Dense N x M cost matrix, rows = predictions, cols = ground truths.
struct CostMatrix {
  int rows = 0, cols = 0;
  std::vector<real> cost;  // row-major

  CostMatrix() = default;
  CostMatrix(int n, int m) : rows(n), cols(m), cost(static_cast<size_t>(n) * m, 0) {}
  real& at(int i, int j) { return cost[static_cast<size_t>(i) * cols + j]; }
  real at(int i, int j) const { return cost[static_cast<size_t>(i) * cols + j]; }
};

/// One-to-one matching; |pairs| = min(rows, cols) after a complete solve.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (pred_index, gt_index)
  real total_cost = 0;
};

/// Minimum-cost complete bipartite assignment (Jonker-Volgenant style
/// shortest augmenting paths, O(n^2 m)).
Assignment hungarian(const CostMatrix& c);

/// Box as (cx, cy, w, h), each normalized to [0, 1] of the page frame.
using NormBox = std::array<real, 4>;

NormBox to_norm_cxcywh(const BBox& b, real page_w, real page_h);
BBox from_norm_cxcywh(const NormBox& b, real page_w, real page_h);
BBox corners_of(const NormBox& b);  // unit frame

/// Ground-truth instance pre-encoded for matching: class index, normalized
/// box, and mask embedding of dimension D.
struct EncodedGt {
  int class_index = 0;  // taxonomy category id; 0 is background and never appears here
  NormBox box;
  std::vector<real> mask_embedding;
};

struct MatchWeights {
  real cls = 2, l1 = 5, giou = 2, mask = 1;
};

/// One refinement iteration's raw outputs, row-major arrays over N queries.
struct IterationOutput {
  int num_queries = 0, num_classes = 0, mask_dim = 0;
  std::vector<real> class_logits;     // N x (C+1), column 0 = background
  std::vector<real> boxes;            // N x 4, normalized cx,cy,w,h
  std::vector<real> mask_embeddings;  // N x D
};

/// cost(i,j) = -w.cls * p_i(class_j) + w.l1 * |b_i - b_j|_1
///           + w.giou * (1 - giou)   + w.mask * |e_i - e_j|_2^2 / D.
CostMatrix matching_cost(const IterationOutput& pred, const std::vector<EncodedGt>& gt,
                         const MatchWeights& w);

}  // namespace tdla

#endif  // TDLA_GEOMETRY_HPP_
