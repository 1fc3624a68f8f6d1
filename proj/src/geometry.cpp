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

#include "tdla/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tdla {

real iou(const BBox& a, const BBox& b) {
  const real iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const real ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0;
  const real inter = iw * ih;
  const real uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0;
}

real giou(const BBox& a, const BBox& b) {
  const real iw = std::max<real>(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const real ih = std::max<real>(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const real inter = iw * ih;
  const real uni = a.area() + b.area() - inter;
  const real hull = (std::max(a.x_max, b.x_max) - std::min(a.x_min, b.x_min)) *
                    (std::max(a.y_max, b.y_max) - std::min(a.y_min, b.y_min));
  const real i = uni > 0 ? inter / uni : 0;
  return hull > 0 ? i - (hull - uni) / hull : i;
}

real mask_iou(const Mask2D& a, const Mask2D& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error("mask_iou: dimension mismatch");
  std::int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  return uni > 0 ? static_cast<real>(inter) / static_cast<real>(uni) : 0;
}

BBox box_from_mask(const Mask2D& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw Error("box_from_mask: empty mask");
  return {real(x0), real(y0), real(x1 + 1), real(y1 + 1)};
}

BBox box_from_mask(const InstanceMask& m) {
  if (!m.is_polygons()) return box_from_mask(m.raster());
  // Rasterize locally in a tight integer window around the vertices.
  real lo_x = std::numeric_limits<real>::infinity(), lo_y = lo_x;
  real hi_x = -lo_x, hi_y = -lo_x;
  for (const Polygon& p : m.polygons())
    for (const auto& v : p) {
      lo_x = std::min(lo_x, v[0]);
      lo_y = std::min(lo_y, v[1]);
      hi_x = std::max(hi_x, v[0]);
      hi_y = std::max(hi_y, v[1]);
    }
  if (!(lo_x <= hi_x)) throw Error("box_from_mask: empty mask");
  const int ox = static_cast<int>(std::floor(lo_x)), oy = static_cast<int>(std::floor(lo_y));
  const int w = static_cast<int>(std::ceil(hi_x)) - ox, h = static_cast<int>(std::ceil(hi_y)) - oy;
  std::vector<Polygon> shifted = m.polygons();
  for (Polygon& p : shifted)
    for (auto& v : p) {
      v[0] -= ox;
      v[1] -= oy;
    }
  BBox local = box_from_mask(rasterize(shifted, std::max(w, 1), std::max(h, 1)));
  return {local.x_min + ox, local.y_min + oy, local.x_max + ox, local.y_max + oy};
}

Mask2D mask_from_box(const BBox& b, int width, int height) {
  Mask2D out(width, height);
  const int x0 = std::max(0, static_cast<int>(std::ceil(b.x_min - 0.5)));
  const int x1 = std::min(width, static_cast<int>(std::ceil(b.x_max - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(b.y_min - 0.5)));
  const int y1 = std::min(height, static_cast<int>(std::ceil(b.y_max - 0.5)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) out.set(x, y, 1);
  return out;
}

Assignment hungarian(const CostMatrix& c) {
  // Solve with rows <= cols; transpose otherwise and swap back at the end.
  const bool flipped = c.rows > c.cols;
  const int n = flipped ? c.cols : c.rows;
  const int m = flipped ? c.rows : c.cols;
  Assignment result;
  if (n == 0) return result;
  auto cost_at = [&](int i, int j) { return flipped ? c.at(j, i) : c.at(i, j); };

  const real inf = std::numeric_limits<real>::infinity();
  std::vector<real> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<real> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      real delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const real cur = cost_at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (int j = 1; j <= m; ++j) {
    if (match[j] == 0) continue;
    const int row = match[j] - 1, col = j - 1;
    result.pairs.emplace_back(flipped ? col : row, flipped ? row : col);
    result.total_cost += cost_at(row, col);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

NormBox to_norm_cxcywh(const BBox& b, real page_w, real page_h) {
  return {(b.x_min + b.x_max) / 2 / page_w, (b.y_min + b.y_max) / 2 / page_h,
          b.width() / page_w, b.height() / page_h};
}

BBox from_norm_cxcywh(const NormBox& b, real page_w, real page_h) {
  return {(b[0] - b[2] / 2) * page_w, (b[1] - b[3] / 2) * page_h,
          (b[0] + b[2] / 2) * page_w, (b[1] + b[3] / 2) * page_h};
}

BBox corners_of(const NormBox& b) { return from_norm_cxcywh(b, 1, 1); }

CostMatrix matching_cost(const IterationOutput& pred, const std::vector<EncodedGt>& gt,
                         const MatchWeights& w) {
  const int n = pred.num_queries;
  const int m = static_cast<int>(gt.size());
  const int c1 = pred.num_classes + 1;
  const int d = pred.mask_dim;
  for (const EncodedGt& g : gt)
    if (static_cast<int>(g.mask_embedding.size()) != d)
      throw Error("matching_cost: mask embedding dimension mismatch");

  CostMatrix out(n, m);
  std::vector<real> probs(static_cast<size_t>(n) * c1);
  for (int i = 0; i < n; ++i) {
    const real* logits = &pred.class_logits[static_cast<size_t>(i) * c1];
    real mx = logits[0];
    for (int k = 1; k < c1; ++k) mx = std::max(mx, logits[k]);
    real z = 0;
    for (int k = 0; k < c1; ++k) z += std::exp(logits[k] - mx);
    for (int k = 0; k < c1; ++k) probs[static_cast<size_t>(i) * c1 + k] = std::exp(logits[k] - mx) / z;
  }
  for (int i = 0; i < n; ++i) {
    const NormBox bi{pred.boxes[i * 4 + 0], pred.boxes[i * 4 + 1], pred.boxes[i * 4 + 2],
                     pred.boxes[i * 4 + 3]};
    const BBox ci = corners_of(bi);
    const real* ei = &pred.mask_embeddings[static_cast<size_t>(i) * d];
    for (int j = 0; j < m; ++j) {
      const EncodedGt& g = gt[j];
      real l1 = 0;
      for (int k = 0; k < 4; ++k) l1 += std::abs(bi[k] - g.box[k]);
      real sq = 0;
      for (int k = 0; k < d; ++k) {
        const real diff = ei[k] - g.mask_embedding[k];
        sq += diff * diff;
      }
      out.at(i, j) = -w.cls * probs[static_cast<size_t>(i) * c1 + g.class_index] +
                     w.l1 * l1 + w.giou * (1 - giou(ci, corners_of(g.box))) +
                     w.mask * sq / d;
    }
  }
  return out;
}

}  // namespace tdla
