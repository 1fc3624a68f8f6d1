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

#include "tdla/mask.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace tdla {

std::int64_t Mask2D::count() const {
  std::int64_t n = 0;
  for (auto v : data) n += v;
  return n;
}

Mask2D rasterize(const std::vector<Polygon>& polygons, int width, int height) {
  Mask2D out(width, height);
  std::vector<real> xs;
  for (int y = 0; y < height; ++y) {
    const real cy = y + 0.5;
    xs.clear();
    for (const Polygon& poly : polygons) {
      const size_t n = poly.size();
      if (n < 3) continue;
      for (size_t i = 0; i < n; ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % n];
        const real y1 = a[1], y2 = b[1];
        if (y1 == y2) continue;  // horizontal edges never cross the scanline
        const real ylo = std::min(y1, y2), yhi = std::max(y1, y2);
        if (cy < ylo || cy >= yhi) continue;  // half-open in y avoids double-counting vertices
        xs.push_back(a[0] + (cy - y1) * (b[0] - a[0]) / (y2 - y1));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      int x0 = static_cast<int>(std::ceil(xs[k] - 0.5));
      int x1 = static_cast<int>(std::ceil(xs[k + 1] - 0.5));  // exclusive
      x0 = std::max(x0, 0);
      x1 = std::min(x1, width);
      for (int x = x0; x < x1; ++x) out.set(x, y, out.at(x, y) ^ 1);
    }
  }
  return out;
}

std::vector<Polygon> polygonize(const Mask2D& m) {
  // Active rectangles keyed by their run [x0, x1); extended while the same run
  // repeats on consecutive rows.
  struct Rect {
    int x0, x1, y0, y1;
  };
  std::vector<Polygon> out;
  std::map<std::pair<int, int>, Rect> active;
  auto flush = [&](const Rect& r) {
    out.push_back(Polygon{{{real(r.x0), real(r.y0)},
                           {real(r.x1), real(r.y0)},
                           {real(r.x1), real(r.y1)},
                           {real(r.x0), real(r.y1)}}});
  };
  for (int y = 0; y <= m.height; ++y) {
    std::map<std::pair<int, int>, Rect> next;
    if (y < m.height) {
      int x = 0;
      while (x < m.width) {
        if (!m.at(x, y)) {
          ++x;
          continue;
        }
        int x0 = x;
        while (x < m.width && m.at(x, y)) ++x;
        const std::pair<int, int> key{x0, x};
        auto it = active.find(key);
        if (it != active.end()) {
          Rect r = it->second;
          r.y1 = y + 1;
          next.emplace(key, r);
          active.erase(it);
        } else {
          next.emplace(key, Rect{x0, x, y, y + 1});
        }
      }
    }
    for (auto& [key, r] : active) flush(r);
    active = std::move(next);
  }
  return out;
}

Mask2D as_raster(const InstanceMask& m, int width, int height) {
  if (m.is_polygons()) return rasterize(m.polygons(), width, height);
  const Mask2D& r = m.raster();
  if (r.width != width || r.height != height)
    throw Error("as_raster: raster mask is " + std::to_string(r.width) + "x" +
                std::to_string(r.height) + ", page is " + std::to_string(width) + "x" +
                std::to_string(height));
  return r;
}

real polygon_area(const std::vector<Polygon>& polygons) {
  real total = 0;
  for (const Polygon& p : polygons) {
    real s = 0;
    const size_t n = p.size();
    for (size_t i = 0; i < n; ++i) {
      const auto& a = p[i];
      const auto& b = p[(i + 1) % n];
      s += a[0] * b[1] - b[0] * a[1];
    }
    total += std::abs(s) / 2;
  }
  return total;
}

}  // namespace tdla
