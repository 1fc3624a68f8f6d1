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

#ifndef TDLA_MASK_HPP_
#define TDLA_MASK_HPP_

#include "tdla/types.hpp"

namespace tdla {

/// Even-odd scanline fill of a polygon set at pixel centers. A pixel (x, y) is
/// set iff its center (x+0.5, y+0.5) lies inside the combined edge set by the
/// even-odd rule.
Mask2D rasterize(const std::vector<Polygon>& polygons, int width, int height);

/// Decomposes a raster into disjoint axis-aligned rectangles (maximal
/// vertically merged horizontal runs), one polygon each. Pixel-exact:
/// rasterize(polygonize(m)) == m.
std::vector<Polygon> polygonize(const Mask2D& m);

/// Raster view of a mask in a width x height page frame. Polygon masks are
/// rasterized lazily; raster masks must already match the page dimensions.
Mask2D as_raster(const InstanceMask& m, int width, int height);

/// Sum of |shoelace| areas over the polygon list.
real polygon_area(const std::vector<Polygon>& polygons);

}  // namespace tdla

#endif  // TDLA_MASK_HPP_
