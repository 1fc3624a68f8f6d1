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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tdla/geometry.hpp"
#include "tdla/io_util.hpp"
#include "tdla/mask.hpp"
#include "tdla/types.hpp"

using namespace tdla;

namespace {

Dataset one_page_dataset() {
  Dataset d;
  d.taxonomy = Taxonomy::from_names("t", {"a", "b"});
  PageRecord p;
  p.image_id = 1;
  p.width = 100;
  p.height = 80;
  Instance inst;
  inst.category_id = 1;
  inst.bbox = {10, 10, 30, 20};
  inst.mask = InstanceMask::from_polygons({Polygon{{{10, 10}, {30, 10}, {30, 20}, {10, 20}}}});
  p.instances.push_back(inst);
  d.pages.push_back(p);
  return d;
}

}  // namespace

TEST_CASE("well-formed dataset has no violations") {
  CHECK(validate_dataset(one_page_dataset()).empty());
}

TEST_CASE("bbox order violation") {
  Dataset d = one_page_dataset();
  d.pages[0].instances[0].bbox = {30, 10, 10, 20};
  d.pages[0].instances[0].mask.reset();
  auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "bbox order");
  CHECK(v[0].image_id == 1);
  CHECK(v[0].instance_index == 0);
}

TEST_CASE("unknown category violation, cross-checked by membership scan") {
  Dataset d = one_page_dataset();
  d.pages[0].instances[0].category_id = 99;
  auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "unknown category");
  // independent membership scan over the taxonomy list
  bool found = false;
  for (const Category& c : d.taxonomy.categories)
    if (c.id == 99) found = true;
  CHECK(!found);
}

TEST_CASE("page and instance violations") {
  Dataset d = one_page_dataset();
  d.pages[0].instances[0].bbox = {10, 10, 200, 20};  // outside the page
  d.pages[0].instances[0].mask.reset();
  auto v = validate_dataset(d);
  REQUIRE(!v.empty());
  CHECK(v[0].rule == "bbox bounds");

  d = one_page_dataset();
  d.pages.push_back(d.pages[0]);  // duplicate image id
  v = validate_dataset(d);
  REQUIRE(!v.empty());
  CHECK(v[0].rule == "duplicate image_id");

  d = one_page_dataset();
  d.pages[0].instances[0].score = 1.5;
  v = validate_dataset(d);
  REQUIRE(!v.empty());
  CHECK(v[0].rule == "score range");
}

TEST_CASE("mask escaping the bbox is flagged") {
  Dataset d = one_page_dataset();
  d.pages[0].instances[0].mask =
      InstanceMask::from_polygons({Polygon{{{10, 10}, {50, 10}, {50, 20}, {10, 20}}}});
  auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "bbox-mask mismatch");
}

TEST_CASE("rasterize / polygonize round trip is pixel-exact") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Mask2D m(24, 18);
    for (int i = 0; i < 6; ++i) {
      const int x0 = rng.uniform_int(0, 20), y0 = rng.uniform_int(0, 14);
      const int w = rng.uniform_int(1, 23 - x0), h = rng.uniform_int(1, 17 - y0);
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.set(x, y, 1);
    }
    const auto polys = polygonize(m);
    const Mask2D back = rasterize(polys, 24, 18);
    CHECK(back == m);
    // rasterize . polygonize . rasterize == rasterize
    CHECK(rasterize(polygonize(back), 24, 18) == back);
  }
}

TEST_CASE("even-odd rasterization of a triangle matches point-in-polygon") {
  const Polygon tri{{{2, 1}, {14, 3}, {5, 11}}};
  const Mask2D m = rasterize({tri}, 16, 12);
  auto inside = [&](real px, real py) {
    bool in = false;
    for (size_t i = 0, j = tri.size() - 1; i < tri.size(); j = i++) {
      const bool cross = (tri[i][1] > py) != (tri[j][1] > py);
      if (cross) {
        const real x =
            tri[j][0] + (py - tri[j][1]) * (tri[i][0] - tri[j][0]) / (tri[i][1] - tri[j][1]);
        if (px < x) in = !in;
      }
    }
    return in;
  };
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) CHECK(m.at(x, y) == (inside(x + 0.5, y + 0.5) ? 1 : 0));
}

TEST_CASE("subset names round trip and group to the seven-way view") {
  for (auto s : {Subset::kScientificArticle, Subset::kTextbook, Subset::kTestPaper,
                 Subset::kMagazineCh, Subset::kMagazineEn, Subset::kNewspaperCh,
                 Subset::kNewspaperEn, Subset::kNote, Subset::kBook, Subset::kSynthetic})
    CHECK(subset_from_string(to_string(s)) == s);
  CHECK(subset_group(Subset::kMagazineCh) == "magazine");
  CHECK(subset_group(Subset::kMagazineEn) == "magazine");
  CHECK(subset_group(Subset::kNewspaperCh) == "newspaper");
  CHECK(subset_group(Subset::kNewspaperEn) == "newspaper");
  CHECK(subset_group(Subset::kNote) == "note");
  CHECK_THROWS_AS(subset_from_string("bogus"), SchemaError);
}

TEST_CASE("polygon area matches raster count for rectangles") {
  const std::vector<Polygon> polys{Polygon{{{3, 2}, {9, 2}, {9, 7}, {3, 7}}}};
  CHECK(polygon_area(polys) == doctest::Approx(30));
  CHECK(rasterize(polys, 12, 9).count() == 30);
}

TEST_CASE("min bounding rect of every valid instance mask stays inside bbox") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int x0 = rng.uniform_int(0, 40), y0 = rng.uniform_int(0, 30);
    const int w = rng.uniform_int(2, 20), h = rng.uniform_int(2, 20);
    Instance inst;
    inst.category_id = 1;
    inst.bbox = {real(x0), real(y0), real(x0 + w), real(y0 + h)};
    inst.mask = InstanceMask::from_polygons(
        {Polygon{{{real(x0), real(y0)},
                  {real(x0 + w), real(y0)},
                  {real(x0 + w), real(y0 + h)},
                  {real(x0), real(y0 + h)}}}});
    const BBox mbr = box_from_mask(*inst.mask);
    CHECK(mbr.x_min >= inst.bbox.x_min - 1);
    CHECK(mbr.y_min >= inst.bbox.y_min - 1);
    CHECK(mbr.x_max <= inst.bbox.x_max + 1);
    CHECK(mbr.y_max <= inst.bbox.y_max + 1);
  }
}
