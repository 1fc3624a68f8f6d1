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

#include <cmath>

#include "oracles.hpp"
#include "tdla/geometry.hpp"
#include "tdla/io_util.hpp"
#include "tdla/mask.hpp"

using namespace tdla;

TEST_CASE("iou basics") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
}

TEST_CASE("iou matches the rasterized pixel-count oracle on integer boxes") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const BBox a{real(rng.uniform_int(0, 20)), real(rng.uniform_int(0, 20)), 0, 0};
    const BBox b{real(rng.uniform_int(0, 20)), real(rng.uniform_int(0, 20)), 0, 0};
    BBox a2{a.x_min, a.y_min, a.x_min + rng.uniform_int(1, 15), a.y_min + rng.uniform_int(1, 15)};
    BBox b2{b.x_min, b.y_min, b.x_min + rng.uniform_int(1, 15), b.y_min + rng.uniform_int(1, 15)};
    CHECK(iou(a2, b2) == doctest::Approx(oracle::pixel_count_iou(a2, b2)).epsilon(1e-12));
  }
}

TEST_CASE("giou examples and symmetry") {
  const BBox a{0, 0, 1, 1};
  CHECK(giou(a, a) == doctest::Approx(1.0));
  // disjoint unit boxes with a unit gap: iou 0, hull area 3, excess 1
  CHECK(giou({0, 0, 1, 1}, {2, 0, 3, 1}) == doctest::Approx(-1.0 / 3));
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const BBox p{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    BBox p2{p.x_min, p.y_min, p.x_min + rng.uniform(0.5, 10), p.y_min + rng.uniform(0.5, 10)};
    const BBox q{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    BBox q2{q.x_min, q.y_min, q.x_min + rng.uniform(0.5, 10), q.y_min + rng.uniform(0.5, 10)};
    CHECK(giou(p2, q2) == doctest::Approx(giou(q2, p2)).epsilon(1e-12));
    CHECK(giou(p2, q2) <= iou(p2, q2) + 1e-12);
    CHECK(giou(p2, q2) >= -1.0 - 1e-12);
    CHECK(giou(p2, q2) <= 1.0 + 1e-12);
  }
}

TEST_CASE("mask_iou equals box iou for rectangle masks") {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const int ax = rng.uniform_int(0, 10), ay = rng.uniform_int(0, 10);
    const int bx = rng.uniform_int(0, 10), by = rng.uniform_int(0, 10);
    const BBox a{real(ax), real(ay), real(ax + rng.uniform_int(1, 10)), real(ay + rng.uniform_int(1, 10))};
    const BBox b{real(bx), real(by), real(bx + rng.uniform_int(1, 10)), real(by + rng.uniform_int(1, 10))};
    CHECK(mask_iou(mask_from_box(a, 24, 24), mask_from_box(b, 24, 24)) ==
          doctest::Approx(iou(a, b)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mask_iou(Mask2D(3, 3), Mask2D(4, 3)), Error);
}

TEST_CASE("mask_iou identities") {
  const Mask2D a = mask_from_box({1, 1, 5, 5}, 8, 8);
  CHECK(mask_iou(a, a) == doctest::Approx(1.0));
  const Mask2D b = mask_from_box({6, 6, 8, 8}, 8, 8);
  CHECK(mask_iou(a, b) == 0.0);
}

TEST_CASE("box_from_mask conventions") {
  Mask2D full(10, 6);
  for (auto& v : full.data) v = 1;
  const BBox fb = box_from_mask(full);
  CHECK(fb == BBox{0, 0, 10, 6});

  Mask2D one(8, 8);
  one.set(3, 4, 1);
  CHECK(box_from_mask(one) == BBox{3, 4, 4, 5});

  Mask2D empty(4, 4);
  CHECK_THROWS_AS(box_from_mask(empty), Error);
}

TEST_CASE("box_from_mask matches exhaustive pixel scan on random polygon masks") {
  Rng rng(23);
  for (int t = 0; t < 40; ++t) {
    std::vector<Polygon> polys;
    const real cx = rng.uniform(8, 24), cy = rng.uniform(8, 24);
    Polygon p;
    const int k = rng.uniform_int(3, 7);
    for (int i = 0; i < k; ++i) {
      const real ang = 2 * M_PI * i / k + rng.uniform(0, 0.4);
      const real r = rng.uniform(2, 7);
      p.push_back({cx + r * std::cos(ang), cy + r * std::sin(ang)});
    }
    polys.push_back(p);
    const Mask2D m = rasterize(polys, 32, 32);
    if (m.count() == 0) continue;
    // exhaustive scan
    int x0 = 32, y0 = 32, x1 = -1, y1 = -1;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (m.at(x, y)) {
          x0 = std::min(x0, x); y0 = std::min(y0, y);
          x1 = std::max(x1, x); y1 = std::max(y1, y);
        }
    const BBox got = box_from_mask(InstanceMask::from_polygons(polys));
    CHECK(got.x_min == x0);
    CHECK(got.y_min == y0);
    CHECK(got.x_max == x1 + 1);
    CHECK(got.y_max == y1 + 1);
  }
}

TEST_CASE("mask_from_box round trips and preserves area on integer boxes") {
  Mask2D whole = mask_from_box({0, 0, 12, 9}, 12, 9);
  CHECK(whole.count() == 12 * 9);
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const int x0 = rng.uniform_int(0, 10), y0 = rng.uniform_int(0, 10);
    const BBox b{real(x0), real(y0), real(x0 + rng.uniform_int(1, 10)), real(y0 + rng.uniform_int(1, 10))};
    const Mask2D m = mask_from_box(b, 24, 24);
    CHECK(box_from_mask(m) == b);
    CHECK(static_cast<real>(m.count()) == doctest::Approx(b.area()));
  }
}

TEST_CASE("hungarian: diagonal and 2x2 example") {
  CostMatrix diag(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) diag.at(i, j) = i == j ? 0 : 10;
  Assignment a = hungarian(diag);
  REQUIRE(a.pairs.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(a.pairs[static_cast<size_t>(i)] == std::pair{i, i});

  CostMatrix c(2, 2);
  c.at(0, 0) = 1; c.at(0, 1) = 2;
  c.at(1, 0) = 3; c.at(1, 1) = 1;
  a = hungarian(c);
  CHECK(a.total_cost == doctest::Approx(2.0));
  CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
}

TEST_CASE("hungarian equals brute force on random matrices, square and rectangular") {
  Rng rng(41);
  for (int t = 0; t < 300; ++t) {
    const int n = rng.uniform_int(1, 6), m = rng.uniform_int(1, 6);
    CostMatrix c(n, m);
    for (auto& v : c.cost) v = rng.uniform(-5, 5);
    const Assignment a = hungarian(c);
    CHECK(a.pairs.size() == static_cast<size_t>(std::min(n, m)));
    CHECK(a.total_cost == doctest::Approx(oracle::brute_force_assignment_cost(c)).epsilon(1e-9));
    // one-to-one
    std::set<int> rows, cols;
    for (auto [i, j] : a.pairs) {
      CHECK(rows.insert(i).second);
      CHECK(cols.insert(j).second);
    }
  }
}

TEST_CASE("hungarian beats sampled permutations at larger sizes") {
  Rng rng(43);
  const int n = 50;
  CostMatrix c(n, n);
  for (auto& v : c.cost) v = rng.uniform(0, 1);
  const Assignment a = hungarian(c);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 200; ++t) {
    for (int i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(0, i - 1)]);
    real total = 0;
    for (int i = 0; i < n; ++i) total += c.at(i, perm[static_cast<size_t>(i)]);
    CHECK(a.total_cost <= total + 1e-9);
  }
}

namespace {

IterationOutput make_pred(int n, int classes, int d) {
  IterationOutput io;
  io.num_queries = n;
  io.num_classes = classes;
  io.mask_dim = d;
  io.class_logits.assign(static_cast<size_t>(n) * (classes + 1), 0);
  io.boxes.assign(static_cast<size_t>(n) * 4, 0.5);
  io.mask_embeddings.assign(static_cast<size_t>(n) * d, 0);
  return io;
}

}  // namespace

TEST_CASE("matching cost: exact predictions give diagonal minima") {
  const int n = 3, classes = 4, d = 8;
  Rng rng(53);
  std::vector<EncodedGt> gt;
  IterationOutput pred = make_pred(n, classes, d);
  for (int j = 0; j < n; ++j) {
    EncodedGt g;
    g.class_index = 1 + j;
    g.box = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3),
             rng.uniform(0.1, 0.3)};
    g.mask_embedding.resize(static_cast<size_t>(d));
    for (auto& e : g.mask_embedding) e = rng.uniform(-1, 1);
    gt.push_back(g);
    for (int c = 0; c < 4; ++c) pred.boxes[static_cast<size_t>(j) * 4 + c] = g.box[c];
    for (int k = 0; k < d; ++k)
      pred.mask_embeddings[static_cast<size_t>(j) * d + k] = g.mask_embedding[static_cast<size_t>(k)];
    pred.class_logits[static_cast<size_t>(j) * (classes + 1) + g.class_index] = 8;
  }
  const CostMatrix c = matching_cost(pred, gt, MatchWeights{1, 1, 1, 1});
  for (int i = 0; i < n; ++i)
    for (int j2 = 0; j2 < n; ++j2)
      if (i != j2) CHECK(c.at(i, i) < c.at(i, j2));
}

TEST_CASE("matching cost: single pair equals the hand-computed formula") {
  IterationOutput pred = make_pred(1, 2, 2);
  pred.class_logits = {0.2, 1.1, -0.3};
  pred.boxes = {0.4, 0.5, 0.2, 0.3};
  pred.mask_embeddings = {0.5, -1.0};
  EncodedGt g;
  g.class_index = 2;
  g.box = {0.5, 0.5, 0.25, 0.2};
  g.mask_embedding = {0.0, 0.5};
  const MatchWeights w{2, 5, 2, 1};
  const CostMatrix c = matching_cost(pred, {g}, w);

  // direct formula evaluation
  const real z = std::exp(0.2) + std::exp(1.1) + std::exp(-0.3);
  const real p2 = std::exp(-0.3) / z;
  const real l1 = std::abs(0.4 - 0.5) + std::abs(0.5 - 0.5) + std::abs(0.2 - 0.25) +
                  std::abs(0.3 - 0.2);
  const real g_iou = giou(corners_of({0.4, 0.5, 0.2, 0.3}), corners_of({0.5, 0.5, 0.25, 0.2}));
  const real sq = (0.5 * 0.5 + 1.5 * 1.5) / 2;
  CHECK(c.at(0, 0) == doctest::Approx(-w.cls * p2 + w.l1 * l1 + w.giou * (1 - g_iou) +
                                      w.mask * sq).epsilon(1e-12));
}

TEST_CASE("matching argmin is invariant under positive weight scaling") {
  Rng rng(61);
  for (int t = 0; t < 20; ++t) {
    const int n = 4, m = 3, classes = 3, d = 4;
    IterationOutput pred = make_pred(n, classes, d);
    for (auto& v : pred.class_logits) v = rng.uniform(-2, 2);
    for (int i = 0; i < n; ++i) {
      pred.boxes[static_cast<size_t>(i) * 4 + 0] = rng.uniform(0.2, 0.8);
      pred.boxes[static_cast<size_t>(i) * 4 + 1] = rng.uniform(0.2, 0.8);
      pred.boxes[static_cast<size_t>(i) * 4 + 2] = rng.uniform(0.05, 0.4);
      pred.boxes[static_cast<size_t>(i) * 4 + 3] = rng.uniform(0.05, 0.4);
    }
    for (auto& v : pred.mask_embeddings) v = rng.uniform(-1, 1);
    std::vector<EncodedGt> gt;
    for (int j = 0; j < m; ++j) {
      EncodedGt g;
      g.class_index = 1 + rng.uniform_int(0, classes - 1);
      g.box = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
               rng.uniform(0.05, 0.4)};
      g.mask_embedding.resize(static_cast<size_t>(d));
      for (auto& e : g.mask_embedding) e = rng.uniform(-1, 1);
      gt.push_back(g);
    }
    const MatchWeights w1{2, 5, 2, 1};
    const MatchWeights w2{2 * 3.7, 5 * 3.7, 2 * 3.7, 1 * 3.7};
    const Assignment a1 = hungarian(matching_cost(pred, gt, w1));
    const Assignment a2 = hungarian(matching_cost(pred, gt, w2));
    CHECK(a1.pairs == a2.pairs);
  }
}

TEST_CASE("no ground truth ever receives two predictions") {
  Rng rng(71);
  const int n = 8, m = 5;
  CostMatrix c(n, m);
  for (auto& v : c.cost) v = rng.uniform(0, 1);
  const Assignment a = hungarian(c);
  std::set<int> gts;
  for (auto [i, j] : a.pairs) CHECK(gts.insert(j).second);
  CHECK(a.pairs.size() == static_cast<size_t>(m));
}
