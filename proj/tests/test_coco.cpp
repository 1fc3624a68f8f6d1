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

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tdla/coco.hpp"
#include "tdla/io_util.hpp"
#include "tdla/mask.hpp"
#include "tdla/train.hpp"

using namespace tdla;

namespace {

const char* kMinimal = R"({
  "images": [{"id": 1, "width": 64, "height": 48, "file_name": "p1.ppm"}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 1,
                   "bbox": [4, 4, 10, 8], "iscrowd": 0,
                   "segmentation": [[4, 4, 14, 4, 14, 12, 4, 12]], "area": 80}],
  "categories": [{"id": 1, "name": "block"}]
})";

// 3 pages, 7 annotations, 2 categories (hand-written fixture).
const char* kThreePages = R"({
  "taxonomy": "fix",
  "images": [
    {"id": 1, "width": 100, "height": 100},
    {"id": 2, "width": 100, "height": 100},
    {"id": 3, "width": 120, "height": 90}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "iscrowd": 0},
    {"id": 2, "image_id": 1, "category_id": 2, "bbox": [20, 20, 10, 10], "iscrowd": 0},
    {"id": 3, "image_id": 1, "category_id": 1, "bbox": [40, 40, 10, 10], "iscrowd": 0},
    {"id": 4, "image_id": 2, "category_id": 2, "bbox": [0, 0, 50, 50], "iscrowd": 0},
    {"id": 5, "image_id": 2, "category_id": 2, "bbox": [60, 60, 20, 20], "iscrowd": 0},
    {"id": 6, "image_id": 3, "category_id": 1, "bbox": [5, 5, 30, 30], "iscrowd": 0},
    {"id": 7, "image_id": 3, "category_id": 1, "bbox": [50, 50, 30, 30], "iscrowd": 0}
  ],
  "categories": [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]
})";

}  // namespace

TEST_CASE("minimal file loads to one page, one instance") {
  const Dataset d = load_coco_text(kMinimal);
  REQUIRE(d.pages.size() == 1);
  REQUIRE(d.pages[0].instances.size() == 1);
  CHECK(d.taxonomy.size() == 1);
  CHECK(d.pages[0].instances[0].bbox == BBox{4, 4, 14, 12});
  CHECK(d.pages[0].instances[0].mask.has_value());
  CHECK(validate_dataset(d).empty());
}

TEST_CASE("dangling annotation is a parse error") {
  std::string text = kMinimal;
  text.replace(text.find("\"image_id\": 1"), 13, "\"image_id\": 9");
  CHECK_THROWS_WITH_AS(load_coco_text(text), doctest::Contains("dangling annotation"),
                       ParseError);
}

TEST_CASE("malformed json reports byte offset") {
  CHECK_THROWS_WITH_AS(load_coco_text("{\"images\": [}"), doctest::Contains("parse error"),
                       ParseError);
}

TEST_CASE("iscrowd=1 and zero-area boxes are rejected") {
  std::string text = kMinimal;
  text.replace(text.find("\"iscrowd\": 0"), 12, "\"iscrowd\": 1");
  CHECK_THROWS_AS(load_coco_text(text), SchemaError);

  text = kMinimal;
  text.replace(text.find("[4, 4, 10, 8]"), 13, "[4, 4, 0, 8]");
  CHECK_THROWS_WITH_AS(load_coco_text(text), doctest::Contains("zero-area"), SchemaError);
}

TEST_CASE("category clash against a provided taxonomy") {
  const Taxonomy tax = Taxonomy::from_names("other", {"not_block"});
  CHECK_THROWS_AS(load_coco_text(kMinimal, tax), SchemaError);
  const Taxonomy ok = Taxonomy::from_names("other", {"block"});
  CHECK_NOTHROW(load_coco_text(kMinimal, ok));
}

TEST_CASE("three-page fixture counts match an independent text scan") {
  const Dataset d = load_coco_text(kThreePages);
  CHECK(d.pages.size() == 3);
  CHECK(d.instance_count() == 7);
  // independent scan: count "image_id" occurrences in the raw text
  std::string text = kThreePages;
  size_t n = 0, pos = 0;
  while ((pos = text.find("\"image_id\"", pos)) != std::string::npos) {
    ++n;
    pos += 10;
  }
  CHECK(n == 7);
}

TEST_CASE("save/load round trip: empty and small datasets") {
  Dataset empty;
  empty.taxonomy = Taxonomy::from_names("t", {"x"});
  const std::string text = save_coco_text(empty);
  const Dataset back = load_coco_text(text);
  CHECK(back.pages.empty());
  CHECK(back.taxonomy.size() == 1);

  const Dataset d = load_coco_text(kThreePages);
  const Dataset d2 = load_coco_text(save_coco_text(d));
  REQUIRE(d2.pages.size() == d.pages.size());
  CHECK(d2.taxonomy.id == d.taxonomy.id);
  for (size_t p = 0; p < d.pages.size(); ++p) {
    CHECK(d2.pages[p].image_id == d.pages[p].image_id);
    REQUIRE(d2.pages[p].instances.size() == d.pages[p].instances.size());
  }
}

namespace {

// Deep structural comparison at 1e-6.
void check_dataset_equal(const Dataset& a, const Dataset& b) {
  REQUIRE(a.pages.size() == b.pages.size());
  REQUIRE(a.taxonomy.size() == b.taxonomy.size());
  for (int i = 0; i < a.taxonomy.size(); ++i) {
    CHECK(a.taxonomy.categories[static_cast<size_t>(i)].id ==
          b.taxonomy.categories[static_cast<size_t>(i)].id);
    CHECK(a.taxonomy.categories[static_cast<size_t>(i)].name ==
          b.taxonomy.categories[static_cast<size_t>(i)].name);
  }
  for (size_t p = 0; p < a.pages.size(); ++p) {
    const PageRecord& pa = a.pages[p];
    const PageRecord& pb = b.pages[p];
    CHECK(pa.image_id == pb.image_id);
    CHECK(pa.width == pb.width);
    CHECK(pa.height == pb.height);
    CHECK(pa.subset == pb.subset);
    REQUIRE(pa.instances.size() == pb.instances.size());
    for (size_t k = 0; k < pa.instances.size(); ++k) {
      const Instance& ia = pa.instances[k];
      const Instance& ib = pb.instances[k];
      CHECK(ia.category_id == ib.category_id);
      CHECK(ia.bbox.x_min == doctest::Approx(ib.bbox.x_min).epsilon(1e-6));
      CHECK(ia.bbox.y_max == doctest::Approx(ib.bbox.y_max).epsilon(1e-6));
      CHECK(ia.mask.has_value() == ib.mask.has_value());
      CHECK(ia.score.has_value() == ib.score.has_value());
      if (ia.score) CHECK(*ia.score == doctest::Approx(*ib.score).epsilon(1e-6));
      if (ia.mask) {
        const Mask2D ra = as_raster(*ia.mask, pa.width, pa.height);
        const Mask2D rb = as_raster(*ib.mask, pb.width, pb.height);
        CHECK(ra == rb);
      }
    }
  }
}

}  // namespace

TEST_CASE("random 50-page synthetic dataset round trips structurally") {
  const SynthCorpus corpus = generate_corpus(SynthPageSpec{}, 50, 2024);
  const Dataset back = load_coco_text(save_coco_text(corpus.dataset));
  check_dataset_equal(corpus.dataset, back);
}

TEST_CASE("dataset stats: tallies and shares") {
  const Dataset d = load_coco_text(kThreePages);
  const DatasetStats s = dataset_stats(d);
  REQUIRE(s.category_ids.size() == 2);
  CHECK(s.counts[0][0] == 4);
  CHECK(s.counts[1][0] == 3);
  CHECK(s.totals[0] == 7);
  CHECK(s.share_pct(0, 0) == doctest::Approx(4.0 / 7 * 100));

  // single instance of one category -> 100%
  Dataset single;
  single.taxonomy = Taxonomy::from_names("t", {"only"});
  PageRecord page;
  page.image_id = 1;
  page.width = 10;
  page.height = 10;
  page.instances.push_back({1, {0, 0, 5, 5}, {}, {}});
  single.pages.push_back(page);
  const DatasetStats ss = dataset_stats(single);
  CHECK(ss.share_pct(0, 0) == doctest::Approx(100.0));

  // counts 1 and 3 -> 25% / 75%
  Dataset two;
  two.taxonomy = Taxonomy::from_names("t", {"a", "b"});
  PageRecord page2;
  page2.image_id = 1;
  page2.width = 10;
  page2.height = 10;
  page2.instances.push_back({1, {0, 0, 2, 2}, {}, {}});
  for (int i = 0; i < 3; ++i) page2.instances.push_back({2, {3, 3, 6, 6}, {}, {}});
  two.pages.push_back(page2);
  const DatasetStats st = dataset_stats(two);
  CHECK(st.share_pct(0, 0) == doctest::Approx(25.0));
  CHECK(st.share_pct(1, 0) == doctest::Approx(75.0));

  // per-split percentages sum to 100
  real sum = 0;
  for (size_t c = 0; c < st.category_ids.size(); ++c) sum += st.share_pct(c, 0);
  CHECK(sum == doctest::Approx(100.0).epsilon(1e-4));
}

TEST_CASE("Table 2 fixture arithmetic: every printed share within 0.01") {
  std::ifstream in(data_dir() + "/fixtures/m6doc_table2.tsv");
  REQUIRE(in.good());
  std::string line;
  int rows = 0;
  std::int64_t sums[3] = {0, 0, 0};
  std::vector<std::array<real, 7>> parsed;  // counts and pcts per row
  std::int64_t totals[3] = {0, 0, 0};
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    std::getline(ls, name, '\t');
    std::array<real, 7> v{};
    for (int k = 1; k <= 6; ++k) {
      std::string tok;
      std::getline(ls, tok, '\t');
      v[static_cast<size_t>(k)] = std::stod(tok);
    }
    if (name == "TOTAL") {
      totals[0] = static_cast<std::int64_t>(v[1]);
      totals[1] = static_cast<std::int64_t>(v[3]);
      totals[2] = static_cast<std::int64_t>(v[5]);
      continue;
    }
    ++rows;
    sums[0] += static_cast<std::int64_t>(v[1]);
    sums[1] += static_cast<std::int64_t>(v[3]);
    sums[2] += static_cast<std::int64_t>(v[5]);
    parsed.push_back(v);
  }
  CHECK(rows == 74);
  CHECK(totals[0] == 143040);
  for (int k = 0; k < 3; ++k) CHECK(sums[k] == totals[k]);
  for (const auto& v : parsed)
    for (int k = 0; k < 3; ++k) {
      const real share = share_pct(static_cast<std::int64_t>(v[static_cast<size_t>(1 + 2 * k)]),
                                   totals[k]);
      CHECK(std::abs(share - v[static_cast<size_t>(2 + 2 * k)]) <= 0.01);
    }
}

TEST_CASE("stratified split: forced sizes, determinism, partition") {
  // 10 pages, one instance each, same category -> sizes (6, 1, 3)
  Dataset d;
  d.taxonomy = Taxonomy::from_names("t", {"only"});
  for (int i = 0; i < 10; ++i) {
    PageRecord p;
    p.image_id = i + 1;
    p.width = 10;
    p.height = 10;
    p.instances.push_back({1, {0, 0, 5, 5}, {}, {}});
    d.pages.push_back(p);
  }
  const SplitAssignment a = stratified_split(d, {6, 1, 3}, 7);
  int counts[3] = {0, 0, 0};
  std::set<std::int64_t> seen;
  for (const auto& [img, s] : a.by_image) {
    counts[static_cast<int>(s)]++;
    CHECK(seen.insert(img).second);
  }
  CHECK(seen.size() == 10);
  CHECK(counts[0] == 6);
  CHECK(counts[1] == 1);
  CHECK(counts[2] == 3);

  const SplitAssignment b = stratified_split(d, {6, 1, 3}, 7);
  CHECK(a.by_image == b.by_image);

  CHECK_THROWS_AS(stratified_split(d, {0, 0, 0}, 1), ConfigError);
}

TEST_CASE("stratified split balances instance shares on a synthetic corpus") {
  const SynthCorpus corpus = generate_corpus(SynthPageSpec{}, 100, 7);
  const SplitAssignment a = stratified_split(corpus.dataset, {6, 1, 3}, 7);
  const DatasetStats global = dataset_stats(corpus.dataset);
  const DatasetStats by_split = dataset_stats(corpus.dataset, a);
  for (size_t c = 0; c < global.category_ids.size(); ++c) {
    if (global.counts[c][0] < 30) continue;
    const real g = global.share_pct(c, 0);
    for (size_t s = 0; s < 3; ++s)
      CHECK(std::abs(by_split.share_pct(c, s) - g) <= 1.5);
  }
  // page sizes within +-1 of 6:1:3
  CHECK(std::abs(static_cast<real>(by_split.pages[0]) - 60.0) <= 1.0);
  CHECK(std::abs(static_cast<real>(by_split.pages[1]) - 10.0) <= 1.0);
  CHECK(std::abs(static_cast<real>(by_split.pages[2]) - 30.0) <= 1.0);
}

TEST_CASE("split manifest and split_datasets partition the pages") {
  const SynthCorpus corpus = generate_corpus(SynthPageSpec{}, 20, 3);
  const SplitAssignment a = stratified_split(corpus.dataset, {6, 1, 3}, 3);
  const auto parts = split_datasets(corpus.dataset, a);
  CHECK(parts[0].pages.size() + parts[1].pages.size() + parts[2].pages.size() == 20);
  const std::string manifest = format_split_manifest(a);
  size_t lines = 0;
  for (char ch : manifest) lines += ch == '\n';
  CHECK(lines == 20);
}
