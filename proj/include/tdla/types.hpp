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

#ifndef TDLA_TYPES_HPP_
#define TDLA_TYPES_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tdla {

using real = double;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

/// Axis-aligned box in pixel coordinates, origin top-left, corner form.
/// Pixel coverage follows the half-open convention [x_min, x_max) x [y_min, y_max).
struct BBox {
  real x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  real width() const { return x_max - x_min; }
  real height() const { return y_max - y_min; }
  real area() const { return width() * height(); }

  bool ordered() const { return x_min <= x_max && y_min <= y_max; }
  bool finite() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max);
  }

  static BBox from_xywh(real x, real y, real w, real h) { return {x, y, x + w, y + h}; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Closed polygon ring, vertices in pixel coordinates.
using Polygon = std::vector<std::array<real, 2>>;

/// Dense binary raster, row-major, values 0/1.
struct Mask2D {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;

  Mask2D() = default;
  Mask2D(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { data[static_cast<size_t>(y) * width + x] = v; }
  std::int64_t count() const;

  friend bool operator==(const Mask2D&, const Mask2D&) = default;
};

/// Instance mask: polygon list as annotated, or a page-sized binary raster.
struct InstanceMask {
  std::variant<std::vector<Polygon>, Mask2D> rep;

  bool is_polygons() const { return rep.index() == 0; }
  const std::vector<Polygon>& polygons() const { return std::get<0>(rep); }
  const Mask2D& raster() const { return std::get<1>(rep); }

  static InstanceMask from_polygons(std::vector<Polygon> polys) { return {std::move(polys)}; }
  static InstanceMask from_raster(Mask2D m) { return {std::move(m)}; }
};

struct Category {
  int id = 0;  // >= 1; 0 is reserved for the model's no-object class
  std::string name;
  std::string taxonomy_id;
};

/// Ordered category universe; ids are contiguous from 1 in list order.
struct Taxonomy {
  std::string id;
  std::vector<Category> categories;

  const Category* find(int category_id) const;
  const Category* find(const std::string& name) const;
  bool contains(int category_id) const { return find(category_id) != nullptr; }
  int size() const { return static_cast<int>(categories.size()); }

  static Taxonomy from_names(const std::string& taxonomy_id,
                             const std::vector<std::string>& names);
};

struct Instance {
  int category_id = 0;
  BBox bbox;
  std::optional<InstanceMask> mask;
  std::optional<real> score;  // absent for ground truth
};

enum class Subset {
  kScientificArticle,
  kTextbook,
  kTestPaper,
  kMagazineCh,
  kMagazineEn,
  kNewspaperCh,
  kNewspaperEn,
  kNote,
  kBook,
  kSynthetic,
};

std::string to_string(Subset s);
Subset subset_from_string(const std::string& name);
/// Seven-way view: the ch/en magazine and newspaper subsets collapse pairwise.
std::string subset_group(Subset s);

struct PageRecord {
  std::int64_t image_id = 0;
  int width = 0, height = 0;
  Subset subset = Subset::kSynthetic;
  std::string file_name;  // external image path; pixels are never stored here
  std::vector<Instance> instances;
};

struct Dataset {
  Taxonomy taxonomy;
  std::vector<PageRecord> pages;

  std::int64_t instance_count() const;
};

/// One broken invariant. Violations are data, not failures.
struct Violation {
  std::int64_t image_id = -1;  // -1 for dataset-level problems
  int instance_index = -1;     // -1 when not tied to one instance
  std::string rule;            // short rule name, e.g. "bbox order"
  std::string detail;
};

std::vector<Violation> validate_dataset(const Dataset& d);

std::string format_violations(const std::vector<Violation>& violations);

}  // namespace tdla

#endif  // TDLA_TYPES_HPP_
