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

#ifndef TDLA_IO_UTIL_HPP_
#define TDLA_IO_UTIL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tdla/types.hpp"

namespace tdla {

inline constexpr const char* kToolVersion = "tdla 0.1.0";

/// Root of the bundled data files (taxonomies, maps, fixtures).
/// TDLA_DATA_DIR env var overrides the compiled-in source location.
std::string data_dir();

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// 64-bit FNV-1a over raw bytes; used to pin bundled data files in tests.
std::uint64_t fnv1a64(const std::string& bytes);

/// Planar RGB image, values in [0, 1], layout [3][height][width].
struct Image {
  int width = 0, height = 0;
  std::vector<real> data;

  Image() = default;
  Image(int w, int h, real fill = 0)
      : width(w), height(h), data(3 * static_cast<size_t>(w) * h, fill) {}
  real at(int c, int x, int y) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  void set(int c, int x, int y, real v) {
    data[(static_cast<size_t>(c) * height + y) * width + x] = v;
  }
};

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);
Image resize_bilinear(const Image& img, int new_w, int new_h);

/// Flat key=value config file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_config(const std::string& text);
std::map<std::string, std::string> load_config(const std::string& path);

/// Deterministic RNG helpers. std distributions are implementation-defined,
/// so uniform/normal are generated by hand for bit-stable runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64();
  real uniform();                    // [0, 1)
  real uniform(real lo, real hi);    // [lo, hi)
  int uniform_int(int lo, int hi);   // inclusive ends
  real normal();                     // standard normal, Box-Muller
  /// Splits off an independent stream, e.g. one per page.
  Rng fork(std::uint64_t stream);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  real spare_ = 0;
};

/// Seeded stateless hash for deterministic tie-breaking.
std::uint64_t mix_hash(std::uint64_t seed, std::uint64_t value);

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  real wall_time_s = 0;
};

void write_manifest(const RunManifest& m, const std::string& path);

}  // namespace tdla

#endif  // TDLA_IO_UTIL_HPP_
