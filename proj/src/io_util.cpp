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

#include "tdla/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tdla {

std::string data_dir() {
  if (const char* env = std::getenv("TDLA_DATA_DIR"); env && *env) return env;
  return TDLA_DATA_DIR;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out << content;
  if (!out) throw Error("write failed: " + path);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const real v = std::clamp(img.at(c, x, y), real(0), real(1));
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw Error("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw ParseError("not a P6/255 ppm file: " + path);
  in.get();  // single whitespace after the header
  Image img(w, h);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw ParseError("truncated ppm file: " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.set(c, x, y, row[static_cast<size_t>(x) * 3 + c] / real(255));
  }
  return img;
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  Image out(new_w, new_h);
  const real sx = static_cast<real>(img.width) / new_w;
  const real sy = static_cast<real>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y)
    for (int x = 0; x < new_w; ++x) {
      const real u = (x + 0.5) * sx - 0.5;
      const real v = (y + 0.5) * sy - 0.5;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      const real fx = u - x0, fy = v - y0;
      auto cx = [&](int i) { return std::clamp(i, 0, img.width - 1); };
      auto cy = [&](int j) { return std::clamp(j, 0, img.height - 1); };
      for (int c = 0; c < 3; ++c) {
        const real v00 = img.at(c, cx(x0), cy(y0)), v10 = img.at(c, cx(x0 + 1), cy(y0));
        const real v01 = img.at(c, cx(x0), cy(y0 + 1)), v11 = img.at(c, cx(x0 + 1), cy(y0 + 1));
        out.set(c, x, y,
                v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) + v01 * (1 - fx) * fy +
                    v11 * fx * fy);
      }
    }
  return out;
}

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config(const std::string& path) {
  return parse_config(read_file(path));
}

std::uint64_t Rng::next_u64() {
  // splitmix64
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

real Rng::uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

real Rng::uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

real Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  real u1 = uniform(), u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  const real r = std::sqrt(-2 * std::log(u1));
  have_spare_ = true;
  spare_ = r * std::sin(2 * M_PI * u2);
  return r * std::cos(2 * M_PI * u2);
}

Rng Rng::fork(std::uint64_t stream) { return Rng(mix_hash(state_, stream)); }

std::uint64_t mix_hash(std::uint64_t seed, std::uint64_t value) {
  std::uint64_t z = seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["tool"] = kToolVersion;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["wall_time_s"] = m.wall_time_s;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace tdla
