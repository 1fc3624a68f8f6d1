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

#include "tdla/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace tdla {

using nlohmann::json;

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in) {
  char b[4];
  in.read(b, 4);
  if (!in) throw ParseError("checkpoint: truncated header");
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{{"num_queries", c.num_queries},
              {"embed_dim", c.embed_dim},
              {"mask_embed_dim", c.mask_embed_dim},
              {"refine_iterations", c.refine_iterations},
              {"num_classes", c.num_classes},
              {"roi_resolution", c.roi_resolution},
              {"encoder_layers", c.encoder_layers},
              {"encoder_heads", c.encoder_heads},
              {"ffn_dim", c.ffn_dim},
              {"head_hidden", c.head_hidden},
              {"dyn_hidden", c.dyn_hidden},
              {"backbone_width", c.backbone_width},
              {"mask_patch", c.mask_patch},
              {"use_encoder", c.use_encoder},
              {"use_dynamic_decoder", c.use_dynamic_decoder},
              {"shared_heads", c.shared_heads}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_queries = j.at("num_queries");
  c.embed_dim = j.at("embed_dim");
  c.mask_embed_dim = j.at("mask_embed_dim");
  c.refine_iterations = j.at("refine_iterations");
  c.num_classes = j.at("num_classes");
  c.roi_resolution = j.at("roi_resolution");
  c.encoder_layers = j.at("encoder_layers");
  c.encoder_heads = j.at("encoder_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.head_hidden = j.at("head_hidden");
  c.dyn_hidden = j.at("dyn_hidden");
  c.backbone_width = j.at("backbone_width");
  c.mask_patch = j.at("mask_patch");
  c.use_encoder = j.at("use_encoder");
  c.use_dynamic_decoder = j.at("use_dynamic_decoder");
  c.shared_heads = j.at("shared_heads");
  return c;
}

void write_array(std::ostream& out, const std::string& name, const std::vector<int>& shape,
                 const std::vector<real>& data) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  write_u32(out, static_cast<std::uint32_t>(data.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(real)));
}

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<real> data;
};

NamedArray read_array(std::istream& in) {
  NamedArray a;
  const std::uint32_t name_len = read_u32(in);
  a.name.resize(name_len);
  in.read(a.name.data(), name_len);
  const std::uint32_t ndim = read_u32(in);
  for (std::uint32_t i = 0; i < ndim; ++i) a.shape.push_back(static_cast<int>(read_u32(in)));
  const std::uint32_t count = read_u32(in);
  a.data.resize(count);
  in.read(reinterpret_cast<char*>(a.data.data()),
          static_cast<std::streamsize>(count * sizeof(real)));
  if (!in) throw ParseError("checkpoint: truncated array '" + a.name + "'");
  return a;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  const std::string tag = std::string(kCheckpointTag) + "\n";
  out.write(tag.data(), static_cast<std::streamsize>(tag.size()));

  json cfg = config_to_json(model.config());
  std::vector<std::string> cat_names;
  for (const Category& c : model.taxonomy.categories) cat_names.push_back(c.name);
  cfg["taxonomy_id"] = model.taxonomy.id;
  cfg["categories"] = cat_names;
  cfg["codec"] = {{"dim", model.codec.dim}, {"patch", model.codec.patch}};
  const std::string cfg_str = cfg.dump();
  write_u32(out, static_cast<std::uint32_t>(cfg_str.size()));
  out.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

  std::uint32_t count = static_cast<std::uint32_t>(model.parameters().size());
  const bool with_codec = model.codec.fitted();
  write_u32(out, count + (with_codec ? 3 : 0));
  for (const auto& [name, t] : model.parameters()) write_array(out, name, t.shape(), t.value());
  if (with_codec) {
    const int mm = model.codec.patch * model.codec.patch;
    write_array(out, "codec.mean", {mm}, model.codec.mean);
    write_array(out, "codec.basis", {model.codec.dim, mm}, model.codec.basis);
    write_array(out, "codec.spectrum", {mm}, model.codec.spectrum);
  }
  if (!out) throw Error("write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::string tag;
  std::getline(in, tag);
  if (tag != kCheckpointTag)
    throw ParseError("checkpoint: bad version tag '" + tag + "' in " + path);
  const std::uint32_t cfg_len = read_u32(in);
  std::string cfg_str(cfg_len, '\0');
  in.read(cfg_str.data(), cfg_len);
  if (!in) throw ParseError("checkpoint: truncated config block");
  json cfg = json::parse(cfg_str);

  Model model(config_from_json(cfg), 0);
  model.taxonomy =
      Taxonomy::from_names(cfg.at("taxonomy_id"), cfg.at("categories").get<std::vector<std::string>>());
  model.codec.dim = cfg.at("codec").at("dim");
  model.codec.patch = cfg.at("codec").at("patch");

  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a = read_array(in);
    if (a.name == "codec.mean") {
      model.codec.mean = std::move(a.data);
    } else if (a.name == "codec.basis") {
      model.codec.basis = std::move(a.data);
    } else if (a.name == "codec.spectrum") {
      model.codec.spectrum = std::move(a.data);
    } else {
      nn::Tensor t = model.parameter(a.name);
      if (t.shape() != a.shape)
        throw ParseError("checkpoint: shape mismatch for '" + a.name + "'");
      t.value() = std::move(a.data);
    }
  }
  return model;
}

}  // namespace tdla
