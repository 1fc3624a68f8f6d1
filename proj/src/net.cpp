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

#include "tdla/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "tdla/mask.hpp"

namespace tdla {

using nn::Tensor;

ModelConfig ModelConfig::toy(int num_classes) {
  ModelConfig c;
  c.num_queries = 50;
  c.embed_dim = 64;
  c.refine_iterations = 3;
  c.num_classes = num_classes;
  c.encoder_layers = 2;
  c.encoder_heads = 4;
  c.head_hidden = 256;
  c.backbone_width = 16;
  return c;
}

void ModelConfig::validate() const {
  if (num_queries < 1 || mask_embed_dim < 1 || refine_iterations < 1 || roi_resolution < 1)
    throw ConfigError("model config: N, D, K, R must all be >= 1");
  if (num_classes < 1) throw ConfigError("model config: need at least one class");
  if (embed_dim % encoder_heads != 0)
    throw ConfigError("model config: embed_dim must divide by encoder_heads");
  if (mask_embed_dim > mask_patch * mask_patch)
    throw ConfigError("model config: mask_embed_dim exceeds patch size");
  if (backbone_width < 1 || encoder_layers < 0 || head_hidden < 1 || dyn_hidden < 1)
    throw ConfigError("model config: invalid width");
}

// --- mask codec ---

std::vector<real> MaskCodec::encode(const std::vector<real>& patch_values) const {
  const int mm = patch * patch;
  if (static_cast<int>(patch_values.size()) != mm) throw Error("mask encode: patch size mismatch");
  std::vector<real> centered(patch_values);
  for (int i = 0; i < mm; ++i) centered[static_cast<size_t>(i)] -= mean[static_cast<size_t>(i)];
  std::vector<real> out(static_cast<size_t>(dim), 0);
  for (int k = 0; k < dim; ++k) {
    const real* row = &basis[static_cast<size_t>(k) * mm];
    real s = 0;
    for (int i = 0; i < mm; ++i) s += row[i] * centered[static_cast<size_t>(i)];
    out[static_cast<size_t>(k)] = s;
  }
  return out;
}

std::vector<real> MaskCodec::decode(const std::vector<real>& embedding) const {
  const int mm = patch * patch;
  if (static_cast<int>(embedding.size()) != dim) throw Error("mask decode: dim mismatch");
  std::vector<real> out(mean);
  for (int k = 0; k < dim; ++k) {
    const real* row = &basis[static_cast<size_t>(k) * mm];
    const real e = embedding[static_cast<size_t>(k)];
    for (int i = 0; i < mm; ++i) out[static_cast<size_t>(i)] += e * row[i];
  }
  return out;
}

real MaskCodec::residual_bound() const {
  real tail = 0;
  for (size_t k = static_cast<size_t>(dim); k < spectrum.size(); ++k) tail += spectrum[k];
  return tail;
}

MaskCodec mask_codec_fit(const std::vector<std::vector<real>>& patches, int dim, int patch) {
  const int mm = patch * patch;
  if (dim > mm) throw ConfigError("mask codec: dim exceeds patch pixels");
  if (static_cast<int>(patches.size()) < dim)
    throw ConfigError("mask codec: need at least dim training masks");
  const int n = static_cast<int>(patches.size());

  MaskCodec c;
  c.dim = dim;
  c.patch = patch;
  c.mean.assign(static_cast<size_t>(mm), 0);
  for (const auto& p : patches) {
    if (static_cast<int>(p.size()) != mm) throw Error("mask codec: patch size mismatch");
    for (int i = 0; i < mm; ++i) c.mean[static_cast<size_t>(i)] += p[static_cast<size_t>(i)];
  }
  for (real& v : c.mean) v /= n;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mm, mm);
  Eigen::VectorXd x(mm);
  for (const auto& p : patches) {
    for (int i = 0; i < mm; ++i) x(i) = p[static_cast<size_t>(i)] - c.mean[static_cast<size_t>(i)];
    cov.noalias() += x * x.transpose();
  }
  cov /= n;  // population normalization: sum of residuals == n * spectral tail

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error("mask codec: eigendecomposition failed");
  // Eigen returns ascending eigenvalues; flip to descending.
  c.spectrum.resize(static_cast<size_t>(mm));
  for (int k = 0; k < mm; ++k)
    c.spectrum[static_cast<size_t>(k)] = std::max(es.eigenvalues()(mm - 1 - k), 0.0);
  c.basis.resize(static_cast<size_t>(dim) * mm);
  for (int k = 0; k < dim; ++k)
    for (int i = 0; i < mm; ++i)
      c.basis[static_cast<size_t>(k) * mm + i] = es.eigenvectors()(i, mm - 1 - k);
  return c;
}

std::vector<real> extract_mask_patch(const Mask2D& mask, const BBox& box, int patch) {
  std::vector<real> out(static_cast<size_t>(patch) * patch, 0);
  if (box.width() <= 0 || box.height() <= 0) return out;
  auto sample = [&](real x, real y) {
    const real u = std::clamp<real>(x - 0.5, 0, mask.width - 1);
    const real v = std::clamp<real>(y - 0.5, 0, mask.height - 1);
    const int ix = std::min(static_cast<int>(u), std::max(mask.width - 2, 0));
    const int iy = std::min(static_cast<int>(v), std::max(mask.height - 2, 0));
    const real fx = mask.width > 1 ? u - ix : 0, fy = mask.height > 1 ? v - iy : 0;
    const int ix1 = std::min(ix + 1, mask.width - 1), iy1 = std::min(iy + 1, mask.height - 1);
    return mask.at(ix, iy) * (1 - fx) * (1 - fy) + mask.at(ix1, iy) * fx * (1 - fy) +
           mask.at(ix, iy1) * (1 - fx) * fy + mask.at(ix1, iy1) * fx * fy;
  };
  for (int py = 0; py < patch; ++py)
    for (int px = 0; px < patch; ++px) {
      const real x = box.x_min + (px + 0.5) / patch * box.width();
      const real y = box.y_min + (py + 0.5) / patch * box.height();
      out[static_cast<size_t>(py) * patch + px] = sample(x, y);
    }
  return out;
}

Mask2D paste_mask_patch(const std::vector<real>& patch_values, int patch, const BBox& box,
                        int page_w, int page_h, real threshold) {
  Mask2D out(page_w, page_h);
  if (box.width() <= 0 || box.height() <= 0) return out;
  const int x0 = std::max(0, static_cast<int>(std::ceil(box.x_min - 0.5)));
  const int x1 = std::min(page_w, static_cast<int>(std::ceil(box.x_max - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(box.y_min - 0.5)));
  const int y1 = std::min(page_h, static_cast<int>(std::ceil(box.y_max - 0.5)));
  auto sample = [&](real px, real py) {
    const real u = std::clamp<real>(px, 0, patch - 1);
    const real v = std::clamp<real>(py, 0, patch - 1);
    const int ix = std::min(static_cast<int>(u), std::max(patch - 2, 0));
    const int iy = std::min(static_cast<int>(v), std::max(patch - 2, 0));
    const real fx = patch > 1 ? u - ix : 0, fy = patch > 1 ? v - iy : 0;
    const int ix1 = std::min(ix + 1, patch - 1), iy1 = std::min(iy + 1, patch - 1);
    auto at = [&](int xx, int yy) { return patch_values[static_cast<size_t>(yy) * patch + xx]; };
    return at(ix, iy) * (1 - fx) * (1 - fy) + at(ix1, iy) * fx * (1 - fy) +
           at(ix, iy1) * (1 - fx) * fy + at(ix1, iy1) * fx * fy;
  };
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const real px = (x + 0.5 - box.x_min) / box.width() * patch - 0.5;
      const real py = (y + 0.5 - box.y_min) / box.height() * patch - 0.5;
      if (sample(px, py) >= threshold) out.set(x, y, 1);
    }
  return out;
}

// --- model ---

namespace {

constexpr real kFullBoxClamp = 1e-4;

real logit(real p) { return std::log(p / (1 - p)); }

}  // namespace

Tensor Model::param(const std::string& name, std::vector<int> shape,
                    const std::vector<real>& init) {
  Tensor t = Tensor::constant(std::move(shape), init);
  t.node()->requires_grad = true;
  params_.emplace_back(name, t);
  return t;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_hash(seed, 0x7d1a));
  auto normal_vec = [&rng](size_t n, real sigma) {
    std::vector<real> v(n);
    for (real& x : v) x = rng.normal() * sigma;
    return v;
  };
  auto const_vec = [](size_t n, real value) { return std::vector<real>(n, value); };
  const int d = cfg_.embed_dim;

  // Backbone: three stride-2 stages then a stride-1 projection to d channels.
  int in_ch = 3;
  int widths[4] = {cfg_.backbone_width, 2 * cfg_.backbone_width,
                   std::min(4 * cfg_.backbone_width, d), d};
  for (int s = 0; s < 4; ++s) {
    const int out_ch = widths[s];
    param("backbone.c" + std::to_string(s) + ".w", {out_ch, in_ch, 3, 3},
          normal_vec(static_cast<size_t>(out_ch) * in_ch * 9, std::sqrt(2.0 / (in_ch * 9))));
    param("backbone.c" + std::to_string(s) + ".b", {out_ch}, const_vec(static_cast<size_t>(out_ch), 0));
    in_ch = out_ch;
  }

  param("query.embed", {cfg_.num_queries, d}, normal_vec(static_cast<size_t>(cfg_.num_queries) * d, 1.0));

  auto linear_params = [&](const std::string& prefix, int in, int out, real sigma,
                           real bias = 0) {
    param(prefix + ".w", {in, out}, normal_vec(static_cast<size_t>(in) * out, sigma));
    param(prefix + ".b", {out}, const_vec(static_cast<size_t>(out), bias));
  };
  auto ln_params = [&](const std::string& prefix, int width) {
    param(prefix + ".g", {width}, const_vec(static_cast<size_t>(width), 1));
    param(prefix + ".b", {width}, const_vec(static_cast<size_t>(width), 0));
  };

  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    ln_params(p + ".ln1", d);
    linear_params(p + ".q", d, d, std::sqrt(1.0 / d));
    linear_params(p + ".k", d, d, std::sqrt(1.0 / d));
    linear_params(p + ".v", d, d, std::sqrt(1.0 / d));
    linear_params(p + ".o", d, d, std::sqrt(1.0 / d));
    ln_params(p + ".ln2", d);
    linear_params(p + ".f1", d, cfg_.ffn(), std::sqrt(2.0 / d));
    linear_params(p + ".f2", cfg_.ffn(), d, std::sqrt(1.0 / cfg_.ffn()));
  }

  // Dynamic decoder: a query-conditioned generator for the two mixing layers,
  // plus the flatten projection back to d.
  const int S = cfg_.roi_resolution * cfg_.roi_resolution;
  const int h = cfg_.dyn_hidden;
  const int gen_out = d * h + h * d;
  param("dyn.gen.w", {d, gen_out}, normal_vec(static_cast<size_t>(d) * gen_out, 0.01));
  {
    std::vector<real> gb(static_cast<size_t>(gen_out));
    const real s1 = std::sqrt(2.0 / d), s2 = std::sqrt(2.0 / h);
    for (int i = 0; i < d * h; ++i) gb[static_cast<size_t>(i)] = rng.normal() * s1;
    for (int i = d * h; i < gen_out; ++i) gb[static_cast<size_t>(i)] = rng.normal() * s2;
    param("dyn.gen.b", {gen_out}, gb);
  }
  linear_params("dyn.proj", S * d, d, std::sqrt(2.0 / (S * d)));
  ln_params("dyn.ln", d);

  const int sets = cfg_.shared_heads ? 1 : cfg_.refine_iterations;
  for (int s = 0; s < sets; ++s) {
    const std::string suffix = cfg_.shared_heads ? "" : ".i" + std::to_string(s);
    linear_params("head.cls.l1" + suffix, d, cfg_.head_hidden, std::sqrt(2.0 / d));
    linear_params("head.cls.l2" + suffix, cfg_.head_hidden, cfg_.logit_columns(),
                  0.01 / std::sqrt(real(cfg_.head_hidden)));
    linear_params("head.box.l1" + suffix, d, cfg_.head_hidden, std::sqrt(2.0 / d));
    linear_params("head.box.l2" + suffix, cfg_.head_hidden, 4, 0);  // zero init: deltas start at 0
    linear_params("head.mask.l1" + suffix, d, cfg_.head_hidden, std::sqrt(2.0 / d));
    linear_params("head.mask.l2" + suffix, cfg_.head_hidden, cfg_.mask_embed_dim, 0);
  }
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw Error("no such parameter: " + name);
}

Tensor Model::linear(const std::string& prefix, const Tensor& x) const {
  return nn::add_rowvec(nn::matmul(x, parameter(prefix + ".w")), parameter(prefix + ".b"));
}

QueryState Model::initial_query_state() const {
  QueryState qs;
  qs.num_queries = cfg_.num_queries;
  qs.embed_dim = cfg_.embed_dim;
  qs.embeddings = parameter("query.embed").value();
  qs.boxes.resize(static_cast<size_t>(cfg_.num_queries) * 4);
  for (int i = 0; i < cfg_.num_queries; ++i) {
    qs.boxes[static_cast<size_t>(i) * 4 + 0] = 0.5;
    qs.boxes[static_cast<size_t>(i) * 4 + 1] = 0.5;
    qs.boxes[static_cast<size_t>(i) * 4 + 2] = 1 - kFullBoxClamp;
    qs.boxes[static_cast<size_t>(i) * 4 + 3] = 1 - kFullBoxClamp;
  }
  return qs;
}

Tensor Model::backbone_features(const Image& image) const {
  if (image.width < 64 || image.height < 64)
    throw Error("backbone: image must be at least 64x64");
  std::vector<real> centered(image.data);
  for (real& v : centered) v -= 0.5;
  Tensor x = Tensor::constant({3, image.height, image.width}, std::move(centered));
  for (int s = 0; s < 4; ++s) {
    const std::string p = "backbone.c" + std::to_string(s);
    x = nn::relu(nn::conv2d(x, parameter(p + ".w"), parameter(p + ".b"), s < 3 ? 2 : 1, 1));
  }
  return x;
}

Tensor Model::encoder_forward(const Tensor& queries) const {
  if (!cfg_.use_encoder) return queries;
  const int d = cfg_.embed_dim;
  const int nh = cfg_.encoder_heads;
  const int dh = d / nh;
  Tensor x = queries;
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    Tensor hstate = nn::layer_norm_rows(x, parameter(p + ".ln1.g"), parameter(p + ".ln1.b"));
    Tensor q = linear(p + ".q", hstate);
    Tensor k = linear(p + ".k", hstate);
    Tensor v = linear(p + ".v", hstate);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(nh));
    for (int hd = 0; hd < nh; ++hd) {
      Tensor qh = nn::slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor kh = nn::slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor vh = nn::slice_cols(v, hd * dh, (hd + 1) * dh);
      Tensor attn = nn::softmax_rows(
          nn::scale(nn::matmul(qh, nn::transpose(kh)), 1 / std::sqrt(real(dh))));
      heads.push_back(nn::matmul(attn, vh));
    }
    x = nn::add(x, linear(p + ".o", nn::concat_cols(heads)));
    Tensor h2 = nn::layer_norm_rows(x, parameter(p + ".ln2.g"), parameter(p + ".ln2.b"));
    x = nn::add(x, linear(p + ".f2", nn::relu(linear(p + ".f1", h2))));
  }
  return x;
}

Tensor Model::dynamic_decode(const Tensor& queries, const Tensor& roi) const {
  const int S = cfg_.roi_resolution * cfg_.roi_resolution;
  const int d = cfg_.embed_dim;
  if (!cfg_.use_dynamic_decoder) return nn::mean_cells(roi, S, d);
  Tensor params = linear("dyn.gen", queries);
  Tensor mixed = nn::dynamic_mix(roi, params, S, d, cfg_.dyn_hidden);
  Tensor fused = nn::relu(linear("dyn.proj", mixed));
  return nn::layer_norm_rows(fused, parameter("dyn.ln.g"), parameter("dyn.ln.b"));
}

Model::HeadsOut Model::heads_forward(const Tensor& fused, int iteration) const {
  const std::string suffix =
      cfg_.shared_heads ? "" : ".i" + std::to_string(iteration % cfg_.refine_iterations);
  auto branch = [&](const std::string& name) {
    return linear("head." + name + ".l2" + suffix,
                  nn::relu(linear("head." + name + ".l1" + suffix, fused)));
  };
  return {branch("cls"), branch("box"), branch("mask")};
}

Model::ForwardResult Model::forward(const Image& image) const {
  const int n = cfg_.num_queries;
  Tensor features = backbone_features(image);

  std::vector<real> init_logits(static_cast<size_t>(n) * 4);
  for (int i = 0; i < n; ++i) {
    init_logits[static_cast<size_t>(i) * 4 + 0] = 0;  // logit(0.5)
    init_logits[static_cast<size_t>(i) * 4 + 1] = 0;
    init_logits[static_cast<size_t>(i) * 4 + 2] = logit(1 - kFullBoxClamp);
    init_logits[static_cast<size_t>(i) * 4 + 3] = logit(1 - kFullBoxClamp);
  }
  Tensor box_logits = Tensor::constant({n, 4}, std::move(init_logits));
  Tensor q = parameter("query.embed");

  ForwardResult res;
  for (int k = 0; k < cfg_.refine_iterations; ++k) {
    Tensor roi_boxes = nn::sigmoid(box_logits);  // iteration k samples at k-1's boxes
    Tensor roi = nn::roi_align(features, roi_boxes, cfg_.roi_resolution);
    Tensor q_enc = encoder_forward(q);
    Tensor fused = dynamic_decode(q_enc, roi);
    HeadsOut heads = heads_forward(fused, k);
    box_logits = nn::add(box_logits, heads.box_deltas);
    Tensor boxes_out = nn::sigmoid(box_logits);
    res.iterations.push_back({heads.class_logits, boxes_out, heads.mask_embeddings});
    q = fused;
  }
  res.output = output_view(res.iterations, cfg_);
  return res;
}

ModelOutput output_view(const std::vector<Model::IterTensors>& iters, const ModelConfig& cfg) {
  ModelOutput out;
  for (const auto& it : iters) {
    IterationOutput io;
    io.num_queries = cfg.num_queries;
    io.num_classes = cfg.num_classes;
    io.mask_dim = cfg.mask_embed_dim;
    io.class_logits = it.class_logits.value();
    io.boxes = it.boxes.value();
    io.mask_embeddings = it.mask_embeddings.value();
    out.iterations.push_back(std::move(io));
  }
  return out;
}

std::vector<Instance> Model::predict(const Image& image, real score_threshold,
                                     int max_instances) const {
  if (!codec.fitted()) throw Error("predict: model has no fitted mask codec");
  ForwardResult fwd = forward(image);
  const IterationOutput& last = fwd.output.iterations.back();
  const int n = cfg_.num_queries, c1 = cfg_.logit_columns(), dd = cfg_.mask_embed_dim;

  struct Scored {
    real score;
    int query, cls;
  };
  std::vector<Scored> picks;
  for (int i = 0; i < n; ++i) {
    const real* logits = &last.class_logits[static_cast<size_t>(i) * c1];
    real mx = logits[0];
    for (int c = 1; c < c1; ++c) mx = std::max(mx, logits[c]);
    real z = 0;
    for (int c = 0; c < c1; ++c) z += std::exp(logits[c] - mx);
    int best = 1;
    for (int c = 2; c < c1; ++c)
      if (logits[c] > logits[best]) best = c;
    const real score = std::exp(logits[best] - mx) / z;
    if (score >= score_threshold) picks.push_back({score, i, best});
  }
  std::stable_sort(picks.begin(), picks.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });
  if (static_cast<int>(picks.size()) > max_instances) picks.resize(static_cast<size_t>(max_instances));

  std::vector<Instance> out;
  for (const Scored& p : picks) {
    const NormBox nb{last.boxes[static_cast<size_t>(p.query) * 4 + 0],
                     last.boxes[static_cast<size_t>(p.query) * 4 + 1],
                     last.boxes[static_cast<size_t>(p.query) * 4 + 2],
                     last.boxes[static_cast<size_t>(p.query) * 4 + 3]};
    BBox box = from_norm_cxcywh(nb, image.width, image.height);
    box.x_min = std::max<real>(box.x_min, 0);
    box.y_min = std::max<real>(box.y_min, 0);
    box.x_max = std::min<real>(box.x_max, image.width);
    box.y_max = std::min<real>(box.y_max, image.height);
    if (box.width() <= 0 || box.height() <= 0) continue;
    std::vector<real> emb(dd);
    for (int k = 0; k < dd; ++k)
      emb[static_cast<size_t>(k)] = last.mask_embeddings[static_cast<size_t>(p.query) * dd + k];
    Instance inst;
    inst.category_id = p.cls;
    inst.bbox = box;
    inst.score = p.score;
    inst.mask = InstanceMask::from_raster(
        paste_mask_patch(codec.decode(emb), cfg_.mask_patch, box, image.width, image.height));
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<EncodedGt> encode_targets(const PageRecord& page, const MaskCodec& codec) {
  std::vector<EncodedGt> out;
  for (const Instance& inst : page.instances) {
    EncodedGt g;
    g.class_index = inst.category_id;
    g.box = to_norm_cxcywh(inst.bbox, page.width, page.height);
    std::vector<real> patch;
    if (inst.mask) {
      patch = extract_mask_patch(as_raster(*inst.mask, page.width, page.height), inst.bbox,
                                 codec.patch);
    } else {
      patch.assign(static_cast<size_t>(codec.patch) * codec.patch, 1.0);  // box-filled
    }
    g.mask_embedding = codec.encode(patch);
    out.push_back(std::move(g));
  }
  return out;
}

MaskCodec fit_codec_on_dataset(const Dataset& d, int dim, int patch) {
  std::vector<std::vector<real>> patches;
  for (const PageRecord& page : d.pages)
    for (const Instance& inst : page.instances) {
      if (inst.mask) {
        patches.push_back(extract_mask_patch(as_raster(*inst.mask, page.width, page.height),
                                             inst.bbox, patch));
      } else {
        patches.emplace_back(static_cast<size_t>(patch) * patch, 1.0);
      }
    }
  return mask_codec_fit(patches, dim, patch);
}

}  // namespace tdla
