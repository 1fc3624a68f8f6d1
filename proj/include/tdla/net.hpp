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

#ifndef TDLA_NET_HPP_
#define TDLA_NET_HPP_

#include <string>
#include <utility>
#include <vector>

#include "tdla/geometry.hpp"
#include "tdla/io_util.hpp"
#include "tdla/tensor.hpp"
#include "tdla/types.hpp"

namespace tdla {

struct ModelConfig {
  int num_queries = 300;
  int embed_dim = 256;
  int mask_embed_dim = 40;   // D
  int refine_iterations = 6; // K
  int num_classes = 0;       // C foreground classes; logits carry C+1 columns
  int roi_resolution = 7;    // R
  int encoder_layers = 2;
  int encoder_heads = 4;
  int ffn_dim = 0;           // 0 -> 4 * embed_dim
  int head_hidden = 256;
  int dyn_hidden = 16;
  int backbone_width = 16;   // first-stage channels, doubling per stage
  int mask_patch = 28;       // m: codec patch resolution
  bool use_encoder = true;
  bool use_dynamic_decoder = true;
  bool shared_heads = true;

  int stride() const { return 8; }
  int logit_columns() const { return num_classes + 1; }
  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * embed_dim; }

  /// Desk-scale defaults: 50 queries, 64-d embeddings, 3 refinement passes.
  static ModelConfig toy(int num_classes);

  void validate() const;
};

/// Fitted linear mask codec: orthonormal principal basis over centered,
/// box-cropped, m x m resampled mask patches.
struct MaskCodec {
  int dim = 0;    // D
  int patch = 0;  // m
  std::vector<real> mean;      // m*m
  std::vector<real> basis;     // D x (m*m), orthonormal rows
  std::vector<real> spectrum;  // all m*m eigenvalues, descending

  bool fitted() const { return dim > 0; }
  std::vector<real> encode(const std::vector<real>& patch_values) const;
  std::vector<real> decode(const std::vector<real>& embedding) const;
  /// Mean squared training residual of the dropped spectral tail.
  real residual_bound() const;
};

MaskCodec mask_codec_fit(const std::vector<std::vector<real>>& patches, int dim, int patch);

/// m x m bilinear resample of the mask restricted to box.
std::vector<real> extract_mask_patch(const Mask2D& mask, const BBox& box, int patch);

/// Decoded patch pasted into box on a page-sized raster, thresholded at 0.5.
Mask2D paste_mask_patch(const std::vector<real>& patch_values, int patch, const BBox& box,
                        int page_w, int page_h, real threshold = 0.5);

struct QueryState {
  int num_queries = 0, embed_dim = 0;
  std::vector<real> embeddings;  // N x d
  std::vector<real> boxes;       // N x 4, normalized cx,cy,w,h
};

/// Per-iteration raw model outputs (values, no graph).
struct ModelOutput {
  std::vector<IterationOutput> iterations;
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, nn::Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, nn::Tensor>>& parameters() const { return params_; }
  std::int64_t parameter_count() const;
  nn::Tensor parameter(const std::string& name) const;

  QueryState initial_query_state() const;

  /// Conv pyramid, stride 8, embed_dim output channels. Image must be >= 64 px.
  nn::Tensor backbone_features(const Image& image) const;

  /// Self-attention + feed-forward stack over query embeddings; no positional
  /// encoding. Identity when the encoder is disabled.
  nn::Tensor encoder_forward(const nn::Tensor& queries) const;

  /// Query-conditioned fusion of region features; falls back to a plain cell
  /// average when the dynamic decoder is disabled.
  nn::Tensor dynamic_decode(const nn::Tensor& queries, const nn::Tensor& roi) const;

  struct HeadsOut {
    nn::Tensor class_logits, box_deltas, mask_embeddings;
  };
  HeadsOut heads_forward(const nn::Tensor& fused, int iteration) const;

  struct IterTensors {
    nn::Tensor class_logits, boxes, mask_embeddings;
  };
  struct ForwardResult {
    std::vector<IterTensors> iterations;  // graph handles, one per refinement pass
    ModelOutput output;                   // value snapshot of the same
  };
  /// K refinement passes; pass k re-extracts region features at pass k-1's
  /// boxes, starting from the full-image query boxes.
  ForwardResult forward(const Image& image) const;

  std::vector<Instance> predict(const Image& image, real score_threshold,
                                int max_instances) const;

  MaskCodec codec;
  Taxonomy taxonomy;  // category universe the class indices refer to

 private:
  nn::Tensor param(const std::string& name, std::vector<int> shape,
                   const std::vector<real>& init);
  nn::Tensor linear(const std::string& prefix, const nn::Tensor& x) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, nn::Tensor>> params_;
};

ModelOutput output_view(const std::vector<Model::IterTensors>& iters, const ModelConfig& cfg);

/// Ground-truth instances encoded for matching and loss: class index,
/// normalized box, codec mask embedding (box-filled patch when no mask).
std::vector<EncodedGt> encode_targets(const PageRecord& page, const MaskCodec& codec);

/// Codec fitted over every ground-truth mask patch of the dataset.
MaskCodec fit_codec_on_dataset(const Dataset& d, int dim, int patch);

}  // namespace tdla

#endif  // TDLA_NET_HPP_
