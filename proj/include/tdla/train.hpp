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

#ifndef TDLA_TRAIN_HPP_
#define TDLA_TRAIN_HPP_

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdla/net.hpp"

namespace tdla {

struct TrainDivergence : Error {
  using Error::Error;
};

struct TrainConfig {
  int epochs = 500;
  real base_lr = 2e-5;
  std::array<real, 2> milestones{0.5, 0.75};  // fractions of epochs
  std::array<real, 2> lr_factors{0.1, 0.01};
  real weight_decay = 1e-4;
  real beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int batch_size = 4;
  std::uint64_t seed = 0;
  MatchWeights loss_weights;
  real background_weight = 0.1;  // CE down-weight for unmatched queries
  int max_steps = 0;             // optional optimizer-step budget; 0 = epochs only
  int eval_every = 0;            // epochs between eval snapshots in the log; 0 = off
  real eval_score_threshold = 0.05;
};

/// Piecewise-constant schedule: base, then base*factor at each milestone.
real lr_at(const TrainConfig& cfg, int epoch);

struct AugmentConfig {
  int short_min = 704, short_max = 896;
  int long_max = 1333;
  real crop_prob = 0.5;
  real crop_min_frac = 0.6;
};

struct AugmentResult {
  PageRecord page;
  Image image;
  real scale_x = 1, scale_y = 1;  // forward transform applied to coordinates
  int crop_x = 0, crop_y = 0;
};

/// Scale so the shortest side lands in [short_min, short_max] (uniformly
/// sampled) capped by long_max, then an optional random crop. Boxes and masks
/// move with the pixels; instances cropped away entirely are removed.
AugmentResult augment(const PageRecord& page, const Image& image, std::uint64_t seed,
                      const AugmentConfig& cfg = {});

struct LossBreakdown {
  real total = 0, cls = 0, l1 = 0, giou = 0, mask = 0;
};

/// Set-prediction loss over all K iterations: Hungarian re-matching per
/// iteration, cross entropy over all queries (background down-weighted),
/// L1 + giou over matched boxes, squared error over matched mask embeddings;
/// iteration losses averaged. Returns the scalar graph node.
nn::Tensor loss_graph(const std::vector<Model::IterTensors>& iterations, const ModelConfig& cfg,
                      const std::vector<EncodedGt>& gt, const MatchWeights& w,
                      real background_weight, LossBreakdown* breakdown = nullptr);

/// Value-level loss on raw outputs (used by tests and tooling).
LossBreakdown compute_loss(const ModelOutput& outputs, const PageRecord& page,
                           const MaskCodec& codec, const MatchWeights& w,
                           real background_weight = 0.1);

struct EpochLog {
  int epoch = 0;
  real lr = 0;
  int steps = 0;
  LossBreakdown loss;
  std::optional<real> eval_det_map;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int total_steps = 0;
};

/// AdamW training loop, single-threaded and deterministic for a fixed seed.
/// Aborts with TrainDivergence on a non-finite loss.
TrainResult train(Model& model, const Dataset& data, const std::vector<Image>& images,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// --- synthetic corpus ---

enum class LayoutFamily { kRectangular, kManhattan, kNonManhattan, kMultiColumn };

LayoutFamily layout_family_from_string(const std::string& name);
std::string to_string(LayoutFamily f);

struct SynthCategorySpec {
  std::string name;
  enum class Style { kSolid, kLineStack } style = Style::kSolid;
  real gray = 0.5;
};

struct SynthPageSpec {
  LayoutFamily family = LayoutFamily::kManhattan;
  std::vector<SynthCategorySpec> palette;  // empty -> default palette
  int min_instances = 2, max_instances = 6;
  int page_width = 128, page_height = 128;

  static std::vector<SynthCategorySpec> default_palette();
};

struct SynthCorpus {
  Dataset dataset;
  std::vector<Image> images;  // aligned with dataset.pages
};

/// Deterministic corpus; annotations are exact by construction and the result
/// always passes validate_dataset. Manhattan pages are guillotine partitions.
SynthCorpus generate_corpus(const SynthPageSpec& spec, int n_pages, std::uint64_t seed);

}  // namespace tdla

#endif  // TDLA_TRAIN_HPP_
