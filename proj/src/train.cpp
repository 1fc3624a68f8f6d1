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

#include "tdla/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdla/eval.hpp"
#include "tdla/mask.hpp"

namespace tdla {

using nn::Tensor;

real lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) throw ConfigError("lr_at: epoch out of range");
  real lr = cfg.base_lr;
  if (epoch >= cfg.milestones[0] * cfg.epochs) lr = cfg.base_lr * cfg.lr_factors[0];
  if (epoch >= cfg.milestones[1] * cfg.epochs) lr = cfg.base_lr * cfg.lr_factors[1];
  return lr;
}

AugmentResult augment(const PageRecord& page, const Image& image, std::uint64_t seed,
                      const AugmentConfig& cfg) {
  Rng rng(mix_hash(seed, 0xa06));
  AugmentResult res;

  const int short_side = std::min(image.width, image.height);
  const int long_side = std::max(image.width, image.height);
  const int target_short = rng.uniform_int(cfg.short_min, cfg.short_max);
  real scale = static_cast<real>(target_short) / short_side;
  if (scale * long_side > cfg.long_max) scale = static_cast<real>(cfg.long_max) / long_side;

  const int new_w = std::max(1, static_cast<int>(std::lround(image.width * scale)));
  const int new_h = std::max(1, static_cast<int>(std::lround(image.height * scale)));
  res.scale_x = static_cast<real>(new_w) / image.width;
  res.scale_y = static_cast<real>(new_h) / image.height;

  res.page = page;
  res.page.width = new_w;
  res.page.height = new_h;
  if (new_w == image.width && new_h == image.height) {
    res.image = image;
  } else {
    res.image = resize_bilinear(image, new_w, new_h);
    for (Instance& inst : res.page.instances) {
      inst.bbox = {inst.bbox.x_min * res.scale_x, inst.bbox.y_min * res.scale_y,
                   inst.bbox.x_max * res.scale_x, inst.bbox.y_max * res.scale_y};
      if (inst.mask) {
        std::vector<Polygon> polys =
            inst.mask->is_polygons() ? inst.mask->polygons() : polygonize(inst.mask->raster());
        for (Polygon& p : polys)
          for (auto& v : p) {
            v[0] *= res.scale_x;
            v[1] *= res.scale_y;
          }
        inst.mask = InstanceMask::from_polygons(std::move(polys));
      }
    }
  }

  if (rng.uniform() < cfg.crop_prob) {
    const int cw = std::max(1, static_cast<int>(std::lround(new_w * rng.uniform(cfg.crop_min_frac, 1.0))));
    const int ch = std::max(1, static_cast<int>(std::lround(new_h * rng.uniform(cfg.crop_min_frac, 1.0))));
    res.crop_x = rng.uniform_int(0, new_w - cw);
    res.crop_y = rng.uniform_int(0, new_h - ch);

    Image cropped(cw, ch);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          cropped.set(c, x, y, res.image.at(c, x + res.crop_x, y + res.crop_y));
    res.image = std::move(cropped);
    res.page.width = cw;
    res.page.height = ch;

    std::vector<Instance> kept;
    for (Instance inst : res.page.instances) {
      BBox b = {inst.bbox.x_min - res.crop_x, inst.bbox.y_min - res.crop_y,
                inst.bbox.x_max - res.crop_x, inst.bbox.y_max - res.crop_y};
      b.x_min = std::max<real>(b.x_min, 0);
      b.y_min = std::max<real>(b.y_min, 0);
      b.x_max = std::min<real>(b.x_max, cw);
      b.y_max = std::min<real>(b.y_max, ch);
      if (b.width() <= 0 || b.height() <= 0) continue;
      inst.bbox = b;
      if (inst.mask) {
        std::vector<Polygon> polys =
            inst.mask->is_polygons() ? inst.mask->polygons() : polygonize(inst.mask->raster());
        for (Polygon& p : polys)
          for (auto& v : p) {
            v[0] -= res.crop_x;
            v[1] -= res.crop_y;
          }
        Mask2D raster = rasterize(polys, cw, ch);  // rasterization clips to the window
        if (raster.count() == 0) continue;
        inst.mask = InstanceMask::from_raster(std::move(raster));
      }
      kept.push_back(std::move(inst));
    }
    res.page.instances = std::move(kept);
  }
  return res;
}

Tensor loss_graph(const std::vector<Model::IterTensors>& iterations, const ModelConfig& cfg,
                  const std::vector<EncodedGt>& gt, const MatchWeights& w,
                  real background_weight, LossBreakdown* breakdown) {
  const int K = static_cast<int>(iterations.size());
  const int n = cfg.num_queries;
  const int m = static_cast<int>(gt.size());
  LossBreakdown bd;
  Tensor total;
  for (int k = 0; k < K; ++k) {
    const Model::IterTensors& it = iterations[k];
    IterationOutput view;
    view.num_queries = n;
    view.num_classes = cfg.num_classes;
    view.mask_dim = cfg.mask_embed_dim;
    view.class_logits = it.class_logits.value();
    view.boxes = it.boxes.value();
    view.mask_embeddings = it.mask_embeddings.value();

    // Re-match at every iteration against this iteration's outputs.
    Assignment match;
    if (m > 0) match = hungarian(matching_cost(view, gt, w));

    std::vector<int> labels(static_cast<size_t>(n), 0);
    std::vector<real> weights(static_cast<size_t>(n), background_weight);
    std::vector<int> pred_rows;
    std::vector<real> box_targets, emb_targets;
    for (const auto& [pi, gj] : match.pairs) {
      labels[static_cast<size_t>(pi)] = gt[static_cast<size_t>(gj)].class_index;
      weights[static_cast<size_t>(pi)] = 1;
      pred_rows.push_back(pi);
      for (int c = 0; c < 4; ++c) box_targets.push_back(gt[static_cast<size_t>(gj)].box[c]);
      for (real e : gt[static_cast<size_t>(gj)].mask_embedding) emb_targets.push_back(e);
    }

    Tensor cls_t = nn::cross_entropy(it.class_logits, labels, weights);
    Tensor iter_loss;
    if (!pred_rows.empty()) {
      Tensor sel_boxes = nn::select_rows(it.boxes, pred_rows);
      Tensor sel_emb = nn::select_rows(it.mask_embeddings, pred_rows);
      Tensor l1_t = nn::l1_loss(sel_boxes, box_targets);
      Tensor giou_t = nn::giou_loss(sel_boxes, box_targets);
      Tensor mask_t = nn::sq_loss(sel_emb, emb_targets, 1.0 / cfg.mask_embed_dim);
      bd.cls += cls_t.item();
      bd.l1 += l1_t.item();
      bd.giou += giou_t.item();
      bd.mask += mask_t.item();
      iter_loss = nn::axpy(1.0, nn::axpy(w.cls, cls_t, w.l1, l1_t), 1.0,
                           nn::axpy(w.giou, giou_t, w.mask, mask_t));
    } else {
      bd.cls += cls_t.item();
      iter_loss = nn::scale(cls_t, w.cls);
    }
    total = total.defined() ? nn::add(total, iter_loss) : iter_loss;
  }
  total = nn::scale(total, 1.0 / K);
  bd.cls /= K;
  bd.l1 /= K;
  bd.giou /= K;
  bd.mask /= K;
  bd.total = total.item();
  if (breakdown) *breakdown = bd;
  return total;
}

LossBreakdown compute_loss(const ModelOutput& outputs, const PageRecord& page,
                           const MaskCodec& codec, const MatchWeights& w,
                           real background_weight) {
  if (outputs.iterations.empty()) throw Error("compute_loss: no iterations");
  ModelConfig cfg;
  cfg.num_queries = outputs.iterations[0].num_queries;
  cfg.num_classes = outputs.iterations[0].num_classes;
  cfg.mask_embed_dim = outputs.iterations[0].mask_dim;
  cfg.refine_iterations = static_cast<int>(outputs.iterations.size());

  std::vector<Model::IterTensors> iters;
  for (const IterationOutput& io : outputs.iterations) {
    Model::IterTensors t;
    t.class_logits = Tensor::constant({cfg.num_queries, cfg.num_classes + 1}, io.class_logits);
    t.boxes = Tensor::constant({cfg.num_queries, 4}, io.boxes);
    t.mask_embeddings = Tensor::constant({cfg.num_queries, cfg.mask_embed_dim}, io.mask_embeddings);
    iters.push_back(std::move(t));
  }
  LossBreakdown bd;
  loss_graph(iters, cfg, encode_targets(page, codec), w, background_weight, &bd);
  return bd;
}

namespace {

struct AdamState {
  std::vector<real> m, v;
};

}  // namespace

TrainResult train(Model& model, const Dataset& data, const std::vector<Image>& images,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  if (data.pages.empty()) throw ConfigError("train: empty dataset");
  if (images.size() != data.pages.size())
    throw ConfigError("train: images and pages misaligned");
  if (!model.codec.fitted())
    model.codec =
        fit_codec_on_dataset(data, model.config().mask_embed_dim, model.config().mask_patch);
  if (model.taxonomy.categories.empty()) model.taxonomy = data.taxonomy;
  if (model.config().num_classes != data.taxonomy.size())
    throw ConfigError("train: model classes != taxonomy size");

  const size_t n_pages = data.pages.size();
  std::vector<std::vector<EncodedGt>> targets(n_pages);
  for (size_t p = 0; p < n_pages; ++p) targets[p] = encode_targets(data.pages[p], model.codec);

  auto& params = model.parameters();
  std::vector<AdamState> adam(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    adam[i].m.assign(static_cast<size_t>(params[i].second.size()), 0);
    adam[i].v.assign(static_cast<size_t>(params[i].second.size()), 0);
  }

  Rng order_rng(mix_hash(cfg.seed, 0x0d3));

  TrainResult result;
  int steps = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const real lr = lr_at(cfg, epoch);
    std::vector<size_t> order(n_pages);
    std::iota(order.begin(), order.end(), 0);
    // Seeded Fisher-Yates; single-worker order is the determinism contract.
    Rng er = order_rng.fork(static_cast<std::uint64_t>(epoch));
    for (size_t i = n_pages; i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(er.uniform_int(0, static_cast<int>(i) - 1))]);

    LossBreakdown epoch_bd;
    int epoch_batches = 0;
    const int bs = std::max(1, cfg.batch_size);
    for (size_t start = 0; start < n_pages && !stop; start += static_cast<size_t>(bs)) {
      const size_t end = std::min(n_pages, start + static_cast<size_t>(bs));
      Tensor batch_loss;
      LossBreakdown batch_bd;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t p = order[bi];
        Model::ForwardResult fwd = model.forward(images[p]);
        LossBreakdown bd;
        Tensor page_loss = loss_graph(fwd.iterations, model.config(), targets[p],
                                       cfg.loss_weights, cfg.background_weight, &bd);
        batch_bd.total += bd.total;
        batch_bd.cls += bd.cls;
        batch_bd.l1 += bd.l1;
        batch_bd.giou += bd.giou;
        batch_bd.mask += bd.mask;
        batch_loss = batch_loss.defined() ? nn::add(batch_loss, page_loss) : page_loss;
      }
      const real inv = 1.0 / static_cast<real>(end - start);
      batch_loss = nn::scale(batch_loss, inv);
      batch_bd.total *= inv;
      batch_bd.cls *= inv;
      batch_bd.l1 *= inv;
      batch_bd.giou *= inv;
      batch_bd.mask *= inv;
      if (!std::isfinite(batch_bd.total))
        throw TrainDivergence("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(steps));

      nn::backward(batch_loss);
      ++steps;
      const real bc1 = 1 - std::pow(cfg.beta1, steps);
      const real bc2 = 1 - std::pow(cfg.beta2, steps);
      for (size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].second;
        auto& g = t.grad();
        auto& val = t.value();
        for (size_t j = 0; j < val.size(); ++j) {
          adam[i].m[j] = cfg.beta1 * adam[i].m[j] + (1 - cfg.beta1) * g[j];
          adam[i].v[j] = cfg.beta2 * adam[i].v[j] + (1 - cfg.beta2) * g[j] * g[j];
          const real mhat = adam[i].m[j] / bc1;
          const real vhat = adam[i].v[j] / bc2;
          val[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * val[j]);
        }
      }

      epoch_bd.total += batch_bd.total;
      epoch_bd.cls += batch_bd.cls;
      epoch_bd.l1 += batch_bd.l1;
      epoch_bd.giou += batch_bd.giou;
      epoch_bd.mask += batch_bd.mask;
      ++epoch_batches;
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) stop = true;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.steps = steps;
    const real inv_b = epoch_batches > 0 ? 1.0 / epoch_batches : 0;
    log.loss.total = epoch_bd.total * inv_b;
    log.loss.cls = epoch_bd.cls * inv_b;
    log.loss.l1 = epoch_bd.l1 * inv_b;
    log.loss.giou = epoch_bd.giou * inv_b;
    log.loss.mask = epoch_bd.mask * inv_b;
    if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      Predictions preds;
      for (size_t p = 0; p < n_pages; ++p)
        preds[data.pages[p].image_id] =
            model.predict(images[p], cfg.eval_score_threshold, 100);
      EvalResult ev = evaluate(preds, data, EvalConfig::coco_default(), EvalMode::kBoxes);
      log.eval_det_map = ev.map();
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.total_steps = steps;
  return result;
}

// --- synthetic corpus ---

LayoutFamily layout_family_from_string(const std::string& name) {
  if (name == "rectangular") return LayoutFamily::kRectangular;
  if (name == "manhattan") return LayoutFamily::kManhattan;
  if (name == "non_manhattan") return LayoutFamily::kNonManhattan;
  if (name == "multi_column") return LayoutFamily::kMultiColumn;
  throw ConfigError("unknown layout family: " + name);
}

std::string to_string(LayoutFamily f) {
  switch (f) {
    case LayoutFamily::kRectangular: return "rectangular";
    case LayoutFamily::kManhattan: return "manhattan";
    case LayoutFamily::kNonManhattan: return "non_manhattan";
    case LayoutFamily::kMultiColumn: return "multi_column";
  }
  return "manhattan";
}

std::vector<SynthCategorySpec> SynthPageSpec::default_palette() {
  using Style = SynthCategorySpec::Style;
  return {
      {"headline_band", Style::kSolid, 0.10},
      {"text_block", Style::kLineStack, 0.30},
      {"figure_panel", Style::kSolid, 0.45},
      {"table_panel", Style::kSolid, 0.62},
      {"sidebar_box", Style::kSolid, 0.78},
      {"footer_strip", Style::kSolid, 0.90},
  };
}

namespace {

struct IntRect {
  int x0, y0, x1, y1;
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

void guillotine(IntRect r, int count, Rng& rng, std::vector<IntRect>& out, int min_side) {
  if (count <= 1 || r.w() < 2 * min_side || r.h() < 2 * min_side) {
    out.push_back(r);
    return;
  }
  const bool vertical = r.w() > r.h() ? true : (r.h() > r.w() ? false : rng.uniform() < 0.5);
  const int extent = vertical ? r.w() : r.h();
  const int cut = static_cast<int>(std::lround(extent * rng.uniform(0.4, 0.6)));
  const int c1 = std::max(1, std::min(count - 1, static_cast<int>(std::lround(
                                                     count * static_cast<real>(cut) / extent))));
  if (vertical) {
    guillotine({r.x0, r.y0, r.x0 + cut, r.y1}, c1, rng, out, min_side);
    guillotine({r.x0 + cut, r.y0, r.x1, r.y1}, count - c1, rng, out, min_side);
  } else {
    guillotine({r.x0, r.y0, r.x1, r.y0 + cut}, c1, rng, out, min_side);
    guillotine({r.x0, r.y0 + cut, r.x1, r.y1}, count - c1, rng, out, min_side);
  }
}

void fill_rect(Image& img, const IntRect& r, real gray) {
  for (int c = 0; c < 3; ++c)
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) img.set(c, x, y, gray);
}

void fill_mask(Image& img, const Mask2D& m, real gray) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y))
        for (int c = 0; c < 3; ++c) img.set(c, x, y, gray);
}

}  // namespace

SynthCorpus generate_corpus(const SynthPageSpec& spec, int n_pages, std::uint64_t seed) {
  if (n_pages < 1) throw ConfigError("generate_corpus: need n >= 1");
  const std::vector<SynthCategorySpec> palette =
      spec.palette.empty() ? SynthPageSpec::default_palette() : spec.palette;
  const int W = spec.page_width, H = spec.page_height;
  const int min_side = 12;
  if (spec.min_instances < 1 || spec.max_instances < spec.min_instances)
    throw ConfigError("generate_corpus: bad instance count range");
  if (static_cast<std::int64_t>(spec.max_instances) * min_side * min_side > static_cast<std::int64_t>(W) * H)
    throw ConfigError("generate_corpus: too many instances for the page size");

  SynthCorpus corpus;
  std::vector<std::string> names;
  for (const auto& c : palette) names.push_back(c.name);
  corpus.dataset.taxonomy = Taxonomy::from_names("synth", names);

  Rng master(mix_hash(seed, 0x5c0));
  for (int page_i = 0; page_i < n_pages; ++page_i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(page_i));
    PageRecord page;
    page.image_id = page_i + 1;
    page.width = W;
    page.height = H;
    page.subset = Subset::kSynthetic;
    page.file_name = "page_" + std::to_string(page.image_id) + ".ppm";
    Image img(W, H, 1.0);

    const int want = rng.uniform_int(spec.min_instances, spec.max_instances);
    std::vector<IntRect> cells;
    switch (spec.family) {
      case LayoutFamily::kRectangular: {
        // Full-width bands stacked top to bottom.
        int y = 0;
        for (int i = 0; i < want; ++i) {
          const int rest = H - y;
          const int slots = want - i;
          const int hh = std::max(min_side, rest / slots);
          cells.push_back({0, y, W, std::min(H, y + hh)});
          y += hh;
        }
        break;
      }
      case LayoutFamily::kMultiColumn: {
        const int ncols = rng.uniform_int(2, 3);
        const int colw = W / ncols;
        for (int col = 0; col < ncols; ++col) {
          const int n_here = want / ncols + (col < want % ncols ? 1 : 0);
          if (n_here == 0) continue;
          std::vector<IntRect> colcells;
          guillotine({col * colw, 0, (col + 1) * colw, H}, n_here, rng, colcells, min_side);
          cells.insert(cells.end(), colcells.begin(), colcells.end());
        }
        break;
      }
      case LayoutFamily::kManhattan:
      case LayoutFamily::kNonManhattan:
        guillotine({0, 0, W, H}, want, rng, cells, min_side);
        break;
    }

    for (const IntRect& cell : cells) {
      // Shrink by random margins, keeping a workable block.
      IntRect r = cell;
      const int mx = std::min({rng.uniform_int(1, 4), (r.w() - min_side) / 2});
      const int my = std::min({rng.uniform_int(1, 4), (r.h() - min_side) / 2});
      r = {r.x0 + std::max(0, mx), r.y0 + std::max(0, my), r.x1 - std::max(0, mx),
           r.y1 - std::max(0, my)};
      if (r.w() < min_side || r.h() < min_side) continue;

      const size_t pi = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(palette.size()) - 1));
      const SynthCategorySpec& cat = palette[pi];
      const real gray = std::clamp<real>(cat.gray + rng.uniform(-0.02, 0.02), 0.02, 0.95);

      Instance inst;
      inst.category_id = static_cast<int>(pi) + 1;

      const bool lshape = spec.family == LayoutFamily::kNonManhattan && rng.uniform() < 0.4 &&
                          r.w() >= 2 * min_side && r.h() >= 2 * min_side;
      if (lshape) {
        const int xm = r.x0 + r.w() / 2, ym = r.y0 + r.h() / 2;
        Polygon poly{{real(r.x0), real(r.y0)}, {real(r.x1), real(r.y0)}, {real(r.x1), real(ym)},
                     {real(xm), real(ym)},     {real(xm), real(r.y1)},   {real(r.x0), real(r.y1)}};
        Mask2D raster = rasterize({poly}, W, H);
        fill_mask(img, raster, gray);
        inst.bbox = {real(r.x0), real(r.y0), real(r.x1), real(r.y1)};
        inst.mask = InstanceMask::from_polygons({poly});
      } else if (cat.style == SynthCategorySpec::Style::kLineStack) {
        const int bar_h = std::max(2, r.h() / 8);
        const int gap = std::max(1, bar_h / 2);
        std::vector<Polygon> bars;
        int y = r.y0;
        int last_y1 = r.y0;
        while (y + bar_h <= r.y1) {
          bars.push_back(Polygon{{{real(r.x0), real(y)},
                                  {real(r.x1), real(y)},
                                  {real(r.x1), real(y + bar_h)},
                                  {real(r.x0), real(y + bar_h)}}});
          fill_rect(img, {r.x0, y, r.x1, y + bar_h}, gray);
          last_y1 = y + bar_h;
          y += bar_h + gap;
        }
        inst.bbox = {real(r.x0), real(r.y0), real(r.x1), real(last_y1)};
        inst.mask = InstanceMask::from_polygons(std::move(bars));
      } else {
        fill_rect(img, r, gray);
        inst.bbox = {real(r.x0), real(r.y0), real(r.x1), real(r.y1)};
        inst.mask = InstanceMask::from_polygons({Polygon{{{real(r.x0), real(r.y0)},
                                                          {real(r.x1), real(r.y0)},
                                                          {real(r.x1), real(r.y1)},
                                                          {real(r.x0), real(r.y1)}}}});
      }
      page.instances.push_back(std::move(inst));
    }

    corpus.dataset.pages.push_back(std::move(page));
    corpus.images.push_back(std::move(img));
  }
  return corpus;
}

}  // namespace tdla
