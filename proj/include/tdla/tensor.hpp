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

#ifndef TDLA_TENSOR_HPP_
#define TDLA_TENSOR_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "tdla/types.hpp"

namespace tdla::nn {

// Reverse-mode autodiff over dense double tensors. The graph is dynamic:
// every op allocates a node holding its value and a closure that scatters
// the node's gradient into its parents. backward() zero-fills gradients of
// the reachable subgraph, so parameter nodes can be reused across steps.

struct TensorNode;
using TensorNodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  std::vector<real> value;
  std::vector<real> grad;
  bool requires_grad = false;
  std::vector<TensorNodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorNodePtr n) : node_(std::move(n)) {}

  static Tensor constant(std::vector<int> shape, std::vector<real> value);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor scalar(real v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(node_->value.size()); }
  std::vector<real>& value() { return node_->value; }
  const std::vector<real>& value() const { return node_->value; }
  std::vector<real>& grad() { return node_->grad; }
  const std::vector<real>& grad() const { return node_->grad; }
  real item() const { return node_->value.at(0); }
  bool requires_grad() const { return node_->requires_grad; }
  TensorNodePtr node() const { return node_; }

 private:
  TensorNodePtr node_;
};

/// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must be scalar.
void backward(const Tensor& loss);

// --- elementwise and linear algebra ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);
Tensor add_rowvec(const Tensor& a, const Tensor& bias);  // {N,D} + {D}
Tensor matmul(const Tensor& a, const Tensor& b);         // {N,K} x {K,M}
Tensor transpose(const Tensor& a);                       // {N,M} -> {M,N}
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                       real eps = 1e-5);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor select_rows(const Tensor& a, const std::vector<int>& rows);

// --- network-specific ops ---

/// 2-D convolution, input {C,H,W}, weight {O,C,kh,kw}, bias {O}; zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad);

/// Region features by center-sampled bilinear interpolation: one sample per
/// output cell. boxes {N,4} normalized (cx,cy,w,h); output {N, R*R*C} with
/// cell-major, channel-minor layout. Differentiable in features and boxes;
/// sample coordinates clamp to the map border. A zero-area box samples the
/// collapsed point.
Tensor roi_align(const Tensor& features, const Tensor& boxes, int resolution);

/// Per-query two-layer channel mixing with query-generated parameters:
/// params row n packs W1 (d x h) then W2 (h x d); roi row n is an (S x d)
/// block; output row n = flatten(relu(relu(X W1) W2)).
Tensor dynamic_mix(const Tensor& roi, const Tensor& params, int cells, int channels,
                   int hidden);

/// Mean over the S cells of each query's (S x d) block -> {N, d}.
Tensor mean_cells(const Tensor& roi, int cells, int channels);

// --- losses (targets are plain values, not graph nodes) ---

/// Weighted mean cross entropy over rows; labels index columns.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<real>& weights);

/// (1/M) sum |a - t| over all entries of {M,D}.
Tensor l1_loss(const Tensor& a, const std::vector<real>& targets);

/// (scale/M) sum (a - t)^2 over all entries of {M,D}.
Tensor sq_loss(const Tensor& a, const std::vector<real>& targets, real scale);

/// mean(1 - giou) over box rows; both sides (cx,cy,w,h).
Tensor giou_loss(const Tensor& boxes, const std::vector<real>& target_boxes);

/// w1*a + w2*b for scalars.
Tensor axpy(real w1, const Tensor& a, real w2, const Tensor& b);

}  // namespace tdla::nn

#endif  // TDLA_TENSOR_HPP_
