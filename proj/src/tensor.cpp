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

#include "tdla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

namespace tdla::nn {

namespace {

using MatrixRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

int numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

TensorNodePtr make_node(std::vector<int> shape, std::vector<TensorNodePtr> parents) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(numel(n->shape)));
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

// Gradient accumulation targets; skipped for constants.
real* grad_of(const TensorNodePtr& p) {
  if (!p->requires_grad) return nullptr;
  return p->grad.data();
}

void check(bool ok, const char* msg) {
  if (!ok) throw Error(std::string("tensor: ") + msg);
}

}  // namespace

Tensor Tensor::constant(std::vector<int> shape, std::vector<real> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  check(numel(n->shape) == static_cast<int>(value.size()), "constant: shape/value mismatch");
  n->value = std::move(value);
  return Tensor(n);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(numel(n->shape)), 0);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(real v) { return constant({1}, {v}); }

void backward(const Tensor& loss) {
  check(loss.size() == 1, "backward: loss must be scalar");
  // Post-order DFS for a reverse-topological sweep.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) n->grad.assign(n->value.size(), 0);
  loss.node()->grad[0] = 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  n->backward_fn = [](TensorNode& self) {
    for (int k = 0; k < 2; ++k)
      if (real* g = grad_of(self.parents[static_cast<size_t>(k)]))
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  };
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
  n->backward_fn = [](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (real* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  };
  return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  n->backward_fn = [](TensorNode& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (real* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  };
  return Tensor(n);
}

Tensor scale(const Tensor& a, real s) {
  auto n = make_node(a.shape(), {a.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * s;
  n->backward_fn = [s](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
  };
  return Tensor(n);
}

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  check(a.shape().size() == 2 && bias.shape().size() == 1 && a.dim(1) == bias.dim(0),
        "add_rowvec: shape mismatch");
  const int rows = a.dim(0), cols = a.dim(1);
  auto n = make_node(a.shape(), {a.node(), bias.node()});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      n->value[static_cast<size_t>(r) * cols + c] =
          a.value()[static_cast<size_t>(r) * cols + c] + bias.value()[static_cast<size_t>(c)];
  n->backward_fn = [rows, cols](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (real* g = grad_of(self.parents[1]))
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g[c] += self.grad[static_cast<size_t>(r) * cols + c];
  };
  return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
        "matmul: shape mismatch");
  const int n_rows = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto n = make_node({n_rows, m}, {a.node(), b.node()});
  MapRM(n->value.data(), n_rows, m) = ConstMapRM(a.value().data(), n_rows, k) *
                                      ConstMapRM(b.value().data(), k, m);
  n->backward_fn = [n_rows, k, m](TensorNode& self) {
    ConstMapRM go(self.grad.data(), n_rows, m);
    ConstMapRM av(self.parents[0]->value.data(), n_rows, k);
    ConstMapRM bv(self.parents[1]->value.data(), k, m);
    if (real* g = grad_of(self.parents[0])) MapRM(g, n_rows, k) += go * bv.transpose();
    if (real* g = grad_of(self.parents[1])) MapRM(g, k, m) += av.transpose() * go;
  };
  return Tensor(n);
}

Tensor transpose(const Tensor& a) {
  check(a.shape().size() == 2, "transpose: need 2-d");
  const int rows = a.dim(0), cols = a.dim(1);
  auto n = make_node({cols, rows}, {a.node()});
  MapRM(n->value.data(), cols, rows) = ConstMapRM(a.value().data(), rows, cols).transpose();
  n->backward_fn = [rows, cols](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      MapRM(g, rows, cols) += ConstMapRM(self.grad.data(), cols, rows).transpose();
  };
  return Tensor(n);
}

Tensor relu(const Tensor& a) {
  auto n = make_node(a.shape(), {a.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::max<real>(a.value()[i], 0);
  n->backward_fn = [](TensorNode& self) {
    if (real* g = grad_of(self.parents[0])) {
      const auto& x = self.parents[0]->value;
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (x[i] > 0) g[i] += self.grad[i];
    }
  };
  return Tensor(n);
}

Tensor sigmoid(const Tensor& a) {
  auto n = make_node(a.shape(), {a.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = 1 / (1 + std::exp(-a.value()[i]));
  n->backward_fn = [](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const real y = self.value[i];
        g[i] += self.grad[i] * y * (1 - y);
      }
  };
  return Tensor(n);
}

Tensor softmax_rows(const Tensor& a) {
  check(a.shape().size() == 2, "softmax_rows: need 2-d");
  const int rows = a.dim(0), cols = a.dim(1);
  auto n = make_node(a.shape(), {a.node()});
  for (int r = 0; r < rows; ++r) {
    const real* x = &a.value()[static_cast<size_t>(r) * cols];
    real* y = &n->value[static_cast<size_t>(r) * cols];
    real mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    real z = 0;
    for (int c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  n->backward_fn = [rows, cols](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (int r = 0; r < rows; ++r) {
        const real* y = &self.value[static_cast<size_t>(r) * cols];
        const real* dy = &self.grad[static_cast<size_t>(r) * cols];
        real dot = 0;
        for (int c = 0; c < cols; ++c) dot += dy[c] * y[c];
        real* gx = g + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gx[c] += y[c] * (dy[c] - dot);
      }
  };
  return Tensor(n);
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta, real eps) {
  check(a.shape().size() == 2 && gamma.dim(0) == a.dim(1) && beta.dim(0) == a.dim(1),
        "layer_norm_rows: shape mismatch");
  const int rows = a.dim(0), cols = a.dim(1);
  auto n = make_node(a.shape(), {a.node(), gamma.node(), beta.node()});
  auto inv_sigma = std::make_shared<std::vector<real>>(static_cast<size_t>(rows));
  auto xhat = std::make_shared<std::vector<real>>(n->value.size());
  for (int r = 0; r < rows; ++r) {
    const real* x = &a.value()[static_cast<size_t>(r) * cols];
    real mu = 0;
    for (int c = 0; c < cols; ++c) mu += x[c];
    mu /= cols;
    real var = 0;
    for (int c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= cols;
    const real is = 1 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    for (int c = 0; c < cols; ++c) {
      const real xh = (x[c] - mu) * is;
      (*xhat)[static_cast<size_t>(r) * cols + c] = xh;
      n->value[static_cast<size_t>(r) * cols + c] =
          xh * gamma.value()[static_cast<size_t>(c)] + beta.value()[static_cast<size_t>(c)];
    }
  }
  n->backward_fn = [rows, cols, inv_sigma, xhat](TensorNode& self) {
    const auto& gam = self.parents[1]->value;
    real* gx = grad_of(self.parents[0]);
    real* gg = grad_of(self.parents[1]);
    real* gb = grad_of(self.parents[2]);
    for (int r = 0; r < rows; ++r) {
      const real* dy = &self.grad[static_cast<size_t>(r) * cols];
      const real* xh = &(*xhat)[static_cast<size_t>(r) * cols];
      if (gg || gb)
        for (int c = 0; c < cols; ++c) {
          if (gg) gg[c] += dy[c] * xh[c];
          if (gb) gb[c] += dy[c];
        }
      if (gx) {
        real mean_g = 0, mean_gx = 0;
        for (int c = 0; c < cols; ++c) {
          const real t = dy[c] * gam[static_cast<size_t>(c)];
          mean_g += t;
          mean_gx += t * xh[c];
        }
        mean_g /= cols;
        mean_gx /= cols;
        const real is = (*inv_sigma)[static_cast<size_t>(r)];
        for (int c = 0; c < cols; ++c) {
          const real t = dy[c] * gam[static_cast<size_t>(c)];
          gx[static_cast<size_t>(r) * cols + c] += (t - mean_g - xh[c] * mean_gx) * is;
        }
      }
    }
  };
  return Tensor(n);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check(a.shape().size() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1), "slice_cols: bad range");
  const int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  auto n = make_node({rows, w}, {a.node()});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c)
      n->value[static_cast<size_t>(r) * w + c] =
          a.value()[static_cast<size_t>(r) * cols + c0 + c];
  n->backward_fn = [rows, cols, c0, w](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c)
          g[static_cast<size_t>(r) * cols + c0 + c] += self.grad[static_cast<size_t>(r) * w + c];
  };
  return Tensor(n);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  const int rows = parts[0].dim(0);
  int total = 0;
  std::vector<TensorNodePtr> parents;
  for (const Tensor& p : parts) {
    check(p.shape().size() == 2 && p.dim(0) == rows, "concat_cols: row mismatch");
    total += p.dim(1);
    parents.push_back(p.node());
  }
  auto n = make_node({rows, total}, std::move(parents));
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c)
        n->value[static_cast<size_t>(r) * total + off + c] =
            p.value()[static_cast<size_t>(r) * w + c];
    off += w;
  }
  n->backward_fn = [rows, total](TensorNode& self) {
    int off2 = 0;
    for (auto& parent : self.parents) {
      const int w = parent->shape[1];
      if (real* g = grad_of(parent))
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < w; ++c)
            g[static_cast<size_t>(r) * w + c] +=
                self.grad[static_cast<size_t>(r) * total + off2 + c];
      off2 += w;
    }
  };
  return Tensor(n);
}

Tensor select_rows(const Tensor& a, const std::vector<int>& rows) {
  check(a.shape().size() == 2, "select_rows: need 2-d");
  const int cols = a.dim(1);
  const int m = static_cast<int>(rows.size());
  auto n = make_node({m, cols}, {a.node()});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < cols; ++c)
      n->value[static_cast<size_t>(r) * cols + c] =
          a.value()[static_cast<size_t>(rows[static_cast<size_t>(r)]) * cols + c];
  n->backward_fn = [rows, cols, m](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < cols; ++c)
          g[static_cast<size_t>(rows[static_cast<size_t>(r)]) * cols + c] +=
              self.grad[static_cast<size_t>(r) * cols + c];
  };
  return Tensor(n);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int pad) {
  check(input.shape().size() == 3 && weight.shape().size() == 4, "conv2d: bad shapes");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int O = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  check(weight.dim(1) == C && bias.dim(0) == O, "conv2d: channel mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  check(Ho > 0 && Wo > 0, "conv2d: output collapses");

  const int krows = C * kh * kw, ocols = Ho * Wo;
  auto col = std::make_shared<MatrixRM>(krows, ocols);
  col->setZero();
  const real* in = input.value().data();
  for (int c = 0; c < C; ++c)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx) {
        const int kr = (c * kh + dy) * kw + dx;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + dx - pad;
            if (ix < 0 || ix >= W) continue;
            (*col)(kr, oy * Wo + ox) = in[(static_cast<size_t>(c) * H + iy) * W + ix];
          }
        }
      }

  auto n = make_node({O, Ho, Wo}, {input.node(), weight.node(), bias.node()});
  MapRM out(n->value.data(), O, ocols);
  out.noalias() = ConstMapRM(weight.value().data(), O, krows) * (*col);
  for (int o = 0; o < O; ++o) out.row(o).array() += bias.value()[static_cast<size_t>(o)];

  n->backward_fn = [C, H, W, O, kh, kw, Ho, Wo, stride, pad, krows, ocols,
                    col](TensorNode& self) {
    ConstMapRM go(self.grad.data(), O, ocols);
    if (real* g = grad_of(self.parents[2]))
      for (int o = 0; o < O; ++o) g[o] += go.row(o).sum();
    if (real* g = grad_of(self.parents[1]))
      MapRM(g, O, krows) += go * col->transpose();
    if (real* g = grad_of(self.parents[0])) {
      MatrixRM dcol = ConstMapRM(self.parents[1]->value.data(), O, krows).transpose() * go;
      for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            const int kr = (c * kh + dy) * kw + dx;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride + dy - pad;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride + dx - pad;
                if (ix < 0 || ix >= W) continue;
                g[(static_cast<size_t>(c) * H + iy) * W + ix] += dcol(kr, oy * Wo + ox);
              }
            }
          }
    }
  };
  return Tensor(n);
}

Tensor roi_align(const Tensor& features, const Tensor& boxes, int resolution) {
  check(features.shape().size() == 3 && boxes.shape().size() == 2 && boxes.dim(1) == 4,
        "roi_align: bad shapes");
  const int C = features.dim(0), Hf = features.dim(1), Wf = features.dim(2);
  const int N = boxes.dim(0), R = resolution;
  auto n = make_node({N, R * R * C}, {features.node(), boxes.node()});

  const real* F = features.value().data();
  auto fval = [&](int c, int iy, int ix) {
    return F[(static_cast<size_t>(c) * Hf + iy) * Wf + ix];
  };
  // Cached per-sample interpolation state for the backward pass.
  struct SampleInfo {
    int ix, iy;
    real fx, fy;
    bool clamped_x, clamped_y;
  };
  auto samples = std::make_shared<std::vector<SampleInfo>>(static_cast<size_t>(N) * R * R);

  for (int q = 0; q < N; ++q) {
    const real cx = boxes.value()[static_cast<size_t>(q) * 4 + 0];
    const real cy = boxes.value()[static_cast<size_t>(q) * 4 + 1];
    const real w = boxes.value()[static_cast<size_t>(q) * 4 + 2];
    const real h = boxes.value()[static_cast<size_t>(q) * 4 + 3];
    const real x0 = (cx - w / 2) * Wf, x1 = (cx + w / 2) * Wf;
    const real y0 = (cy - h / 2) * Hf, y1 = (cy + h / 2) * Hf;
    for (int py = 0; py < R; ++py)
      for (int px = 0; px < R; ++px) {
        const real sx = x0 + (px + 0.5) * (x1 - x0) / R;
        const real sy = y0 + (py + 0.5) * (y1 - y0) / R;
        real u = sx - 0.5, v = sy - 0.5;
        SampleInfo si{};
        si.clamped_x = u <= 0 || u >= Wf - 1;
        si.clamped_y = v <= 0 || v >= Hf - 1;
        u = std::clamp<real>(u, 0, Wf - 1);
        v = std::clamp<real>(v, 0, Hf - 1);
        si.ix = std::min(static_cast<int>(u), Wf - 2 >= 0 ? Wf - 2 : 0);
        si.iy = std::min(static_cast<int>(v), Hf - 2 >= 0 ? Hf - 2 : 0);
        si.fx = Wf > 1 ? u - si.ix : 0;
        si.fy = Hf > 1 ? v - si.iy : 0;
        (*samples)[(static_cast<size_t>(q) * R + py) * R + px] = si;
        const int ix1 = std::min(si.ix + 1, Wf - 1), iy1 = std::min(si.iy + 1, Hf - 1);
        real* out = &n->value[static_cast<size_t>(q) * (R * R * C) + (py * R + px) * C];
        for (int c = 0; c < C; ++c)
          out[c] = fval(c, si.iy, si.ix) * (1 - si.fx) * (1 - si.fy) +
                   fval(c, si.iy, ix1) * si.fx * (1 - si.fy) +
                   fval(c, iy1, si.ix) * (1 - si.fx) * si.fy + fval(c, iy1, ix1) * si.fx * si.fy;
      }
  }

  n->backward_fn = [C, Hf, Wf, N, R, samples](TensorNode& self) {
    real* gF = grad_of(self.parents[0]);
    real* gB = grad_of(self.parents[1]);
    const real* F2 = self.parents[0]->value.data();
    auto fval2 = [&](int c, int iy, int ix) {
      return F2[(static_cast<size_t>(c) * Hf + iy) * Wf + ix];
    };
    for (int q = 0; q < N; ++q)
      for (int py = 0; py < R; ++py)
        for (int px = 0; px < R; ++px) {
          const SampleInfo& si = (*samples)[(static_cast<size_t>(q) * R + py) * R + px];
          const int ix1 = std::min(si.ix + 1, Wf - 1), iy1 = std::min(si.iy + 1, Hf - 1);
          const real* go = &self.grad[static_cast<size_t>(q) * (R * R * C) + (py * R + px) * C];
          real dsx = 0, dsy = 0;
          for (int c = 0; c < C; ++c) {
            const real g = go[c];
            if (g == 0) continue;
            if (gF) {
              gF[(static_cast<size_t>(c) * Hf + si.iy) * Wf + si.ix] +=
                  g * (1 - si.fx) * (1 - si.fy);
              gF[(static_cast<size_t>(c) * Hf + si.iy) * Wf + ix1] += g * si.fx * (1 - si.fy);
              gF[(static_cast<size_t>(c) * Hf + iy1) * Wf + si.ix] += g * (1 - si.fx) * si.fy;
              gF[(static_cast<size_t>(c) * Hf + iy1) * Wf + ix1] += g * si.fx * si.fy;
            }
            if (gB) {
              dsx += g * ((fval2(c, si.iy, ix1) - fval2(c, si.iy, si.ix)) * (1 - si.fy) +
                          (fval2(c, iy1, ix1) - fval2(c, iy1, si.ix)) * si.fy);
              dsy += g * ((fval2(c, iy1, si.ix) - fval2(c, si.iy, si.ix)) * (1 - si.fx) +
                          (fval2(c, iy1, ix1) - fval2(c, si.iy, ix1)) * si.fx);
            }
          }
          if (gB) {
            if (si.clamped_x) dsx = 0;
            if (si.clamped_y) dsy = 0;
            // sx = (cx + w*((px+0.5)/R - 1/2)) * Wf
            gB[static_cast<size_t>(q) * 4 + 0] += dsx * Wf;
            gB[static_cast<size_t>(q) * 4 + 2] += dsx * Wf * ((px + 0.5) / R - 0.5);
            gB[static_cast<size_t>(q) * 4 + 1] += dsy * Hf;
            gB[static_cast<size_t>(q) * 4 + 3] += dsy * Hf * ((py + 0.5) / R - 0.5);
          }
        }
  };
  return Tensor(n);
}

Tensor dynamic_mix(const Tensor& roi, const Tensor& params, int cells, int channels,
                   int hidden) {
  const int N = roi.dim(0), S = cells, D = channels, h = hidden;
  check(roi.dim(1) == S * D && params.dim(0) == N && params.dim(1) == D * h + h * D,
        "dynamic_mix: shape mismatch");
  auto n = make_node({N, S * D}, {roi.node(), params.node()});
  auto mid = std::make_shared<std::vector<MatrixRM>>();  // relu(X W1) per query
  mid->reserve(static_cast<size_t>(N));
  for (int q = 0; q < N; ++q) {
    ConstMapRM X(&roi.value()[static_cast<size_t>(q) * S * D], S, D);
    ConstMapRM W1(&params.value()[static_cast<size_t>(q) * (D * h + h * D)], D, h);
    ConstMapRM W2(&params.value()[static_cast<size_t>(q) * (D * h + h * D) + D * h], h, D);
    MatrixRM A = (X * W1).cwiseMax(0.0);
    MapRM(&n->value[static_cast<size_t>(q) * S * D], S, D) = (A * W2).cwiseMax(0.0);
    mid->push_back(std::move(A));
  }
  n->backward_fn = [N, S, D, h, mid](TensorNode& self) {
    real* gR = grad_of(self.parents[0]);
    real* gP = grad_of(self.parents[1]);
    const auto& roi_v = self.parents[0]->value;
    const auto& par_v = self.parents[1]->value;
    for (int q = 0; q < N; ++q) {
      ConstMapRM X(&roi_v[static_cast<size_t>(q) * S * D], S, D);
      ConstMapRM W1(&par_v[static_cast<size_t>(q) * (D * h + h * D)], D, h);
      ConstMapRM W2(&par_v[static_cast<size_t>(q) * (D * h + h * D) + D * h], h, D);
      ConstMapRM Y(&self.value[static_cast<size_t>(q) * S * D], S, D);
      ConstMapRM gY(&self.grad[static_cast<size_t>(q) * S * D], S, D);
      const MatrixRM& A = (*mid)[static_cast<size_t>(q)];
      MatrixRM dB0 = (Y.array() > 0).select(gY, MatrixRM::Zero(S, D));
      MatrixRM dA = dB0 * W2.transpose();
      MatrixRM dA0 = (A.array() > 0).select(dA, MatrixRM::Zero(S, h));
      if (gP) {
        MapRM gW1(gP + static_cast<size_t>(q) * (D * h + h * D), D, h);
        MapRM gW2(gP + static_cast<size_t>(q) * (D * h + h * D) + D * h, h, D);
        gW1 += X.transpose() * dA0;
        gW2 += A.transpose() * dB0;
      }
      if (gR) MapRM(gR + static_cast<size_t>(q) * S * D, S, D) += dA0 * W1.transpose();
    }
  };
  return Tensor(n);
}

Tensor mean_cells(const Tensor& roi, int cells, int channels) {
  const int N = roi.dim(0), S = cells, D = channels;
  check(roi.dim(1) == S * D, "mean_cells: shape mismatch");
  auto n = make_node({N, D}, {roi.node()});
  for (int q = 0; q < N; ++q)
    for (int c = 0; c < D; ++c) {
      real s = 0;
      for (int k = 0; k < S; ++k) s += roi.value()[static_cast<size_t>(q) * S * D + k * D + c];
      n->value[static_cast<size_t>(q) * D + c] = s / S;
    }
  n->backward_fn = [N, S, D](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (int q = 0; q < N; ++q)
        for (int c = 0; c < D; ++c) {
          const real gv = self.grad[static_cast<size_t>(q) * D + c] / S;
          for (int k = 0; k < S; ++k) g[static_cast<size_t>(q) * S * D + k * D + c] += gv;
        }
  };
  return Tensor(n);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<real>& weights) {
  check(logits.shape().size() == 2 && labels.size() == static_cast<size_t>(logits.dim(0)) &&
            weights.size() == labels.size(),
        "cross_entropy: shape mismatch");
  const int rows = logits.dim(0), cols = logits.dim(1);
  real wsum = 0;
  for (real w : weights) wsum += w;
  check(wsum > 0, "cross_entropy: zero total weight");
  auto n = make_node({1}, {logits.node()});
  real total = 0;
  for (int r = 0; r < rows; ++r) {
    const real* x = &logits.value()[static_cast<size_t>(r) * cols];
    real mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    real z = 0;
    for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const real lse = std::log(z) + mx;
    total += weights[static_cast<size_t>(r)] * (lse - x[labels[static_cast<size_t>(r)]]);
  }
  n->value[0] = total / wsum;
  n->backward_fn = [rows, cols, labels, weights, wsum](TensorNode& self) {
    if (real* g = grad_of(self.parents[0])) {
      const real gout = self.grad[0];
      const auto& lv = self.parents[0]->value;
      for (int r = 0; r < rows; ++r) {
        const real* x = &lv[static_cast<size_t>(r) * cols];
        real mx = x[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        real z = 0;
        for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
        const real wr = weights[static_cast<size_t>(r)] / wsum * gout;
        for (int c = 0; c < cols; ++c) {
          real p = std::exp(x[c] - mx) / z;
          if (c == labels[static_cast<size_t>(r)]) p -= 1;
          g[static_cast<size_t>(r) * cols + c] += wr * p;
        }
      }
    }
  };
  return Tensor(n);
}

Tensor l1_loss(const Tensor& a, const std::vector<real>& targets) {
  check(a.value().size() == targets.size() && !a.shape().empty(), "l1_loss: size mismatch");
  const int m = a.dim(0);
  check(m > 0, "l1_loss: empty");
  auto n = make_node({1}, {a.node()});
  real total = 0;
  for (size_t i = 0; i < targets.size(); ++i) total += std::abs(a.value()[i] - targets[i]);
  n->value[0] = total / m;
  n->backward_fn = [targets, m](TensorNode& self) {
    if (real* g = grad_of(self.parents[0])) {
      const real gout = self.grad[0] / m;
      const auto& av = self.parents[0]->value;
      for (size_t i = 0; i < targets.size(); ++i) {
        const real d = av[i] - targets[i];
        if (d > 0)
          g[i] += gout;
        else if (d < 0)
          g[i] -= gout;
      }
    }
  };
  return Tensor(n);
}

Tensor sq_loss(const Tensor& a, const std::vector<real>& targets, real scale) {
  check(a.value().size() == targets.size() && !a.shape().empty(), "sq_loss: size mismatch");
  const int m = a.dim(0);
  check(m > 0, "sq_loss: empty");
  auto n = make_node({1}, {a.node()});
  real total = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const real d = a.value()[i] - targets[i];
    total += d * d;
  }
  n->value[0] = total * scale / m;
  n->backward_fn = [targets, m, scale](TensorNode& self) {
    if (real* g = grad_of(self.parents[0])) {
      const real gout = self.grad[0] * scale / m * 2;
      const auto& av = self.parents[0]->value;
      for (size_t i = 0; i < targets.size(); ++i) g[i] += gout * (av[i] - targets[i]);
    }
  };
  return Tensor(n);
}

Tensor giou_loss(const Tensor& boxes, const std::vector<real>& target_boxes) {
  check(boxes.shape().size() == 2 && boxes.dim(1) == 4 &&
            target_boxes.size() == boxes.value().size(),
        "giou_loss: shape mismatch");
  const int m = boxes.dim(0);
  check(m > 0, "giou_loss: empty");
  auto n = make_node({1}, {boxes.node()});

  // Shared forward/backward geometry per row, in (cx, cy, w, h) form.
  struct Geo {
    real ax0, ax1, ay0, ay1, bx0, bx1, by0, by1;
    real inter, uni, hull, iw, ih, cw, ch;
    bool overlap;
  };
  auto geo_of = [&](const real* p, const real* t) {
    Geo g2{};
    g2.ax0 = p[0] - p[2] / 2;
    g2.ax1 = p[0] + p[2] / 2;
    g2.ay0 = p[1] - p[3] / 2;
    g2.ay1 = p[1] + p[3] / 2;
    g2.bx0 = t[0] - t[2] / 2;
    g2.bx1 = t[0] + t[2] / 2;
    g2.by0 = t[1] - t[3] / 2;
    g2.by1 = t[1] + t[3] / 2;
    g2.iw = std::min(g2.ax1, g2.bx1) - std::max(g2.ax0, g2.bx0);
    g2.ih = std::min(g2.ay1, g2.by1) - std::max(g2.ay0, g2.by0);
    g2.overlap = g2.iw > 0 && g2.ih > 0;
    g2.inter = g2.overlap ? g2.iw * g2.ih : 0;
    g2.uni = (g2.ax1 - g2.ax0) * (g2.ay1 - g2.ay0) + (g2.bx1 - g2.bx0) * (g2.by1 - g2.by0) -
             g2.inter;
    g2.cw = std::max(g2.ax1, g2.bx1) - std::min(g2.ax0, g2.bx0);
    g2.ch = std::max(g2.ay1, g2.by1) - std::min(g2.ay0, g2.by0);
    g2.hull = g2.cw * g2.ch;
    return g2;
  };

  real total = 0;
  for (int r = 0; r < m; ++r) {
    const Geo g2 = geo_of(&boxes.value()[static_cast<size_t>(r) * 4],
                          &target_boxes[static_cast<size_t>(r) * 4]);
    total += 2 - g2.inter / g2.uni - g2.uni / g2.hull;  // = 1 - giou
  }
  n->value[0] = total / m;

  n->backward_fn = [m, target_boxes, geo_of](TensorNode& self) {
    real* g = grad_of(self.parents[0]);
    if (!g) return;
    const real gout = self.grad[0] / m;
    const auto& bv = self.parents[0]->value;
    for (int r = 0; r < m; ++r) {
      const real* p = &bv[static_cast<size_t>(r) * 4];
      const real* t = &target_boxes[static_cast<size_t>(r) * 4];
      const Geo q = geo_of(p, t);
      // loss = 2 - I/U - U/H with U = A + B - I:
      // dloss = dI*(-1/U - I/U^2 + 1/H) + dA*(I/U^2 - 1/H) + dH*(U/H^2)
      const real kI = -1 / q.uni - q.inter / (q.uni * q.uni) + 1 / q.hull;
      const real kA = q.inter / (q.uni * q.uni) - 1 / q.hull;
      const real kH = q.uni / (q.hull * q.hull);
      // partials w.r.t. the four pred corners
      real d[4] = {0, 0, 0, 0};  // ax0, ax1, ay0, ay1
      if (q.overlap) {
        if (q.ax0 > q.bx0) d[0] += kI * (-q.ih);
        if (q.ax1 < q.bx1) d[1] += kI * q.ih;
        if (q.ay0 > q.by0) d[2] += kI * (-q.iw);
        if (q.ay1 < q.by1) d[3] += kI * q.iw;
      }
      const real pw = q.ax1 - q.ax0, ph = q.ay1 - q.ay0;
      d[0] += kA * (-ph);
      d[1] += kA * ph;
      d[2] += kA * (-pw);
      d[3] += kA * pw;
      if (q.ax0 < q.bx0) d[0] += kH * (-q.ch);
      if (q.ax1 > q.bx1) d[1] += kH * q.ch;
      if (q.ay0 < q.by0) d[2] += kH * (-q.cw);
      if (q.ay1 > q.by1) d[3] += kH * q.cw;
      // chain to (cx, cy, w, h)
      g[static_cast<size_t>(r) * 4 + 0] += gout * (d[0] + d[1]);
      g[static_cast<size_t>(r) * 4 + 1] += gout * (d[2] + d[3]);
      g[static_cast<size_t>(r) * 4 + 2] += gout * (-d[0] / 2 + d[1] / 2);
      g[static_cast<size_t>(r) * 4 + 3] += gout * (-d[2] / 2 + d[3] / 2);
    }
  };
  return Tensor(n);
}

Tensor axpy(real w1, const Tensor& a, real w2, const Tensor& b) {
  check(a.shape() == b.shape(), "axpy: shape mismatch");
  auto n = make_node(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = w1 * a.value()[i] + w2 * b.value()[i];
  n->backward_fn = [w1, w2](TensorNode& self) {
    if (real* g = grad_of(self.parents[0]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += w1 * self.grad[i];
    if (real* g = grad_of(self.parents[1]))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += w2 * self.grad[i];
  };
  return Tensor(n);
}

}  // namespace tdla::nn
