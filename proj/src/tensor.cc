// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qlab/tensor.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace qlab {

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void ShapeError(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              ShapeString(a) + " vs " + ShapeString(b));
}

template <typename T>
void RequireSameShape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) ShapeError(op, a.shape(), b.shape());
}

// Elementwise unary op with derivative expressed through input x and
// output y.
template <typename T, typename F, typename D>
Tensor<T> Unary(const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto ai = a.impl();
  return MakeResult<T>(a.shape(), std::move(out), {a},
                       [ai, dfdx](const detail::TensorImpl<T>& o) {
                         if (!ai->requires_grad) return;
                         auto& g = ai->EnsureGrad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * dfdx(ai->data[i], o.data[i]);
                       });
}

// Gathers KxK patches of a [C,H,W] image into [C*K*K, outH*outW].
template <typename T>
void Im2Col(const T* img, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((ch * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of Im2Col: scatters and accumulates into img.
template <typename T>
void Col2Im(const T* col, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, T* img) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((ch * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<Impl>()) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (NumElements(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape " + ShapeString(shape) +
                                " does not match " + std::to_string(data.size()) +
                                " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::Full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = NumElements(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::Scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor of shape " + ShapeString(shape()) +
                                " is not a scalar");
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::Detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::Clone() const {
  Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

template <typename T>
void Tensor<T>::Backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                ShapeString(shape()));
  }
  GradTape<T> tape(*this);
  tape.Run(*this);
}

// ---------------------------------------------------------------------------
// GradTape

template <typename T>
GradTape<T>::GradTape(const Tensor<T>& root) {
  // Iterative post-order DFS; reversed post-order is a topological order.
  std::unordered_set<detail::TensorImpl<T>*> seen;
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
  std::vector<detail::TensorImpl<T>*> post;
  auto* r = root.impl().get();
  if (!r->requires_grad) return;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* gn = node->node.get();
    if (gn && next < gn->inputs.size()) {
      auto* child = gn->inputs[next++].get();
      if (child->node && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    post.push_back(node);
    stack.pop_back();
  }
  order_.assign(post.rbegin(), post.rend());
}

template <typename T>
void GradTape<T>::Run(const Tensor<T>& root) const {
  auto* r = root.impl().get();
  if (!r->requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
  }
  r->EnsureGrad();
  r->grad.assign(r->data.size(), T(1));
  for (auto* impl : order_) {
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
}

template <typename T>
Tensor<T> MakeResult(Shape shape, std::vector<T> data,
                     std::vector<Tensor<T>> inputs,
                     std::function<void(const detail::TensorImpl<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<detail::GradNode<T>>();
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b) {
  RequireSameShape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl(), bi = b.impl();
  return MakeResult<T>(a.shape(), std::move(out), {a, b},
                       [ai, bi](const detail::TensorImpl<T>& o) {
                         for (auto* t : {ai.get(), bi.get()}) {
                           if (!t->requires_grad) continue;
                           auto& g = t->EnsureGrad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                         }
                       });
}

template <typename T>
Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b) {
  RequireSameShape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl(), bi = b.impl();
  return MakeResult<T>(a.shape(), std::move(out), {a, b},
                       [ai, bi](const detail::TensorImpl<T>& o) {
                         if (ai->requires_grad) {
                           auto& g = ai->EnsureGrad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                         }
                         if (bi->requires_grad) {
                           auto& g = bi->EnsureGrad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                         }
                       });
}

template <typename T>
Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b) {
  RequireSameShape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl(), bi = b.impl();
  return MakeResult<T>(a.shape(), std::move(out), {a, b},
                       [ai, bi](const detail::TensorImpl<T>& o) {
                         if (ai->requires_grad) {
                           auto& g = ai->EnsureGrad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += o.grad[i] * bi->data[i];
                         }
                         if (bi->requires_grad) {
                           auto& g = bi->EnsureGrad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += o.grad[i] * ai->data[i];
                         }
                       });
}

template <typename T>
Tensor<T> Scale(const Tensor<T>& a, T s) {
  return Unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> AddScalar(const Tensor<T>& a, T s) {
  return Unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> Log(const Tensor<T>& a) {
  return Unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> Exp(const Tensor<T>& a) {
  return Unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> Tanh(const Tensor<T>& a) {
  return Unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> Sigmoid(const Tensor<T>& a) {
  return Unary(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> LeakyRelu(const Tensor<T>& a, T slope) {
  return Unary(a, [slope](T x) { return x > 0 ? x : x * slope; },
               [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> Square(const Tensor<T>& a) {
  return Unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> Floor(const Tensor<T>& a) {
  return Unary(a, [](T x) { return std::floor(x); }, [](T, T) { return T(0); });
}

template <typename T>
Tensor<T> ClampMin(const Tensor<T>& a, T lo) {
  return Unary(a, [lo](T x) { return x < lo ? lo : x; },
               [lo](T x, T) { return x < lo ? T(0) : T(1); });
}

template <typename T>
Tensor<T> CustomElementwise(const Tensor<T>& a, std::vector<T> values,
                            std::vector<T> local_grad) {
  if (values.size() != a.numel() || local_grad.size() != a.numel()) {
    throw std::invalid_argument("custom_elementwise: expected " +
                                std::to_string(a.numel()) + " values and gradients");
  }
  auto ai = a.impl();
  auto lg = std::make_shared<std::vector<T>>(std::move(local_grad));
  return MakeResult<T>(a.shape(), std::move(values), {a},
                       [ai, lg](const detail::TensorImpl<T>& o) {
                         if (!ai->requires_grad) return;
                         auto& g = ai->EnsureGrad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * (*lg)[i];
                       });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> Sum(const Tensor<T>& a) {
  // Accumulate in double so float training sums stay stable.
  double s = 0;
  for (T v : a.data()) s += v;
  auto ai = a.impl();
  return MakeResult<T>(Shape{}, {static_cast<T>(s)}, {a},
                       [ai](const detail::TensorImpl<T>& o) {
                         if (!ai->requires_grad) return;
                         auto& g = ai->EnsureGrad();
                         for (auto& x : g) x += o.grad[0];
                       });
}

template <typename T>
Tensor<T> Mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return Scale(Sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      ConstMapMat<T>(a.data().data(), m, k) * ConstMapMat<T>(b.data().data(), k, n);
  auto ai = a.impl(), bi = b.impl();
  return MakeResult<T>(Shape{m, n}, std::move(out), {a, b},
                       [ai, bi, m, k, n](const detail::TensorImpl<T>& o) {
                         ConstMapMat<T> go(o.grad.data(), m, n);
                         if (ai->requires_grad) {
                           MapMat<T>(ai->EnsureGrad().data(), m, k).noalias() +=
                               go * ConstMapMat<T>(bi->data.data(), k, n).transpose();
                         }
                         if (bi->requires_grad) {
                           MapMat<T>(bi->EnsureGrad().data(), k, n).noalias() +=
                               ConstMapMat<T>(ai->data.data(), m, k).transpose() * go;
                         }
                       });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Tensor<T> Conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, ConvOptions opt) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) ||
      weight.dim(2) != weight.dim(3)) {
    ShapeError("conv2d", x.shape(), weight.shape());
  }
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), k = weight.dim(2);
  const bool has_bias = bias.numel() > 0;
  if (has_bias && bias.shape() != Shape{co}) ShapeError("conv2d(bias)", bias.shape(), Shape{co});
  if (h + 2 * opt.padding < k || w + 2 * opt.padding < k || opt.stride == 0) {
    ShapeError("conv2d", x.shape(), weight.shape());
  }
  const std::size_t oh = (h + 2 * opt.padding - k) / opt.stride + 1;
  const std::size_t ow = (w + 2 * opt.padding - k) / opt.stride + 1;
  const std::size_t ckk = ci * k * k, plane = oh * ow;

  auto cols = std::make_shared<std::vector<T>>(n * ckk * plane);
  std::vector<T> out(n * co * plane);
  ConstMapMat<T> wm(weight.data().data(), co, ckk);
  for (std::size_t b = 0; b < n; ++b) {
    T* col = cols->data() + b * ckk * plane;
    Im2Col(x.data().data() + b * ci * h * w, ci, h, w, k, opt.stride, opt.padding, oh, ow, col);
    MapMat<T> ob(out.data() + b * co * plane, co, plane);
    ob.noalias() = wm * ConstMapMat<T>(col, ckk, plane);
    if (has_bias) {
      for (std::size_t c = 0; c < co; ++c) ob.row(c).array() += bias[c];
    }
  }

  auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return MakeResult<T>(
      Shape{n, co, oh, ow}, std::move(out), {x, weight, bias},
      [=](const detail::TensorImpl<T>& o) {
        ConstMapMat<T> wmat(wi->data.data(), co, ckk);
        std::vector<T> dcol;
        if (xi->requires_grad) {
          xi->EnsureGrad();
          dcol.resize(ckk * plane);
        }
        for (std::size_t b = 0; b < n; ++b) {
          ConstMapMat<T> go(o.grad.data() + b * co * plane, co, plane);
          ConstMapMat<T> col(cols->data() + b * ckk * plane, ckk, plane);
          if (wi->requires_grad) {
            MapMat<T>(wi->EnsureGrad().data(), co, ckk).noalias() += go * col.transpose();
          }
          if (has_bias && bi->requires_grad) {
            auto& g = bi->EnsureGrad();
            // Plain loop: Eigen's vectorised sum() peels by address alignment,
            // which makes the result vary between otherwise identical runs.
            for (std::size_t c = 0; c < co; ++c) {
              double s = 0;
              for (std::size_t i = 0; i < plane; ++i) s += go(c, i);
              g[c] += static_cast<T>(s);
            }
          }
          if (xi->requires_grad) {
            MapMat<T>(dcol.data(), ckk, plane).noalias() = wmat.transpose() * go;
            Col2Im(dcol.data(), ci, h, w, k, opt.stride, opt.padding, oh, ow,
                   xi->grad.data() + b * ci * h * w);
          }
        }
      });
}

template <typename T>
Tensor<T> ConvTranspose2d(const Tensor<T>& x, const Tensor<T>& weight,
                          const Tensor<T>& bias, ConvOptions opt) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(0) != x.dim(1) ||
      weight.dim(2) != weight.dim(3) || opt.stride == 0 ||
      opt.output_padding >= opt.stride) {
    ShapeError("conv_transpose2d", x.shape(), weight.shape());
  }
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(1), k = weight.dim(2);
  const bool has_bias = bias.numel() > 0;
  if (has_bias && bias.shape() != Shape{co}) {
    ShapeError("conv_transpose2d(bias)", bias.shape(), Shape{co});
  }
  const long oh_l = static_cast<long>((h - 1) * opt.stride + k + opt.output_padding) -
                    2 * static_cast<long>(opt.padding);
  const long ow_l = static_cast<long>((w - 1) * opt.stride + k + opt.output_padding) -
                    2 * static_cast<long>(opt.padding);
  if (h == 0 || w == 0 || oh_l <= 0 || ow_l <= 0) {
    ShapeError("conv_transpose2d", x.shape(), weight.shape());
  }
  const std::size_t oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);
  const std::size_t ckk = co * k * k, plane = h * w, oplane = oh * ow;

  std::vector<T> out(n * co * oplane, T(0));
  std::vector<T> col(ckk * plane);
  ConstMapMat<T> wm(weight.data().data(), ci, ckk);
  for (std::size_t b = 0; b < n; ++b) {
    MapMat<T>(col.data(), ckk, plane).noalias() =
        wm.transpose() * ConstMapMat<T>(x.data().data() + b * ci * plane, ci, plane);
    T* ob = out.data() + b * co * oplane;
    Col2Im(col.data(), co, oh, ow, k, opt.stride, opt.padding, h, w, ob);
    if (has_bias) {
      for (std::size_t c = 0; c < co; ++c) {
        T* p = ob + c * oplane;
        for (std::size_t i = 0; i < oplane; ++i) p[i] += bias[c];
      }
    }
  }

  auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return MakeResult<T>(
      Shape{n, co, oh, ow}, std::move(out), {x, weight, bias},
      [=](const detail::TensorImpl<T>& o) {
        ConstMapMat<T> wmat(wi->data.data(), ci, ckk);
        std::vector<T> gcol(ckk * plane);
        for (std::size_t b = 0; b < n; ++b) {
          const T* go = o.grad.data() + b * co * oplane;
          if (has_bias && bi->requires_grad) {
            auto& g = bi->EnsureGrad();
            for (std::size_t c = 0; c < co; ++c) {
              double s = 0;
              for (std::size_t i = 0; i < oplane; ++i) s += go[c * oplane + i];
              g[c] += static_cast<T>(s);
            }
          }
          if (!xi->requires_grad && !wi->requires_grad) continue;
          Im2Col(go, co, oh, ow, k, opt.stride, opt.padding, h, w, gcol.data());
          ConstMapMat<T> gc(gcol.data(), ckk, plane);
          if (xi->requires_grad) {
            MapMat<T>(xi->EnsureGrad().data() + b * ci * plane, ci, plane).noalias() +=
                wmat * gc;
          }
          if (wi->requires_grad) {
            MapMat<T>(wi->EnsureGrad().data(), ci, ckk).noalias() +=
                ConstMapMat<T>(xi->data.data() + b * ci * plane, ci, plane) * gc.transpose();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void AdamStep(std::span<Tensor<T>> params, AdamState<T>& state) {
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw std::invalid_argument("adam_step: parameter of shape " +
                                  ShapeString(p.shape()) + " has no gradient");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter count changed between steps");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(state.epsilon);
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto& p = params[j];
    auto& m = state.m[j];
    auto& v = state.v[j];
    if (m.size() != p.numel()) {
      throw std::invalid_argument("adam_step: moment buffer does not match parameter shape");
    }
    auto data = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      data[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
    p.zero_grad();
  }
}

#define QLAB_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                              \
  template class GradTape<T>;                                                            \
  template Tensor<T> MakeResult<T>(Shape, std::vector<T>, std::vector<Tensor<T>>,        \
                                   std::function<void(const detail::TensorImpl<T>&)>);   \
  template Tensor<T> Add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> Sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> Mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> Scale(const Tensor<T>&, T);                                         \
  template Tensor<T> AddScalar(const Tensor<T>&, T);                                     \
  template Tensor<T> Log(const Tensor<T>&);                                              \
  template Tensor<T> Exp(const Tensor<T>&);                                              \
  template Tensor<T> Tanh(const Tensor<T>&);                                             \
  template Tensor<T> Sigmoid(const Tensor<T>&);                                          \
  template Tensor<T> LeakyRelu(const Tensor<T>&, T);                                     \
  template Tensor<T> Square(const Tensor<T>&);                                           \
  template Tensor<T> Floor(const Tensor<T>&);                                            \
  template Tensor<T> ClampMin(const Tensor<T>&, T);                                      \
  template Tensor<T> CustomElementwise(const Tensor<T>&, std::vector<T>, std::vector<T>); \
  template Tensor<T> Sum(const Tensor<T>&);                                              \
  template Tensor<T> Mean(const Tensor<T>&);                                             \
  template Tensor<T> MatMul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> Conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                            ConvOptions);                                                \
  template Tensor<T> ConvTranspose2d(const Tensor<T>&, const Tensor<T>&,                 \
                                     const Tensor<T>&, ConvOptions);                     \
  template void AdamStep(std::span<Tensor<T>>, AdamState<T>&);

QLAB_INSTANTIATE(float)
QLAB_INSTANTIATE(double)

#undef QLAB_INSTANTIATE

}  // namespace qlab
