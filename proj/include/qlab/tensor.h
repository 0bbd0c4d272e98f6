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

#ifndef QLAB_TENSOR_H_
#define QLAB_TENSOR_H_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qlab {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

// One recorded operation. `backward` reads the output gradient and
// accumulates into the gradients of `inputs`.
template <typename T>
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;

  GradNode() = default;
  GradNode(const GradNode&) = delete;
  GradNode& operator=(const GradNode&) = delete;
  ~GradNode();
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> node;

  std::vector<T>& EnsureGrad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Long chains would otherwise free node -> tensor -> node recursively and
// overflow the stack; unlink everything this node solely owns first.
template <typename T>
GradNode<T>::~GradNode() {
  std::vector<std::shared_ptr<GradNode>> pending;
  auto release = [&pending](GradNode& n) {
    n.backward = nullptr;  // closures hold copies of the input pointers
    for (auto& in : n.inputs) {
      if (in.use_count() == 1 && in->node) pending.push_back(std::move(in->node));
    }
    n.inputs.clear();
  };
  release(*this);
  while (!pending.empty()) {
    std::shared_ptr<GradNode> n = std::move(pending.back());
    pending.pop_back();
    if (n.use_count() == 1) release(*n);
  }
}

}  // namespace detail

// Dense row-major array with reverse-mode autodiff. Copies share storage;
// use Clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, T value, bool requires_grad = false);
  static Tensor Scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->node == nullptr; }
  bool SameStorage(const Tensor& other) const { return impl_ == other.impl_; }

  // Values only, cut from the graph.
  Tensor Detach() const;
  Tensor Clone() const;

  // Populates grad for every requires_grad tensor reachable from this
  // scalar. Throws on a non-scalar.
  void Backward() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<Impl> impl_;
};

// The ordered record of operations reachable from a root, in reverse
// topological order. Built fresh by Tensor::Backward each call.
template <typename T>
class GradTape {
 public:
  explicit GradTape(const Tensor<T>& root);
  std::size_t size() const { return order_.size(); }
  void Run(const Tensor<T>& root) const;

 private:
  std::vector<detail::TensorImpl<T>*> order_;
};

// Records `out` on the graph when any input needs a gradient.
template <typename T>
Tensor<T> MakeResult(Shape shape, std::vector<T> data,
                     std::vector<Tensor<T>> inputs,
                     std::function<void(const detail::TensorImpl<T>&)> backward);

// Elementwise primitives. Shapes must match exactly.
template <typename T> Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> AddScalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> Log(const Tensor<T>& a);
template <typename T> Tensor<T> Exp(const Tensor<T>& a);
template <typename T> Tensor<T> Tanh(const Tensor<T>& a);
template <typename T> Tensor<T> Sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> LeakyRelu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> Square(const Tensor<T>& a);

// Reductions to a scalar.
template <typename T> Tensor<T> Sum(const Tensor<T>& a);
template <typename T> Tensor<T> Mean(const Tensor<T>& a);

// [m,k] x [k,n] -> [m,n]
template <typename T> Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b);

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed only
};

// x [N,Ci,H,W], weight [Co,Ci,K,K], bias [Co] (may be empty).
template <typename T>
Tensor<T> Conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, ConvOptions opt);

// x [N,Ci,H,W], weight [Ci,Co,K,K], bias [Co] (may be empty).
// Output side is (H-1)*stride - 2*padding + K + output_padding.
template <typename T>
Tensor<T> ConvTranspose2d(const Tensor<T>& x, const Tensor<T>& weight,
                          const Tensor<T>& bias, ConvOptions opt);

// Floor whose gradient is zero unless overridden through CustomElementwise.
template <typename T> Tensor<T> Floor(const Tensor<T>& a);

// Forward values and a per-element local derivative supplied by the caller;
// backward multiplies the upstream gradient by `local_grad`.
template <typename T>
Tensor<T> CustomElementwise(const Tensor<T>& a, std::vector<T> values,
                            std::vector<T> local_grad);

// Elementwise max(a, lo); gradient is zero where clamped.
template <typename T> Tensor<T> ClampMin(const Tensor<T>& a, T lo);

template <typename T>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One bias-corrected Adam update; clears grads afterwards. Throws if any
// parameter has no gradient.
template <typename T>
void AdamStep(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace qlab

#endif  // QLAB_TENSOR_H_
