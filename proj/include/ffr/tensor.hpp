// Copyright 2026 The FFR Authors
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

#ifndef FFR_TENSOR_HPP
#define FFR_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ffr/errors.hpp"

namespace ffr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Producing node on `tape`, or -1 for leaves.
  std::int64_t node = -1;
  const Tape* tape = nullptr;
};

/// Shared handle to a dense row-major double tensor.
///
/// Copies of a Tensor alias the same storage; use clone() or detach() for a
/// deep copy. Layout is B x C x H x W for 4-D and B x D for 2-D values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor filled(Shape shape, double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  /// Gradient accumulator; allocated (zero) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of the values; the result is a leaf without gradient.
  Tensor detach() const;
  /// Deep copy of the values that keeps the requires_grad flag.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of differentiable operations.
///
/// Operations record onto the thread's active tape. A backward sweep walks
/// the nodes in reverse insertion order, so each node runs at most once and
/// after every node that consumes its output.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// The tape operations record onto for the calling thread.
  static Tape& active();

 private:
  std::vector<Node> nodes_;
};

/// Makes `tape` the active tape of this thread until destroyed.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording on this thread until destroyed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Backward pass on the active tape.
void backward(const Tensor& loss);

}  // namespace ffr

#endif  // FFR_TENSOR_HPP
