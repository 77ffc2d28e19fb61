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

#include "ffr/tensor.hpp"

#include <sstream>

namespace ffr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() requires a single-element tensor, got " + shape_string(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() {
  if (!requires_grad()) throw UsageError("grad() of a tensor that does not require grad");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw UsageError("grad() of a tensor that does not require grad");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

// ---------------------------------------------------------------------------

namespace {

thread_local Tape default_tape;
thread_local Tape* current_tape = &default_tape;
thread_local bool recording = true;

}  // namespace

Tape& Tape::active() { return *current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

bool grad_enabled() { return recording; }

void Tape::record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward) {
  Node node;
  node.output = output.handle();
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) node.inputs.push_back(in.handle());
  node.backward = std::move(backward);
  output.impl()->requires_grad = true;
  output.impl()->node = static_cast<std::int64_t>(nodes_.size());
  output.impl()->tape = this;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward() on a loss that does not depend on any trainable tensor");
  }
  TensorImpl* impl = loss.impl();
  if (impl->node >= 0 && impl->tape != this) {
    throw UsageError("backward() on a loss recorded on a different tape");
  }
  if (impl->node >= static_cast<std::int64_t>(nodes_.size()) ||
      (impl->node >= 0 && nodes_[static_cast<std::size_t>(impl->node)].output.get() != impl)) {
    throw UsageError("backward() on a loss whose tape has been cleared");
  }
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (std::int64_t i = impl->node; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.output->grad.empty()) n.backward();
  }
}

void Tape::clear() {
  for (Node& n : nodes_) {
    n.output->node = -1;
    n.output->tape = nullptr;
  }
  nodes_.clear();
}

void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace ffr
