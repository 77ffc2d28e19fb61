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

#ifndef FFR_OPS_HPP
#define FFR_OPS_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "ffr/tensor.hpp"

namespace ffr {

// Differentiable operations. Each one records a node on the active tape when
// gradient recording is enabled and at least one operand requires grad.

/// 2-D cross-correlation. `input` is [B,C,H,W], `weight` is [F,C,k,k] and
/// `bias`, when defined, is [F].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              std::size_t stride = 1, std::size_t padding = 0);

/// `input` [B,D] times `weight` [O,D] transposed, plus `bias` [O] when defined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {});

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

enum class Mode { Train, Eval };

/// Per-channel batch normalization over B, H and W. Train mode normalizes with
/// the biased batch variance and folds the unbiased one into `state`.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode, double eps = 1e-5, double momentum = 0.1);

Tensor relu(const Tensor& x);

/// Windowed max without padding. Ties go to the first element of the window
/// in row-major order.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Mean over H and W: [B,C,H,W] -> [B,C].
Tensor global_avgpool(const Tensor& x);

/// [B, ...] -> [B, prod(...)].
Tensor flatten(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Sum of absolute values as a [1] tensor. The subgradient at 0 is 0.
Tensor l1_norm(const Tensor& x);

/// Mean of squared differences over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

/// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Places the channels of `x` [B,c,H,W] at `positions` inside a zero tensor of
/// `width` channels. `positions` must be strictly increasing.
Tensor scatter_channels(const Tensor& x, std::span<const std::size_t> positions,
                        std::size_t width);

/// Output spatial extent of a convolution or pooling window.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

}  // namespace ffr

#endif  // FFR_OPS_HPP
