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

#ifndef FFR_NETWORK_HPP
#define FFR_NETWORK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ffr/ops.hpp"
#include "ffr/tensor.hpp"

namespace ffr {

/// conv -> BN -> ReLU -> optional 2x2 maxpool.
struct ConvBlockSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool maxpool = false;
  // Cleared only by test harnesses that need the bare convolution.
  bool batchnorm = true;
  bool activation = true;
  bool bias = false;

  bool operator==(const ConvBlockSpec&) const = default;
};

/// ReLU(F(x) + shortcut(x)) with a 2- or 3-conv branch F.
struct ResidualBlockSpec {
  std::size_t in_channels = 0;
  // Width of the block output, which is also the shortcut width.
  std::size_t out_channels = 0;
  std::vector<std::size_t> kernels{3, 3};
  // Output width of every branch conv. After pruning the last entry may be
  // smaller than out_channels, in which case `scatter` places it.
  std::vector<std::size_t> widths;
  std::size_t stride = 1;
  bool projection = false;
  bool batchnorm = true;
  std::vector<std::size_t> scatter;
  // Branch pruned away entirely; the block reduces to ReLU(shortcut(x)).
  bool removed = false;

  bool operator==(const ResidualBlockSpec&) const = default;
};

/// ReLU(W2 ReLU(W1 x + b1) + b2 + x) on flat vectors.
struct DenseResidualBlockSpec {
  std::size_t width = 2;
  std::size_t hidden = 16;

  bool operator==(const DenseResidualBlockSpec&) const = default;
};

using BlockSpec = std::variant<ConvBlockSpec, ResidualBlockSpec, DenseResidualBlockSpec>;

enum class HeadPooling { Flatten, GlobalAverage };

struct HeadSpec {
  std::size_t in_features = 0;
  std::size_t classes = 10;
  HeadPooling pooling = HeadPooling::Flatten;

  bool operator==(const HeadSpec&) const = default;
};

/// Declarative layer graph: optional untapped stem, tapped blocks, optional
/// linear head. Shapes below are per sample (no batch axis).
struct ModelSpec {
  std::string name;
  Shape input;
  std::optional<ConvBlockSpec> stem;
  std::vector<BlockSpec> blocks;
  std::vector<bool> taps;
  // Prepends the network input to the tapped features.
  bool tap_input = false;
  std::optional<HeadSpec> head;

  bool operator==(const ModelSpec&) const = default;

  /// Throws ConfigError when dims do not chain or taps are malformed.
  void validate() const;
  Shape stem_output_shape() const;
  /// Output of each block as seen by the next block (after any maxpool).
  std::vector<Shape> block_output_shapes() const;
  /// Feature each block contributes to the flow. Conv blocks are tapped
  /// before their maxpool; residual blocks after the final ReLU.
  std::vector<Shape> block_tap_shapes() const;
  std::vector<Shape> tap_shapes() const;
  std::size_t tap_count() const;
  /// Lengths of the maximal runs of equal tap shapes.
  std::vector<std::size_t> stage_sizes() const;
  Shape output_shape() const;
};

std::string to_json_string(const ModelSpec& spec);
ModelSpec model_spec_from_json(std::string_view text);
/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string spec_hash(const ModelSpec& spec);

// Builders -------------------------------------------------------------------

/// VGG16 for 32x32 inputs with a single linear classifier.
ModelSpec build_vgg16_cifar(std::size_t classes = 10);
/// VGG-style net from a channel plan; 0 entries insert a maxpool after the
/// preceding conv block.
ModelSpec build_vgg(std::string name, const std::vector<std::size_t>& plan,
                    std::size_t classes = 10);
/// Eight conv blocks, widths 16..128, five pools: a quarter-width VGG11.
ModelSpec build_vgg_desk(std::size_t classes = 10);
/// CIFAR ResNet of depth 6n+2 with projection shortcuts at stage changes.
ModelSpec build_resnet_cifar(std::size_t blocks_per_stage, std::size_t classes = 10);
ModelSpec build_resnet56_cifar(std::size_t classes = 10);
/// Residual MLP on 2-D points; the last block output is the network output.
ModelSpec build_residual_mlp_2d(std::size_t blocks = 5, std::size_t hidden = 16,
                                bool tap_input = false);

/// F x F x k x k kernel passing channel i of the input to output i.
Tensor identity_kernel(std::size_t channels, std::size_t kernel);

// Parameters -----------------------------------------------------------------

struct ConvParams {
  Tensor weight;
  Tensor bias;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

struct ConvBlock {
  ConvParams conv;
  BatchNormParams bn;
};

struct ResidualBlock {
  std::vector<ConvParams> convs;
  std::vector<BatchNormParams> bns;
  // Undefined weight when the shortcut is the identity.
  ConvParams shortcut;
  BatchNormParams shortcut_bn;
};

struct DenseResidualBlock {
  Tensor fc1_weight;
  Tensor fc1_bias;
  Tensor fc2_weight;
  Tensor fc2_bias;
};

struct LinearParams {
  Tensor weight;
  Tensor bias;
};

using Block = std::variant<ConvBlock, ResidualBlock, DenseResidualBlock>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

struct ForwardResult {
  Tensor logits;
  std::vector<Tensor> taps;
};

/// A ModelSpec together with its trainable parameters and BN statistics.
class Network {
 public:
  /// Allocates parameters: weights zero, BN gamma one, beta zero.
  explicit Network(ModelSpec spec);
  /// Allocates and He-initializes from `seed`.
  static Network build(ModelSpec spec, std::uint64_t seed);

  /// Weights ~ N(0, 2/fan_in); biases and BN beta zero; BN gamma one.
  void initialize(std::uint64_t seed);
  Network clone() const;

  const ModelSpec& spec() const { return spec_; }

  /// Runs the network. Train mode updates BN running statistics.
  ForwardResult forward(const Tensor& batch, Mode mode);

  /// Trainable tensors in a fixed order with stable dotted names.
  std::vector<NamedTensor> parameters();
  std::vector<NamedBuffer> buffers();

  std::optional<ConvBlock>& stem() { return stem_; }
  const std::optional<ConvBlock>& stem() const { return stem_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::optional<LinearParams>& head() { return head_; }
  const std::optional<LinearParams>& head() const { return head_; }

 private:
  ModelSpec spec_;
  std::optional<ConvBlock> stem_;
  std::vector<Block> blocks_;
  std::optional<LinearParams> head_;
};

/// Index of the residual conv that carries the block stride.
std::size_t residual_stride_index(const ResidualBlockSpec& spec);

}  // namespace ffr

#endif  // FFR_NETWORK_HPP
