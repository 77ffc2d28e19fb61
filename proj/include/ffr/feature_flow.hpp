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

#ifndef FFR_FEATURE_FLOW_HPP
#define FFR_FEATURE_FLOW_HPP

#include <cstdint>
#include <vector>

#include "ffr/network.hpp"
#include "ffr/tensor.hpp"

namespace ffr {

/// A maximal run of tapped features that share one shape.
struct StageGroup {
  std::size_t index = 0;
  Shape feature_shape;  // per sample
  std::vector<Tensor> features;
};

/// Tapped features of one forward pass, in network order, split into stages.
struct FeatureFlow {
  std::vector<StageGroup> stages;
  std::size_t sample_count = 0;

  std::size_t size() const;
  std::vector<Tensor> features() const;
};

/// Splits `taps` at every shape change. Taps must share the batch extent.
FeatureFlow group_by_stage(const std::vector<Tensor>& taps);

/// Runs the network and groups its taps.
std::pair<Tensor, FeatureFlow> forward_with_taps(Network& net, const Tensor& batch, Mode mode);

enum class ProjectionInit { He, Zero };

/// Learned maps bridging consecutive stages: a strided 1x1 convolution for
/// C x H x W features or a dense matrix for flat features.
class FlowProjections {
 public:
  struct Boundary {
    Shape from;  // per-sample shape of the last feature of stage g-1
    Shape to;    // per-sample shape of stage g
    std::size_t stride = 1;
    Tensor weight;
  };

  FlowProjections() = default;
  /// One boundary per shape change in `tap_shapes`.
  static FlowProjections for_shapes(const std::vector<Shape>& tap_shapes, std::uint64_t seed,
                                    ProjectionInit init = ProjectionInit::He);
  static FlowProjections for_model(const ModelSpec& spec, std::uint64_t seed,
                                   ProjectionInit init = ProjectionInit::He);

  /// Number of boundaries, G - 1.
  std::size_t size() const { return boundaries_.size(); }
  Boundary& boundary(std::size_t g) { return boundaries_.at(g - 1); }
  const Boundary& boundary(std::size_t g) const { return boundaries_.at(g - 1); }

  /// Maps a batch shaped like stage g-1 to stage g's shape (g >= 1).
  Tensor project(std::size_t g, const Tensor& x) const;

  std::vector<NamedTensor> parameters();
  FlowProjections clone() const;

 private:
  std::vector<Boundary> boundaries_;
};

}  // namespace ffr

#endif  // FFR_FEATURE_FLOW_HPP
