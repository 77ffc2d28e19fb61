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

#ifndef FFR_REGULARIZER_HPP
#define FFR_REGULARIZER_HPP

#include <span>
#include <string>
#include <vector>

#include "ffr/feature_flow.hpp"
#include "ffr/tensor.hpp"

namespace ffr {

enum class StageScaling {
  // (H1 * W1) / (Hg * Wg) for C x H x W stages, 1 for flat features.
  Spatial,
  Uniform,
};

std::string to_string(StageScaling s);
StageScaling stage_scaling_from_string(const std::string& s);

struct FfrConfig {
  bool enabled = false;
  double k1 = 0.0;
  double k2 = 0.0;
  StageScaling stage_scaling = StageScaling::Spatial;

  /// Throws ConfigError on negative or non-finite coefficients.
  void validate() const;
  /// True when the regularizer contributes anything to the loss.
  bool active() const { return enabled && (k1 > 0.0 || k2 > 0.0); }
};

/// Multiplier for each stage of `flow`.
std::vector<double> stage_scales(const FeatureFlow& flow, StageScaling rule);

/// Length term over a single run of equally shaped features:
/// sum_i coefficient * |x_{i+1} - x_i|_1 / B.
Tensor flow_length(std::span<const Tensor> features, double coefficient);
/// Curvature term over a single run of equally shaped features:
/// sum_i coefficient * |x_{i+1} - 2 x_i + x_{i-1}|_1 / B.
Tensor flow_curvature(std::span<const Tensor> features, double coefficient);

/// Staged length: within-stage pairs plus one projected pair per boundary.
Tensor ffr_length(const FeatureFlow& flow, const FlowProjections& proj, const FfrConfig& cfg);
/// Staged curvature. Each boundary contributes the triple
/// (P x_{g-1,last}, x_{g,1}, x_{g,2}) when stage g has at least two features.
Tensor ffr_curvature(const FeatureFlow& flow, const FlowProjections& proj, const FfrConfig& cfg);

struct LossTerms {
  Tensor total;
  Tensor task;
  Tensor length;
  Tensor curvature;
};

/// task + length + curvature. When the regularizer is inactive, `total` is
/// `task_loss` itself and both terms are exact zeros.
LossTerms total_loss(const Tensor& task_loss, const FeatureFlow& flow,
                     const FlowProjections& proj, const FfrConfig& cfg);

}  // namespace ffr

#endif  // FFR_REGULARIZER_HPP
