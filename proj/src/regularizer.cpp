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

#include "ffr/regularizer.hpp"

#include <cmath>

#include "ffr/ops.hpp"

namespace ffr {

namespace {

Tensor accumulate(const Tensor& acc, const Tensor& term) {
  return acc.defined() ? add(acc, term) : term;
}

Tensor or_zero(const Tensor& t) { return t.defined() ? t : Tensor::scalar(0.0); }

Tensor second_difference(const Tensor& prev, const Tensor& mid, const Tensor& next) {
  return add(sub(next, scale(mid, 2.0)), prev);
}

double batch_factor(double coefficient, const Tensor& x) {
  return coefficient / static_cast<double>(x.dim(0));
}

// Sums without the zero fallback so callers can chain them.
Tensor length_terms(std::span<const Tensor> features, double coefficient) {
  Tensor acc;
  for (std::size_t i = 1; i < features.size(); ++i) {
    const double f = batch_factor(coefficient, features[i]);
    acc = accumulate(acc, scale(l1_norm(sub(features[i], features[i - 1])), f));
  }
  return acc;
}

Tensor curvature_terms(std::span<const Tensor> features, double coefficient) {
  Tensor acc;
  for (std::size_t i = 2; i < features.size(); ++i) {
    const double f = batch_factor(coefficient, features[i]);
    acc = accumulate(
        acc, scale(l1_norm(second_difference(features[i - 2], features[i - 1], features[i])), f));
  }
  return acc;
}

std::vector<Tensor> project_boundaries(const FeatureFlow& flow, const FlowProjections& proj) {
  if (flow.stages.size() > 1 && proj.size() != flow.stages.size() - 1) {
    throw DimensionError("feature flow has " + std::to_string(flow.stages.size()) +
                         " stages but " + std::to_string(proj.size()) + " projections");
  }
  std::vector<Tensor> projected(flow.stages.size());
  for (std::size_t g = 1; g < flow.stages.size(); ++g) {
    projected[g] = proj.project(g, flow.stages[g - 1].features.back());
  }
  return projected;
}

Tensor staged_length(const FeatureFlow& flow, const std::vector<Tensor>& projected,
                     const FfrConfig& cfg) {
  const std::vector<double> scales = stage_scales(flow, cfg.stage_scaling);
  Tensor acc;
  for (std::size_t g = 0; g < flow.stages.size(); ++g) {
    const std::vector<Tensor>& x = flow.stages[g].features;
    const double c = cfg.k1 * scales[g];
    if (g > 0) {
      acc = accumulate(acc, scale(l1_norm(sub(x.front(), projected[g])), batch_factor(c, x.front())));
    }
    Tensor within = length_terms(x, c);
    if (within.defined()) acc = accumulate(acc, within);
  }
  return or_zero(acc);
}

Tensor staged_curvature(const FeatureFlow& flow, const std::vector<Tensor>& projected,
                        const FfrConfig& cfg) {
  const std::vector<double> scales = stage_scales(flow, cfg.stage_scaling);
  Tensor acc;
  for (std::size_t g = 0; g < flow.stages.size(); ++g) {
    const std::vector<Tensor>& x = flow.stages[g].features;
    const double c = cfg.k2 * scales[g];
    if (g > 0 && x.size() >= 2) {
      acc = accumulate(acc, scale(l1_norm(second_difference(projected[g], x[0], x[1])),
                                  batch_factor(c, x[0])));
    }
    Tensor within = curvature_terms(x, c);
    if (within.defined()) acc = accumulate(acc, within);
  }
  return or_zero(acc);
}

}  // namespace

std::string to_string(StageScaling s) {
  return s == StageScaling::Spatial ? "spatial" : "uniform";
}

StageScaling stage_scaling_from_string(const std::string& s) {
  if (s == "spatial") return StageScaling::Spatial;
  if (s == "uniform") return StageScaling::Uniform;
  throw ConfigError("unknown stage scaling '" + s + "' (expected spatial or uniform)");
}

void FfrConfig::validate() const {
  if (!std::isfinite(k1) || k1 < 0.0) throw ConfigError("ffr.k1 must be a finite value >= 0");
  if (!std::isfinite(k2) || k2 < 0.0) throw ConfigError("ffr.k2 must be a finite value >= 0");
}

std::vector<double> stage_scales(const FeatureFlow& flow, StageScaling rule) {
  std::vector<double> out(flow.stages.size(), 1.0);
  if (rule == StageScaling::Uniform || flow.stages.empty()) return out;
  const Shape& first = flow.stages.front().feature_shape;
  for (std::size_t g = 0; g < flow.stages.size(); ++g) {
    const Shape& s = flow.stages[g].feature_shape;
    if (s.size() == 3 && first.size() == 3) {
      out[g] = static_cast<double>(first[1] * first[2]) / static_cast<double>(s[1] * s[2]);
    }
  }
  return out;
}

Tensor flow_length(std::span<const Tensor> features, double coefficient) {
  return or_zero(length_terms(features, coefficient));
}

Tensor flow_curvature(std::span<const Tensor> features, double coefficient) {
  return or_zero(curvature_terms(features, coefficient));
}

Tensor ffr_length(const FeatureFlow& flow, const FlowProjections& proj, const FfrConfig& cfg) {
  return staged_length(flow, project_boundaries(flow, proj), cfg);
}

Tensor ffr_curvature(const FeatureFlow& flow, const FlowProjections& proj, const FfrConfig& cfg) {
  return staged_curvature(flow, project_boundaries(flow, proj), cfg);
}

LossTerms total_loss(const Tensor& task_loss, const FeatureFlow& flow,
                     const FlowProjections& proj, const FfrConfig& cfg) {
  cfg.validate();
  LossTerms t{task_loss, task_loss, Tensor::scalar(0.0), Tensor::scalar(0.0)};
  if (!cfg.active() || flow.stages.empty()) return t;
  const std::vector<Tensor> projected = project_boundaries(flow, proj);
  if (cfg.k1 > 0.0) t.length = staged_length(flow, projected, cfg);
  if (cfg.k2 > 0.0) t.curvature = staged_curvature(flow, projected, cfg);
  t.total = add(add(task_loss, t.length), t.curvature);
  return t;
}

}  // namespace ffr
