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

#include "ffr/feature_flow.hpp"

#include <cmath>

#include "ffr/ops.hpp"
#include "ffr/rng.hpp"

namespace ffr {

std::size_t FeatureFlow::size() const {
  std::size_t n = 0;
  for (const StageGroup& s : stages) n += s.features.size();
  return n;
}

std::vector<Tensor> FeatureFlow::features() const {
  std::vector<Tensor> out;
  for (const StageGroup& s : stages) out.insert(out.end(), s.features.begin(), s.features.end());
  return out;
}

FeatureFlow group_by_stage(const std::vector<Tensor>& taps) {
  if (taps.empty()) throw UsageError("group_by_stage: no tapped features");
  FeatureFlow flow;
  flow.sample_count = taps.front().dim(0);
  for (const Tensor& t : taps) {
    if (t.rank() < 2 || t.dim(0) != flow.sample_count) {
      throw DimensionError("group_by_stage: tap " + shape_string(t.shape()) +
                           " does not share the batch extent " +
                           std::to_string(flow.sample_count));
    }
    Shape per_sample(t.shape().begin() + 1, t.shape().end());
    if (flow.stages.empty() || flow.stages.back().feature_shape != per_sample) {
      flow.stages.push_back(StageGroup{flow.stages.size(), per_sample, {}});
    }
    flow.stages.back().features.push_back(t);
  }
  return flow;
}

std::pair<Tensor, FeatureFlow> forward_with_taps(Network& net, const Tensor& batch, Mode mode) {
  ForwardResult r = net.forward(batch, mode);
  if (r.taps.empty()) return {r.logits, FeatureFlow{{}, batch.dim(0)}};
  return {r.logits, group_by_stage(r.taps)};
}

FlowProjections FlowProjections::for_shapes(const std::vector<Shape>& tap_shapes,
                                            std::uint64_t seed, ProjectionInit init) {
  FlowProjections p;
  Rng rng(seed);
  for (std::size_t i = 1; i < tap_shapes.size(); ++i) {
    const Shape& from = tap_shapes[i - 1];
    const Shape& to = tap_shapes[i];
    if (from == to) continue;
    Boundary b;
    b.from = from;
    b.to = to;
    if (from.size() == 3 && to.size() == 3) {
      if (to[1] == 0 || from[1] % to[1] != 0 || from[2] / (from[1] / to[1]) != to[2]) {
        throw ConfigError("projection: cannot map " + shape_string(from) + " to " +
                          shape_string(to) + " with a strided 1x1 convolution");
      }
      b.stride = from[1] / to[1];
      if (conv_output_extent(from[1], 1, b.stride, 0) != to[1] ||
          conv_output_extent(from[2], 1, b.stride, 0) != to[2]) {
        throw ConfigError("projection: stride " + std::to_string(b.stride) + " does not map " +
                          shape_string(from) + " to " + shape_string(to));
      }
      b.weight = Tensor({to[0], from[0], 1, 1}, true);
    } else if (from.size() == 1 && to.size() == 1) {
      b.weight = Tensor({to[0], from[0]}, true);
    } else {
      throw ConfigError("projection: unsupported feature shapes " + shape_string(from) + " -> " +
                        shape_string(to));
    }
    if (init == ProjectionInit::He) {
      const double sd = std::sqrt(2.0 / static_cast<double>(from[0]));
      for (double& v : b.weight.data()) v = sd * rng.normal();
    }
    p.boundaries_.push_back(std::move(b));
  }
  return p;
}

FlowProjections FlowProjections::for_model(const ModelSpec& spec, std::uint64_t seed,
                                           ProjectionInit init) {
  return for_shapes(spec.tap_shapes(), seed, init);
}

Tensor FlowProjections::project(std::size_t g, const Tensor& x) const {
  if (g == 0 || g > boundaries_.size()) {
    throw UsageError("projection: no boundary into stage " + std::to_string(g));
  }
  const Boundary& b = boundaries_[g - 1];
  if (x.rank() != b.from.size() + 1 ||
      !std::equal(b.from.begin(), b.from.end(), x.shape().begin() + 1)) {
    throw DimensionError("projection " + std::to_string(g) + ": expected samples of " +
                         shape_string(b.from) + ", got " + shape_string(x.shape()));
  }
  if (b.from.size() == 3) return conv2d(x, b.weight, {}, b.stride, 0);
  return linear(x, b.weight);
}

std::vector<NamedTensor> FlowProjections::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < boundaries_.size(); ++i) {
    out.push_back({"projections." + std::to_string(i + 1) + ".weight", boundaries_[i].weight});
  }
  return out;
}

FlowProjections FlowProjections::clone() const {
  FlowProjections p;
  for (const Boundary& b : boundaries_) {
    p.boundaries_.push_back(Boundary{b.from, b.to, b.stride, b.weight.clone()});
  }
  return p;
}

}  // namespace ffr
