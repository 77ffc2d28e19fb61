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

#include <cmath>

#include "doctest.h"
#include "ffr/ops.hpp"
#include "ffr/regularizer.hpp"
#include "support/oracles.hpp"

using namespace ffr;
using ffr::testing::brute_force_flow;
using ffr::testing::random_tensor;

namespace {

std::vector<Tensor> random_taps(Rng& rng, const std::vector<Shape>& shapes, std::size_t batch) {
  std::vector<Tensor> taps;
  for (const Shape& s : shapes) {
    Shape full{batch};
    full.insert(full.end(), s.begin(), s.end());
    taps.push_back(random_tensor(full, rng));
  }
  return taps;
}

}  // namespace

TEST_CASE("staged terms match the flatten-and-sum oracle") {
  Rng rng(100);
  const std::vector<std::vector<Shape>> layouts{
      {{4}, {4}, {4}, {4}},
      {{2, 4, 4}, {2, 4, 4}, {3, 2, 2}, {3, 2, 2}, {3, 2, 2}},
      {{2, 4, 4}, {3, 2, 2}, {3, 2, 2}, {5, 1, 1}, {5, 1, 1}},
      {{2, 6, 6}, {4, 3, 3}, {4, 1, 1}},
      {{3}, {2}, {2}, {2}, {6}}};
  for (std::size_t trial = 0; trial < 25; ++trial) {
    const auto& layout = layouts[trial % layouts.size()];
    const auto taps = random_taps(rng, layout, 1 + rng.below(3));
    const FeatureFlow flow = group_by_stage(taps);
    const FlowProjections proj = FlowProjections::for_shapes(layout, rng.next());
    FfrConfig cfg{true, rng.uniform(), rng.uniform(),
                  trial % 2 ? StageScaling::Uniform : StageScaling::Spatial};
    const auto oracle = brute_force_flow(taps, proj, cfg);
    CHECK(ffr_length(flow, proj, cfg).item() == doctest::Approx(oracle.length).epsilon(1e-12));
    CHECK(ffr_curvature(flow, proj, cfg).item() == doctest::Approx(oracle.curvature).epsilon(1e-12));
  }
}

TEST_CASE("a single stage reduces to the plain length and curvature sums") {
  Rng rng(5);
  const auto taps = random_taps(rng, {{3, 2, 2}, {3, 2, 2}, {3, 2, 2}, {3, 2, 2}}, 2);
  const FeatureFlow flow = group_by_stage(taps);
  const FfrConfig cfg{true, 0.3, 0.7, StageScaling::Spatial};
  const FlowProjections none;
  CHECK(ffr_length(flow, none, cfg).item() == flow_length(taps, 0.3).item());
  CHECK(ffr_curvature(flow, none, cfg).item() == flow_curvature(taps, 0.7).item());
  double len = 0.0;
  for (std::size_t i = 1; i < taps.size(); ++i) len += l1_norm(sub(taps[i], taps[i - 1])).item();
  CHECK(flow_length(taps, 0.3).item() == doctest::Approx(0.3 * len / 2.0).epsilon(1e-13));
}

TEST_CASE("a straight, evenly spaced flow has no curvature") {
  Rng rng(6);
  const Tensor a = random_tensor({2, 5}, rng);
  const Tensor d = random_tensor({2, 5}, rng);
  std::vector<Tensor> taps{a, add(a, d), add(a, scale(d, 2.0)), add(a, scale(d, 3.0))};
  CHECK(std::abs(flow_curvature(taps, 1.0).item()) < 1e-12);
  CHECK(flow_length(taps, 1.0).item() ==
        doctest::Approx(3.0 * l1_norm(d).item() / 2.0).epsilon(1e-12));
}

TEST_CASE("stage scales follow the spatial ratio") {
  Rng rng(7);
  const auto taps = random_taps(rng, {{2, 8, 8}, {4, 4, 4}, {8, 2, 2}, {3}}, 1);
  const FeatureFlow flow = group_by_stage(taps);
  CHECK(stage_scales(flow, StageScaling::Spatial) == std::vector<double>{1, 4, 16, 1});
  CHECK(stage_scales(flow, StageScaling::Uniform) == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("an inactive regularizer returns the task loss itself") {
  Rng rng(8);
  const auto taps = random_taps(rng, {{4}, {4}}, 2);
  const FeatureFlow flow = group_by_stage(taps);
  const Tensor task = Tensor::scalar(1.25);
  for (const FfrConfig& cfg : {FfrConfig{false, 1.0, 1.0}, FfrConfig{true, 0.0, 0.0}}) {
    const LossTerms t = total_loss(task, flow, {}, cfg);
    CHECK(t.total.same_storage(task));
    CHECK(t.length.item() == 0.0);
    CHECK(t.curvature.item() == 0.0);
  }
  const LossTerms on = total_loss(task, flow, {}, FfrConfig{true, 1.0, 0.0});
  CHECK(on.total.item() == doctest::Approx(1.25 + on.length.item()));
}

TEST_CASE("regularizer rejects bad coefficients and projection sets") {
  Rng rng(9);
  const auto taps = random_taps(rng, {{4}, {2}}, 2);
  const FeatureFlow flow = group_by_stage(taps);
  CHECK_THROWS_AS(total_loss(Tensor::scalar(0.0), flow, {}, FfrConfig{true, -1.0, 0.0}), ConfigError);
  CHECK_THROWS_AS(total_loss(Tensor::scalar(0.0), flow, {}, FfrConfig{true, 1.0, 0.0}), DimensionError);
  CHECK_THROWS_AS(FfrConfig({true, NAN, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(stage_scaling_from_string("area"), ConfigError);
}

TEST_CASE("the regularized loss has correct gradients through the projections") {
  Rng rng(10);
  std::vector<Tensor> taps;
  for (const Shape& s : std::vector<Shape>{{2, 2, 4, 4}, {2, 2, 4, 4}, {2, 3, 2, 2}, {2, 3, 2, 2}}) {
    taps.push_back(random_tensor(s, rng, true));
  }
  FlowProjections proj = FlowProjections::for_shapes({{2, 4, 4}, {2, 4, 4}, {3, 2, 2}, {3, 2, 2}}, 3);
  const FfrConfig cfg{true, 0.4, 0.9, StageScaling::Spatial};
  std::vector<NamedTensor> inputs;
  for (std::size_t i = 0; i < taps.size(); ++i) inputs.push_back({"tap" + std::to_string(i), taps[i]});
  for (const NamedTensor& p : proj.parameters()) inputs.push_back(p);
  const auto r = ffr::testing::check_gradients(
      [&] { return total_loss(Tensor::scalar(0.0), group_by_stage(taps), proj, cfg).total; }, inputs);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}
