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

#include "doctest.h"
#include "ffr/feature_flow.hpp"
#include "ffr/ops.hpp"
#include "support/oracles.hpp"

using namespace ffr;
using ffr::testing::max_abs_diff;
using ffr::testing::random_tensor;

TEST_CASE("group_by_stage splits at every shape change") {
  Rng rng(1);
  std::vector<Tensor> taps;
  const Shape shapes[] = {{3, 4, 4}, {3, 4, 4}, {5, 2, 2}, {5, 2, 2}, {5, 2, 2}, {6}, {3, 4, 4}};
  for (const Shape& s : shapes) {
    Shape full{2};
    full.insert(full.end(), s.begin(), s.end());
    taps.push_back(random_tensor(full, rng));
  }
  const FeatureFlow flow = group_by_stage(taps);
  REQUIRE(flow.stages.size() == 4);
  CHECK(flow.stages[0].features.size() == 2);
  CHECK(flow.stages[1].features.size() == 3);
  CHECK(flow.stages[3].feature_shape == Shape{3, 4, 4});
  CHECK(flow.size() == taps.size());
  CHECK(flow.sample_count == 2);
  const std::vector<Tensor> back = flow.features();
  for (std::size_t i = 0; i < taps.size(); ++i) CHECK(back[i].same_storage(taps[i]));
  for (std::size_t g = 1; g < flow.stages.size(); ++g) {
    CHECK(flow.stages[g].feature_shape != flow.stages[g - 1].feature_shape);
  }
}

TEST_CASE("group_by_stage rejects empty and ragged input") {
  CHECK_THROWS_AS(group_by_stage({}), UsageError);
  CHECK_THROWS_AS(group_by_stage({Tensor({2, 3}), Tensor({3, 3})}), DimensionError);
}

TEST_CASE("tapped features stay on the tape") {
  Network net = Network::build(build_vgg_desk(), 1);
  Rng rng(2);
  Tape tape;
  TapeScope scope(tape);
  auto [logits, flow] = forward_with_taps(net, random_tensor({2, 3, 32, 32}, rng), Mode::Train);
  tape.backward(l1_norm(flow.stages[0].features[0]));
  CHECK(net.parameters()[0].tensor.has_grad());
}

TEST_CASE("projections bridge each stage boundary") {
  const FlowProjections p = FlowProjections::for_model(build_vgg16_cifar(), 3);
  REQUIRE(p.size() == 4);
  CHECK(p.boundary(1).from == Shape{64, 32, 32});
  CHECK(p.boundary(1).to == Shape{128, 16, 16});
  CHECK(p.boundary(1).stride == 2);
  CHECK(p.boundary(1).weight.shape() == Shape{128, 64, 1, 1});
  CHECK(p.boundary(4).weight.shape() == Shape{512, 512, 1, 1});
  CHECK(FlowProjections::for_model(build_residual_mlp_2d(), 0).size() == 0);
  CHECK(FlowProjections::for_model(build_resnet56_cifar(), 0).size() == 2);
}

TEST_CASE("projection equals a strided 1x1 convolution or a matrix product") {
  Rng rng(4);
  const FlowProjections p = FlowProjections::for_shapes({{3, 6, 6}, {5, 3, 3}}, 9);
  const FlowProjections q = FlowProjections::for_shapes({{3}, {4}, {2}}, 9);
  REQUIRE(p.size() == 1);
  REQUIRE(q.size() == 2);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  CHECK(max_abs_diff(p.project(1, x).data(),
                     ffr::testing::naive_conv2d(x, p.boundary(1).weight, {}, 2, 0)) < 1e-12);
  const Tensor v = random_tensor({2, 4}, rng);
  CHECK(max_abs_diff(q.project(2, v).data(), ffr::testing::naive_linear(v, q.boundary(2).weight, {})) < 1e-12);
  CHECK_THROWS_AS(p.project(1, v), DimensionError);
  CHECK_THROWS_AS(p.project(0, x), UsageError);
}

TEST_CASE("projection init is seeded, He-scaled or zero") {
  const std::vector<Shape> shapes{{64, 8, 8}, {128, 4, 4}};
  const FlowProjections a = FlowProjections::for_shapes(shapes, 5);
  const FlowProjections b = FlowProjections::for_shapes(shapes, 5);
  CHECK(max_abs_diff(a.boundary(1).weight.data(), b.boundary(1).weight.data()) == 0.0);
  double ss = 0.0;
  for (double v : a.boundary(1).weight.data()) ss += v * v;
  CHECK(ss / 8192.0 == doctest::Approx(2.0 / 64.0).epsilon(0.1));
  const FlowProjections z = FlowProjections::for_shapes(shapes, 5, ProjectionInit::Zero);
  for (double v : z.boundary(1).weight.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(FlowProjections::for_shapes({{4, 6, 6}, {4, 4, 4}}, 0), ConfigError);
  CHECK_THROWS_AS(FlowProjections::for_shapes({{4, 2, 2}, {16}}, 0), ConfigError);
}
