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

#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "ffr/csv.hpp"
#include "ffr/pruner.hpp"
#include "ffr/stats.hpp"
#include "support/oracles.hpp"

using namespace ffr;
using ffr::testing::max_abs_diff;
using ffr::testing::random_prunable_network;
using ffr::testing::random_tensor;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ffr_pruner_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Threshold halfway between two neighbouring filter magnitudes.
double random_threshold(const Network& net, Rng& rng) {
  std::vector<double> all;
  for (const LayerMagnitudes& m : filter_magnitudes(net)) all.insert(all.end(), m.values.begin(), m.values.end());
  std::sort(all.begin(), all.end());
  const std::size_t i = rng.below(all.size());
  return i + 1 < all.size() ? 0.5 * (all[i] + all[i + 1]) : all[i] * 2.0;
}

Tensor logits(Network& net, const Tensor& x) {
  NoGradGuard guard;
  return net.forward(x, Mode::Eval).logits;
}

}  // namespace

TEST_CASE("prunable layers of the CIFAR models") {
  const auto vgg = prunable_convs(build_vgg16_cifar());
  CHECK(vgg.size() == 13);
  const auto res = prunable_convs(build_resnet56_cifar());
  CHECK(res.size() == 54);
  CHECK(res.front().layer == "blocks.0.convs.0");
  CHECK(res[1].role == ConvRole::ResidualLast);
}

TEST_CASE("compact networks compute the masked original") {
  Rng rng(31);
  std::size_t removed_blocks = 0, pruned_plans = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_prunable_network(rng, trial % 2 == 1);
    const double threshold = random_threshold(net, rng);
    const PrunePlan plan = make_plan(net, threshold);
    plan.validate(net.spec());
    Network compact = apply_plan(net, plan);
    Network masked = mask_plan(net, plan);
    const Tensor x = random_tensor({3, 3, 8, 8}, rng);
    INFO("trial " << trial);
    CHECK(max_abs_diff(logits(compact, x).data(), logits(masked, x).data()) < 1e-8);
    removed_blocks += plan.removed_blocks.size();
    pruned_plans += !plan.is_identity();
    CHECK(count_params(compact.spec()) == count_params(net.spec()) - params_removed(net.spec(), plan));
  }
  CHECK(removed_blocks > 0);
  CHECK(pruned_plans > 10);
}

TEST_CASE("plan input sets match a channel-liveness walk") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_prunable_network(rng, trial % 2 == 0);
    const PrunePlan plan = make_plan(net, random_threshold(net, rng));
    std::map<std::string, std::vector<std::size_t>> kept;
    for (const LayerPlan& l : plan.layers) kept[l.layer] = l.kept;
    const auto live = ffr::testing::live_inputs(net.spec(), kept, plan.removed_blocks);
    for (const LayerPlan& l : plan.layers) {
      if (std::find(plan.removed_blocks.begin(), plan.removed_blocks.end(), l.block) != plan.removed_blocks.end()) continue;
      INFO(l.layer);
      CHECK(l.kept_inputs == live.at(l.layer));
    }
    CHECK(plan.head_kept_inputs == live.at("head"));
  }
}

TEST_CASE("threshold zero keeps everything") {
  Network net = Network::build(build_resnet_cifar(1), 0);
  const PrunePlan plan = make_plan(net, 0.0);
  CHECK(plan.is_identity());
  CHECK(params_removed(net.spec(), plan) == 0);
  Network compact = apply_plan(net, plan);
  CHECK(compact.spec() == net.spec());
}

TEST_CASE("an empty layer keeps its strongest filter") {
  Network net = Network::build(build_vgg_desk(), 0);
  const PrunePlan plan = make_plan(net, 1e9);
  for (const LayerPlan& l : plan.layers) CHECK(l.kept.size() == 1);
  CHECK(plan.removed_blocks.empty());
}

TEST_CASE("per-layer fraction drops the weakest filters") {
  Network net = Network::build(build_vgg_desk(), 0);
  const PrunePlan plan = make_plan(net, 0.5, PrunePolicy::PerLayerFraction);
  const auto mags = filter_magnitudes(net);
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    CHECK(plan.layers[i].kept.size() == plan.layers[i].filters - plan.layers[i].filters / 2);
    double weakest_kept = 1e300, strongest_dropped = 0.0;
    for (std::size_t f = 0; f < mags[i].values.size(); ++f) {
      const double v = mags[i].values[f];
      if (std::binary_search(plan.layers[i].kept.begin(), plan.layers[i].kept.end(), f)) {
        weakest_kept = std::min(weakest_kept, v);
      } else {
        strongest_dropped = std::max(strongest_dropped, v);
      }
    }
    CHECK(weakest_kept >= strongest_dropped);
  }
  CHECK_THROWS_AS(make_plan(net, 1.5, PrunePolicy::PerLayerFraction), ConfigError);
  CHECK_THROWS_AS(prune_policy_from_string("random"), ConfigError);
}

TEST_CASE("plans round-trip through text and files") {
  Rng rng(33);
  const auto dir = scratch("plan");
  Network net = random_prunable_network(rng, true);
  const PrunePlan plan = make_plan(net, random_threshold(net, rng));
  plan.save(dir / "plan.json");
  const PrunePlan back = PrunePlan::load(dir / "plan.json", net.spec());
  CHECK(back.to_text() == plan.to_text());
  CHECK(back.removed_blocks == plan.removed_blocks);
  CHECK(back.head_kept_inputs == plan.head_kept_inputs);
  Network a = apply_plan(net, plan), b = apply_plan(net, back);
  CHECK(a.spec() == b.spec());
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  CHECK(max_abs_diff(logits(a, x).data(), logits(b, x).data()) == 0.0);
  CHECK_THROWS_AS(PrunePlan::from_text(plan.to_text(), build_vgg_desk()), StructuralError);
  CHECK_THROWS_AS(PrunePlan::from_text("{\"format\":\"other\"}", net.spec()), FormatError);
}

TEST_CASE("inconsistent plans are structural errors") {
  const ModelSpec spec = build_vgg_desk();
  PrunePlan plan = identity_plan(spec);
  plan.layers[2].kept = {0, 0};
  CHECK_THROWS_AS(plan.validate(spec), StructuralError);
  plan = identity_plan(spec);
  plan.layers[1].kept = {99};
  CHECK_THROWS_AS(plan.validate(spec), StructuralError);
  plan = identity_plan(spec);
  plan.layers.pop_back();
  CHECK_THROWS_AS(plan.validate(spec), StructuralError);
}

TEST_CASE("compact counts shrink with the plan") {
  Network net = Network::build(build_resnet56_cifar(), 0);
  const PrunePlan plan = make_plan(net, 0.5, PrunePolicy::PerLayerFraction);
  const ModelSpec compact = compact_spec(net.spec(), plan);
  CHECK(count_params(compact) == count_params(net.spec()) - params_removed(net.spec(), plan));
  CHECK(count_flops(compact) < count_flops(net.spec()));
}

TEST_CASE("sparsity sweep is monotone and leaves the network untouched") {
  Rng rng(34);
  Network net = random_prunable_network(rng, false);
  Dataset test;
  test.inputs = random_tensor({20, 3, 8, 8}, rng);
  for (int i = 0; i < 20; ++i) test.labels.push_back(i % 3);
  Network before = net.clone();
  const std::vector<double> thresholds{0.0, 1e-3, 0.1, 1.0, 10.0};
  const auto rows = sparsity_sweep(net, test, thresholds);
  REQUIRE(rows.size() == thresholds.size());
  CHECK(rows[0].sparsity == 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].sparsity >= rows[i - 1].sparsity);
  auto pa = net.parameters();
  auto pb = before.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(max_abs_diff(pa[i].tensor.data(), pb[i].tensor.data()) == 0.0);
  CHECK_THROWS_AS(sparsity_sweep(net, test, {1.0, 0.5}), ConfigError);
  const auto dir = scratch("sweep");
  write_sweep_csv(dir / "s.csv", rows);
  const auto csv = read_csv(dir / "s.csv");
  CHECK(csv.size() == rows.size() + 1);
  CHECK(csv[0] == std::vector<std::string>{"threshold", "sparsity", "accuracy", "params", "flops"});
}

TEST_CASE("fine-tuning never returns a model worse than its start") {
  Rng rng(35);
  Network net = random_prunable_network(rng, false);
  Dataset data;
  data.inputs = random_tensor({24, 3, 8, 8}, rng);
  for (int i = 0; i < 24; ++i) data.labels.push_back(i % 3);
  const double start = evaluate(net, data).accuracy;
  TrainConfig base;
  base.batch_size = 8;
  const FineTuneResult r = fine_tune(net, data, data, 3, 1e-4, base);
  CHECK(r.metrics.size() == 3);
  CHECK(r.best_accuracy >= start);
  Network best = r.best.network();
  CHECK(evaluate(best, data).accuracy == r.best_accuracy);
}

TEST_CASE("zero filters give zero rows in the magnitude matrix") {
  Network net = Network::build(build_vgg_desk(), 0);
  auto& conv = std::get<ConvBlock>(net.blocks()[3]).conv.weight;
  const std::size_t per = conv.numel() / conv.dim(0);
  std::fill_n(conv.data().begin() + 5 * per, per, 0.0);
  const auto mats = filter_magnitude_matrices(net);
  REQUIRE(mats.size() == 8);
  const FilterMatrix& m = mats[3];
  CHECK(m.layer == "blocks.3.conv");
  for (std::size_t c = 0; c < m.channels; ++c) CHECK(m.values[5 * m.channels + c] == 0.0);
  double row_sum = 0.0;
  for (std::size_t c = 0; c < m.channels; ++c) row_sum += m.values[c];
  CHECK(row_sum == doctest::Approx(filter_magnitudes(net)[3].values[0]).epsilon(1e-12));
}

TEST_CASE("feature-map norms are deterministic and see dead channels") {
  Network net = Network::build(build_vgg_desk(), 1);
  auto& block = std::get<ConvBlock>(net.blocks().back());
  block.bn.gamma[7] = 0.0;
  block.bn.beta[7] = 0.0;
  Rng rng(3);
  const Tensor x = random_tensor({4, 3, 32, 32}, rng);
  const auto a = feature_map_norms(net, x);
  const auto b = feature_map_norms(net, x);
  REQUIRE(a.size() == 8);
  CHECK(a.back().layer == "blocks.7");
  CHECK(a.back().norms == b.back().norms);
  CHECK(a.back().norms[7] == 0.0);
  CHECK(count_below(a.back().norms, 1e-3) >= 1);
}
