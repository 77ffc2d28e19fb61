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

#ifndef FFR_PRUNER_HPP
#define FFR_PRUNER_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ffr/checkpoint.hpp"
#include "ffr/datasets.hpp"
#include "ffr/network.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

enum class ConvRole {
  // Conv block whose output feeds another conv block or the head.
  Plain,
  // Residual branch conv other than the last.
  ResidualInner,
  // Last residual branch conv; its output is scattered back to full width.
  ResidualLast,
};

struct PrunableConv {
  std::string layer;  // parameter prefix, e.g. blocks.3.conv or blocks.5.convs.1
  std::size_t block = 0;
  std::size_t conv = 0;
  ConvRole role = ConvRole::Plain;
  std::size_t filters = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 0;
};

/// Conv layers that may lose filters, in network order. ResNet stems and
/// projection shortcuts are excluded, as is any conv block whose output
/// feeds something other than a conv block or the head.
std::vector<PrunableConv> prunable_convs(const ModelSpec& spec);

struct LayerMagnitudes {
  std::string layer;
  std::vector<double> values;  // L1 norm of each filter
};

std::vector<LayerMagnitudes> filter_magnitudes(const Network& net);

enum class PrunePolicy {
  // Drop filters with magnitude strictly below a single threshold.
  Global,
  // Drop the given fraction of lowest-magnitude filters in every layer.
  PerLayerFraction,
};

std::string to_string(PrunePolicy p);
PrunePolicy prune_policy_from_string(const std::string& s);

struct LayerPlan {
  std::string layer;
  std::size_t block = 0;
  std::size_t conv = 0;
  ConvRole role = ConvRole::Plain;
  std::size_t filters = 0;
  std::vector<std::size_t> kept;
  // Input channels of this layer that survive the previous layer's pruning.
  std::vector<std::size_t> kept_inputs;
};

struct PrunePlan {
  std::string model_hash;
  std::vector<LayerPlan> layers;
  std::vector<std::size_t> removed_blocks;
  // Residual block -> full-width positions of the last conv's kept filters.
  std::map<std::size_t, std::vector<std::size_t>> scatter;
  // Classifier input columns that survive.
  std::vector<std::size_t> head_kept_inputs;

  /// Throws StructuralError naming the first inconsistent layer.
  void validate(const ModelSpec& spec) const;
  bool is_identity() const;
  const LayerPlan* find(const std::string& layer) const;

  std::string to_text() const;
  static PrunePlan from_text(std::string_view text, const ModelSpec& spec);
  void save(const std::filesystem::path& file) const;
  static PrunePlan load(const std::filesystem::path& file, const ModelSpec& spec);
};

/// Builds a plan from kept sets (keyed by layer) and removed blocks, deriving
/// input sets, scatter maps and head columns. Layers absent from `kept` keep
/// all filters.
PrunePlan plan_from_kept(const ModelSpec& spec,
                         const std::map<std::string, std::vector<std::size_t>>& kept,
                         const std::vector<std::size_t>& removed_blocks);

/// `value` is a magnitude threshold (Global) or a fraction in [0, 1].
PrunePlan make_plan(const Network& net, double value, PrunePolicy policy = PrunePolicy::Global);
PrunePlan identity_plan(const ModelSpec& spec);

/// The architecture after pruning.
ModelSpec compact_spec(const ModelSpec& spec, const PrunePlan& plan);
/// Physically smaller network computing the same function as mask_plan().
Network apply_plan(const Network& net, const PrunePlan& plan);
/// Copy of `net` with pruned filters, their BN affine entries, downstream
/// input channels and head columns set to zero.
Network mask_plan(const Network& net, const PrunePlan& plan);

std::size_t count_params(const ModelSpec& spec);
std::size_t count_params(Network& net);
/// Multiply-accumulates of conv and linear layers for the spec's input.
std::size_t count_flops(const ModelSpec& spec);
std::size_t count_flops(const ModelSpec& spec, const Shape& input);
/// Parameters zeroed by mask_plan, counted from the plan's index sets.
std::size_t params_removed(const ModelSpec& spec, const PrunePlan& plan);

struct SparsityReport {
  double threshold = 0.0;
  double sparsity = 0.0;  // params_removed / count_params
  double accuracy = 0.0;
  std::size_t params_remaining = 0;
  std::size_t flops_remaining = 0;
};

/// Evaluates the masked model at each ascending threshold. `net` is unchanged.
std::vector<SparsityReport> sparsity_sweep(const Network& net, const Dataset& test,
                                           const std::vector<double>& thresholds,
                                           PrunePolicy policy = PrunePolicy::Global);
void write_sweep_csv(const std::filesystem::path& file, const std::vector<SparsityReport>& rows);

struct FineTuneResult {
  Checkpoint best;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;  // 0 when the starting weights were best
  std::vector<EpochMetrics> metrics;
};

/// SGD at a constant `lr` without the flow regularizer, keeping the weights
/// with the best test accuracy (the starting weights included).
FineTuneResult fine_tune(Network compact, const Dataset& train, const Dataset& test,
                         std::size_t epochs = 30, double lr = 1e-4,
                         const TrainConfig& base = TrainConfig::cifar_recipe());

}  // namespace ffr

#endif  // FFR_PRUNER_HPP
