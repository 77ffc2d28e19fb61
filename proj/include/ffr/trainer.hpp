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

#ifndef FFR_TRAINER_HPP
#define FFR_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ffr/checkpoint.hpp"
#include "ffr/datasets.hpp"
#include "ffr/feature_flow.hpp"
#include "ffr/network.hpp"
#include "ffr/regularizer.hpp"
#include "ffr/rng.hpp"

namespace ffr {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double base_lr = 0.1;
  // 1-based epochs after which the learning rate is multiplied by lr_factor.
  std::vector<std::size_t> lr_milestones{80, 120, 160};
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  FfrConfig ffr;

  void validate() const;
  /// Learning rate used during the 1-based `epoch`.
  double lr_at(std::size_t epoch) const;

  /// Batch 128, 200 epochs, lr 0.1 with decay after 80/120/160.
  static TrainConfig cifar_recipe();
  /// The CIFAR recipe with milestones at 40/60/80% of `epochs`.
  static TrainConfig scaled_recipe(std::size_t epochs);
};

std::string to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text);

/// Velocity buffers, one per parameter, in parameter order.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum v + (grad + weight_decay p);  p <- p - lr v.
/// Parameters without a gradient are treated as having a zero gradient.
void sgd_step(std::span<Tensor> params, SgdState& state, double lr, double momentum,
              double weight_decay);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double task_loss = 0.0;
  double ffr_length = 0.0;
  double ffr_curvature = 0.0;
  // NaN for regression data or when no test set is given.
  double train_acc = 0.0;
  double test_acc = 0.0;
};

void write_metrics_csv(const std::filesystem::path& file, const std::vector<EpochMetrics>& rows);

struct Evaluation {
  double accuracy = 0.0;  // NaN for regression data
  double loss = 0.0;
};

/// Eval-mode pass without recording.
Evaluation evaluate(Network& net, const Dataset& data, std::size_t batch_size = 256);

/// Owns a network, its stage projections and the optimizer state.
class Trainer {
 public:
  Trainer(Network net, TrainConfig cfg);
  /// Continues from a checkpoint written by checkpoint().
  static Trainer resume(const Checkpoint& ckpt);

  /// One pass of shuffled mini-batches; evaluates on `test` when given.
  EpochMetrics run_epoch(const Dataset& train, const Dataset* test = nullptr);
  /// Runs the remaining epochs up to config().epochs.
  std::vector<EpochMetrics> fit(const Dataset& train, const Dataset* test = nullptr,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

  /// Everything needed to resume, including velocities and projections.
  Checkpoint checkpoint();
  /// Changes the epoch budget of a resumed run. Must not be below epoch().
  void set_epochs(std::size_t epochs);

  Network& network() { return net_; }
  FlowProjections& projections() { return proj_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::vector<NamedTensor> all_parameters();

  Network net_;
  TrainConfig cfg_;
  FlowProjections proj_;
  SgdState opt_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

/// Trains `net` for cfg.epochs epochs.
TrainResult train(Network net, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& cfg);

}  // namespace ffr

#endif  // FFR_TRAINER_HPP
