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

#ifndef FFR_CONFIG_HPP
#define FFR_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ffr/datasets.hpp"
#include "ffr/demo2d.hpp"
#include "ffr/network.hpp"
#include "ffr/pruner.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

inline constexpr int kRunConfigSchemaVersion = 1;

enum class DatasetKind { Cifar10, Synthetic };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Cifar10;
  // Directory with the binary batches; empty falls back to $FFR_CIFAR10_DIR.
  std::string path;
  // Class-balanced subset sizes; 0 keeps the whole split.
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  bool augment = true;
  // Split sizes for the synthetic generator.
  std::size_t synthetic_train = 1000;
  std::size_t synthetic_test = 200;
};

struct PruneConfig {
  PrunePolicy policy = PrunePolicy::Global;
  // Ascending thresholds for the sweep command.
  std::vector<double> thresholds{0.0, 1e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0};
  double threshold = 1e-2;
  double fraction = 0.5;
  std::size_t finetune_epochs = 30;
  double finetune_lr = 1e-4;
};

struct StatsConfig {
  // Test images in the fixed evaluation batch.
  std::size_t batch = 256;
  double norm_bound = 1e-3;
};

struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  // Label for reports; empty derives "baseline" or "ffr" from the regularizer.
  std::string name;
  std::string model = "vgg_desk";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  TrainConfig train = TrainConfig::cifar_recipe();
  PruneConfig prune;
  StatsConfig stats;
  Demo2dConfig demo2d;

  /// Throws ConfigError on any out-of-range value.
  void validate() const;
  std::string label() const;
};

/// Parses a JSON config. Missing keys take their defaults; unknown keys,
/// wrong types and a mismatched schema_version raise ConfigError.
RunConfig parse_run_config(std::string_view text,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides = {});
/// Full JSON form, every key present.
std::string to_json_string(const RunConfig& cfg);

/// Model names accepted in RunConfig::model.
std::vector<std::string> model_names();
ModelSpec build_model(const std::string& name);

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// Loads or generates the configured dataset, normalized and subsetted.
DataSplits load_data(const RunConfig& cfg);

// Commands. Each writes its outputs under cfg.output_dir.

/// checkpoint.ffr, metrics.csv and train.json. A non-empty `resume` continues
/// from that checkpoint.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& resume = {});
/// sweep.csv with one block of rows per checkpoint.
void cmd_sweep(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints);
/// compact.ffr, plan.json and counts.json.
void cmd_prune(const RunConfig& cfg, const std::filesystem::path& checkpoint);
/// finetuned.ffr, finetune_metrics.csv and finetune.json.
void cmd_finetune(const RunConfig& cfg, const std::filesystem::path& compact);
/// feature_norms.csv, filters/<layer>.csv and stats.json.
void cmd_stats(const RunConfig& cfg, const std::filesystem::path& checkpoint);
/// Trajectory CSVs and summary.json for both variants.
void cmd_demo2d(const RunConfig& cfg);

/// Process exit code for an exception escaping a command:
/// 2 config, 3 data, 4 numerical failure, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace ffr

#endif  // FFR_CONFIG_HPP
