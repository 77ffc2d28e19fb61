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

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ffr/config.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  std::string seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. train.epochs=40");
  cmd->add_option("-o,--output-dir", c.output, "Same as --set output_dir=...");
  cmd->add_option("--seed", c.seed, "Same as --set seed=...");
}

ffr::RunConfig resolve(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (!c.output.empty()) overrides.push_back("output_dir=\"" + c.output + "\"");
  if (!c.seed.empty()) overrides.push_back("seed=" + c.seed);
  if (c.config.empty()) return ffr::parse_run_config("{}", overrides);
  return ffr::load_run_config(c.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature flow regularized training and filter pruning"};
  app.require_subcommand(1);
  Common common;

  CLI::App* train = app.add_subcommand("train", "Train a model, writing checkpoint and metrics");
  add_common(train, common);
  std::string resume;
  train->add_option("--resume", resume, "Continue from this checkpoint")
      ->check(CLI::ExistingFile);

  CLI::App* sweep = app.add_subcommand("sweep", "Accuracy and sparsity over pruning thresholds");
  add_common(sweep, common);
  std::vector<std::string> sweep_ckpts;
  sweep->add_option("checkpoints", sweep_ckpts, "Trained checkpoints")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* prune = app.add_subcommand("prune", "Remove low-magnitude filters");
  add_common(prune, common);
  std::string prune_ckpt;
  prune->add_option("checkpoint", prune_ckpt)->required()->check(CLI::ExistingFile);
  std::string threshold;
  std::string fraction;
  auto* thr = prune->add_option("--threshold", threshold, "Global magnitude threshold");
  prune->add_option("--fraction", fraction, "Per-layer fraction of filters to drop")
      ->excludes(thr);

  CLI::App* finetune = app.add_subcommand("finetune", "Fine-tune a pruned checkpoint");
  add_common(finetune, common);
  std::string finetune_ckpt;
  finetune->add_option("checkpoint", finetune_ckpt)->required()->check(CLI::ExistingFile);

  CLI::App* stats = app.add_subcommand("stats", "Feature-map norms and filter magnitudes");
  add_common(stats, common);
  std::string stats_ckpt;
  stats->add_option("checkpoint", stats_ckpt)->required()->check(CLI::ExistingFile);

  CLI::App* demo = app.add_subcommand("demo2d", "Paired 2-D trajectory demo");
  add_common(demo, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!threshold.empty()) {
      common.overrides.push_back("prune.policy=\"global\"");
      common.overrides.push_back("prune.threshold=" + threshold);
    }
    if (!fraction.empty()) {
      common.overrides.push_back("prune.policy=\"per_layer_fraction\"");
      common.overrides.push_back("prune.fraction=" + fraction);
    }
    const ffr::RunConfig cfg = resolve(common);
    if (*train) {
      ffr::cmd_train(cfg, resume);
    } else if (*sweep) {
      ffr::cmd_sweep(cfg, {sweep_ckpts.begin(), sweep_ckpts.end()});
    } else if (*prune) {
      ffr::cmd_prune(cfg, prune_ckpt);
    } else if (*finetune) {
      ffr::cmd_finetune(cfg, finetune_ckpt);
    } else if (*stats) {
      ffr::cmd_stats(cfg, stats_ckpt);
    } else if (*demo) {
      ffr::cmd_demo2d(cfg);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ffr::exit_code_for(e);
  }
  return 0;
}
