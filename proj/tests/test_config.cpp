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

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ffr/config.hpp"

using namespace ffr;

TEST_CASE("an empty config takes every default") {
  const RunConfig cfg = parse_run_config("{}");
  CHECK(cfg.model == "vgg_desk");
  CHECK(cfg.train.epochs == 200);
  CHECK(cfg.label() == "baseline");
  CHECK(cfg.prune.finetune_epochs == 30);
  CHECK(cfg.prune.finetune_lr == 1e-4);
}

TEST_CASE("the full JSON form parses back to the same config") {
  RunConfig cfg = parse_run_config(R"({"model": "resnet20", "seed": 4,
      "ffr": {"enabled": true, "k1": 2e-7, "k2": 2e-7}})");
  CHECK(cfg.label() == "ffr");
  CHECK(cfg.train.seed == 4);
  CHECK(cfg.demo2d.seed == 4);
  const RunConfig back = parse_run_config(to_json_string(cfg));
  CHECK(to_json_string(back) == to_json_string(cfg));
}

TEST_CASE("unknown keys, wrong types and other schema versions are rejected") {
  CHECK_THROWS_AS(parse_run_config(R"({"modle": "vgg16"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epoch": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": 5})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"schema_version": 2})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": "alexnet"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"prune": {"thresholds": [0.1, 0.01]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"ffr": {"k1": -1}})"), ConfigError);
}

TEST_CASE("overrides set nested keys one for one") {
  const RunConfig cfg = parse_run_config(R"({"train": {"epochs": 10, "lr_milestones": []}})",
                                         {"train.epochs=3", "ffr.stage_scaling=uniform",
                                          "prune.thresholds=[0, 0.5]", "output_dir=out/x"});
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.ffr.stage_scaling == StageScaling::Uniform);
  CHECK(cfg.prune.thresholds == std::vector<double>{0.0, 0.5});
  CHECK(cfg.output_dir == "out/x");
  CHECK_THROWS_AS(parse_run_config("{}", {"train.nonsense=1"}), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{}", {"train.epochs"}), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{}", {"train..epochs=1"}), ConfigError);
}

TEST_CASE("shipped presets parse") {
  const std::filesystem::path dir = FFR_SOURCE_DIR "/configs";
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    INFO(entry.path());
    CHECK_NOTHROW(load_run_config(entry.path()));
    ++n;
  }
  CHECK(n >= 6);
  const RunConfig vgg = load_run_config(dir / "vgg16_ffr.json");
  CHECK(vgg.train.ffr.k1 == 2e-7);
  CHECK(vgg.train.ffr.k2 == 2e-7);
  CHECK(load_run_config(dir / "resnet56_ffr.json").train.ffr.k1 == 1e-7);
}

TEST_CASE("errors map to exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(IoError("x")) == 3);
  CHECK(exit_code_for(FormatError("x")) == 3);
  CHECK(exit_code_for(NumericalError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("missing dataset root is a data error") {
  RunConfig cfg = parse_run_config(R"({"dataset": {"kind": "cifar10", "path": "/nonexistent/cifar"}})");
  CHECK_THROWS_AS(load_data(cfg), IoError);
}

TEST_CASE("synthetic data honours subset sizes") {
  const RunConfig cfg = parse_run_config(R"({"dataset": {"kind": "synthetic",
      "synthetic_train": 100, "synthetic_test": 50, "train_subset": 40, "test_subset": 20}})");
  const DataSplits d = load_data(cfg);
  CHECK(d.train.size() == 40);
  CHECK(d.test.size() == 20);
  CHECK(d.train.augment);
  CHECK_FALSE(d.test.augment);
}
