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

#ifndef FFR_DEMO2D_HPP
#define FFR_DEMO2D_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ffr/datasets.hpp"
#include "ffr/network.hpp"
#include "ffr/trainer.hpp"

namespace ffr {

/// Paired runs of the residual MLP that maps one 2-D cluster onto its
/// shifted copy, with and without the flow regularizer.
struct Demo2dConfig {
  std::size_t blocks = 5;
  std::size_t hidden = 16;
  std::size_t points = 50;
  DiscLayout layout = DiscLayout::Uniform;
  std::uint64_t seed = 0;
  // Full-batch gradient descent steps; milestones are step indices.
  std::size_t steps = 100000;
  double lr = 0.0015;
  std::vector<std::size_t> lr_milestones{80000, 90000};
  double momentum = 0.0;
  double weight_decay = 0.0;
  // Multiplies the He-initialized second layer of every block.
  double branch_init_scale = 0.1;
  // k1 = k2 for the regularized run.
  double k = 1e-4;

  void validate() const;
};

using Point2 = std::array<double, 2>;

/// The path of each sample: input, then every block output. The last block
/// output is the network output.
using Trajectories = std::vector<std::vector<Point2>>;

Trajectories trajectories(Network& net, const Tensor& inputs);
/// Sum of L1 distances between consecutive points.
double trajectory_length(const std::vector<Point2>& path);
/// Sum of L1 norms of second differences.
double trajectory_curvature(const std::vector<Point2>& path);

struct Demo2dVariant {
  std::string name;
  Trajectories paths;
  double mean_length = 0.0;
  double mean_curvature = 0.0;
  double final_mse = 0.0;
  std::vector<EpochMetrics> log;
};

struct Demo2dResult {
  Cluster2D clusters;
  Demo2dVariant baseline;
  Demo2dVariant ffr;
};

Demo2dResult run_demo2d(const Demo2dConfig& cfg);

/// trajectories_<variant>.csv and metrics_<variant>.csv (every 100th step)
/// for both variants, clusters.csv and summary.json.
void write_demo2d(const std::filesystem::path& dir, const Demo2dResult& result);

}  // namespace ffr

#endif  // FFR_DEMO2D_HPP
