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

#include "ffr/demo2d.hpp"

#include <cmath>
#include <fstream>

#include "ffr/csv.hpp"
#include "ffr/ops.hpp"
#include "json.hpp"

namespace ffr {

void Demo2dConfig::validate() const {
  if (blocks == 0 || hidden == 0 || points == 0) {
    throw ConfigError("demo2d: blocks, hidden and points must be >= 1");
  }
  if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("demo2d: k must be >= 0");
}

Trajectories trajectories(Network& net, const Tensor& inputs) {
  NoGradGuard no_grad;
  ModelSpec spec = net.spec();
  const ForwardResult r = net.forward(inputs, Mode::Eval);
  const std::size_t n = inputs.dim(0);
  Trajectories out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].push_back({inputs[2 * i], inputs[2 * i + 1]});
  // The input tap, when present, duplicates the first point.
  for (std::size_t t = spec.tap_input ? 1 : 0; t < r.taps.size(); ++t) {
    for (std::size_t i = 0; i < n; ++i) out[i].push_back({r.taps[t][2 * i], r.taps[t][2 * i + 1]});
  }
  return out;
}

double trajectory_length(const std::vector<Point2>& path) {
  double s = 0.0;
  for (std::size_t j = 1; j < path.size(); ++j) {
    s += std::abs(path[j][0] - path[j - 1][0]) + std::abs(path[j][1] - path[j - 1][1]);
  }
  return s;
}

double trajectory_curvature(const std::vector<Point2>& path) {
  double s = 0.0;
  for (std::size_t j = 2; j < path.size(); ++j) {
    for (std::size_t c = 0; c < 2; ++c) s += std::abs(path[j][c] - 2.0 * path[j - 1][c] + path[j - 2][c]);
  }
  return s;
}

namespace {

Demo2dVariant run_variant(const std::string& name, const Demo2dConfig& cfg, const Cluster2D& data,
                          double k) {
  TrainConfig tc;
  tc.batch_size = cfg.points;
  tc.epochs = cfg.steps;
  tc.base_lr = cfg.lr;
  tc.lr_milestones = cfg.lr_milestones;
  tc.momentum = cfg.momentum;
  tc.weight_decay = cfg.weight_decay;
  tc.seed = cfg.seed;
  tc.ffr.enabled = k > 0.0;
  tc.ffr.k1 = k;
  tc.ffr.k2 = k;
  Network net = Network::build(build_residual_mlp_2d(cfg.blocks, cfg.hidden, true),
                               derive_seed(cfg.seed, 0));
  for (Block& b : net.blocks()) {
    for (double& w : std::get<DenseResidualBlock>(b).fc2_weight.data()) w *= cfg.branch_init_scale;
  }
  Trainer trainer(std::move(net), tc);
  const Dataset ds = to_dataset(data);
  Demo2dVariant v;
  v.name = name;
  v.log = trainer.fit(ds);
  v.paths = trajectories(trainer.network(), data.inputs);
  for (const auto& p : v.paths) {
    v.mean_length += trajectory_length(p);
    v.mean_curvature += trajectory_curvature(p);
  }
  v.mean_length /= static_cast<double>(v.paths.size());
  v.mean_curvature /= static_cast<double>(v.paths.size());
  v.final_mse = evaluate(trainer.network(), ds).loss;
  return v;
}

constexpr std::size_t kDemoLogEvery = 100;

void write_paths(const std::filesystem::path& file, const Demo2dVariant& v) {
  std::vector<std::string> header{"point"};
  const std::size_t blocks = v.paths.empty() ? 0 : v.paths[0].size() - 1;
  header.insert(header.end(), {"input_x", "input_y"});
  for (std::size_t b = 1; b <= blocks; ++b) {
    header.push_back("block" + std::to_string(b) + "_x");
    header.push_back("block" + std::to_string(b) + "_y");
  }
  header.insert(header.end(), {"output_x", "output_y"});
  CsvWriter csv(file, header);
  for (std::size_t i = 0; i < v.paths.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i)};
    for (const Point2& p : v.paths[i]) {
      cells.push_back(format_number(p[0]));
      cells.push_back(format_number(p[1]));
    }
    cells.push_back(format_number(v.paths[i].back()[0]));
    cells.push_back(format_number(v.paths[i].back()[1]));
    csv.row(cells);
  }
}

}  // namespace

Demo2dResult run_demo2d(const Demo2dConfig& cfg) {
  cfg.validate();
  Demo2dResult r;
  r.clusters = make_clusters_2d(cfg.seed, cfg.layout, cfg.points);
  r.baseline = run_variant("baseline", cfg, r.clusters, 0.0);
  r.ffr = run_variant("ffr", cfg, r.clusters, cfg.k);
  return r;
}

void write_demo2d(const std::filesystem::path& dir, const Demo2dResult& result) {
  std::filesystem::create_directories(dir);
  write_clusters_csv(dir / "clusters.csv", result.clusters);
  nlohmann::ordered_json summary;
  for (const Demo2dVariant* v : {&result.baseline, &result.ffr}) {
    write_paths(dir / ("trajectories_" + v->name + ".csv"), *v);
    std::vector<EpochMetrics> rows;
    for (const EpochMetrics& m : v->log) {
      if (m.epoch == 1 || m.epoch % kDemoLogEvery == 0 || m.epoch == v->log.size()) rows.push_back(m);
    }
    write_metrics_csv(dir / ("metrics_" + v->name + ".csv"), rows);
    summary[v->name] = {{"mean_length", v->mean_length},
                        {"mean_curvature", v->mean_curvature},
                        {"final_mse", v->final_mse}};
  }
  std::ofstream out(dir / "summary.json");
  if (!out) throw IoError("cannot write " + (dir / "summary.json").string());
  out << summary.dump(2) << "\n";
}

}  // namespace ffr
