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

#ifndef FFR_STATS_HPP
#define FFR_STATS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ffr/network.hpp"

namespace ffr {

struct FeatureMapNorms {
  std::string layer;  // block prefix of the tapped feature, e.g. blocks.12
  // Per channel: L1 norm of the map, averaged over the batch.
  std::vector<double> norms;
};

/// Eval-mode norms of every tapped feature map for `batch`.
std::vector<FeatureMapNorms> feature_map_norms(Network& net, const Tensor& batch);

std::size_t count_below(const std::vector<double>& values, double bound);

struct FilterMatrix {
  std::string layer;
  std::size_t filters = 0;
  std::size_t channels = 0;
  // Row-major filters x channels: L1 norm of each k x k kernel.
  std::vector<double> values;
};

/// One matrix per prunable conv layer.
std::vector<FilterMatrix> filter_magnitude_matrices(const Network& net);

/// Long-format CSV with columns layer, channel, l1_norm.
void write_feature_norms_csv(const std::filesystem::path& file,
                             const std::vector<FeatureMapNorms>& norms);
/// One row per filter, one column per input channel.
void write_filter_matrix_csv(const std::filesystem::path& file, const FilterMatrix& m);

}  // namespace ffr

#endif  // FFR_STATS_HPP
