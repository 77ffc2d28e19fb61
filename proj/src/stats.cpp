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

#include "ffr/stats.hpp"

#include <cmath>

#include "ffr/csv.hpp"
#include "ffr/pruner.hpp"

namespace ffr {

std::vector<FeatureMapNorms> feature_map_norms(Network& net, const Tensor& batch) {
  NoGradGuard no_grad;
  const ForwardResult r = net.forward(batch, Mode::Eval);
  std::vector<std::string> names;
  if (net.spec().tap_input) names.push_back("input");
  for (std::size_t i = 0; i < net.spec().taps.size(); ++i) {
    if (net.spec().taps[i]) names.push_back("blocks." + std::to_string(i));
  }
  std::vector<FeatureMapNorms> out;
  for (std::size_t t = 0; t < r.taps.size(); ++t) {
    const Tensor& x = r.taps[t];
    const std::size_t n = x.dim(0), channels = x.dim(1);
    const std::size_t plane = x.numel() / (n * channels);
    FeatureMapNorms f{names[t], std::vector<double>(channels, 0.0)};
    for (std::size_t c = 0; c < channels; ++c) {
      double total = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = (b * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) total += std::abs(x[base + p]);
      }
      f.norms[c] = total / static_cast<double>(n);
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::size_t count_below(const std::vector<double>& values, double bound) {
  std::size_t n = 0;
  for (double v : values) {
    if (v < bound) ++n;
  }
  return n;
}

std::vector<FilterMatrix> filter_magnitude_matrices(const Network& net) {
  std::vector<FilterMatrix> out;
  for (const PrunableConv& c : prunable_convs(net.spec())) {
    const Block& b = net.blocks()[c.block];
    const Tensor& w = std::holds_alternative<ConvBlock>(b)
                          ? std::get<ConvBlock>(b).conv.weight
                          : std::get<ResidualBlock>(b).convs[c.conv].weight;
    FilterMatrix m{c.layer, w.dim(0), w.dim(1), std::vector<double>(w.dim(0) * w.dim(1), 0.0)};
    const std::size_t inner = w.dim(2) * w.dim(3);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < inner; ++e) s += std::abs(w[i * inner + e]);
      m.values[i] = s;
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_feature_norms_csv(const std::filesystem::path& file,
                             const std::vector<FeatureMapNorms>& norms) {
  CsvWriter csv(file, {"layer", "channel", "l1_norm"});
  for (const FeatureMapNorms& f : norms) {
    for (std::size_t c = 0; c < f.norms.size(); ++c) {
      csv.row({f.layer, std::to_string(c), format_number(f.norms[c])});
    }
  }
}

void write_filter_matrix_csv(const std::filesystem::path& file, const FilterMatrix& m) {
  std::vector<std::string> header{"filter"};
  for (std::size_t c = 0; c < m.channels; ++c) header.push_back("c" + std::to_string(c));
  CsvWriter csv(file, header);
  for (std::size_t f = 0; f < m.filters; ++f) {
    std::vector<std::string> cells{std::to_string(f)};
    for (std::size_t c = 0; c < m.channels; ++c) cells.push_back(format_number(m.values[f * m.channels + c]));
    csv.row(cells);
  }
}

}  // namespace ffr
