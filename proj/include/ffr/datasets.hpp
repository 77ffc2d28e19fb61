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

#ifndef FFR_DATASETS_HPP
#define FFR_DATASETS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffr/rng.hpp"
#include "ffr/tensor.hpp"

namespace ffr {

/// Per-channel constants applied as ((pixel / 255) - mean) / std.
struct CifarNormalization {
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> std{0.2470, 0.2435, 0.2616};
};

struct LabeledImageSet {
  Tensor images;  // N x 3 x 32 x 32
  std::vector<int> labels;
  std::string split;
  // Set once normalize() has run; raw sets hold pixel values 0..255.
  std::optional<CifarNormalization> normalization;

  std::size_t size() const { return labels.size(); }
};

inline constexpr std::size_t kCifarClasses = 10;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

/// Parses one binary batch file into raw pixel values.
LabeledImageSet read_cifar_batch(const std::filesystem::path& file, const std::string& split);
/// Writes raw or normalized images back to the binary record format.
void write_cifar_batch(const std::filesystem::path& file, const LabeledImageSet& set);
/// Normalizes in place. Throws UsageError if already normalized.
void normalize(LabeledImageSet& set, const CifarNormalization& norm = {});

struct CifarSplits {
  LabeledImageSet train;
  LabeledImageSet test;
};

/// Reads data_batch_1..5.bin and test_batch.bin from `dir` and normalizes.
CifarSplits load_cifar10(const std::filesystem::path& dir, const CifarNormalization& norm = {});

/// Deterministic class-balanced sample of `n` records, kept in source order.
/// When n is not a multiple of the class count the first classes get one more.
LabeledImageSet subset(const LabeledImageSet& set, std::size_t n, std::uint64_t seed);

/// Raw images with class-dependent colour and stripe patterns plus noise, in
/// the binary format's value range. Useful when the real data is absent.
LabeledImageSet make_synthetic_images(std::size_t n, std::uint64_t seed,
                                      const std::string& split = "train");
/// Writes a synthetic split in the standard file layout under `dir`.
void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t train_per_file,
                           std::size_t test, std::uint64_t seed);

enum class DiscLayout { Uniform, Sunflower };

struct Cluster2D {
  Tensor inputs;   // N x 2
  Tensor targets;  // N x 2
  std::uint64_t seed = 0;
};

inline constexpr double kClusterCenterX = 2.0;
inline constexpr double kClusterCenterY = 6.0;
inline constexpr double kClusterRadius = 0.5;
inline constexpr double kClusterShiftX = 4.0;
inline constexpr double kClusterShiftY = -4.0;

/// Points spread over the disc of radius 0.5 around (2, 6) with targets
/// shifted by (4, -4). Coordinates sit on a 2^-32 grid so the shift is exact.
Cluster2D make_clusters_2d(std::uint64_t seed, DiscLayout layout = DiscLayout::Uniform,
                           std::size_t count = 50);
/// CSV with columns x, y, target_x, target_y.
void write_clusters_csv(const std::filesystem::path& file, const Cluster2D& clusters);

/// Model-ready samples: images with labels, or points with regression targets.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  Tensor targets;
  bool augment = false;

  std::size_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  bool regression() const { return targets.defined(); }
};

Dataset to_dataset(const LabeledImageSet& set, bool augment = false);
Dataset to_dataset(const Cluster2D& clusters);

/// Rows of `x` (along axis 0) at `indices`.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
/// Random 32x32 crop of the 4-pixel zero-padded image plus a 50% horizontal
/// flip, per sample.
void augment_crop_flip(Tensor& images, Rng& rng);

}  // namespace ffr

#endif  // FFR_DATASETS_HPP
