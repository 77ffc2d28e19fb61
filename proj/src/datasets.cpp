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

#include "ffr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "ffr/csv.hpp"

namespace ffr {

namespace {

constexpr std::size_t kPixels = 32 * 32;
constexpr std::size_t kImageValues = 3 * kPixels;

std::string file_label(const std::filesystem::path& file) { return file.string(); }

double on_grid(double v) { return std::nearbyint(std::ldexp(v, 32)) * std::ldexp(1.0, -32); }

}  // namespace

LabeledImageSet read_cifar_batch(const std::filesystem::path& file, const std::string& split) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file_label(file));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw IoError(file_label(file) + ": truncated (" + std::to_string(bytes.size()) +
                  " bytes is not a whole number of " + std::to_string(kCifarRecordBytes) +
                  "-byte records)");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  LabeledImageSet set;
  set.split = split;
  set.images = Tensor({n, 3, 32, 32});
  set.labels.resize(n);
  std::span<double> px = set.images.data();
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw FormatError(file_label(file) + ": record " + std::to_string(i) + " has label byte " +
                        std::to_string(rec[0]));
    }
    set.labels[i] = rec[0];
    for (std::size_t j = 0; j < kImageValues; ++j) px[i * kImageValues + j] = rec[1 + j];
  }
  return set;
}

void write_cifar_batch(const std::filesystem::path& file, const LabeledImageSet& set) {
  std::vector<unsigned char> bytes(set.size() * kCifarRecordBytes);
  std::span<const double> px = set.images.data();
  for (std::size_t i = 0; i < set.size(); ++i) {
    unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    rec[0] = static_cast<unsigned char>(set.labels[i]);
    for (std::size_t j = 0; j < kImageValues; ++j) {
      double v = px[i * kImageValues + j];
      if (set.normalization) {
        const std::size_t c = j / kPixels;
        v = (v * set.normalization->std[c] + set.normalization->mean[c]) * 255.0;
      }
      rec[1 + j] = static_cast<unsigned char>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file_label(file));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + file_label(file));
}

void normalize(LabeledImageSet& set, const CifarNormalization& norm) {
  if (set.normalization) throw UsageError("image set '" + set.split + "' is already normalized");
  std::span<double> px = set.images.data();
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < kImageValues; ++j) {
      const std::size_t c = j / kPixels;
      double& v = px[i * kImageValues + j];
      v = (v / 255.0 - norm.mean[c]) / norm.std[c];
    }
  }
  set.normalization = norm;
}

namespace {

LabeledImageSet concat(std::vector<LabeledImageSet> parts, const std::string& split) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  LabeledImageSet out;
  out.split = split;
  out.images = Tensor({n, 3, 32, 32});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(),
              out.images.data().begin() + static_cast<std::ptrdiff_t>(at * kImageValues));
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return out;
}

}  // namespace

CifarSplits load_cifar10(const std::filesystem::path& dir, const CifarNormalization& norm) {
  std::vector<LabeledImageSet> train;
  for (int i = 1; i <= 5; ++i) {
    train.push_back(read_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"), "train"));
  }
  CifarSplits s{concat(std::move(train), "train"), read_cifar_batch(dir / "test_batch.bin", "test")};
  normalize(s.train, norm);
  normalize(s.test, norm);
  return s;
}

LabeledImageSet subset(const LabeledImageSet& set, std::size_t n, std::uint64_t seed) {
  if (n > set.size()) {
    throw ConfigError("subset of " + std::to_string(n) + " requested from " +
                      std::to_string(set.size()) + " records");
  }
  std::vector<std::size_t> picked;
  if (n == set.size()) {
    picked.resize(n);
    for (std::size_t i = 0; i < n; ++i) picked[i] = i;
  } else {
    std::vector<std::vector<std::size_t>> by_class(kCifarClasses);
    for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(i);
    Rng rng(seed);
    for (std::size_t c = 0; c < kCifarClasses; ++c) {
      const std::size_t quota = n / kCifarClasses + (c < n % kCifarClasses ? 1 : 0);
      if (by_class[c].size() < quota) {
        throw ConfigError("subset: class " + std::to_string(c) + " has only " +
                          std::to_string(by_class[c].size()) + " records, " +
                          std::to_string(quota) + " needed");
      }
      rng.shuffle(by_class[c]);
      picked.insert(picked.end(), by_class[c].begin(),
                    by_class[c].begin() + static_cast<std::ptrdiff_t>(quota));
    }
    std::sort(picked.begin(), picked.end());
  }
  LabeledImageSet out;
  out.split = set.split;
  out.normalization = set.normalization;
  out.images = gather_rows(set.images, picked);
  for (std::size_t i : picked) out.labels.push_back(set.labels[i]);
  return out;
}

LabeledImageSet make_synthetic_images(std::size_t n, std::uint64_t seed, const std::string& split) {
  Rng rng(seed);
  LabeledImageSet set;
  set.split = split;
  set.images = Tensor({n, 3, 32, 32});
  set.labels.resize(n);
  std::span<double> px = set.images.data();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % kCifarClasses);
    set.labels[i] = label;
    const double period = 4.0 + static_cast<double>(label % 5) * 2.0;
    const bool vertical = label >= 5;
    const double phase = rng.uniform() * period;
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = 70.0 + 50.0 * static_cast<double>((label + static_cast<int>(c)) % 3);
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
          const double t = static_cast<double>(vertical ? x : y) + phase;
          const double stripe = std::sin(2.0 * std::numbers::pi * t / period) * 40.0;
          const double noise = (rng.uniform() - 0.5) * 60.0;
          px[i * kImageValues + c * kPixels + y * 32 + x] =
              std::clamp(std::nearbyint(base + stripe + noise), 0.0, 255.0);
        }
      }
    }
  }
  return set;
}

void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t train_per_file,
                           std::size_t test, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 1; i <= 5; ++i) {
    write_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"),
                      make_synthetic_images(train_per_file, derive_seed(seed, i), "train"));
  }
  write_cifar_batch(dir / "test_batch.bin", make_synthetic_images(test, derive_seed(seed, 0), "test"));
}

Cluster2D make_clusters_2d(std::uint64_t seed, DiscLayout layout, std::size_t count) {
  Cluster2D c;
  c.seed = seed;
  c.inputs = Tensor({count, 2});
  c.targets = Tensor({count, 2});
  Rng rng(seed);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < count; ++i) {
    double r = 0.0, theta = 0.0;
    if (layout == DiscLayout::Uniform) {
      r = std::sqrt(rng.uniform());
      theta = 2.0 * std::numbers::pi * rng.uniform();
    } else {
      r = std::sqrt((static_cast<double>(i) + 0.5) / static_cast<double>(count));
      theta = golden * static_cast<double>(i);
    }
    r *= kClusterRadius * (1.0 - 1e-9);
    const double x = on_grid(kClusterCenterX + r * std::cos(theta));
    const double y = on_grid(kClusterCenterY + r * std::sin(theta));
    c.inputs[2 * i] = x;
    c.inputs[2 * i + 1] = y;
    c.targets[2 * i] = x + kClusterShiftX;
    c.targets[2 * i + 1] = y + kClusterShiftY;
  }
  return c;
}

void write_clusters_csv(const std::filesystem::path& file, const Cluster2D& clusters) {
  CsvWriter csv(file, {"x", "y", "target_x", "target_y"});
  for (std::size_t i = 0; i < clusters.inputs.dim(0); ++i) {
    csv.row({clusters.inputs[2 * i], clusters.inputs[2 * i + 1], clusters.targets[2 * i],
             clusters.targets[2 * i + 1]});
  }
}

Dataset to_dataset(const LabeledImageSet& set, bool augment) {
  if (!set.normalization) {
    throw UsageError("image set '" + set.split + "' must be normalized before training");
  }
  return Dataset{set.images, set.labels, Tensor(), augment};
}

Dataset to_dataset(const Cluster2D& clusters) {
  return Dataset{clusters.inputs, {}, clusters.targets, false};
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  Shape shape = x.shape();
  const std::size_t row = x.numel() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  std::span<const double> src = x.data();
  std::span<double> dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                dst.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return out;
}

void augment_crop_flip(Tensor& images, Rng& rng) {
  const std::size_t n = images.dim(0), channels = images.dim(1);
  const std::size_t h = images.dim(2), w = images.dim(3);
  constexpr std::size_t pad = 4;
  std::vector<double> buf(channels * h * w);
  std::span<double> px = images.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t dy = rng.below(2 * pad + 1), dx = rng.below(2 * pad + 1);
    const bool flip = rng.below(2) == 1;
    double* img = px.data() + i * channels * h * w;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          // Source position in the padded frame, mapped back to the image.
          const std::size_t sx = flip ? w - 1 - x : x;
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + dy) - pad;
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(sx + dx) - pad;
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                              xx < static_cast<std::ptrdiff_t>(w);
          buf[(c * h + y) * w + x] = inside ? img[(c * h + yy) * w + xx] : 0.0;
        }
      }
    }
    std::copy(buf.begin(), buf.end(), img);
  }
}

}  // namespace ffr
