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

#ifndef FFR_CHECKPOINT_HPP
#define FFR_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ffr/network.hpp"

namespace ffr {

/// One stored array. `group` is param, buffer, velocity, projection or
/// projection_velocity.
struct TensorRecord {
  std::string name;
  std::string group;
  Shape shape;
  std::vector<double> values;
};

/// Binary snapshot: the magic "FFRCKPT1", a little-endian u64 header length,
/// a JSON header describing every array, then the raw little-endian f64
/// payload in header order.
struct Checkpoint {
  ModelSpec spec;
  std::size_t epoch = 0;
  std::string rng_state;
  // Serialized training configuration, or empty.
  std::string config_json;
  std::vector<TensorRecord> tensors;

  void save(const std::filesystem::path& file) const;
  static Checkpoint load(const std::filesystem::path& file);

  const TensorRecord* find(const std::string& name, const std::string& group) const;
  /// Drops every group except param and buffer.
  void strip_training_state();
  /// Rebuilds the network with the stored parameters and BN statistics.
  Network network() const;
};

inline constexpr int kCheckpointFormatVersion = 1;

/// Parameters and BN statistics of `net`.
Checkpoint snapshot(Network& net);
/// Copies the param and buffer groups of `ckpt` into `net`, checking shapes.
void restore(Network& net, const Checkpoint& ckpt);

}  // namespace ffr

#endif  // FFR_CHECKPOINT_HPP
