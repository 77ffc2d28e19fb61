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

#include "ffr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace ffr {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'F', 'F', 'R', 'C', 'K', 'P', 'T', '1'};

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  v = to_little(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, 8);
  return to_little(v);
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& file) const {
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["spec"] = json::parse(to_json_string(spec));
  header["spec_hash"] = spec_hash(spec);
  header["epoch"] = epoch;
  header["rng_state"] = rng_state;
  header["config"] = config_json.empty() ? json() : json::parse(config_json);
  json list = json::array();
  std::uint64_t offset = 0;
  for (const TensorRecord& t : tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw UsageError("checkpoint: " + t.name + " holds " + std::to_string(t.values.size()) +
                       " values for shape " + shape_string(t.shape));
    }
    list.push_back({{"name", t.name},
                    {"group", t.group},
                    {"shape", t.shape},
                    {"dtype", "f64"},
                    {"offset", offset}});
    offset += 8 * t.values.size();
  }
  header["tensors"] = list;
  const std::string text = header.dump();

  std::string out(kMagic, 8);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const TensorRecord& t : tensors) {
    for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError(file.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint64_t len = get_u64(bytes.data() + 8);
  if (len > bytes.size() - 16) throw FormatError(file.string() + ": truncated header");
  Checkpoint c;
  std::size_t payload_bytes = 0;
  try {
    const json header = json::parse(bytes.substr(16, len));
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw FormatError(file.string() + ": unsupported format version " +
                        header.at("format_version").dump());
    }
    c.spec = model_spec_from_json(header.at("spec").dump());
    if (header.at("spec_hash").get<std::string>() != spec_hash(c.spec)) {
      throw FormatError(file.string() + ": spec hash mismatch");
    }
    c.epoch = header.at("epoch").get<std::size_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
    if (!header.at("config").is_null()) c.config_json = header.at("config").dump();
    const char* payload = bytes.data() + 16 + len;
    payload_bytes = bytes.size() - 16 - len;
    for (const json& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f64") {
        throw FormatError(file.string() + ": unsupported dtype " + t.at("dtype").dump());
      }
      TensorRecord r;
      r.name = t.at("name").get<std::string>();
      r.group = t.at("group").get<std::string>();
      r.shape = t.at("shape").get<Shape>();
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(r.shape);
      if (offset + 8 * n > payload_bytes) {
        throw FormatError(file.string() + ": payload of " + r.name + " is truncated");
      }
      r.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        r.values[i] = std::bit_cast<double>(get_u64(payload + offset + 8 * i));
      }
      c.tensors.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(file.string() + ": invalid model spec: " + e.what());
  }
  return c;
}

const TensorRecord* Checkpoint::find(const std::string& name, const std::string& group) const {
  for (const TensorRecord& t : tensors) {
    if (t.name == name && t.group == group) return &t;
  }
  return nullptr;
}

void Checkpoint::strip_training_state() {
  std::erase_if(tensors, [](const TensorRecord& t) {
    return t.group != "param" && t.group != "buffer";
  });
}

Network Checkpoint::network() const {
  Network net(spec);
  restore(net, *this);
  return net;
}

Checkpoint snapshot(Network& net) {
  Checkpoint c;
  c.spec = net.spec();
  for (NamedTensor& p : net.parameters()) {
    c.tensors.push_back({p.name, "param", p.tensor.shape(),
                         std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  for (NamedBuffer& b : net.buffers()) {
    c.tensors.push_back({b.name, "buffer", Shape{b.values->size()}, *b.values});
  }
  return c;
}

void restore(Network& net, const Checkpoint& ckpt) {
  for (NamedTensor& p : net.parameters()) {
    const TensorRecord* r = ckpt.find(p.name, "param");
    if (!r) throw FormatError("checkpoint is missing parameter " + p.name);
    if (r->shape != p.tensor.shape()) {
      throw FormatError("checkpoint parameter " + p.name + " has shape " +
                        shape_string(r->shape) + ", model expects " +
                        shape_string(p.tensor.shape()));
    }
    std::copy(r->values.begin(), r->values.end(), p.tensor.data().begin());
  }
  for (NamedBuffer& b : net.buffers()) {
    const TensorRecord* r = ckpt.find(b.name, "buffer");
    if (!r) throw FormatError("checkpoint is missing buffer " + b.name);
    if (r->values.size() != b.values->size()) {
      throw FormatError("checkpoint buffer " + b.name + " has the wrong length");
    }
    *b.values = r->values;
  }
}

}  // namespace ffr
