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

#include "ffr/network.hpp"

#include <cmath>
#include <cstdio>

#include "ffr/rng.hpp"
#include "json.hpp"

namespace ffr {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string block_label(std::size_t i) { return "block " + std::to_string(i); }

Shape conv_block_conv_shape(const ConvBlockSpec& b, const Shape& in) {
  return {b.out_channels, conv_output_extent(in[1], b.kernel, b.stride, b.padding),
          conv_output_extent(in[2], b.kernel, b.stride, b.padding)};
}

Shape conv_block_output_shape(const ConvBlockSpec& b, const Shape& in) {
  Shape s = conv_block_conv_shape(b, in);
  if (b.maxpool) {
    s[1] = conv_output_extent(s[1], 2, 2, 0);
    s[2] = conv_output_extent(s[2], 2, 2, 0);
  }
  return s;
}

Shape residual_output_shape(const ResidualBlockSpec& b, const Shape& in) {
  const std::size_t stride_at = residual_stride_index(b);
  std::size_t h = in[1], w = in[2];
  for (std::size_t k = 0; k < b.kernels.size(); ++k) {
    const std::size_t s = k == stride_at ? b.stride : 1;
    h = conv_output_extent(h, b.kernels[k], s, b.kernels[k] / 2);
    w = conv_output_extent(w, b.kernels[k], s, b.kernels[k] / 2);
  }
  return {b.out_channels, h, w};
}

// Walks the spec, checking each block against its input shape. Returns the
// per-block (tap shape, output shape) pairs.
std::vector<std::pair<Shape, Shape>> walk(const ModelSpec& spec) {
  if (spec.input.empty()) throw ConfigError(spec.name + ": input shape is empty");
  if (spec.taps.size() != spec.blocks.size()) {
    throw ConfigError(spec.name + ": " + std::to_string(spec.taps.size()) + " tap markers for " +
                      std::to_string(spec.blocks.size()) + " blocks");
  }
  Shape shape = spec.input;
  if (spec.stem) {
    if (shape.size() != 3 || shape[0] != spec.stem->in_channels) {
      throw ConfigError(spec.name + ": stem expects " + std::to_string(spec.stem->in_channels) +
                        " channels, input is " + shape_string(shape));
    }
    shape = conv_block_output_shape(*spec.stem, shape);
  }
  std::vector<std::pair<Shape, Shape>> out;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const Shape in = shape;
    std::visit(
        Overloaded{
            [&](const ConvBlockSpec& b) {
              if (in.size() != 3 || in[0] != b.in_channels) {
                throw ConfigError(spec.name + ": " + block_label(i) + " expects " +
                                  std::to_string(b.in_channels) + " channels, got " +
                                  shape_string(in));
              }
              if (b.out_channels == 0) throw ConfigError(block_label(i) + " has no filters");
              out.emplace_back(conv_block_conv_shape(b, in), conv_block_output_shape(b, in));
            },
            [&](const ResidualBlockSpec& b) {
              if (in.size() != 3 || in[0] != b.in_channels) {
                throw ConfigError(spec.name + ": " + block_label(i) + " expects " +
                                  std::to_string(b.in_channels) + " channels, got " +
                                  shape_string(in));
              }
              if (b.kernels.size() != 2 && b.kernels.size() != 3) {
                throw ConfigError(block_label(i) + ": residual branch must have 2 or 3 convs");
              }
              if (!b.removed) {
                if (b.widths.size() != b.kernels.size()) {
                  throw ConfigError(block_label(i) + ": " + std::to_string(b.widths.size()) +
                                    " widths for " + std::to_string(b.kernels.size()) + " convs");
                }
                for (std::size_t w : b.widths) {
                  if (w == 0) throw ConfigError(block_label(i) + ": zero-width branch conv");
                }
                if (b.scatter.empty()) {
                  if (b.widths.back() != b.out_channels) {
                    throw ConfigError(block_label(i) + ": last branch width " +
                                      std::to_string(b.widths.back()) + " differs from output " +
                                      std::to_string(b.out_channels) + " without a scatter map");
                  }
                } else {
                  if (b.scatter.size() != b.widths.back()) {
                    throw ConfigError(block_label(i) + ": scatter map size mismatch");
                  }
                  for (std::size_t k = 0; k < b.scatter.size(); ++k) {
                    if (b.scatter[k] >= b.out_channels || (k && b.scatter[k] <= b.scatter[k - 1])) {
                      throw ConfigError(block_label(i) + ": scatter map must be increasing and "
                                                         "within the output width");
                    }
                  }
                }
              }
              if (!b.projection && (b.in_channels != b.out_channels || b.stride != 1)) {
                throw ConfigError(block_label(i) +
                                  ": identity shortcut needs matching dims and stride 1");
              }
              Shape o = residual_output_shape(b, in);
              const std::size_t sh = conv_output_extent(in[1], 1, b.stride, 0);
              const std::size_t sw = conv_output_extent(in[2], 1, b.stride, 0);
              if (sh != o[1] || sw != o[2]) {
                throw ConfigError(block_label(i) + ": branch and shortcut spatial sizes differ");
              }
              out.emplace_back(o, o);
            },
            [&](const DenseResidualBlockSpec& b) {
              if (in.size() != 1 || in[0] != b.width) {
                throw ConfigError(spec.name + ": " + block_label(i) + " expects width " +
                                  std::to_string(b.width) + ", got " + shape_string(in));
              }
              if (b.hidden == 0) throw ConfigError(block_label(i) + ": zero hidden width");
              out.emplace_back(in, in);
            }},
        spec.blocks[i]);
    shape = out.back().second;
  }
  if (spec.head) {
    std::size_t features = 0;
    if (spec.head->pooling == HeadPooling::GlobalAverage) {
      if (shape.size() != 3) throw ConfigError("global-average head needs a C x H x W input");
      features = shape[0];
    } else {
      features = shape_numel(shape);
    }
    if (features != spec.head->in_features) {
      throw ConfigError(spec.name + ": head expects " + std::to_string(spec.head->in_features) +
                        " features, got " + std::to_string(features));
    }
  }
  return out;
}

}  // namespace

std::size_t residual_stride_index(const ResidualBlockSpec& spec) {
  for (std::size_t k = 0; k < spec.kernels.size(); ++k) {
    if (spec.kernels[k] > 1) return k;
  }
  return 0;
}

void ModelSpec::validate() const { walk(*this); }

Shape ModelSpec::stem_output_shape() const {
  return stem ? conv_block_output_shape(*stem, input) : input;
}

std::vector<Shape> ModelSpec::block_output_shapes() const {
  std::vector<Shape> out;
  for (auto& p : walk(*this)) out.push_back(p.second);
  return out;
}

std::vector<Shape> ModelSpec::block_tap_shapes() const {
  std::vector<Shape> out;
  for (auto& p : walk(*this)) out.push_back(p.first);
  return out;
}

std::vector<Shape> ModelSpec::tap_shapes() const {
  std::vector<Shape> all = block_tap_shapes();
  std::vector<Shape> out;
  if (tap_input) out.push_back(input);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (taps[i]) out.push_back(all[i]);
  }
  return out;
}

std::size_t ModelSpec::tap_count() const {
  std::size_t n = tap_input ? 1 : 0;
  for (bool t : taps) n += t ? 1 : 0;
  return n;
}

std::vector<std::size_t> ModelSpec::stage_sizes() const {
  std::vector<std::size_t> sizes;
  const std::vector<Shape> shapes = tap_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i == 0 || shapes[i] != shapes[i - 1]) {
      sizes.push_back(1);
    } else {
      ++sizes.back();
    }
  }
  return sizes;
}

Shape ModelSpec::output_shape() const {
  auto shapes = walk(*this);
  Shape last = shapes.empty() ? stem_output_shape() : shapes.back().second;
  if (head) return {head->classes};
  return last;
}

// JSON -----------------------------------------------------------------------

namespace {

json conv_to_json(const ConvBlockSpec& b) {
  return json{{"type", "conv"},           {"in_channels", b.in_channels},
              {"out_channels", b.out_channels}, {"kernel", b.kernel},
              {"stride", b.stride},       {"padding", b.padding},
              {"maxpool", b.maxpool},     {"batchnorm", b.batchnorm},
              {"activation", b.activation}, {"bias", b.bias}};
}

ConvBlockSpec conv_from_json(const json& j) {
  ConvBlockSpec b;
  b.in_channels = j.at("in_channels").get<std::size_t>();
  b.out_channels = j.at("out_channels").get<std::size_t>();
  b.kernel = j.at("kernel").get<std::size_t>();
  b.stride = j.at("stride").get<std::size_t>();
  b.padding = j.at("padding").get<std::size_t>();
  b.maxpool = j.at("maxpool").get<bool>();
  b.batchnorm = j.at("batchnorm").get<bool>();
  b.activation = j.at("activation").get<bool>();
  b.bias = j.at("bias").get<bool>();
  return b;
}

}  // namespace

std::string to_json_string(const ModelSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input"] = spec.input;
  j["stem"] = spec.stem ? conv_to_json(*spec.stem) : json(nullptr);
  json blocks = json::array();
  for (const BlockSpec& bs : spec.blocks) {
    blocks.push_back(std::visit(
        Overloaded{[](const ConvBlockSpec& b) { return conv_to_json(b); },
                   [](const ResidualBlockSpec& b) {
                     return json{{"type", "residual"},       {"in_channels", b.in_channels},
                                 {"out_channels", b.out_channels}, {"kernels", b.kernels},
                                 {"widths", b.widths},       {"stride", b.stride},
                                 {"projection", b.projection}, {"batchnorm", b.batchnorm},
                                 {"scatter", b.scatter},     {"removed", b.removed}};
                   },
                   [](const DenseResidualBlockSpec& b) {
                     return json{{"type", "dense_residual"}, {"width", b.width},
                                 {"hidden", b.hidden}};
                   }},
        bs));
  }
  j["blocks"] = blocks;
  j["taps"] = spec.taps;
  j["tap_input"] = spec.tap_input;
  if (spec.head) {
    j["head"] = json{{"in_features", spec.head->in_features},
                     {"classes", spec.head->classes},
                     {"pooling", spec.head->pooling == HeadPooling::Flatten ? "flatten"
                                                                            : "global_average"}};
  } else {
    j["head"] = nullptr;
  }
  return j.dump();
}

ModelSpec model_spec_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.input = j.at("input").get<Shape>();
    if (!j.at("stem").is_null()) spec.stem = conv_from_json(j.at("stem"));
    for (const json& b : j.at("blocks")) {
      const std::string type = b.at("type").get<std::string>();
      if (type == "conv") {
        spec.blocks.emplace_back(conv_from_json(b));
      } else if (type == "residual") {
        ResidualBlockSpec r;
        r.in_channels = b.at("in_channels").get<std::size_t>();
        r.out_channels = b.at("out_channels").get<std::size_t>();
        r.kernels = b.at("kernels").get<std::vector<std::size_t>>();
        r.widths = b.at("widths").get<std::vector<std::size_t>>();
        r.stride = b.at("stride").get<std::size_t>();
        r.projection = b.at("projection").get<bool>();
        r.batchnorm = b.at("batchnorm").get<bool>();
        r.scatter = b.at("scatter").get<std::vector<std::size_t>>();
        r.removed = b.at("removed").get<bool>();
        spec.blocks.emplace_back(r);
      } else if (type == "dense_residual") {
        spec.blocks.emplace_back(DenseResidualBlockSpec{b.at("width").get<std::size_t>(),
                                                        b.at("hidden").get<std::size_t>()});
      } else {
        throw FormatError("unknown block type '" + type + "'");
      }
    }
    spec.taps = j.at("taps").get<std::vector<bool>>();
    spec.tap_input = j.value("tap_input", false);
    if (!j.at("head").is_null()) {
      const json& h = j.at("head");
      HeadSpec head;
      head.in_features = h.at("in_features").get<std::size_t>();
      head.classes = h.at("classes").get<std::size_t>();
      head.pooling = h.at("pooling").get<std::string>() == "flatten" ? HeadPooling::Flatten
                                                                     : HeadPooling::GlobalAverage;
      spec.head = head;
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
}

std::string spec_hash(const ModelSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json_string(spec)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Builders -------------------------------------------------------------------

ModelSpec build_vgg(std::string name, const std::vector<std::size_t>& plan, std::size_t classes) {
  ModelSpec spec;
  spec.name = std::move(name);
  spec.input = {3, 32, 32};
  std::size_t channels = 3;
  for (std::size_t c : plan) {
    if (c == 0) {
      if (spec.blocks.empty()) throw ConfigError("VGG plan cannot start with a maxpool");
      std::get<ConvBlockSpec>(spec.blocks.back()).maxpool = true;
      continue;
    }
    ConvBlockSpec b;
    b.in_channels = channels;
    b.out_channels = c;
    spec.blocks.emplace_back(b);
    channels = c;
  }
  spec.taps.assign(spec.blocks.size(), true);
  spec.head = HeadSpec{0, classes, HeadPooling::Flatten};
  ModelSpec headless = spec;
  headless.head.reset();
  spec.head->in_features = shape_numel(walk(headless).back().second);
  spec.validate();
  return spec;
}

ModelSpec build_vgg16_cifar(std::size_t classes) {
  return build_vgg("vgg16", {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0},
                   classes);
}

ModelSpec build_vgg_desk(std::size_t classes) {
  return build_vgg("vgg_desk", {16, 0, 32, 0, 64, 64, 0, 128, 128, 0, 128, 128, 0}, classes);
}

ModelSpec build_resnet_cifar(std::size_t blocks_per_stage, std::size_t classes) {
  if (blocks_per_stage == 0) throw ConfigError("ResNet needs at least one block per stage");
  ModelSpec spec;
  spec.name = "resnet" + std::to_string(6 * blocks_per_stage + 2);
  spec.input = {3, 32, 32};
  ConvBlockSpec stem;
  stem.in_channels = 3;
  stem.out_channels = 16;
  spec.stem = stem;
  std::size_t channels = 16;
  const std::size_t widths[] = {16, 32, 64};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < blocks_per_stage; ++i) {
      ResidualBlockSpec b;
      b.in_channels = channels;
      b.out_channels = widths[s];
      b.widths = {widths[s], widths[s]};
      b.stride = (s > 0 && i == 0) ? 2 : 1;
      b.projection = b.stride != 1 || b.in_channels != b.out_channels;
      spec.blocks.emplace_back(b);
      channels = widths[s];
    }
  }
  spec.taps.assign(spec.blocks.size(), true);
  spec.head = HeadSpec{channels, classes, HeadPooling::GlobalAverage};
  spec.validate();
  return spec;
}

ModelSpec build_resnet56_cifar(std::size_t classes) {
  ModelSpec spec = build_resnet_cifar(9, classes);
  spec.name = "resnet56";
  return spec;
}

ModelSpec build_residual_mlp_2d(std::size_t blocks, std::size_t hidden, bool tap_input) {
  if (blocks == 0) throw ConfigError("residual MLP needs at least one block");
  ModelSpec spec;
  spec.name = "residual_mlp_2d";
  spec.input = {2};
  for (std::size_t i = 0; i < blocks; ++i) spec.blocks.emplace_back(DenseResidualBlockSpec{2, hidden});
  spec.taps.assign(blocks, true);
  spec.tap_input = tap_input;
  spec.validate();
  return spec;
}

Tensor identity_kernel(std::size_t channels, std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("identity kernel needs an odd size");
  Tensor t({channels, channels, kernel, kernel});
  const std::size_t center = kernel / 2;
  for (std::size_t i = 0; i < channels; ++i) {
    t[((i * channels + i) * kernel + center) * kernel + center] = 1.0;
  }
  return t;
}

// Network --------------------------------------------------------------------

namespace {

ConvParams make_conv(std::size_t out, std::size_t in, std::size_t k, bool bias) {
  ConvParams p;
  p.weight = Tensor({out, in, k, k}, true);
  if (bias) p.bias = Tensor({out}, true);
  return p;
}

BatchNormParams make_bn(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor(Shape{channels}, std::vector<double>(channels, 1.0), true);
  p.beta = Tensor({channels}, true);
  p.state = BatchNormState(channels);
  return p;
}

ConvBlock make_conv_block(const ConvBlockSpec& b) {
  ConvBlock block;
  block.conv = make_conv(b.out_channels, b.in_channels, b.kernel, b.bias);
  if (b.batchnorm) block.bn = make_bn(b.out_channels);
  return block;
}

Tensor run_bn(BatchNormParams& bn, const Tensor& x, Mode mode) {
  return batchnorm2d(x, bn.gamma, bn.beta, bn.state, mode);
}

Tensor run_conv_block(ConvBlock& block, const ConvBlockSpec& spec, const Tensor& x, Mode mode,
                      Tensor* tap) {
  Tensor y = conv2d(x, block.conv.weight, block.conv.bias, spec.stride, spec.padding);
  if (spec.batchnorm) y = run_bn(block.bn, y, mode);
  if (spec.activation) y = relu(y);
  if (tap) *tap = y;
  if (spec.maxpool) y = maxpool2d(y, 2, 2);
  return y;
}

void he_fill(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = sd * rng.normal();
}

void add_conv(std::vector<NamedTensor>& out, const std::string& prefix, ConvParams& p) {
  if (!p.weight.defined()) return;
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

void add_bn(std::vector<NamedTensor>& out, const std::string& prefix, BatchNormParams& p) {
  if (!p.gamma.defined()) return;
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

void add_bn_buffers(std::vector<NamedBuffer>& out, const std::string& prefix, BatchNormParams& p) {
  if (!p.gamma.defined()) return;
  out.push_back({prefix + ".running_mean", &p.state.running_mean});
  out.push_back({prefix + ".running_var", &p.state.running_var});
}

Tensor copy_param(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

BatchNormParams copy_bn(const BatchNormParams& p) {
  BatchNormParams q;
  q.gamma = copy_param(p.gamma);
  q.beta = copy_param(p.beta);
  q.state = p.state;
  return q;
}

ConvParams copy_conv(const ConvParams& p) { return {copy_param(p.weight), copy_param(p.bias)}; }

}  // namespace

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.stem) stem_ = make_conv_block(*spec_.stem);
  for (const BlockSpec& bs : spec_.blocks) {
    std::visit(Overloaded{[&](const ConvBlockSpec& b) { blocks_.emplace_back(make_conv_block(b)); },
                          [&](const ResidualBlockSpec& b) {
                            ResidualBlock r;
                            if (!b.removed) {
                              std::size_t in = b.in_channels;
                              for (std::size_t k = 0; k < b.kernels.size(); ++k) {
                                r.convs.push_back(make_conv(b.widths[k], in, b.kernels[k], false));
                                if (b.batchnorm) {
                                  r.bns.push_back(make_bn(b.widths[k]));
                                } else {
                                  r.bns.emplace_back();
                                }
                                in = b.widths[k];
                              }
                            }
                            if (b.projection) {
                              r.shortcut = make_conv(b.out_channels, b.in_channels, 1, false);
                              if (b.batchnorm) r.shortcut_bn = make_bn(b.out_channels);
                            }
                            blocks_.emplace_back(std::move(r));
                          },
                          [&](const DenseResidualBlockSpec& b) {
                            DenseResidualBlock d;
                            d.fc1_weight = Tensor({b.hidden, b.width}, true);
                            d.fc1_bias = Tensor({b.hidden}, true);
                            d.fc2_weight = Tensor({b.width, b.hidden}, true);
                            d.fc2_bias = Tensor({b.width}, true);
                            blocks_.emplace_back(std::move(d));
                          }},
               bs);
  }
  if (spec_.head) {
    head_ = LinearParams{Tensor({spec_.head->classes, spec_.head->in_features}, true),
                         Tensor({spec_.head->classes}, true)};
  }
}

Network Network::build(ModelSpec spec, std::uint64_t seed) {
  Network net(std::move(spec));
  net.initialize(seed);
  return net;
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (NamedTensor& p : parameters()) {
    const std::string& n = p.name;
    const bool is_weight = n.size() >= 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
    if (is_weight) {
      const Shape& s = p.tensor.shape();
      he_fill(p.tensor, shape_numel(s) / s[0], rng);
    } else if (n.size() >= 6 && n.compare(n.size() - 6, 6, ".gamma") == 0) {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 1.0);
    } else {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    }
  }
  for (NamedBuffer& b : buffers()) {
    const bool is_var = b.name.find("running_var") != std::string::npos;
    std::fill(b.values->begin(), b.values->end(), is_var ? 1.0 : 0.0);
  }
}

Network Network::clone() const {
  Network copy(spec_);
  if (stem_) copy.stem_ = ConvBlock{copy_conv(stem_->conv), copy_bn(stem_->bn)};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::visit(Overloaded{[&](const ConvBlock& b) {
                            copy.blocks_[i] = ConvBlock{copy_conv(b.conv), copy_bn(b.bn)};
                          },
                          [&](const ResidualBlock& b) {
                            ResidualBlock r;
                            for (const ConvParams& c : b.convs) r.convs.push_back(copy_conv(c));
                            for (const BatchNormParams& n : b.bns) r.bns.push_back(copy_bn(n));
                            r.shortcut = copy_conv(b.shortcut);
                            r.shortcut_bn = copy_bn(b.shortcut_bn);
                            copy.blocks_[i] = std::move(r);
                          },
                          [&](const DenseResidualBlock& b) {
                            copy.blocks_[i] =
                                DenseResidualBlock{b.fc1_weight.clone(), b.fc1_bias.clone(),
                                                   b.fc2_weight.clone(), b.fc2_bias.clone()};
                          }},
               blocks_[i]);
  }
  if (head_) copy.head_ = LinearParams{head_->weight.clone(), head_->bias.clone()};
  return copy;
}

ForwardResult Network::forward(const Tensor& batch, Mode mode) {
  if (!batch.defined() || batch.rank() != spec_.input.size() + 1 ||
      !std::equal(spec_.input.begin(), spec_.input.end(), batch.shape().begin() + 1)) {
    throw DimensionError(spec_.name + ": expected a batch of " + shape_string(spec_.input) +
                         " samples, got " +
                         (batch.defined() ? shape_string(batch.shape()) : "<undefined>"));
  }
  ForwardResult result;
  Tensor x = batch;
  if (spec_.tap_input) result.taps.push_back(batch);
  if (stem_) x = run_conv_block(*stem_, *spec_.stem, x, mode, nullptr);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Tensor tap;
    const BlockSpec& bs = spec_.blocks[i];
    if (auto* cb = std::get_if<ConvBlock>(&blocks_[i])) {
      x = run_conv_block(*cb, std::get<ConvBlockSpec>(bs), x, mode, &tap);
    } else if (auto* rb = std::get_if<ResidualBlock>(&blocks_[i])) {
      const auto& s = std::get<ResidualBlockSpec>(bs);
      Tensor shortcut = x;
      if (s.projection) {
        shortcut = conv2d(x, rb->shortcut.weight, {}, s.stride, 0);
        if (s.batchnorm) shortcut = run_bn(rb->shortcut_bn, shortcut, mode);
      }
      if (s.removed) {
        x = relu(shortcut);
      } else {
        const std::size_t stride_at = residual_stride_index(s);
        Tensor h = x;
        for (std::size_t k = 0; k < rb->convs.size(); ++k) {
          h = conv2d(h, rb->convs[k].weight, {}, k == stride_at ? s.stride : 1, s.kernels[k] / 2);
          if (s.batchnorm) h = run_bn(rb->bns[k], h, mode);
          if (k + 1 < rb->convs.size()) h = relu(h);
        }
        if (!s.scatter.empty()) h = scatter_channels(h, s.scatter, s.out_channels);
        x = relu(add(h, shortcut));
      }
      tap = x;
    } else {
      auto& d = std::get<DenseResidualBlock>(blocks_[i]);
      Tensor h = relu(linear(x, d.fc1_weight, d.fc1_bias));
      x = relu(add(linear(h, d.fc2_weight, d.fc2_bias), x));
      tap = x;
    }
    if (spec_.taps[i]) result.taps.push_back(tap);
  }
  if (head_) {
    Tensor features = spec_.head->pooling == HeadPooling::GlobalAverage ? global_avgpool(x)
                                                                         : flatten(x);
    x = linear(features, head_->weight, head_->bias);
  }
  result.logits = x;
  return result;
}

std::vector<NamedTensor> Network::parameters() {
  std::vector<NamedTensor> out;
  if (stem_) {
    add_conv(out, "stem.conv", stem_->conv);
    add_bn(out, "stem.bn", stem_->bn);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    std::visit(Overloaded{[&](ConvBlock& b) {
                            add_conv(out, p + ".conv", b.conv);
                            add_bn(out, p + ".bn", b.bn);
                          },
                          [&](ResidualBlock& b) {
                            for (std::size_t k = 0; k < b.convs.size(); ++k) {
                              add_conv(out, p + ".convs." + std::to_string(k), b.convs[k]);
                              add_bn(out, p + ".bns." + std::to_string(k), b.bns[k]);
                            }
                            add_conv(out, p + ".shortcut", b.shortcut);
                            add_bn(out, p + ".shortcut_bn", b.shortcut_bn);
                          },
                          [&](DenseResidualBlock& b) {
                            out.push_back({p + ".fc1.weight", b.fc1_weight});
                            out.push_back({p + ".fc1.bias", b.fc1_bias});
                            out.push_back({p + ".fc2.weight", b.fc2_weight});
                            out.push_back({p + ".fc2.bias", b.fc2_bias});
                          }},
               blocks_[i]);
  }
  if (head_) {
    out.push_back({"head.weight", head_->weight});
    out.push_back({"head.bias", head_->bias});
  }
  return out;
}

std::vector<NamedBuffer> Network::buffers() {
  std::vector<NamedBuffer> out;
  if (stem_) add_bn_buffers(out, "stem.bn", stem_->bn);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    if (auto* b = std::get_if<ConvBlock>(&blocks_[i])) {
      add_bn_buffers(out, p + ".bn", b->bn);
    } else if (auto* r = std::get_if<ResidualBlock>(&blocks_[i])) {
      for (std::size_t k = 0; k < r->bns.size(); ++k) {
        add_bn_buffers(out, p + ".bns." + std::to_string(k), r->bns[k]);
      }
      add_bn_buffers(out, p + ".shortcut_bn", r->shortcut_bn);
    }
  }
  return out;
}

}  // namespace ffr
