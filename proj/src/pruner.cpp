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

#include "ffr/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "ffr/csv.hpp"
#include "json.hpp"

namespace ffr {

using json = nlohmann::ordered_json;

namespace {

std::string conv_layer_name(std::size_t block) { return "blocks." + std::to_string(block) + ".conv"; }

std::string residual_layer_name(std::size_t block, std::size_t conv) {
  return "blocks." + std::to_string(block) + ".convs." + std::to_string(conv);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

const ConvParams& conv_params(const Network& net, std::size_t block, std::size_t conv) {
  const Block& b = net.blocks().at(block);
  if (const auto* c = std::get_if<ConvBlock>(&b)) return c->conv;
  return std::get<ResidualBlock>(b).convs.at(conv);
}

// Shape entering the head.
Shape head_input(const ModelSpec& spec) {
  if (!spec.blocks.empty()) return spec.block_output_shapes().back();
  return spec.stem ? spec.stem_output_shape() : spec.input;
}

// Kept input channels of conv block `block` given the plan's kept sets.
std::vector<std::size_t> conv_block_inputs(const ModelSpec& spec, const PrunePlan& plan,
                                           std::size_t block) {
  const auto& b = std::get<ConvBlockSpec>(spec.blocks[block]);
  if (block > 0) {
    if (const LayerPlan* prev = plan.find(conv_layer_name(block - 1))) return prev->kept;
  }
  return all_indices(b.in_channels);
}

PrunePlan derive_plan(const ModelSpec& spec,
                      const std::map<std::string, std::vector<std::size_t>>& kept,
                      const std::vector<std::size_t>& removed) {
  PrunePlan plan;
  plan.model_hash = spec_hash(spec);
  plan.removed_blocks = removed;
  std::sort(plan.removed_blocks.begin(), plan.removed_blocks.end());
  for (const PrunableConv& c : prunable_convs(spec)) {
    LayerPlan l;
    l.layer = c.layer;
    l.block = c.block;
    l.conv = c.conv;
    l.role = c.role;
    l.filters = c.filters;
    auto it = kept.find(c.layer);
    l.kept = it != kept.end() ? it->second : all_indices(c.filters);
    if (c.role != ConvRole::Plain && contains(plan.removed_blocks, c.block)) l.kept.clear();
    plan.layers.push_back(std::move(l));
  }
  for (LayerPlan& l : plan.layers) {
    if (l.role == ConvRole::Plain) {
      l.kept_inputs = conv_block_inputs(spec, plan, l.block);
    } else if (l.conv == 0) {
      l.kept_inputs = all_indices(std::get<ResidualBlockSpec>(spec.blocks[l.block]).in_channels);
    } else {
      l.kept_inputs = plan.find(residual_layer_name(l.block, l.conv - 1))->kept;
    }
    if (l.role == ConvRole::ResidualLast && !contains(plan.removed_blocks, l.block)) {
      const auto& rs = std::get<ResidualBlockSpec>(spec.blocks[l.block]);
      std::vector<std::size_t> positions;
      for (std::size_t k : l.kept) positions.push_back(rs.scatter.empty() ? k : rs.scatter.at(k));
      if (!rs.scatter.empty() || positions.size() < rs.out_channels) {
        plan.scatter[l.block] = positions;
      }
    }
  }
  if (spec.head) {
    plan.head_kept_inputs = all_indices(spec.head->in_features);
    if (!spec.blocks.empty()) {
      if (const LayerPlan* last = plan.find(conv_layer_name(spec.blocks.size() - 1))) {
        const Shape s = head_input(spec);
        const std::size_t plane = spec.head->pooling == HeadPooling::Flatten ? s[1] * s[2] : 1;
        plan.head_kept_inputs.clear();
        for (std::size_t c : last->kept) {
          for (std::size_t p = 0; p < plane; ++p) plan.head_kept_inputs.push_back(c * plane + p);
        }
      }
    }
  }
  return plan;
}

Tensor select(const Tensor& w, const std::vector<std::size_t>& rows,
              const std::vector<std::size_t>& cols) {
  Shape shape = w.shape();
  const std::size_t in = shape.size() > 1 ? shape[1] : 1;
  const std::size_t inner = shape.size() > 2 ? shape_numel(Shape(shape.begin() + 2, shape.end())) : 1;
  shape[0] = rows.size();
  if (shape.size() > 1) shape[1] = cols.size();
  Tensor out(shape, w.requires_grad());
  std::span<const double> src = w.data();
  std::span<double> dst = out.data();
  std::size_t at = 0;
  for (std::size_t r : rows) {
    if (shape.size() == 1) {
      dst[at++] = src[r];
      continue;
    }
    for (std::size_t c : cols) {
      for (std::size_t e = 0; e < inner; ++e) dst[at++] = src[(r * in + c) * inner + e];
    }
  }
  return out;
}

Tensor select_rows(const Tensor& v, const std::vector<std::size_t>& rows) { return select(v, rows, {}); }

void copy_into(Tensor& dst, const Tensor& src) {
  if (!src.defined()) return;
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

void copy_bn_selected(BatchNormParams& dst, const BatchNormParams& src,
                      const std::vector<std::size_t>& kept) {
  if (!src.gamma.defined()) return;
  copy_into(dst.gamma, select_rows(src.gamma, kept));
  copy_into(dst.beta, select_rows(src.beta, kept));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    dst.state.running_mean[i] = src.state.running_mean[kept[i]];
    dst.state.running_var[i] = src.state.running_var[kept[i]];
  }
}

void copy_conv_selected(ConvParams& dst, const ConvParams& src, const std::vector<std::size_t>& rows,
                        const std::vector<std::size_t>& cols) {
  copy_into(dst.weight, select(src.weight, rows, cols));
  if (src.bias.defined()) copy_into(dst.bias, select_rows(src.bias, rows));
}

void copy_bn(BatchNormParams& dst, const BatchNormParams& src) {
  if (!src.gamma.defined()) return;
  copy_into(dst.gamma, src.gamma);
  copy_into(dst.beta, src.beta);
  dst.state = src.state;
}

void copy_conv(ConvParams& dst, const ConvParams& src) {
  copy_into(dst.weight, src.weight);
  copy_into(dst.bias, src.bias);
}

// Zeroes output rows not in `rows` and input columns not in `cols`.
void mask_conv(ConvParams& p, BatchNormParams& bn, const std::vector<std::size_t>& rows,
               const std::vector<std::size_t>& cols) {
  const Shape& s = p.weight.shape();
  const std::size_t inner = s[2] * s[3];
  std::span<double> w = p.weight.data();
  std::vector<bool> keep_row(s[0], false), keep_col(s[1], false);
  for (std::size_t r : rows) keep_row[r] = true;
  for (std::size_t c : cols) keep_col[c] = true;
  for (std::size_t f = 0; f < s[0]; ++f) {
    for (std::size_t c = 0; c < s[1]; ++c) {
      if (keep_row[f] && keep_col[c]) continue;
      std::fill_n(w.begin() + static_cast<std::ptrdiff_t>((f * s[1] + c) * inner), inner, 0.0);
    }
    if (!keep_row[f]) {
      if (p.bias.defined()) p.bias[f] = 0.0;
      if (bn.gamma.defined()) {
        bn.gamma[f] = 0.0;
        bn.beta[f] = 0.0;
      }
    }
  }
}

std::size_t conv_param_count(std::size_t out, std::size_t in, std::size_t k, bool bias, bool bn) {
  return out * in * k * k + (bias ? out : 0) + (bn ? 2 * out : 0);
}

[[noreturn]] void structural(const std::string& layer, const std::string& what) {
  throw StructuralError("prune plan, layer " + layer + ": " + what);
}

}  // namespace

// Inspection -----------------------------------------------------------------

std::vector<PrunableConv> prunable_convs(const ModelSpec& spec) {
  std::vector<PrunableConv> out;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (const auto* c = std::get_if<ConvBlockSpec>(&spec.blocks[i])) {
      const bool last = i + 1 == spec.blocks.size();
      const bool feeds_conv = !last && std::holds_alternative<ConvBlockSpec>(spec.blocks[i + 1]);
      if (feeds_conv || (last && spec.head)) {
        out.push_back({conv_layer_name(i), i, 0, ConvRole::Plain, c->out_channels, c->in_channels,
                       c->kernel});
      }
    } else if (const auto* r = std::get_if<ResidualBlockSpec>(&spec.blocks[i])) {
      if (r->removed) continue;
      for (std::size_t k = 0; k < r->kernels.size(); ++k) {
        const ConvRole role =
            k + 1 == r->kernels.size() ? ConvRole::ResidualLast : ConvRole::ResidualInner;
        out.push_back({residual_layer_name(i, k), i, k, role, r->widths[k],
                       k == 0 ? r->in_channels : r->widths[k - 1], r->kernels[k]});
      }
    }
  }
  return out;
}

std::vector<LayerMagnitudes> filter_magnitudes(const Network& net) {
  std::vector<LayerMagnitudes> out;
  for (const PrunableConv& c : prunable_convs(net.spec())) {
    const Tensor& w = conv_params(net, c.block, c.conv).weight;
    const std::size_t per = w.numel() / w.dim(0);
    LayerMagnitudes m{c.layer, std::vector<double>(w.dim(0), 0.0)};
    for (std::size_t f = 0; f < w.dim(0); ++f) {
      double s = 0.0;
      for (std::size_t e = 0; e < per; ++e) s += std::abs(w[f * per + e]);
      m.values[f] = s;
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string to_string(PrunePolicy p) {
  return p == PrunePolicy::Global ? "global" : "per_layer_fraction";
}

PrunePolicy prune_policy_from_string(const std::string& s) {
  if (s == "global") return PrunePolicy::Global;
  if (s == "per_layer_fraction") return PrunePolicy::PerLayerFraction;
  throw ConfigError("unknown prune policy '" + s + "' (expected global or per_layer_fraction)");
}

// Plans ----------------------------------------------------------------------

const LayerPlan* PrunePlan::find(const std::string& layer) const {
  for (const LayerPlan& l : layers) {
    if (l.layer == layer) return &l;
  }
  return nullptr;
}

bool PrunePlan::is_identity() const {
  if (!removed_blocks.empty()) return false;
  for (const LayerPlan& l : layers) {
    if (l.kept.size() != l.filters) return false;
  }
  return true;
}

void PrunePlan::validate(const ModelSpec& spec) const {
  if (model_hash != spec_hash(spec)) {
    throw StructuralError("prune plan was made for model " + model_hash + ", not " +
                          spec_hash(spec));
  }
  for (std::size_t b : removed_blocks) {
    if (b >= spec.blocks.size() || !std::holds_alternative<ResidualBlockSpec>(spec.blocks[b])) {
      structural("blocks." + std::to_string(b), "only residual blocks can be removed");
    }
  }
  const std::vector<PrunableConv> convs = prunable_convs(spec);
  if (convs.size() != layers.size()) {
    throw StructuralError("prune plan lists " + std::to_string(layers.size()) + " layers, model has " +
                          std::to_string(convs.size()) + " prunable layers");
  }
  std::map<std::string, std::vector<std::size_t>> kept;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const LayerPlan& l = layers[i];
    if (l.layer != convs[i].layer) structural(l.layer, "expected " + convs[i].layer);
    if (l.filters != convs[i].filters) structural(l.layer, "filter count differs from the model");
    for (std::size_t k = 0; k < l.kept.size(); ++k) {
      if (l.kept[k] >= l.filters) structural(l.layer, "kept index out of range");
      if (k && l.kept[k] <= l.kept[k - 1]) structural(l.layer, "kept set not sorted and unique");
    }
    const bool block_removed = contains(removed_blocks, l.block);
    if (l.kept.empty() && !block_removed) structural(l.layer, "no filters kept");
    if (!l.kept.empty() && block_removed) structural(l.layer, "block is removed but keeps filters");
    kept[l.layer] = l.kept;
  }
  const PrunePlan ref = derive_plan(spec, kept, removed_blocks);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kept_inputs != ref.layers[i].kept_inputs) {
      structural(layers[i].layer, "kept input channels do not match the previous layer");
    }
  }
  if (scatter != ref.scatter) {
    for (const auto& [block, positions] : ref.scatter) {
      auto it = scatter.find(block);
      if (it == scatter.end() || it->second != positions) {
        structural(residual_layer_name(block, 0), "scatter map does not match kept filters");
      }
    }
    throw StructuralError("prune plan has scatter maps for blocks without pruned outputs");
  }
  if (head_kept_inputs != ref.head_kept_inputs) {
    structural("head", "kept columns do not match the last conv layer");
  }
}

PrunePlan plan_from_kept(const ModelSpec& spec,
                         const std::map<std::string, std::vector<std::size_t>>& kept,
                         const std::vector<std::size_t>& removed_blocks) {
  PrunePlan plan = derive_plan(spec, kept, removed_blocks);
  plan.validate(spec);
  return plan;
}

PrunePlan identity_plan(const ModelSpec& spec) { return plan_from_kept(spec, {}, {}); }

PrunePlan make_plan(const Network& net, double value, PrunePolicy policy) {
  if (policy == PrunePolicy::Global && !(value >= 0.0)) {
    throw ConfigError("prune threshold must be >= 0");
  }
  if (policy == PrunePolicy::PerLayerFraction && !(value >= 0.0 && value <= 1.0)) {
    throw ConfigError("prune fraction must lie in [0, 1]");
  }
  const ModelSpec& spec = net.spec();
  const std::vector<PrunableConv> convs = prunable_convs(spec);
  const std::vector<LayerMagnitudes> mags = filter_magnitudes(net);
  std::map<std::string, std::vector<std::size_t>> kept;
  std::vector<std::size_t> removed;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const std::vector<double>& m = mags[i].values;
    std::vector<std::size_t> keep;
    if (policy == PrunePolicy::Global) {
      for (std::size_t f = 0; f < m.size(); ++f) {
        if (!(m[f] < value)) keep.push_back(f);
      }
    } else {
      std::vector<std::size_t> order = all_indices(m.size());
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return m[a] < m[b]; });
      const auto drop = static_cast<std::size_t>(std::floor(value * static_cast<double>(m.size())));
      keep.assign(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
      std::sort(keep.begin(), keep.end());
    }
    if (keep.empty()) {
      if (convs[i].role != ConvRole::Plain && convs[i].conv == 0) {
        removed.push_back(convs[i].block);
      } else {
        keep.push_back(static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin()));
      }
    }
    kept[convs[i].layer] = keep;
  }
  return plan_from_kept(spec, kept, removed);
}

std::string PrunePlan::to_text() const {
  json j;
  j["format"] = "ffr-prune-plan";
  j["version"] = 1;
  j["model_hash"] = model_hash;
  json ls = json::array();
  for (const LayerPlan& l : layers) ls.push_back({{"layer", l.layer}, {"kept", l.kept}});
  j["layers"] = ls;
  j["removed_blocks"] = removed_blocks;
  return j.dump(2) + "\n";
}

PrunePlan PrunePlan::from_text(std::string_view text, const ModelSpec& spec) {
  std::map<std::string, std::vector<std::size_t>> kept;
  std::vector<std::size_t> removed;
  std::string hash;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "ffr-prune-plan" || j.at("version").get<int>() != 1) {
      throw FormatError("not a version 1 prune plan");
    }
    hash = j.at("model_hash").get<std::string>();
    for (const json& l : j.at("layers")) {
      kept[l.at("layer").get<std::string>()] = l.at("kept").get<std::vector<std::size_t>>();
    }
    removed = j.at("removed_blocks").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prune plan: ") + e.what());
  }
  if (hash != spec_hash(spec)) {
    throw StructuralError("prune plan was made for model " + hash + ", not " + spec_hash(spec));
  }
  for (const PrunableConv& c : prunable_convs(spec)) {
    if (!kept.count(c.layer)) structural(c.layer, "missing from plan file");
  }
  return plan_from_kept(spec, kept, removed);
}

void PrunePlan::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << to_text();
}

PrunePlan PrunePlan::load(const std::filesystem::path& file, const ModelSpec& spec) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), spec);
}

// Application ----------------------------------------------------------------

ModelSpec compact_spec(const ModelSpec& spec, const PrunePlan& plan) {
  plan.validate(spec);
  ModelSpec out = spec;
  for (std::size_t i = 0; i < out.blocks.size(); ++i) {
    if (auto* c = std::get_if<ConvBlockSpec>(&out.blocks[i])) {
      if (const LayerPlan* l = plan.find(conv_layer_name(i))) c->out_channels = l->kept.size();
      c->in_channels = conv_block_inputs(spec, plan, i).size();
    } else if (auto* r = std::get_if<ResidualBlockSpec>(&out.blocks[i])) {
      if (r->removed) continue;
      if (contains(plan.removed_blocks, i)) {
        r->removed = true;
        r->widths.clear();
        r->scatter.clear();
        continue;
      }
      for (std::size_t k = 0; k < r->kernels.size(); ++k) {
        r->widths[k] = plan.find(residual_layer_name(i, k))->kept.size();
      }
      auto it = plan.scatter.find(i);
      r->scatter = it != plan.scatter.end() ? it->second : std::vector<std::size_t>{};
    }
  }
  if (out.head) out.head->in_features = plan.head_kept_inputs.size();
  out.validate();
  return out;
}

Network apply_plan(const Network& net, const PrunePlan& plan) {
  const ModelSpec& spec = net.spec();
  Network out(compact_spec(spec, plan));
  if (net.stem()) {
    copy_conv(out.stem()->conv, net.stem()->conv);
    copy_bn(out.stem()->bn, net.stem()->bn);
  }
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const Block& src = net.blocks()[i];
    Block& dst = out.blocks()[i];
    if (const auto* c = std::get_if<ConvBlock>(&src)) {
      auto& d = std::get<ConvBlock>(dst);
      const LayerPlan* l = plan.find(conv_layer_name(i));
      const std::vector<std::size_t> rows =
          l ? l->kept : all_indices(std::get<ConvBlockSpec>(spec.blocks[i]).out_channels);
      copy_conv_selected(d.conv, c->conv, rows, conv_block_inputs(spec, plan, i));
      copy_bn_selected(d.bn, c->bn, rows);
    } else if (const auto* r = std::get_if<ResidualBlock>(&src)) {
      auto& d = std::get<ResidualBlock>(dst);
      const auto& rs = std::get<ResidualBlockSpec>(spec.blocks[i]);
      if (r->shortcut.weight.defined()) {
        copy_conv(d.shortcut, r->shortcut);
        copy_bn(d.shortcut_bn, r->shortcut_bn);
      }
      if (rs.removed || contains(plan.removed_blocks, i)) continue;
      for (std::size_t k = 0; k < r->convs.size(); ++k) {
        const LayerPlan* l = plan.find(residual_layer_name(i, k));
        copy_conv_selected(d.convs[k], r->convs[k], l->kept, l->kept_inputs);
        copy_bn_selected(d.bns[k], r->bns[k], l->kept);
      }
    } else {
      const auto& s = std::get<DenseResidualBlock>(src);
      auto& d = std::get<DenseResidualBlock>(dst);
      copy_into(d.fc1_weight, s.fc1_weight);
      copy_into(d.fc1_bias, s.fc1_bias);
      copy_into(d.fc2_weight, s.fc2_weight);
      copy_into(d.fc2_bias, s.fc2_bias);
    }
  }
  if (net.head()) {
    copy_into(out.head()->weight,
              select(net.head()->weight, all_indices(spec.head->classes), plan.head_kept_inputs));
    copy_into(out.head()->bias, net.head()->bias);
  }
  return out;
}

Network mask_plan(const Network& net, const PrunePlan& plan) {
  const ModelSpec& spec = net.spec();
  plan.validate(spec);
  Network out = net.clone();
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (auto* c = std::get_if<ConvBlock>(&out.blocks()[i])) {
      const LayerPlan* l = plan.find(conv_layer_name(i));
      const std::vector<std::size_t> rows =
          l ? l->kept : all_indices(std::get<ConvBlockSpec>(spec.blocks[i]).out_channels);
      mask_conv(c->conv, c->bn, rows, conv_block_inputs(spec, plan, i));
    } else if (auto* r = std::get_if<ResidualBlock>(&out.blocks()[i])) {
      for (std::size_t k = 0; k < r->convs.size(); ++k) {
        const LayerPlan* l = plan.find(residual_layer_name(i, k));
        mask_conv(r->convs[k], r->bns[k], l->kept, l->kept_inputs);
      }
    }
  }
  if (out.head()) {
    Tensor& w = out.head()->weight;
    const std::size_t in = w.dim(1);
    std::vector<bool> keep(in, false);
    for (std::size_t c : plan.head_kept_inputs) keep[c] = true;
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      for (std::size_t c = 0; c < in; ++c) {
        if (!keep[c]) w[o * in + c] = 0.0;
      }
    }
  }
  return out;
}

// Counting -------------------------------------------------------------------

std::size_t count_params(const ModelSpec& spec) {
  spec.validate();
  std::size_t n = 0;
  if (spec.stem) {
    const ConvBlockSpec& s = *spec.stem;
    n += conv_param_count(s.out_channels, s.in_channels, s.kernel, s.bias, s.batchnorm);
  }
  for (const BlockSpec& bs : spec.blocks) {
    if (const auto* c = std::get_if<ConvBlockSpec>(&bs)) {
      n += conv_param_count(c->out_channels, c->in_channels, c->kernel, c->bias, c->batchnorm);
    } else if (const auto* r = std::get_if<ResidualBlockSpec>(&bs)) {
      if (!r->removed) {
        std::size_t in = r->in_channels;
        for (std::size_t k = 0; k < r->kernels.size(); ++k) {
          n += conv_param_count(r->widths[k], in, r->kernels[k], false, r->batchnorm);
          in = r->widths[k];
        }
      }
      if (r->projection) {
        n += conv_param_count(r->out_channels, r->in_channels, 1, false, r->batchnorm);
      }
    } else {
      const auto& d = std::get<DenseResidualBlockSpec>(bs);
      n += 2 * d.hidden * d.width + d.hidden + d.width;
    }
  }
  if (spec.head) n += spec.head->classes * spec.head->in_features + spec.head->classes;
  return n;
}

std::size_t count_params(Network& net) {
  std::size_t n = 0;
  for (const NamedTensor& p : net.parameters()) n += p.tensor.numel();
  return n;
}

std::size_t count_flops(const ModelSpec& spec) { return count_flops(spec, spec.input); }

std::size_t count_flops(const ModelSpec& spec, const Shape& input) {
  ModelSpec s = spec;
  s.input = input;
  s.validate();
  std::size_t n = 0;
  Shape x = input;
  auto conv = [&](std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                  std::size_t pad, const Shape& at) {
    const std::size_t h = conv_output_extent(at[1], k, stride, pad);
    const std::size_t w = conv_output_extent(at[2], k, stride, pad);
    n += out * in * k * k * h * w;
    return Shape{out, h, w};
  };
  auto conv_block = [&](const ConvBlockSpec& c) {
    x = conv(c.out_channels, c.in_channels, c.kernel, c.stride, c.padding, x);
    if (c.maxpool) x = {x[0], conv_output_extent(x[1], 2, 2, 0), conv_output_extent(x[2], 2, 2, 0)};
  };
  if (s.stem) conv_block(*s.stem);
  for (const BlockSpec& bs : s.blocks) {
    if (const auto* c = std::get_if<ConvBlockSpec>(&bs)) {
      conv_block(*c);
    } else if (const auto* r = std::get_if<ResidualBlockSpec>(&bs)) {
      Shape out = x;
      if (r->projection) out = conv(r->out_channels, r->in_channels, 1, r->stride, 0, x);
      if (!r->removed) {
        const std::size_t stride_at = residual_stride_index(*r);
        Shape h = x;
        for (std::size_t k = 0; k < r->kernels.size(); ++k) {
          h = conv(r->widths[k], h[0], r->kernels[k], k == stride_at ? r->stride : 1,
                   r->kernels[k] / 2, h);
        }
        out = {r->out_channels, h[1], h[2]};
      }
      x = out;
    } else {
      const auto& d = std::get<DenseResidualBlockSpec>(bs);
      n += 2 * d.hidden * d.width;
    }
  }
  if (s.head) n += s.head->classes * s.head->in_features;
  return n;
}

std::size_t params_removed(const ModelSpec& spec, const PrunePlan& plan) {
  plan.validate(spec);
  std::size_t removed = 0;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (const auto* c = std::get_if<ConvBlockSpec>(&spec.blocks[i])) {
      const LayerPlan* l = plan.find(conv_layer_name(i));
      const std::size_t kept = l ? l->kept.size() : c->out_channels;
      const std::size_t inputs = conv_block_inputs(spec, plan, i).size();
      removed += conv_param_count(c->out_channels, c->in_channels, c->kernel, c->bias, c->batchnorm) -
                 conv_param_count(kept, inputs, c->kernel, c->bias, c->batchnorm);
    } else if (const auto* r = std::get_if<ResidualBlockSpec>(&spec.blocks[i])) {
      if (r->removed) continue;
      for (std::size_t k = 0; k < r->kernels.size(); ++k) {
        const LayerPlan* l = plan.find(residual_layer_name(i, k));
        const std::size_t in = k == 0 ? r->in_channels : r->widths[k - 1];
        removed += conv_param_count(r->widths[k], in, r->kernels[k], false, r->batchnorm) -
                   conv_param_count(l->kept.size(), l->kept_inputs.size(), r->kernels[k], false,
                                    r->batchnorm);
      }
    }
  }
  if (spec.head) removed += spec.head->classes * (spec.head->in_features - plan.head_kept_inputs.size());
  return removed;
}

// Sweeps and fine-tuning -----------------------------------------------------

std::vector<SparsityReport> sparsity_sweep(const Network& net, const Dataset& test,
                                           const std::vector<double>& thresholds,
                                           PrunePolicy policy) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ConfigError("sweep thresholds must be in ascending order");
  }
  const ModelSpec& spec = net.spec();
  const std::size_t total = count_params(spec);
  std::vector<SparsityReport> out;
  for (double t : thresholds) {
    const PrunePlan plan = make_plan(net, t, policy);
    Network masked = mask_plan(net, plan);
    SparsityReport r;
    r.threshold = t;
    const std::size_t gone = params_removed(spec, plan);
    r.sparsity = static_cast<double>(gone) / static_cast<double>(total);
    r.accuracy = evaluate(masked, test).accuracy;
    r.params_remaining = total - gone;
    r.flops_remaining = count_flops(compact_spec(spec, plan));
    out.push_back(r);
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& file, const std::vector<SparsityReport>& rows) {
  CsvWriter csv(file, {"threshold", "sparsity", "accuracy", "params", "flops"});
  for (const SparsityReport& r : rows) {
    csv.row({format_number(r.threshold), format_number(r.sparsity), format_number(r.accuracy),
             std::to_string(r.params_remaining), std::to_string(r.flops_remaining)});
  }
}

FineTuneResult fine_tune(Network compact, const Dataset& train, const Dataset& test,
                         std::size_t epochs, double lr, const TrainConfig& base) {
  FineTuneResult result;
  result.best_accuracy = evaluate(compact, test).accuracy;
  if (epochs == 0) {
    result.best = snapshot(compact);
    return result;
  }
  TrainConfig cfg = base;
  cfg.epochs = epochs;
  cfg.base_lr = lr;
  cfg.lr_milestones.clear();
  cfg.ffr = FfrConfig{};
  Trainer trainer(std::move(compact), cfg);
  result.best = trainer.checkpoint();
  while (trainer.epoch() < cfg.epochs) {
    const EpochMetrics m = trainer.run_epoch(train, &test);
    result.metrics.push_back(m);
    if (m.test_acc > result.best_accuracy) {
      result.best_accuracy = m.test_acc;
      result.best_epoch = m.epoch;
      result.best = trainer.checkpoint();
    }
  }
  return result;
}

}  // namespace ffr
