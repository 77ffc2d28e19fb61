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

#include "ffr/trainer.hpp"

#include <cmath>
#include <limits>

#include "ffr/csv.hpp"
#include "ffr/ops.hpp"
#include "json.hpp"

namespace ffr {

using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor task_loss(const Tensor& output, const Dataset& data, const std::vector<int>& labels,
                 const Tensor& targets) {
  if (data.regression()) return mse(output, targets);
  return softmax_cross_entropy(output, labels);
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (logits[i * classes + c] > logits[i * classes + best]) best = c;
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

[[noreturn]] void report_non_finite(const std::string& where, const std::string& what) {
  throw NumericalError("non-finite value in " + what + " (" + where + ")");
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("train.base_lr must be > 0");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    if (i && lr_milestones[i] <= lr_milestones[i - 1]) {
      throw ConfigError("train.lr_milestones must be strictly increasing");
    }
    if (lr_milestones[i] >= epochs) {
      throw ConfigError("train.lr_milestones entry " + std::to_string(lr_milestones[i]) +
                        " is not below epochs " + std::to_string(epochs));
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("train.weight_decay must be >= 0");
  }
  ffr.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = base_lr;
  for (std::size_t m : lr_milestones) {
    if (epoch > m) lr *= lr_factor;
  }
  return lr;
}

TrainConfig TrainConfig::cifar_recipe() { return TrainConfig{}; }

TrainConfig TrainConfig::scaled_recipe(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr_milestones.clear();
  for (std::size_t pct : {40, 60, 80}) {
    const std::size_t m = epochs * pct / 100;
    if (m >= 1 && m < epochs && (c.lr_milestones.empty() || m > c.lr_milestones.back())) {
      c.lr_milestones.push_back(m);
    }
  }
  return c;
}

std::string to_json_string(const TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["base_lr"] = cfg.base_lr;
  j["lr_milestones"] = cfg.lr_milestones;
  j["lr_factor"] = cfg.lr_factor;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["ffr"] = {{"enabled", cfg.ffr.enabled},
              {"k1", cfg.ffr.k1},
              {"k2", cfg.ffr.k2},
              {"stage_scaling", to_string(cfg.ffr.stage_scaling)}};
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.base_lr = j.at("base_lr").get<double>();
    c.lr_milestones = j.at("lr_milestones").get<std::vector<std::size_t>>();
    c.lr_factor = j.at("lr_factor").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const json& f = j.at("ffr");
    c.ffr.enabled = f.at("enabled").get<bool>();
    c.ffr.k1 = f.at("k1").get<double>();
    c.ffr.k2 = f.at("k2").get<double>();
    c.ffr.stage_scaling = stage_scaling_from_string(f.at("stage_scaling").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
}

void sgd_step(std::span<Tensor> params, SgdState& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.size() != params.size()) {
    state.velocity.resize(params.size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<double>& v = state.velocity[i];
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    std::span<double> w = p.data();
    if (p.has_grad()) {
      std::span<const double> g = std::as_const(p).grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum * v[j] + (g[j] + weight_decay * w[j]);
        w[j] -= lr * v[j];
      }
    } else {
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum * v[j] + (0.0 + weight_decay * w[j]);
        w[j] -= lr * v[j];
      }
    }
  }
}

void write_metrics_csv(const std::filesystem::path& file, const std::vector<EpochMetrics>& rows) {
  CsvWriter csv(file, {"epoch", "lr", "train_loss", "task_loss", "ffr_length", "ffr_curvature",
                       "train_acc", "test_acc"});
  for (const EpochMetrics& m : rows) {
    csv.row({std::to_string(m.epoch), format_number(m.lr), format_number(m.train_loss),
             format_number(m.task_loss), format_number(m.ffr_length),
             format_number(m.ffr_curvature), format_number(m.train_acc),
             format_number(m.test_acc)});
  }
}

Evaluation evaluate(Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  NoGradGuard no_grad;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Tensor x = gather_rows(data.inputs, idx);
    const Tensor out = net.forward(x, Mode::Eval).logits;
    if (data.regression()) {
      loss_sum += mse(out, gather_rows(data.targets, idx)).item() * static_cast<double>(idx.size());
    } else {
      std::span<const int> labels(data.labels.data() + start, end - start);
      loss_sum += softmax_cross_entropy(out, labels).item() * static_cast<double>(idx.size());
      correct += count_correct(out, labels);
    }
  }
  const double n = static_cast<double>(data.size());
  return {data.regression() ? kNaN : static_cast<double>(correct) / n, loss_sum / n};
}

Trainer::Trainer(Network net, TrainConfig cfg)
    : net_(std::move(net)), cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, 2)) {
  cfg_.validate();
  if (cfg_.ffr.active()) proj_ = FlowProjections::for_model(net_.spec(), derive_seed(cfg_.seed, 1));
}

Trainer Trainer::resume(const Checkpoint& ckpt) {
  if (ckpt.config_json.empty()) throw FormatError("checkpoint has no training configuration");
  Trainer t(ckpt.network(), train_config_from_json(ckpt.config_json));
  t.epoch_ = ckpt.epoch;
  if (!ckpt.rng_state.empty()) t.rng_.restore(ckpt.rng_state);
  for (NamedTensor& p : t.proj_.parameters()) {
    const TensorRecord* r = ckpt.find(p.name, "projection");
    if (!r || r->shape != p.tensor.shape()) {
      throw FormatError("checkpoint is missing projection " + p.name);
    }
    std::copy(r->values.begin(), r->values.end(), p.tensor.data().begin());
  }
  std::vector<NamedTensor> params = t.all_parameters();
  const std::size_t net_count = t.net_.parameters().size();
  t.opt_.velocity.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string group = i < net_count ? "velocity" : "projection_velocity";
    if (const TensorRecord* r = ckpt.find(params[i].name, group)) {
      if (r->values.size() != params[i].tensor.numel()) {
        throw FormatError("checkpoint velocity " + params[i].name + " has the wrong length");
      }
      t.opt_.velocity[i] = r->values;
    }
  }
  return t;
}

std::vector<NamedTensor> Trainer::all_parameters() {
  std::vector<NamedTensor> params = net_.parameters();
  for (NamedTensor& p : proj_.parameters()) params.push_back(p);
  return params;
}

EpochMetrics Trainer::run_epoch(const Dataset& train, const Dataset* test) {
  if (train.size() == 0) throw UsageError("training set is empty");
  ++epoch_;
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = cfg_.lr_at(epoch_);

  std::vector<NamedTensor> named = all_parameters();
  std::vector<Tensor> params;
  for (NamedTensor& p : named) params.push_back(p.tensor);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng_.shuffle(order);

  double total_sum = 0.0, task_sum = 0.0, length_sum = 0.0, curvature_sum = 0.0;
  std::size_t seen = 0, correct = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    // A lone trailing sample cannot feed batch normalization.
    if (end - start < 2 && seen > 0) break;
    std::span<const std::size_t> idx(order.data() + start, end - start);
    Tensor x = gather_rows(train.inputs, idx);
    if (train.augment) augment_crop_flip(x, rng_);
    std::vector<int> labels;
    Tensor targets;
    if (train.regression()) {
      targets = gather_rows(train.targets, idx);
    } else {
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
    }

    for (Tensor& p : params) p.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    auto [out, flow] = forward_with_taps(net_, x, Mode::Train);
    const Tensor task = task_loss(out, train, labels, targets);
    const LossTerms terms = total_loss(task, flow, proj_, cfg_.ffr);
    const std::string where = "epoch " + std::to_string(epoch_) + ", batch " +
                              std::to_string(start / cfg_.batch_size);
    if (!std::isfinite(terms.total.item())) {
      if (!all_finite(out.data())) report_non_finite(where, "network output");
      for (std::size_t t = 0; t < flow.size(); ++t) {
        if (!all_finite(flow.features()[t].data())) {
          report_non_finite(where, "tapped feature " + std::to_string(t));
        }
      }
      if (!std::isfinite(task.item())) report_non_finite(where, "task loss");
      if (!std::isfinite(terms.length.item())) report_non_finite(where, "flow length term");
      report_non_finite(where, "flow curvature term");
    }
    tape.backward(terms.total);
    sgd_step(params, opt_, m.lr, cfg_.momentum, cfg_.weight_decay);
    for (NamedTensor& p : named) {
      if (!all_finite(p.tensor.data())) report_non_finite(where, "parameter " + p.name);
    }

    const double b = static_cast<double>(idx.size());
    total_sum += terms.total.item() * b;
    task_sum += terms.task.item() * b;
    length_sum += terms.length.item() * b;
    curvature_sum += terms.curvature.item() * b;
    seen += idx.size();
    if (!train.regression()) correct += count_correct(out, labels);
  }
  const double n = static_cast<double>(seen);
  m.train_loss = total_sum / n;
  m.task_loss = task_sum / n;
  m.ffr_length = length_sum / n;
  m.ffr_curvature = curvature_sum / n;
  m.train_acc = train.regression() ? kNaN : static_cast<double>(correct) / n;
  m.test_acc = test ? evaluate(net_, *test).accuracy : kNaN;
  return m;
}

std::vector<EpochMetrics> Trainer::fit(const Dataset& train, const Dataset* test,
                                       const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::vector<EpochMetrics> log;
  while (epoch_ < cfg_.epochs) {
    log.push_back(run_epoch(train, test));
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c = snapshot(net_);
  c.epoch = epoch_;
  c.rng_state = rng_.state();
  c.config_json = to_json_string(cfg_);
  std::vector<NamedTensor> params = all_parameters();
  const std::size_t net_count = net_.parameters().size();
  for (std::size_t i = net_count; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    c.tensors.push_back({params[i].name, "projection", t.shape(),
                         std::vector<double>(t.data().begin(), t.data().end())});
  }
  for (std::size_t i = 0; i < params.size() && i < opt_.velocity.size(); ++i) {
    if (opt_.velocity[i].empty()) continue;
    c.tensors.push_back({params[i].name, i < net_count ? "velocity" : "projection_velocity",
                         params[i].tensor.shape(), opt_.velocity[i]});
  }
  return c;
}

void Trainer::set_epochs(std::size_t epochs) {
  if (epochs < epoch_) {
    throw ConfigError("epochs " + std::to_string(epochs) + " is below the completed " +
                      std::to_string(epoch_));
  }
  cfg_.epochs = epochs;
  cfg_.validate();
}

TrainResult train(Network net, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& cfg) {
  Trainer t(std::move(net), cfg);
  std::vector<EpochMetrics> log = t.fit(train_set, test_set);
  return {t.checkpoint(), std::move(log)};
}

}  // namespace ffr
