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

#include "ffr/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "ffr/csv.hpp"
#include "ffr/stats.hpp"
#include "json.hpp"

namespace ffr {

using json = nlohmann::ordered_json;

namespace {

std::string to_string(DatasetKind k) { return k == DatasetKind::Cifar10 ? "cifar10" : "synthetic"; }

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "cifar10") return DatasetKind::Cifar10;
  if (s == "synthetic") return DatasetKind::Synthetic;
  throw ConfigError("unknown dataset kind '" + s + "' (expected cifar10 or synthetic)");
}

std::string to_string(DiscLayout l) { return l == DiscLayout::Uniform ? "uniform" : "sunflower"; }

DiscLayout layout_from_string(const std::string& s) {
  if (s == "uniform") return DiscLayout::Uniform;
  if (s == "sunflower") return DiscLayout::Sunflower;
  throw ConfigError("unknown disc layout '" + s + "' (expected uniform or sunflower)");
}

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const Demo2dConfig& d = c.demo2d;
  json j;
  j["schema_version"] = c.schema_version;
  j["name"] = c.name;
  j["model"] = c.model;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"kind", to_string(c.dataset.kind)},
                  {"path", c.dataset.path},
                  {"train_subset", c.dataset.train_subset},
                  {"test_subset", c.dataset.test_subset},
                  {"augment", c.dataset.augment},
                  {"synthetic_train", c.dataset.synthetic_train},
                  {"synthetic_test", c.dataset.synthetic_test}};
  j["train"] = {{"batch_size", t.batch_size},     {"epochs", t.epochs},
                {"base_lr", t.base_lr},           {"lr_milestones", t.lr_milestones},
                {"lr_factor", t.lr_factor},       {"momentum", t.momentum},
                {"weight_decay", t.weight_decay}};
  j["ffr"] = {{"enabled", t.ffr.enabled},
              {"k1", t.ffr.k1},
              {"k2", t.ffr.k2},
              {"stage_scaling", to_string(t.ffr.stage_scaling)}};
  j["prune"] = {{"policy", to_string(c.prune.policy)},
                {"thresholds", c.prune.thresholds},
                {"threshold", c.prune.threshold},
                {"fraction", c.prune.fraction},
                {"finetune_epochs", c.prune.finetune_epochs},
                {"finetune_lr", c.prune.finetune_lr}};
  j["stats"] = {{"batch", c.stats.batch}, {"norm_bound", c.stats.norm_bound}};
  j["demo2d"] = {{"blocks", d.blocks},
                 {"hidden", d.hidden},
                 {"points", d.points},
                 {"layout", to_string(d.layout)},
                 {"steps", d.steps},
                 {"lr", d.lr},
                 {"lr_milestones", d.lr_milestones},
                 {"momentum", d.momentum},
                 {"weight_decay", d.weight_decay},
                 {"branch_init_scale", d.branch_init_scale},
                 {"k", d.k}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.schema_version = j.at("schema_version").get<int>();
  c.name = j.at("name").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();

  const json& ds = j.at("dataset");
  c.dataset.kind = dataset_kind_from_string(ds.at("kind").get<std::string>());
  c.dataset.path = ds.at("path").get<std::string>();
  c.dataset.train_subset = ds.at("train_subset").get<std::size_t>();
  c.dataset.test_subset = ds.at("test_subset").get<std::size_t>();
  c.dataset.augment = ds.at("augment").get<bool>();
  c.dataset.synthetic_train = ds.at("synthetic_train").get<std::size_t>();
  c.dataset.synthetic_test = ds.at("synthetic_test").get<std::size_t>();

  const json& t = j.at("train");
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.epochs = t.at("epochs").get<std::size_t>();
  c.train.base_lr = t.at("base_lr").get<double>();
  c.train.lr_milestones = t.at("lr_milestones").get<std::vector<std::size_t>>();
  c.train.lr_factor = t.at("lr_factor").get<double>();
  c.train.momentum = t.at("momentum").get<double>();
  c.train.weight_decay = t.at("weight_decay").get<double>();
  c.train.seed = c.seed;

  const json& f = j.at("ffr");
  c.train.ffr.enabled = f.at("enabled").get<bool>();
  c.train.ffr.k1 = f.at("k1").get<double>();
  c.train.ffr.k2 = f.at("k2").get<double>();
  c.train.ffr.stage_scaling = stage_scaling_from_string(f.at("stage_scaling").get<std::string>());

  const json& p = j.at("prune");
  c.prune.policy = prune_policy_from_string(p.at("policy").get<std::string>());
  c.prune.thresholds = p.at("thresholds").get<std::vector<double>>();
  c.prune.threshold = p.at("threshold").get<double>();
  c.prune.fraction = p.at("fraction").get<double>();
  c.prune.finetune_epochs = p.at("finetune_epochs").get<std::size_t>();
  c.prune.finetune_lr = p.at("finetune_lr").get<double>();

  const json& s = j.at("stats");
  c.stats.batch = s.at("batch").get<std::size_t>();
  c.stats.norm_bound = s.at("norm_bound").get<double>();

  const json& d = j.at("demo2d");
  c.demo2d.blocks = d.at("blocks").get<std::size_t>();
  c.demo2d.hidden = d.at("hidden").get<std::size_t>();
  c.demo2d.points = d.at("points").get<std::size_t>();
  c.demo2d.layout = layout_from_string(d.at("layout").get<std::string>());
  c.demo2d.steps = d.at("steps").get<std::size_t>();
  c.demo2d.lr = d.at("lr").get<double>();
  c.demo2d.lr_milestones = d.at("lr_milestones").get<std::vector<std::size_t>>();
  c.demo2d.momentum = d.at("momentum").get<double>();
  c.demo2d.weight_decay = d.at("weight_decay").get<double>();
  c.demo2d.branch_init_scale = d.at("branch_init_scale").get<double>();
  c.demo2d.k = d.at("k").get<double>();
  c.demo2d.seed = c.seed;
  return c;
}

// Copies `user` over `base`, rejecting keys that `base` does not have.
void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config" + path + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where.substr(1) + "'");
    if (base[key].is_object()) {
      merge_strict(base[key], value, where);
    } else {
      base[key] = value;
    }
  }
}

json parse_override_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);
  return v;
}

void apply_override(json& user, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  json* node = &user;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = parse_override_value(assignment.substr(eq + 1));
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override key '" + key + "' crosses a value");
    node = &child;
    start = dot + 1;
  }
}

void require_image_model(const RunConfig& cfg) {
  const ModelSpec spec = build_model(cfg.model);
  if (spec.input != Shape{3, 32, 32}) {
    throw ConfigError("model '" + cfg.model + "' does not take 3x32x32 images");
  }
}

std::filesystem::path output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const std::filesystem::path& file, const json& j) {
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + file.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + file.string());
  }
  std::filesystem::rename(tmp, file);
}

std::string run_label(const std::filesystem::path& file) {
  const std::filesystem::path name =
      file.filename() == "checkpoint.ffr" && file.has_parent_path() ? file.parent_path().filename()
                                                                   : file.stem();
  return name.string();
}

}  // namespace

void RunConfig::validate() const {
  if (schema_version != kRunConfigSchemaVersion) {
    throw ConfigError("schema_version " + std::to_string(schema_version) +
                      " is not supported (expected " +
                      std::to_string(kRunConfigSchemaVersion) + ")");
  }
  build_model(model);
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (dataset.kind == DatasetKind::Synthetic &&
      (dataset.synthetic_train == 0 || dataset.synthetic_test == 0)) {
    throw ConfigError("dataset.synthetic_train and synthetic_test must be >= 1");
  }
  train.validate();
  if (prune.thresholds.empty()) throw ConfigError("prune.thresholds must not be empty");
  for (std::size_t i = 0; i < prune.thresholds.size(); ++i) {
    if (!std::isfinite(prune.thresholds[i]) || prune.thresholds[i] < 0.0 ||
        (i > 0 && prune.thresholds[i] < prune.thresholds[i - 1])) {
      throw ConfigError("prune.thresholds must be finite, >= 0 and ascending");
    }
  }
  if (!std::isfinite(prune.threshold) || prune.threshold < 0.0) {
    throw ConfigError("prune.threshold must be a finite value >= 0");
  }
  if (!(prune.fraction >= 0.0 && prune.fraction <= 1.0)) {
    throw ConfigError("prune.fraction must lie in [0, 1]");
  }
  if (!(prune.finetune_lr > 0.0) || !std::isfinite(prune.finetune_lr)) {
    throw ConfigError("prune.finetune_lr must be a finite value > 0");
  }
  if (stats.batch == 0) throw ConfigError("stats.batch must be >= 1");
  if (!(stats.norm_bound > 0.0)) throw ConfigError("stats.norm_bound must be > 0");
  demo2d.validate();
}

std::string RunConfig::label() const {
  if (!name.empty()) return name;
  return train.ffr.active() ? "ffr" : "baseline";
}

RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides) {
  json user = json::parse(text, nullptr, false);
  if (user.is_discarded()) throw ConfigError("config is not valid JSON");
  for (const std::string& o : overrides) apply_override(user, o);
  json merged = to_json(RunConfig{});
  merge_strict(merged, user, "");
  RunConfig cfg;
  try {
    cfg = from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides);
}

std::string to_json_string(const RunConfig& cfg) { return to_json(cfg).dump(2); }

std::vector<std::string> model_names() {
  return {"vgg16", "vgg_desk", "resnet20", "resnet32", "resnet56", "mlp2d"};
}

ModelSpec build_model(const std::string& name) {
  if (name == "vgg16") return build_vgg16_cifar();
  if (name == "vgg_desk") return build_vgg_desk();
  if (name == "resnet20") return build_resnet_cifar(3);
  if (name == "resnet32") return build_resnet_cifar(5);
  if (name == "resnet56") return build_resnet56_cifar();
  if (name == "mlp2d") return build_residual_mlp_2d();
  std::string known;
  for (const std::string& n : model_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown model '" + name + "' (expected one of " + known + ")");
}

DataSplits load_data(const RunConfig& cfg) {
  const DatasetConfig& d = cfg.dataset;
  LabeledImageSet train;
  LabeledImageSet test;
  if (d.kind == DatasetKind::Cifar10) {
    std::string dir = d.path;
    if (dir.empty()) {
      const char* env = std::getenv("FFR_CIFAR10_DIR");
      if (!env || !*env) {
        throw IoError("dataset.path is empty and FFR_CIFAR10_DIR is not set");
      }
      dir = env;
    }
    CifarSplits s = load_cifar10(dir);
    train = std::move(s.train);
    test = std::move(s.test);
  } else {
    train = make_synthetic_images(d.synthetic_train, derive_seed(cfg.seed, 4), "train");
    test = make_synthetic_images(d.synthetic_test, derive_seed(cfg.seed, 5), "test");
    normalize(train);
    normalize(test);
  }
  if (d.train_subset > 0) train = subset(train, d.train_subset, derive_seed(cfg.seed, 3));
  if (d.test_subset > 0) test = subset(test, d.test_subset, derive_seed(cfg.seed, 3));
  return {to_dataset(train, d.augment), to_dataset(test, false)};
}

void cmd_train(const RunConfig& cfg, const std::filesystem::path& resume) {
  require_image_model(cfg);
  const DataSplits data = load_data(cfg);
  const std::filesystem::path dir = output_dir(cfg);

  std::optional<Trainer> trainer;
  if (!resume.empty()) {
    trainer.emplace(Trainer::resume(Checkpoint::load(resume)));
    trainer->set_epochs(cfg.train.epochs);
  } else {
    trainer.emplace(Network::build(build_model(cfg.model), derive_seed(cfg.seed, 0)), cfg.train);
  }
  const std::vector<EpochMetrics> log =
      trainer->fit(data.train, &data.test, [](const EpochMetrics& m) {
        std::fprintf(stderr, "epoch %zu lr %.4g loss %.6f train_acc %.4f test_acc %.4f\n",
                     m.epoch, m.lr, m.train_loss, m.train_acc, m.test_acc);
      });
  trainer->checkpoint().save(dir / "checkpoint.ffr");
  write_metrics_csv(dir / "metrics.csv", log);

  const ModelSpec& spec = trainer->network().spec();
  json summary;
  summary["label"] = cfg.label();
  summary["model"] = cfg.model;
  summary["spec_hash"] = spec_hash(spec);
  summary["k1"] = trainer->config().ffr.k1;
  summary["k2"] = trainer->config().ffr.k2;
  summary["epochs"] = trainer->epoch();
  summary["params"] = count_params(spec);
  summary["flops"] = count_flops(spec);
  if (!log.empty()) {
    summary["final_train_loss"] = log.back().train_loss;
    summary["final_test_accuracy"] = log.back().test_acc;
  }
  write_json(dir / "train.json", summary);
}

void cmd_sweep(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints) {
  if (checkpoints.empty()) throw ConfigError("sweep needs at least one checkpoint");
  const DataSplits data = load_data(cfg);
  const std::filesystem::path dir = output_dir(cfg);
  CsvWriter csv(dir / "sweep.csv",
                {"run", "k1", "k2", "threshold", "sparsity", "accuracy", "params", "flops"});
  for (const std::filesystem::path& file : checkpoints) {
    const Checkpoint ckpt = Checkpoint::load(file);
    double k1 = std::nan("");
    double k2 = std::nan("");
    if (!ckpt.config_json.empty()) {
      const TrainConfig tc = train_config_from_json(ckpt.config_json);
      k1 = tc.ffr.enabled ? tc.ffr.k1 : 0.0;
      k2 = tc.ffr.enabled ? tc.ffr.k2 : 0.0;
    }
    const std::string run = run_label(file);
    const std::vector<SparsityReport> rows =
        sparsity_sweep(ckpt.network(), data.test, cfg.prune.thresholds, cfg.prune.policy);
    for (const SparsityReport& r : rows) {
      csv.row(std::vector<std::string>{run, format_number(k1), format_number(k2),
                                       format_number(r.threshold), format_number(r.sparsity),
                                       format_number(r.accuracy),
                                       std::to_string(r.params_remaining),
                                       std::to_string(r.flops_remaining)});
    }
  }
}

void cmd_prune(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  const Network net = ckpt.network();
  const std::filesystem::path dir = output_dir(cfg);
  const double value =
      cfg.prune.policy == PrunePolicy::Global ? cfg.prune.threshold : cfg.prune.fraction;
  const PrunePlan plan = make_plan(net, value, cfg.prune.policy);
  Network compact = apply_plan(net, plan);

  Checkpoint out = snapshot(compact);
  out.epoch = ckpt.epoch;
  out.config_json = ckpt.config_json;
  out.save(dir / "compact.ffr");
  plan.save(dir / "plan.json");

  const std::size_t params = count_params(ckpt.spec);
  const std::size_t pruned_params = count_params(compact.spec());
  const std::size_t flops = count_flops(ckpt.spec);
  const std::size_t pruned_flops = count_flops(compact.spec());
  std::size_t filters = 0;
  std::size_t kept = 0;
  for (const LayerPlan& l : plan.layers) {
    filters += l.filters;
    kept += l.kept.size();
  }
  json counts;
  counts["policy"] = to_string(cfg.prune.policy);
  counts["value"] = value;
  counts["original_params"] = params;
  counts["pruned_params"] = pruned_params;
  counts["param_reduction"] =
      1.0 - static_cast<double>(pruned_params) / static_cast<double>(params);
  counts["original_flops"] = flops;
  counts["pruned_flops"] = pruned_flops;
  counts["flop_reduction"] = 1.0 - static_cast<double>(pruned_flops) / static_cast<double>(flops);
  counts["filters"] = filters;
  counts["filters_kept"] = kept;
  counts["removed_blocks"] = plan.removed_blocks;
  write_json(dir / "counts.json", counts);
}

void cmd_finetune(const RunConfig& cfg, const std::filesystem::path& compact) {
  const Checkpoint ckpt = Checkpoint::load(compact);
  const DataSplits data = load_data(cfg);
  const std::filesystem::path dir = output_dir(cfg);
  TrainConfig base = cfg.train;
  base.seed = cfg.seed;
  FineTuneResult r = fine_tune(ckpt.network(), data.train, data.test, cfg.prune.finetune_epochs,
                               cfg.prune.finetune_lr, base);
  r.best.save(dir / "finetuned.ffr");
  write_metrics_csv(dir / "finetune_metrics.csv", r.metrics);
  json summary;
  summary["epochs"] = cfg.prune.finetune_epochs;
  summary["lr"] = cfg.prune.finetune_lr;
  summary["best_accuracy"] = r.best_accuracy;
  summary["best_epoch"] = r.best_epoch;
  summary["params"] = count_params(ckpt.spec);
  summary["flops"] = count_flops(ckpt.spec);
  write_json(dir / "finetune.json", summary);
}

void cmd_stats(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  Network net = ckpt.network();
  const DataSplits data = load_data(cfg);
  const std::filesystem::path dir = output_dir(cfg);

  const std::size_t n = std::min(cfg.stats.batch, data.test.size());
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  const std::vector<FeatureMapNorms> norms = feature_map_norms(net, gather_rows(data.test.inputs, rows));
  write_feature_norms_csv(dir / "feature_norms.csv", norms);

  std::filesystem::create_directories(dir / "filters");
  for (const FilterMatrix& m : filter_magnitude_matrices(net)) {
    write_filter_matrix_csv(dir / "filters" / (m.layer + ".csv"), m);
  }

  json summary;
  summary["batch"] = n;
  summary["norm_bound"] = cfg.stats.norm_bound;
  json layers = json::array();
  for (const FeatureMapNorms& f : norms) {
    layers.push_back({{"layer", f.layer},
                      {"channels", f.norms.size()},
                      {"below_bound", count_below(f.norms, cfg.stats.norm_bound)}});
  }
  if (!norms.empty()) {
    summary["last_layer"] = norms.back().layer;
    summary["last_layer_below_bound"] = count_below(norms.back().norms, cfg.stats.norm_bound);
  }
  summary["layers"] = layers;
  write_json(dir / "stats.json", summary);
}

void cmd_demo2d(const RunConfig& cfg) {
  Demo2dConfig d = cfg.demo2d;
  d.seed = cfg.seed;
  const Demo2dResult r = run_demo2d(d);
  write_demo2d(output_dir(cfg), r);
  for (const Demo2dVariant* v : {&r.baseline, &r.ffr}) {
    std::fprintf(stderr, "%s: mean length %.6f mean curvature %.6f mse %.3g\n", v->name.c_str(),
                 v->mean_length, v->mean_curvature, v->final_mse);
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const StructuralError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

}  // namespace ffr
