#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "adapmtl/common.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"
#include "adapmtl/synth_data.hpp"
#include "adapmtl/trainer.hpp"

// JSON run configuration: strict parsing (unknown keys are errors), default
// materialization, dotted-path overrides, and the glue that turns a config
// into a dataset and a model spec.
namespace adapmtl {

struct DataConfig {
  std::uint64_t seed = 42;
  std::size_t n = 2000;
  std::size_t input_dim = 16;
  std::size_t latent_dim = 8;
  double train_fraction = 0.8;
  std::vector<TaskSpec> tasks;
  std::string path;  // when set, load this dataset instead of generating
};

struct HeadConfig {
  std::string name;
  std::vector<std::size_t> hidden;
  std::string loss;  // empty = default for the task kind
};

struct ModelConfig {
  std::vector<std::size_t> backbone_widths;
  std::vector<HeadConfig> heads;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> sweep_seeds;  // empty = single run on train.seed
};

namespace detail {

using nlohmann::json;

inline void expect_object(const json& j, const std::string& where) {
  if (!j.is_object())
    throw ConfigError(where + " must be a JSON object");
}

inline void reject_unknown_keys(const json& j, const std::string& where,
                                const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

inline double get_number(const json& j, const std::string& where) {
  if (!j.is_number())
    throw ConfigError(where + " must be a number");
  return j.get<double>();
}

inline std::size_t get_size(const json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<double>() < 0)
    throw ConfigError(where + " must be a non-negative integer");
  return j.get<std::size_t>();
}

inline std::uint64_t get_u64(const json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<double>() < 0)
    throw ConfigError(where + " must be a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + " must be a string");
  return j.get<std::string>();
}

inline std::vector<std::size_t> get_size_array(const json& j,
                                               const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(get_size(v, where + " entry"));
  return out;
}

inline DataConfig parse_data_config(const json& j) {
  expect_object(j, "data");
  reject_unknown_keys(j, "data",
                      {"seed", "n", "input_dim", "latent_dim",
                       "train_fraction", "tasks", "path"});
  DataConfig cfg;
  if (j.contains("seed")) cfg.seed = get_u64(j["seed"], "data.seed");
  if (j.contains("n")) cfg.n = get_size(j["n"], "data.n");
  if (j.contains("input_dim"))
    cfg.input_dim = get_size(j["input_dim"], "data.input_dim");
  if (j.contains("latent_dim"))
    cfg.latent_dim = get_size(j["latent_dim"], "data.latent_dim");
  if (j.contains("train_fraction"))
    cfg.train_fraction = get_number(j["train_fraction"], "data.train_fraction");
  if (j.contains("path")) cfg.path = get_string(j["path"], "data.path");
  if (!j.contains("tasks")) {
    if (cfg.path.empty())
      throw ConfigError("data.tasks is required unless data.path is set");
    return cfg;
  }
  if (!j["tasks"].is_array())
    throw ConfigError("data.tasks must be an array");
  for (const auto& t : j["tasks"]) {
    expect_object(t, "data.tasks entry");
    reject_unknown_keys(t, "data.tasks entry",
                        {"name", "kind", "output_dim", "noise"});
    if (!t.contains("name") || !t.contains("kind") ||
        !t.contains("output_dim"))
      throw ConfigError("each task needs name, kind, and output_dim");
    TaskSpec spec;
    spec.name = get_string(t["name"], "task name");
    spec.kind = parse_task_kind(get_string(t["kind"], "task kind"));
    spec.output_dim = get_size(t["output_dim"], "task output_dim");
    if (t.contains("noise"))
      spec.noise_level = get_number(t["noise"], "task noise");
    cfg.tasks.push_back(std::move(spec));
  }
  return cfg;
}

inline ModelConfig parse_model_config(const json& j) {
  expect_object(j, "model");
  reject_unknown_keys(j, "model", {"backbone_widths", "heads"});
  ModelConfig cfg;
  if (j.contains("backbone_widths"))
    cfg.backbone_widths =
        get_size_array(j["backbone_widths"], "model.backbone_widths");
  if (!j.contains("heads") || !j["heads"].is_array())
    throw ConfigError("model.heads must be an array");
  for (const auto& h : j["heads"]) {
    expect_object(h, "model.heads entry");
    reject_unknown_keys(h, "model.heads entry", {"name", "hidden", "loss"});
    if (!h.contains("name"))
      throw ConfigError("each head needs a name");
    HeadConfig head;
    head.name = get_string(h["name"], "head name");
    if (h.contains("hidden"))
      head.hidden = get_size_array(h["hidden"], "head hidden widths");
    if (h.contains("loss")) head.loss = get_string(h["loss"], "head loss");
    cfg.heads.push_back(std::move(head));
  }
  if (cfg.heads.empty()) throw ConfigError("model.heads must not be empty");
  return cfg;
}

inline TrainConfig parse_train_config(const json& j) {
  expect_object(j, "train");
  reject_unknown_keys(
      j, "train",
      {"epochs", "batch_size", "lr", "lr_decay_factor", "lr_decay_interval",
       "lr_theta", "weight_decay", "theta_weight_decay", "theta_drift",
       "theta_init", "target_sparsity", "lambda", "window_capacity",
       "warmup_epochs", "seed", "pruner", "prune_rounds",
       "prune_fraction_per_round"});
  TrainConfig cfg;
  if (j.contains("epochs")) cfg.epochs = get_size(j["epochs"], "train.epochs");
  if (j.contains("batch_size"))
    cfg.batch_size = get_size(j["batch_size"], "train.batch_size");
  if (j.contains("lr")) cfg.lr = get_number(j["lr"], "train.lr");
  if (j.contains("lr_decay_factor"))
    cfg.lr_decay_factor =
        get_number(j["lr_decay_factor"], "train.lr_decay_factor");
  if (j.contains("lr_decay_interval"))
    cfg.lr_decay_interval =
        get_size(j["lr_decay_interval"], "train.lr_decay_interval");
  if (j.contains("lr_theta"))
    cfg.lr_theta = get_number(j["lr_theta"], "train.lr_theta");
  if (j.contains("weight_decay"))
    cfg.weight_decay = get_number(j["weight_decay"], "train.weight_decay");
  if (j.contains("theta_weight_decay"))
    cfg.theta_weight_decay =
        get_number(j["theta_weight_decay"], "train.theta_weight_decay");
  if (j.contains("theta_drift"))
    cfg.theta_drift = get_number(j["theta_drift"], "train.theta_drift");
  if (j.contains("theta_init"))
    cfg.theta_init = get_number(j["theta_init"], "train.theta_init");
  if (j.contains("target_sparsity"))
    cfg.target_sparsity =
        get_number(j["target_sparsity"], "train.target_sparsity");
  if (j.contains("lambda")) cfg.lambda = get_number(j["lambda"], "train.lambda");
  if (j.contains("window_capacity"))
    cfg.window_capacity =
        get_size(j["window_capacity"], "train.window_capacity");
  if (j.contains("warmup_epochs"))
    cfg.warmup_epochs = get_size(j["warmup_epochs"], "train.warmup_epochs");
  if (j.contains("seed")) cfg.seed = get_u64(j["seed"], "train.seed");
  if (j.contains("pruner"))
    cfg.pruner_kind = parse_pruner_kind(get_string(j["pruner"], "train.pruner"));
  if (j.contains("prune_rounds"))
    cfg.prune_rounds = get_size(j["prune_rounds"], "train.prune_rounds");
  if (j.contains("prune_fraction_per_round"))
    cfg.prune_fraction_per_round = get_number(j["prune_fraction_per_round"],
                                              "train.prune_fraction_per_round");
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::expect_object(j, "config");
  detail::reject_unknown_keys(j, "config", {"data", "model", "train", "sweep"});
  if (!j.contains("data") || !j.contains("model") || !j.contains("train"))
    throw ConfigError("config needs data, model, and train sections");
  RunConfig cfg;
  cfg.data = detail::parse_data_config(j["data"]);
  cfg.model = detail::parse_model_config(j["model"]);
  cfg.train = detail::parse_train_config(j["train"]);
  if (j.contains("sweep")) {
    detail::expect_object(j["sweep"], "sweep");
    detail::reject_unknown_keys(j["sweep"], "sweep", {"seeds"});
    if (j["sweep"].contains("seeds")) {
      if (!j["sweep"]["seeds"].is_array())
        throw ConfigError("sweep.seeds must be an array");
      for (const auto& s : j["sweep"]["seeds"])
        cfg.sweep_seeds.push_back(detail::get_u64(s, "sweep.seeds entry"));
    }
  }
  return cfg;
}

// Canonical JSON with every field materialized; parse(run_config_to_json(c))
// reproduces c exactly.
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["data"]["seed"] = cfg.data.seed;
  j["data"]["n"] = cfg.data.n;
  j["data"]["input_dim"] = cfg.data.input_dim;
  j["data"]["latent_dim"] = cfg.data.latent_dim;
  j["data"]["train_fraction"] = cfg.data.train_fraction;
  if (!cfg.data.path.empty()) j["data"]["path"] = cfg.data.path;
  j["data"]["tasks"] = nlohmann::json::array();
  for (const auto& t : cfg.data.tasks)
    j["data"]["tasks"].push_back({{"name", t.name},
                                  {"kind", task_kind_name(t.kind)},
                                  {"output_dim", t.output_dim},
                                  {"noise", t.noise_level}});
  j["model"]["backbone_widths"] = cfg.model.backbone_widths;
  j["model"]["heads"] = nlohmann::json::array();
  for (const auto& h : cfg.model.heads) {
    nlohmann::json hj = {{"name", h.name}, {"hidden", h.hidden}};
    if (!h.loss.empty()) hj["loss"] = h.loss;
    j["model"]["heads"].push_back(std::move(hj));
  }
  auto& t = j["train"];
  t["epochs"] = cfg.train.epochs;
  t["batch_size"] = cfg.train.batch_size;
  t["lr"] = cfg.train.lr;
  t["lr_decay_factor"] = cfg.train.lr_decay_factor;
  t["lr_decay_interval"] = cfg.train.lr_decay_interval;
  t["lr_theta"] = cfg.train.lr_theta;
  t["weight_decay"] = cfg.train.weight_decay;
  t["theta_weight_decay"] = cfg.train.theta_weight_decay;
  t["theta_drift"] = cfg.train.theta_drift;
  t["theta_init"] = cfg.train.theta_init;
  t["target_sparsity"] = cfg.train.target_sparsity;
  t["lambda"] = cfg.train.lambda;
  t["window_capacity"] = cfg.train.window_capacity;
  t["warmup_epochs"] = cfg.train.warmup_epochs;
  t["seed"] = cfg.train.seed;
  t["pruner"] = pruner_kind_name(cfg.train.pruner_kind);
  t["prune_rounds"] = cfg.train.prune_rounds;
  t["prune_fraction_per_round"] = cfg.train.prune_fraction_per_round;
  if (!cfg.sweep_seeds.empty()) j["sweep"]["seeds"] = cfg.sweep_seeds;
  return j;
}

inline nlohmann::json parse_json_text(const std::string& text,
                                      const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + what + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(parse_json_text(io::read_text_file(path), path));
}

// --override key.path=value; the value is parsed as a JSON literal and falls
// back to a plain string, then the whole config is re-validated.
inline void apply_override(nlohmann::json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }

  nlohmann::json* cursor = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override has an empty key: " + spec);
    if (dot == std::string::npos) {
      (*cursor)[key] = value;
      return;
    }
    cursor = &(*cursor)[key];
    start = dot + 1;
  }
}

// Produces the dataset a config describes, loading when a path is given.
inline SynthDataset make_dataset(const DataConfig& cfg) {
  if (!cfg.path.empty()) {
    SynthDataset ds = load_dataset(cfg.path);
    if (!cfg.tasks.empty()) {
      if (ds.task_count() != cfg.tasks.size())
        throw ConfigError("loaded dataset has " +
                          std::to_string(ds.task_count()) +
                          " tasks but the config lists " +
                          std::to_string(cfg.tasks.size()));
      for (std::size_t t = 0; t < cfg.tasks.size(); ++t)
        if (ds.tasks[t].name != cfg.tasks[t].name)
          throw ConfigError("loaded dataset task '" + ds.tasks[t].name +
                            "' does not match config task '" +
                            cfg.tasks[t].name + "'");
    }
    return ds;
  }
  return generate_dataset(cfg.seed, cfg.n, cfg.input_dim, cfg.tasks,
                          cfg.latent_dim, cfg.train_fraction);
}

inline LossKind default_loss_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::Regression: return LossKind::L1;
    case TaskKind::Classification: return LossKind::CrossEntropy;
    case TaskKind::Direction: return LossKind::NegCosine;
  }
  throw ConfigError("invalid task kind");
}

// Binds the model section to the dataset: heads must line up with tasks by
// name and order; output widths come from the tasks themselves.
inline ModelSpec make_model_spec(const ModelConfig& model,
                                 const SynthDataset& ds) {
  if (model.heads.size() != ds.task_count())
    throw ConfigError("model lists " + std::to_string(model.heads.size()) +
                      " heads for " + std::to_string(ds.task_count()) +
                      " tasks");
  ModelSpec spec;
  spec.input_dim = ds.input_dim;
  spec.backbone_widths = model.backbone_widths;
  const std::size_t backbone_out =
      spec.backbone_widths.empty() ? spec.input_dim
                                   : spec.backbone_widths.back();
  for (std::size_t t = 0; t < model.heads.size(); ++t) {
    const auto& head = model.heads[t];
    const auto& task = ds.tasks[t];
    if (head.name != task.name)
      throw ConfigError("head '" + head.name + "' does not match task '" +
                        task.name + "' (heads must follow task order)");
    HeadSpec hs;
    hs.name = head.name;
    hs.input_dim = backbone_out;
    hs.widths = head.hidden;
    hs.widths.push_back(task.output_dim);
    hs.loss = head.loss.empty() ? default_loss_for(task.kind)
                                : parse_loss_kind(head.loss);
    spec.heads.push_back(std::move(hs));
  }
  return spec;
}

}  // namespace adapmtl
