#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adapmtl/common.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/tensor.hpp"

// Synthetic multitask datasets: a shared nonlinear latent code feeds one
// teacher transform per task, so tasks are related but not identical.
namespace adapmtl {

enum class TaskKind { Regression, Classification, Direction };

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "regression") return TaskKind::Regression;
  if (s == "classification") return TaskKind::Classification;
  if (s == "direction") return TaskKind::Direction;
  throw ConfigError("unknown task kind: " + s);
}

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Regression: return "regression";
    case TaskKind::Classification: return "classification";
    case TaskKind::Direction: return "direction";
  }
  throw ConfigError("invalid task kind value");
}

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::Regression;
  std::size_t output_dim = 1;
  double noise_level = 0.0;
};

// Width of one stored target row. Classification keeps a single class id;
// the other kinds keep the full output vector.
inline std::size_t target_width(const TaskSpec& spec) {
  return spec.kind == TaskKind::Classification ? 1 : spec.output_dim;
}

struct SynthDataset {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t input_dim = 0;
  std::size_t latent_dim = 0;
  std::vector<TaskSpec> tasks;
  std::vector<double> inputs;                  // n x input_dim, row-major
  std::vector<double> mixing;                  // input_dim x latent_dim
  std::vector<std::vector<double>> teachers;   // per task: latent_dim x output_dim
  std::vector<std::vector<double>> targets;    // per task: n x target_width
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t task_count() const { return tasks.size(); }

  const std::vector<std::size_t>& split(const std::string& name) const {
    if (name == "train") return train_indices;
    if (name == "test") return test_indices;
    throw DataError("unknown split: " + name);
  }
};

namespace detail {

// Box-Muller on two explicit 53-bit uniforms. Exactly two generator calls per
// draw, so the stream layout below is easy to keep stable.
inline double gaussian(std::mt19937_64& rng) {
  const double u1 =
      (static_cast<double>(rng() >> 11) + 1.0) * (1.0 / 9007199254740993.0);
  const double u2 = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng() % i]);
}

inline void validate_task_specs(const std::vector<TaskSpec>& tasks) {
  if (tasks.empty()) throw ConfigError("dataset needs at least one task");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty()) throw ConfigError("task name must be non-empty");
    if (!names.insert(t.name).second)
      throw ConfigError("duplicate task name: " + t.name);
    if (t.output_dim == 0)
      throw ConfigError("task " + t.name + ": output_dim must be positive");
    if (t.kind == TaskKind::Classification && t.output_dim < 2)
      throw ConfigError("task " + t.name +
                        ": classification needs at least 2 classes");
    if (!(t.noise_level >= 0.0))
      throw ConfigError("task " + t.name + ": noise_level must be >= 0");
  }
}

}  // namespace detail

// Generation draws from a single mt19937_64 stream in a fixed order: mixing
// matrix, then each teacher, then all inputs, then per-task noise, then the
// split permutation. Same seed and arguments give byte-identical datasets.
inline SynthDataset generate_dataset(std::uint64_t seed, std::size_t n,
                                     std::size_t input_dim,
                                     std::vector<TaskSpec> tasks,
                                     std::size_t latent_dim = 8,
                                     double train_fraction = 0.8) {
  if (n < 10) throw ConfigError("dataset needs at least 10 samples");
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  detail::validate_task_specs(tasks);

  SynthDataset ds;
  ds.seed = seed;
  ds.n = n;
  ds.input_dim = input_dim;
  ds.latent_dim = latent_dim;
  ds.tasks = std::move(tasks);

  std::mt19937_64 rng(seed);
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  ds.mixing.resize(input_dim * latent_dim);
  for (auto& v : ds.mixing) v = detail::gaussian(rng) * mix_scale;

  ds.teachers.resize(ds.tasks.size());
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    ds.teachers[t].resize(latent_dim * ds.tasks[t].output_dim);
    for (auto& v : ds.teachers[t]) v = detail::gaussian(rng);
  }

  ds.inputs.resize(n * input_dim);
  for (auto& v : ds.inputs) v = detail::gaussian(rng);

  // Latent codes, computed once and reused by every task.
  std::vector<double> latent(n * latent_dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < latent_dim; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < input_dim; ++k)
        acc += ds.inputs[i * input_dim + k] * ds.mixing[k * latent_dim + j];
      latent[i * latent_dim + j] = std::tanh(acc);
    }

  ds.targets.resize(ds.tasks.size());
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    const auto& spec = ds.tasks[t];
    const std::size_t out = spec.output_dim;
    std::vector<double> raw(n * out, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < latent_dim; ++k)
          acc += latent[i * latent_dim + k] * ds.teachers[t][k * out + j];
        raw[i * out + j] = acc;
      }
    for (auto& v : raw) v += spec.noise_level * detail::gaussian(rng);

    ds.targets[t].assign(n * target_width(spec), 0.0);
    switch (spec.kind) {
      case TaskKind::Regression:
        ds.targets[t] = raw;
        break;
      case TaskKind::Classification:
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t best = 0;
          for (std::size_t j = 1; j < out; ++j)
            if (raw[i * out + j] > raw[i * out + best]) best = j;
          ds.targets[t][i] = static_cast<double>(best);
        }
        break;
      case TaskKind::Direction:
        for (std::size_t i = 0; i < n; ++i) {
          double norm = 0.0;
          for (std::size_t j = 0; j < out; ++j)
            norm += raw[i * out + j] * raw[i * out + j];
          norm = std::sqrt(norm);
          if (norm < 1e-12) {
            ds.targets[t][i * out] = 1.0;
          } else {
            for (std::size_t j = 0; j < out; ++j)
              ds.targets[t][i * out + j] = raw[i * out + j] / norm;
          }
        }
        break;
    }
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  detail::fisher_yates(perm, rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n)
    throw ConfigError("train_fraction leaves an empty split");
  ds.train_indices.assign(perm.begin(), perm.begin() + n_train);
  ds.test_indices.assign(perm.begin() + n_train, perm.end());
  return ds;
}

// Index batches for one epoch: a seeded shuffle of the split, cut into
// batch_size runs with the short remainder kept.
inline std::vector<std::vector<std::size_t>> batch_indices(
    const std::vector<std::size_t>& split, std::size_t batch_size,
    std::uint64_t epoch_seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size > split.size())
    throw ConfigError("batch_size exceeds split size");
  std::vector<std::size_t> order = split;
  std::mt19937_64 rng(epoch_seed);
  detail::fisher_yates(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

struct Batch {
  Tensor x;                     // [m, input_dim]
  std::vector<Tensor> targets;  // per task, [m, target_width]
};

inline Batch materialize_batch(const SynthDataset& ds,
                               const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t m = indices.size();
  std::vector<double> x(m * ds.input_dim);
  for (std::size_t r = 0; r < m; ++r) {
    if (indices[r] >= ds.n) throw DataError("batch index out of range");
    for (std::size_t c = 0; c < ds.input_dim; ++c)
      x[r * ds.input_dim + c] = ds.inputs[indices[r] * ds.input_dim + c];
  }
  Batch b;
  b.x = Tensor::leaf({m, ds.input_dim}, std::move(x));
  for (std::size_t t = 0; t < ds.task_count(); ++t) {
    const std::size_t w = target_width(ds.tasks[t]);
    std::vector<double> y(m * w);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c)
        y[r * w + c] = ds.targets[t][indices[r] * w + c];
    // Class labels ride as a rank-1 vector; everything else keeps [rows, w].
    if (ds.tasks[t].kind == TaskKind::Classification)
      b.targets.push_back(Tensor::leaf({m}, std::move(y)));
    else
      b.targets.push_back(Tensor::leaf({m, w}, std::move(y)));
  }
  return b;
}

// On-disk layout: the binary file carries magic "AMTL", a u32 version, then
// raw little-endian f64 segments (inputs, mixing, per task teacher then
// targets). Everything structural lives in a JSON sidecar at <path>.json.
inline constexpr char kDatasetMagic[4] = {'A', 'M', 'T', 'L'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const SynthDataset& ds, const std::string& path) {
  auto os = io::open_out(path);
  io::write_magic(os, kDatasetMagic);
  io::write_u32(os, kDatasetVersion);
  io::write_f64_array(os, ds.inputs);
  io::write_f64_array(os, ds.mixing);
  for (std::size_t t = 0; t < ds.task_count(); ++t) {
    io::write_f64_array(os, ds.teachers[t]);
    io::write_f64_array(os, ds.targets[t]);
  }

  nlohmann::json j;
  j["version"] = kDatasetVersion;
  j["seed"] = ds.seed;
  j["n"] = ds.n;
  j["input_dim"] = ds.input_dim;
  j["latent_dim"] = ds.latent_dim;
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : ds.tasks)
    j["tasks"].push_back({{"name", t.name},
                          {"kind", task_kind_name(t.kind)},
                          {"output_dim", t.output_dim},
                          {"noise_level", t.noise_level}});
  j["train_indices"] = ds.train_indices;
  j["test_indices"] = ds.test_indices;
  io::write_text_file(path + ".json", j.dump(2) + "\n");
}

inline SynthDataset load_dataset(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad dataset sidecar " + path + ".json: " + e.what());
  }

  SynthDataset ds;
  try {
    if (j.at("version").get<std::uint32_t>() != kDatasetVersion)
      throw DataError("unsupported dataset version in sidecar");
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.n = j.at("n").get<std::size_t>();
    ds.input_dim = j.at("input_dim").get<std::size_t>();
    ds.latent_dim = j.at("latent_dim").get<std::size_t>();
    for (const auto& jt : j.at("tasks")) {
      TaskSpec t;
      t.name = jt.at("name").get<std::string>();
      t.kind = parse_task_kind(jt.at("kind").get<std::string>());
      t.output_dim = jt.at("output_dim").get<std::size_t>();
      t.noise_level = jt.at("noise_level").get<double>();
      ds.tasks.push_back(std::move(t));
    }
    ds.train_indices = j.at("train_indices").get<std::vector<std::size_t>>();
    ds.test_indices = j.at("test_indices").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad dataset sidecar " + path + ".json: " + e.what());
  }
  detail::validate_task_specs(ds.tasks);

  for (std::size_t i : ds.train_indices)
    if (i >= ds.n) throw DataError("train index out of range in sidecar");
  for (std::size_t i : ds.test_indices)
    if (i >= ds.n) throw DataError("test index out of range in sidecar");

  auto is = io::open_in(path);
  io::expect_magic(is, kDatasetMagic, "dataset");
  if (io::read_u32(is, "dataset version") != kDatasetVersion)
    throw DataError("unsupported dataset version: " + path);
  ds.inputs = io::read_f64_array(is, ds.n * ds.input_dim, "inputs");
  ds.mixing = io::read_f64_array(is, ds.input_dim * ds.latent_dim, "mixing");
  for (const auto& t : ds.tasks) {
    ds.teachers.push_back(
        io::read_f64_array(is, ds.latent_dim * t.output_dim, "teacher"));
    ds.targets.push_back(
        io::read_f64_array(is, ds.n * target_width(t), "targets"));
  }
  if (is.peek() != std::istream::traits_type::eof())
    throw DataError("trailing bytes after dataset payload: " + path);
  return ds;
}

}  // namespace adapmtl
