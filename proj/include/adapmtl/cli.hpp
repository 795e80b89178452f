#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adapmtl/checkpoint.hpp"
#include "adapmtl/common.hpp"
#include "adapmtl/config.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/log.hpp"
#include "adapmtl/metrics.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"
#include "adapmtl/sparse.hpp"
#include "adapmtl/synth_data.hpp"
#include "adapmtl/trainer.hpp"

// Subcommand bodies for the amtl binary.  Each cmd_* throws the library's
// error types; guarded() maps them onto the exit-code taxonomy:
// 0 success, 2 configuration, 3 divergence, 4 I/O or data, 5 state.
namespace adapmtl::cli {

template <typename F>
int guarded(F&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const NumericError& e) {
    log::error(e.what());
    return 3;
  } catch (const DataError& e) {
    log::error(e.what());
    return 4;
  } catch (const StateError& e) {
    log::error(e.what());
    return 5;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline void write_losses_csv(const std::string& path, const RunLog& log) {
  std::ostringstream ss;
  ss << "epoch,task,train_loss,eval_metric,eval_value,lr\n";
  for (const auto& e : log.epochs)
    for (std::size_t t = 0; t < log.task_names.size(); ++t)
      ss << e.epoch << "," << log.task_names[t] << ","
         << fmt(e.train_losses[t]) << "," << log.eval_metric_names[t] << ","
         << fmt(e.eval_metrics[t]) << "," << fmt(e.lr) << "\n";
  io::write_text_file(path, ss.str());
}

inline void write_betas_csv(const std::string& path, const RunLog& log) {
  std::ostringstream ss;
  ss << "epoch,task,window_mad,current_loss,beta\n";
  for (const auto& e : log.epochs)
    for (std::size_t t = 0; t < log.task_names.size(); ++t)
      ss << e.epoch << "," << log.task_names[t] << ","
         << fmt(e.window_mads[t]) << "," << fmt(e.window_values[t]) << ","
         << fmt(e.betas[t]) << "\n";
  io::write_text_file(path, ss.str());
}

inline void write_sparsity_csv(const std::string& path, const RunLog& log) {
  std::ostringstream ss;
  ss << "epoch,component,nnz,total,sparsity\n";
  for (const auto& e : log.epochs) {
    for (const auto& row : e.sparsity.rows)
      ss << e.epoch << "," << row.component << "," << row.nnz << ","
         << row.total << "," << fmt(row.sparsity) << "\n";
    ss << e.epoch << ",overall," << e.sparsity.nnz << "," << e.sparsity.total
       << "," << fmt(e.sparsity.overall) << "\n";
  }
  io::write_text_file(path, ss.str());
}

inline void write_thetas_csv(const std::string& path, const RunLog& log) {
  std::ostringstream ss;
  ss << "epoch,component,theta,alpha\n";
  for (const auto& e : log.epochs)
    for (std::size_t c = 0; c < log.component_names.size(); ++c)
      ss << e.epoch << "," << log.component_names[c] << ","
         << fmt(e.thetas[c]) << "," << fmt(sigmoid(e.thetas[c])) << "\n";
  io::write_text_file(path, ss.str());
}

inline nlohmann::json sparsity_json(const SparsitySnapshot& snap) {
  nlohmann::json j;
  j["epoch"] = snap.epoch;
  j["overall"] = snap.overall;
  j["nnz"] = snap.nnz;
  j["total"] = snap.total;
  j["components"] = nlohmann::json::array();
  for (const auto& row : snap.rows)
    j["components"].push_back({{"name", row.component},
                               {"nnz", row.nnz},
                               {"total", row.total},
                               {"sparsity", row.sparsity}});
  return j;
}

inline nlohmann::json run_report_json(const RunConfig& cfg, const RunLog& log,
                                      std::uint64_t config_hash) {
  nlohmann::json j;
  j["target_sparsity"] = cfg.train.target_sparsity;
  j["pruner"] = pruner_kind_name(cfg.train.pruner_kind);
  j["seed"] = cfg.train.seed;
  j["epochs"] = cfg.train.epochs;
  j["iterations"] = log.iterations;
  j["frozen"] = log.frozen;
  j["freeze_epoch"] = log.frozen ? nlohmann::json(log.freeze_epoch)
                                 : nlohmann::json(nullptr);
  j["config_hash"] = std::to_string(config_hash);
  j["tasks"] = log.task_names;
  j["components"] = log.component_names;
  j["eval_metric_names"] = log.eval_metric_names;
  std::vector<bool> lower(log.eval_lower_is_better.begin(),
                          log.eval_lower_is_better.end());
  j["eval_lower_is_better"] = lower;
  if (!log.epochs.empty()) {
    const auto& last = log.epochs.back();
    j["final_eval_metrics"] = last.eval_metrics;
    j["final_train_losses"] = last.train_losses;
    j["final_betas"] = last.betas;
    j["final_thetas"] = last.thetas;
    std::vector<double> alphas;
    for (double th : last.thetas) alphas.push_back(sigmoid(th));
    j["final_alphas"] = alphas;
  }
  j["sparsity"] = sparsity_json(log.report.sparsity);
  j["param_count"] = log.report.param_count;
  j["dense_flops"] = log.report.flops.dense_flops;
  j["sparse_flops"] = log.report.flops.sparse_flops;
  j["flops_ratio"] =
      log.report.flops.dense_flops == 0
          ? 0.0
          : static_cast<double>(log.report.flops.sparse_flops) /
                static_cast<double>(log.report.flops.dense_flops);
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  io::write_text_file(path, j.dump(2) + "\n");
}

// One training run into an existing directory.
inline nlohmann::json run_single(const RunConfig& cfg, const SynthDataset& ds,
                                 const std::string& dir) {
  const ModelSpec spec = make_model_spec(cfg.model, ds);
  MultitaskModel model = build_model(spec, cfg.train.theta_init,
                                     cfg.train.seed);
  Trainer trainer(model, ds, cfg.train);
  const RunLog log = trainer.run();

  write_losses_csv(dir + "/losses.csv", log);
  write_betas_csv(dir + "/betas.csv", log);
  write_sparsity_csv(dir + "/sparsity.csv", log);
  write_thetas_csv(dir + "/thetas.csv", log);
  write_checkpoint(dir + "/checkpoint.amtc", trainer);
  write_json_file(dir + "/config.json", run_config_to_json(cfg));
  const auto report =
      run_report_json(cfg, log, config_fingerprint(cfg.train, spec, ds));
  write_json_file(dir + "/report.json", report);
  log::info("run complete: " + dir + " (sparsity " +
            std::to_string(log.report.sparsity.overall) + ", frozen " +
            (log.frozen ? "yes" : "no") + ")");
  return report;
}

inline const std::vector<std::string>& train_key_names() {
  static const std::vector<std::string> keys = {
      "epochs", "batch_size", "lr", "lr_decay_factor", "lr_decay_interval",
      "lr_theta", "weight_decay", "theta_weight_decay", "theta_drift",
      "theta_init", "target_sparsity", "lambda", "window_capacity",
      "warmup_epochs", "seed", "pruner", "prune_rounds",
      "prune_fraction_per_round"};
  return keys;
}

// Bare train-section keys are accepted without the "train." prefix.
inline std::string qualify_override(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) return spec;
  const std::string key = spec.substr(0, eq);
  if (key.find('.') != std::string::npos) return spec;
  for (const auto& k : train_key_names())
    if (k == key) return "train." + spec;
  return spec;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v.size() % 2 == 1
             ? v[v.size() / 2]
             : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace detail

inline int cmd_gen_data(const std::string& config_path,
                        const std::uint64_t* seed, const std::string& out) {
  return guarded([&] {
    auto j = parse_json_text(io::read_text_file(config_path), config_path);
    if (seed != nullptr) apply_override(j, "data.seed=" + std::to_string(*seed));
    const RunConfig cfg = parse_run_config(j);
    if (cfg.data.tasks.empty())
      throw ConfigError("gen-data needs data.tasks in the config");
    const SynthDataset ds =
        generate_dataset(cfg.data.seed, cfg.data.n, cfg.data.input_dim,
                         cfg.data.tasks, cfg.data.latent_dim,
                         cfg.data.train_fraction);
    save_dataset(ds, out);
    log::info("wrote " + out + " (n=" + std::to_string(ds.n) + ", d=" +
              std::to_string(ds.input_dim) + ", tasks=" +
              std::to_string(ds.task_count()) + ")");
  });
}

inline int cmd_train(const std::string& config_path, const std::uint64_t* seed,
                     const std::vector<std::string>& overrides,
                     const std::string& out_dir) {
  return guarded([&] {
    auto j = parse_json_text(io::read_text_file(config_path), config_path);
    for (const auto& o : overrides)
      apply_override(j, detail::qualify_override(o));
    if (seed != nullptr)
      apply_override(j, "train.seed=" + std::to_string(*seed));
    RunConfig cfg = parse_run_config(j);

    namespace fs = std::filesystem;
    if (!fs::exists(out_dir) || !fs::is_directory(out_dir))
      throw DataError("output directory does not exist: " + out_dir);

    const SynthDataset ds = make_dataset(cfg.data);

    // --seed pins a single run; otherwise a configured sweep fans out into
    // per-seed subdirectories.
    if (cfg.sweep_seeds.empty() || seed != nullptr) {
      detail::run_single(cfg, ds, out_dir);
      return;
    }

    nlohmann::json sweep;
    sweep["seeds"] = cfg.sweep_seeds;
    sweep["runs"] = nlohmann::json::array();
    std::vector<double> sparsities;
    for (const std::uint64_t s : cfg.sweep_seeds) {
      RunConfig run_cfg = cfg;
      run_cfg.train.seed = s;
      const std::string dir = out_dir + "/seed_" + std::to_string(s);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
      auto report = detail::run_single(run_cfg, ds, dir);
      sparsities.push_back(report["sparsity"]["overall"].get<double>());
      sweep["runs"].push_back({{"seed", s},
                               {"dir", "seed_" + std::to_string(s)},
                               {"overall_sparsity", sparsities.back()},
                               {"frozen", report["frozen"]},
                               {"final_eval_metrics",
                                report.contains("final_eval_metrics")
                                    ? report["final_eval_metrics"]
                                    : nlohmann::json::array()}});
    }
    sweep["median_overall_sparsity"] = detail::median(sparsities);
    detail::write_json_file(out_dir + "/sweep.json", sweep);
  });
}

inline int cmd_export(const std::string& checkpoint_path,
                      const std::string& out, bool force) {
  return guarded([&] {
    namespace fs = std::filesystem;
    std::string path = checkpoint_path;
    if (fs::is_directory(path)) path += "/checkpoint.amtc";
    const CheckpointData d = read_checkpoint(path);
    MultitaskModel model = model_from_checkpoint(d);
    Pruner pruner(d.kind, model, 0.0);
    pruner.restore_state(d.frozen, d.freeze_epoch, d.hard_masks);
    if (force && !d.frozen) pruner.force_freeze(model, d.epoch);
    const SparseModel sm = export_sparse(model, pruner);
    save_sparse_model(out, sm);
    for (const auto* c : sm.components()) {
      const double sp =
          c->dense_count() == 0
              ? 0.0
              : 1.0 - static_cast<double>(c->nnz()) /
                          static_cast<double>(c->dense_count());
      std::printf("%-12s nnz %8zu / %8zu  sparsity %.4f\n", c->name.c_str(),
                  c->nnz(), c->dense_count(), sp);
    }
    log::info("wrote " + out);
  });
}

inline int cmd_report(const std::string& table_path,
                      const std::string& baseline,
                      const std::string& convention_name,
                      const std::vector<std::string>& groups,
                      const std::string& out) {
  return guarded([&] {
    if (!std::filesystem::exists(table_path))
      throw DataError("no such table: " + table_path);

    nlohmann::json j;
    try {
      const DeltaConvention convention = parse_delta_convention(convention_name);
      const MetricTable table = load_metric_table_csv(table_path, baseline);

      // Group specs look like name=metric1,metric2; default is one group
      // per metric column.
      std::vector<std::pair<std::string, std::vector<std::string>>> grouping;
      if (groups.empty()) {
        for (const auto& m : table.metric_names())
          grouping.emplace_back(m, std::vector<std::string>{m});
      } else {
        for (const auto& g : groups) {
          const auto eq = g.find('=');
          if (eq == std::string::npos || eq == 0 || eq + 1 >= g.size())
            throw ConfigError("group must look like name=m1,m2: " + g);
          std::vector<std::string> metrics;
          std::string rest = g.substr(eq + 1);
          std::size_t start = 0;
          while (start <= rest.size()) {
            const auto comma = rest.find(',', start);
            const std::string tok = rest.substr(
                start,
                comma == std::string::npos ? std::string::npos : comma - start);
            if (tok.empty())
              throw ConfigError("group has an empty metric name: " + g);
            metrics.push_back(tok);
            if (comma == std::string::npos) break;
            start = comma + 1;
          }
          grouping.emplace_back(g.substr(0, eq), std::move(metrics));
        }
      }

      j["table"] = table_path;
      j["baseline"] = baseline;
      j["convention"] = delta_convention_name(convention);
      j["groups"] = nlohmann::json::array();
      for (const auto& [name, metrics] : grouping)
        j["groups"].push_back({{"name", name}, {"metrics", metrics}});
      j["rows"] = nlohmann::json::array();

      std::printf("%-18s", "model");
      for (const auto& [name, metrics] : grouping)
        std::printf(" %12s", name.c_str());
      std::printf(" %12s\n", "delta_T");
      for (const auto& row : table.row_names()) {
        if (row == baseline) continue;
        std::vector<double> task_deltas;
        for (const auto& [name, metrics] : grouping)
          task_deltas.push_back(delta_task(table, row, metrics, convention));
        const double overall = delta_overall(task_deltas);
        std::printf("%-18s", row.c_str());
        for (double d : task_deltas) std::printf(" %12.4f", d);
        std::printf(" %12.4f\n", overall);
        j["rows"].push_back({{"model", row},
                             {"task_deltas", task_deltas},
                             {"overall_delta", overall}});
      }
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }

    const std::string json_path =
        out.empty() ? table_path + ".report.json" : out;
    detail::write_json_file(json_path, j);
    log::info("wrote " + json_path);
  });
}

inline int cmd_bench(const std::string& model_path,
                     const std::string& checkpoint_path, std::size_t batch,
                     std::size_t repeats, std::uint64_t seed,
                     const std::string& out) {
  return guarded([&] {
    const SparseModel sm = load_sparse_model(model_path);
    SparseModel raw;
    const SparseModel* dense = nullptr;
    if (!checkpoint_path.empty()) {
      const CheckpointData d = read_checkpoint(checkpoint_path);
      const MultitaskModel dense_model = model_from_checkpoint(d);
      raw = raw_dense_view(dense_model);
      dense = &raw;
    }
    const BenchResult res = bench_sparse_model(sm, dense, batch, repeats, seed);

    std::printf("%-16s %14s %14s %10s\n", "path", "muladds", "median_ns",
                "ratio");
    std::printf("%-16s %14zu %14.0f %10s\n", "sparse", res.sparse_muladds,
                res.sparse_ns, "");
    std::printf("%-16s %14zu %14.0f %10.4f\n", "dense", res.dense_muladds,
                res.dense_ns, res.muladd_ratio);

    nlohmann::json j;
    j["model"] = model_path;
    j["batch"] = res.batch;
    j["repeats"] = res.repeats;
    j["sparse_muladds"] = res.sparse_muladds;
    j["dense_muladds"] = res.dense_muladds;
    j["muladd_ratio"] = res.muladd_ratio;
    j["sparse_ns"] = res.sparse_ns;
    j["dense_ns"] = res.dense_ns;
    j["speedup"] = res.sparse_ns > 0.0 ? res.dense_ns / res.sparse_ns : 0.0;
    if (!out.empty()) detail::write_json_file(out, j);
  });
}

}  // namespace adapmtl::cli
