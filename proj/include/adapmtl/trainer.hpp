#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adapmtl/common.hpp"
#include "adapmtl/log.hpp"
#include "adapmtl/metrics.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"
#include "adapmtl/synth_data.hpp"
#include "adapmtl/tensor.hpp"
#include "adapmtl/weighting.hpp"

// The training loop: soft-thresholded forward, weighted multitask loss,
// masked weight updates, threshold updates, beta refresh, and mask freezing.
namespace adapmtl {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double lr_decay_factor = 1.0;
  std::size_t lr_decay_interval = 4000;  // iterations per decay step
  double lr_theta = 1e-2;
  double weight_decay = 0.0;
  double theta_weight_decay = 0.0;
  double theta_drift = 0.0;
  double theta_init = -6.0;
  double target_sparsity = 0.0;
  double lambda = 1.0;
  std::size_t window_capacity = 400;
  std::size_t warmup_epochs = 0;
  std::uint64_t seed = 0;
  PrunerKind pruner_kind = PrunerKind::AdapMtl;
  std::size_t prune_rounds = 1;          // magnitude-iterative schedule
  double prune_fraction_per_round = 0.0; // 0 derives the fraction from target

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(lr_theta > 0.0)) throw ConfigError("lr_theta must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
      throw ConfigError("lr_decay_factor must lie in (0, 1]");
    if (lr_decay_interval < 1)
      throw ConfigError("lr_decay_interval must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(theta_weight_decay >= 0.0))
      throw ConfigError("theta_weight_decay must be >= 0");
    if (!std::isfinite(theta_drift))
      throw ConfigError("theta_drift must be finite");
    if (!std::isfinite(theta_init))
      throw ConfigError("theta_init must be finite");
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0))
      throw ConfigError("target_sparsity must lie in [0, 1)");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (window_capacity < 1) throw ConfigError("window_capacity must be >= 1");
    if (prune_rounds < 1) throw ConfigError("prune_rounds must be >= 1");
    if (!(prune_fraction_per_round >= 0.0 && prune_fraction_per_round < 1.0))
      throw ConfigError("prune_fraction_per_round must lie in [0, 1)");
  }
};

// Canonical textual form of everything a checkpoint must agree on; hashed
// and stored so a resume against a different setup is rejected.
inline std::string config_fingerprint_text(const TrainConfig& cfg,
                                           const ModelSpec& spec,
                                           const SynthDataset& ds) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "epochs=" << cfg.epochs << ";batch=" << cfg.batch_size
     << ";lr=" << cfg.lr << ";decay=" << cfg.lr_decay_factor << "/"
     << cfg.lr_decay_interval << ";lr_theta=" << cfg.lr_theta
     << ";wd=" << cfg.weight_decay << ";theta_wd=" << cfg.theta_weight_decay
     << ";drift=" << cfg.theta_drift << ";theta0=" << cfg.theta_init
     << ";s=" << cfg.target_sparsity << ";lambda=" << cfg.lambda
     << ";window=" << cfg.window_capacity << ";warmup=" << cfg.warmup_epochs
     << ";seed=" << cfg.seed << ";pruner=" << pruner_kind_name(cfg.pruner_kind)
     << ";rounds=" << cfg.prune_rounds
     << ";round_frac=" << cfg.prune_fraction_per_round;
  ss << "|model:d=" << spec.input_dim << ";bb=";
  for (auto w : spec.backbone_widths) ss << w << ",";
  for (const auto& h : spec.heads) {
    ss << ";head=" << h.name << ":" << h.input_dim << ":";
    for (auto w : h.widths) ss << w << ",";
    ss << ":" << loss_kind_name(h.loss);
  }
  ss << "|data:seed=" << ds.seed << ";n=" << ds.n << ";d=" << ds.input_dim
     << ";latent=" << ds.latent_dim;
  for (const auto& t : ds.tasks)
    ss << ";task=" << t.name << ":" << task_kind_name(t.kind) << ":"
       << t.output_dim << ":" << t.noise_level;
  return ss.str();
}

inline std::uint64_t config_fingerprint(const TrainConfig& cfg,
                                        const ModelSpec& spec,
                                        const SynthDataset& ds) {
  return fnv1a64(config_fingerprint_text(cfg, spec, ds));
}

struct EpochLog {
  std::size_t epoch = 0;
  std::vector<double> train_losses;  // per task, mean over the epoch
  std::vector<double> eval_metrics;  // per task, on the test split
  std::vector<double> betas;         // the weights applied during this epoch
  std::vector<double> window_values; // per task, the value pushed this epoch
  std::vector<double> window_mads;   // per task, window deviation at epoch end
  std::vector<double> thetas;        // per component, at epoch end
  SparsitySnapshot sparsity;
  double lr = 0.0;
};

struct RunLog {
  std::vector<std::string> task_names;
  std::vector<std::string> component_names;
  std::vector<std::string> eval_metric_names;
  std::vector<bool> eval_lower_is_better;
  std::vector<EpochLog> epochs;
  bool frozen = false;
  std::size_t freeze_epoch = 0;
  std::size_t iterations = 0;
  RunReport report;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

inline Tensor make_loss(Tape& tape, LossKind kind, const Tensor& pred,
                        const Tensor& target) {
  switch (kind) {
    case LossKind::L1: return tape.loss_l1(pred, target);
    case LossKind::Mse: return tape.loss_mse(pred, target);
    case LossKind::CrossEntropy: return tape.loss_cross_entropy(pred, target);
    case LossKind::NegCosine: return tape.loss_neg_cosine(pred, target);
  }
  throw ConfigError("invalid loss kind");
}

// Negative-cosine losses live in [-1, 1]; shift them positive before they
// enter the weighting windows, whose arithmetic divides by the loss level.
inline double window_value(LossKind kind, double loss) {
  return kind == LossKind::NegCosine ? loss + 1.0 : loss;
}

inline void check_model_matches_dataset(const MultitaskModel& model,
                                        const SynthDataset& ds) {
  if (model.task_count() != ds.task_count())
    throw DataError("model has " + std::to_string(model.task_count()) +
                    " heads but dataset has " +
                    std::to_string(ds.task_count()) + " tasks");
  if (model.spec.input_dim != ds.input_dim)
    throw DataError("model input_dim does not match dataset");
  for (std::size_t t = 0; t < ds.task_count(); ++t) {
    const auto& head = model.spec.heads[t];
    const auto& task = ds.tasks[t];
    const std::size_t head_out = head.widths.back();
    if (head_out != task.output_dim)
      throw ConfigError("head " + head.name + " emits " +
                        std::to_string(head_out) + " values but task " +
                        task.name + " wants " +
                        std::to_string(task.output_dim));
    const bool ok =
        (task.kind == TaskKind::Classification &&
         head.loss == LossKind::CrossEntropy) ||
        (task.kind == TaskKind::Regression &&
         (head.loss == LossKind::L1 || head.loss == LossKind::Mse)) ||
        (task.kind == TaskKind::Direction && head.loss == LossKind::NegCosine);
    if (!ok)
      throw ConfigError("loss kind " + std::string(loss_kind_name(head.loss)) +
                        " does not fit task kind " + task_kind_name(task.kind) +
                        " for task " + task.name);
  }
}

}  // namespace detail

// Task-appropriate scalar scores on a split: classification accuracy
// (higher is better), regression mean L1 error (lower), direction mean
// cosine similarity (higher).
struct EvalResult {
  std::vector<double> metrics;
  std::vector<std::string> metric_names;
  std::vector<bool> lower_is_better;
};

inline EvalResult eval_shape(const SynthDataset& ds) {
  EvalResult res;
  for (const auto& task : ds.tasks) {
    switch (task.kind) {
      case TaskKind::Classification:
        res.metric_names.push_back("accuracy");
        res.lower_is_better.push_back(false);
        break;
      case TaskKind::Regression:
        res.metric_names.push_back("l1_error");
        res.lower_is_better.push_back(true);
        break;
      case TaskKind::Direction:
        res.metric_names.push_back("cosine");
        res.lower_is_better.push_back(false);
        break;
    }
  }
  return res;
}

inline EvalResult evaluate_model(MultitaskModel& model, const Pruner& pruner,
                                 const SynthDataset& ds,
                                 const std::string& split_name,
                                 std::size_t chunk_size = 256) {
  const auto& split = ds.split(split_name);
  if (split.empty()) throw DataError("empty split: " + split_name);
  const std::size_t tasks = ds.task_count();

  std::vector<double> acc(tasks, 0.0);
  for (std::size_t start = 0; start < split.size(); start += chunk_size) {
    const std::size_t stop = std::min(split.size(), start + chunk_size);
    std::vector<std::size_t> idx(split.begin() + start, split.begin() + stop);
    Tape tape;
    const auto step = pruner.effective(tape, model);
    const Batch b = materialize_batch(ds, idx);
    for (std::size_t t = 0; t < tasks; ++t) {
      const Tensor pred = forward_task(tape, model, b.x, t, &step.params);
      const auto& p = pred.values();
      const auto& y = b.targets[t].values();
      const std::size_t m = idx.size();
      const std::size_t out = ds.tasks[t].output_dim;
      switch (ds.tasks[t].kind) {
        case TaskKind::Classification: {
          for (std::size_t r = 0; r < m; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < out; ++c)
              if (p[r * out + c] > p[r * out + best]) best = c;
            if (static_cast<double>(best) == y[r]) acc[t] += 1.0;
          }
          break;
        }
        case TaskKind::Regression: {
          double s = 0.0;
          for (std::size_t i = 0; i < m * out; ++i)
            s += std::fabs(p[i] - y[i]);
          acc[t] += s / static_cast<double>(out);
          break;
        }
        case TaskKind::Direction: {
          for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0, np = 0.0, ny = 0.0;
            for (std::size_t c = 0; c < out; ++c) {
              dot += p[r * out + c] * y[r * out + c];
              np += p[r * out + c] * p[r * out + c];
              ny += y[r * out + c] * y[r * out + c];
            }
            const double denom = std::sqrt(np) * std::sqrt(ny);
            acc[t] += denom < 1e-300 ? 0.0 : dot / denom;
          }
          break;
        }
      }
    }
  }

  EvalResult res = eval_shape(ds);
  const double n = static_cast<double>(split.size());
  for (std::size_t t = 0; t < tasks; ++t) res.metrics.push_back(acc[t] / n);
  return res;
}

// Per-task deltas of a run's eval metrics against a baseline run's, using
// the table arithmetic (one metric per task, sum convention).
inline std::vector<double> eval_deltas(const EvalResult& model_eval,
                                       const EvalResult& baseline_eval,
                                       const std::vector<std::string>& tasks) {
  if (model_eval.metrics.size() != baseline_eval.metrics.size() ||
      model_eval.metrics.size() != tasks.size())
    throw DataError("eval_deltas: mismatched task counts");
  std::vector<std::string> metric_ids;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    metric_ids.push_back(tasks[t] + ":" + model_eval.metric_names[t]);
  MetricTable table(metric_ids, baseline_eval.lower_is_better, "baseline");
  table.add_row("baseline", baseline_eval.metrics);
  table.add_row("model", model_eval.metrics);
  std::vector<double> deltas;
  for (const auto& id : metric_ids)
    deltas.push_back(delta_task(table, "model", {id}, DeltaConvention::Sum));
  return deltas;
}

class Trainer {
 public:
  Trainer(MultitaskModel& model, const SynthDataset& ds, TrainConfig cfg)
      : model_(model),
        ds_(ds),
        cfg_(cfg),
        pruner_(cfg.pruner_kind, model, cfg.target_sparsity),
        weighting_(task_names(ds), cfg.window_capacity, cfg.lambda,
                   cfg.warmup_epochs, model.backbone.weight_count(),
                   head_weight_total(model)) {
    cfg_.validate();
    detail::check_model_matches_dataset(model, ds);
    if (cfg_.batch_size > ds.train_indices.size())
      throw ConfigError("batch_size exceeds the training split");
    betas_ = weighting_.betas();
    log_.task_names = task_names(ds);
    for (const auto* c : model_.components())
      log_.component_names.push_back(c->name);
    const auto shape = eval_shape(ds);
    log_.eval_metric_names = shape.metric_names;
    log_.eval_lower_is_better = shape.lower_is_better;
  }

  const TrainConfig& config() const { return cfg_; }
  MultitaskModel& model() { return model_; }
  const MultitaskModel& model() const { return model_; }
  const SynthDataset& dataset() const { return ds_; }
  Pruner& pruner() { return pruner_; }
  const Pruner& pruner() const { return pruner_; }
  WeightingState& weighting() { return weighting_; }
  const WeightingState& weighting() const { return weighting_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t iteration() const { return iter_; }
  const std::vector<double>& betas() const { return betas_; }
  const RunLog& log() const { return log_; }

  double current_lr() const {
    return cfg_.lr * std::pow(cfg_.lr_decay_factor,
                              static_cast<double>(iter_ / cfg_.lr_decay_interval));
  }

  // Used by checkpoint resume; trusts the caller to have restored the model,
  // pruner, and weighting state alongside.
  void restore_progress(std::size_t epoch, std::size_t iter,
                        std::vector<double> betas) {
    if (epoch > cfg_.epochs)
      throw StateError("checkpoint is past the configured epoch count");
    if (betas.size() != weighting_.task_count())
      throw StateError("checkpoint beta count does not match tasks");
    epoch_ = epoch;
    iter_ = iter;
    betas_ = std::move(betas);
    weighting_.restore_betas(betas_);
  }

  RunLog run() {
    run_epochs(cfg_.epochs - epoch_);
    return finish();
  }

  void run_epochs(std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      if (epoch_ >= cfg_.epochs)
        throw StateError("training already reached the configured epochs");
      train_one_epoch();
    }
  }

  RunLog finish() {
    const bool soft = cfg_.pruner_kind == PrunerKind::AdapMtl ||
                      cfg_.pruner_kind == PrunerKind::SharedThreshold;
    if (soft && model_.raw_forward_calls != 0)
      throw StateError("raw-weight forward pass detected during training");
    log_.frozen = pruner_.frozen();
    log_.freeze_epoch = pruner_.freeze_epoch();
    log_.iterations = iter_;

    const auto snap = pruner_.measure(model_, epoch_ == 0 ? 0 : epoch_ - 1);
    log_.report.sparsity = snap;
    std::size_t params = 0;
    for (const auto* c : model_.components()) params += c->param_count();
    log_.report.param_count = params;
    log_.report.flops = flops_estimate(model_, snap);
    return log_;
  }

  static std::vector<std::string> task_names(const SynthDataset& ds) {
    std::vector<std::string> names;
    for (const auto& t : ds.tasks) names.push_back(t.name);
    return names;
  }

 private:
  static std::size_t head_weight_total(const MultitaskModel& model) {
    std::size_t total = 0;
    for (const auto& h : model.heads) total += h.weight_count();
    return total;
  }

  void train_one_epoch() {
    const auto applied_betas = betas_;
    const std::uint64_t epoch_seed = detail::mix_seed(cfg_.seed, epoch_);
    const auto batches =
        batch_indices(ds_.train_indices, cfg_.batch_size, epoch_seed);
    const std::size_t tasks = ds_.task_count();
    std::vector<double> loss_sums(tasks, 0.0);

    for (const auto& bidx : batches) {
      const double eta = current_lr();
      Tape tape;
      const auto step = pruner_.effective(tape, model_);
      const Batch b = materialize_batch(ds_, bidx);
      std::vector<Tensor> task_losses;
      Tensor total;
      try {
        for (std::size_t t = 0; t < tasks; ++t) {
          const Tensor pred = forward_task(tape, model_, b.x, t, &step.params);
          task_losses.push_back(detail::make_loss(
              tape, model_.spec.heads[t].loss, pred, b.targets[t]));
        }
        total = weighted_total_loss(tape, betas_, task_losses);
        tape.backward(total);
        apply_updates(step, eta);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch_) + ": " + e.what());
      }
      zero_param_grads();
      for (std::size_t t = 0; t < tasks; ++t)
        loss_sums[t] += task_losses[t].item();
      ++iter_;
    }

    std::vector<double> mean_losses(tasks, 0.0);
    std::vector<double> window_values(tasks, 0.0);
    std::vector<double> window_mads(tasks, 0.0);
    for (std::size_t t = 0; t < tasks; ++t) {
      mean_losses[t] = loss_sums[t] / static_cast<double>(batches.size());
      if (!std::isfinite(mean_losses[t]))
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch_));
      window_values[t] =
          detail::window_value(model_.spec.heads[t].loss, mean_losses[t]);
      weighting_.push_loss(t, window_values[t]);
      window_mads[t] = weighting_.window(t).contents().size() >= 2
                           ? weighting_.window(t).avg_deviation()
                           : 0.0;
    }
    betas_ = weighting_.compute_betas(epoch_ + 1);

    auto snapshot = pruner_.measure(model_, epoch_);
    if (cfg_.pruner_kind == PrunerKind::AdapMtl ||
        cfg_.pruner_kind == PrunerKind::SharedThreshold) {
      if (pruner_.maybe_freeze(model_, snapshot))
        log::info("mask frozen at epoch " + std::to_string(epoch_) +
                  " (overall sparsity " + std::to_string(snapshot.overall) +
                  ")");
    } else if (cfg_.pruner_kind == PrunerKind::MagnitudeIterative) {
      apply_magnitude_schedule();
      snapshot = pruner_.measure(model_, epoch_);
    }

    EpochLog entry;
    entry.epoch = epoch_;
    entry.train_losses = std::move(mean_losses);
    try {
      entry.eval_metrics = evaluate_model(model_, pruner_, ds_, "test").metrics;
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " +
                         std::to_string(epoch_) + ": " + e.what());
    }
    entry.betas = applied_betas;
    entry.window_values = std::move(window_values);
    entry.window_mads = std::move(window_mads);
    for (const auto* c : model_.components())
      entry.thetas.push_back(c->theta.values()[0]);
    entry.sparsity = std::move(snapshot);
    entry.lr = current_lr();
    log_.epochs.push_back(std::move(entry));

    ++epoch_;
  }

  // Magnitude baseline: prune at round boundaries spread evenly over the
  // epoch budget; the final round lands on the last epoch and freezes.
  void apply_magnitude_schedule() {
    const std::size_t rounds = cfg_.prune_rounds;
    const double f =
        cfg_.prune_fraction_per_round > 0.0
            ? cfg_.prune_fraction_per_round
            : 1.0 - std::pow(1.0 - cfg_.target_sparsity,
                             1.0 / static_cast<double>(rounds));
    for (std::size_t k = 1; k <= rounds; ++k) {
      const auto boundary = static_cast<std::size_t>(std::llround(
          static_cast<double>(cfg_.epochs * k) / static_cast<double>(rounds)));
      if (epoch_ + 1 == std::max<std::size_t>(boundary, 1)) {
        const double cumulative =
            1.0 - std::pow(1.0 - f, static_cast<double>(k));
        pruner_.apply_magnitude_round(model_, cumulative, k == rounds, epoch_);
      }
    }
  }

  void apply_updates(const EffectiveStep& step, double eta) {
    const auto comps = model_.components();
    const bool frozen = pruner_.frozen();
    const bool soft = cfg_.pruner_kind == PrunerKind::AdapMtl ||
                      cfg_.pruner_kind == PrunerKind::SharedThreshold;

    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
      Component* c = comps[ci];
      for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
        const auto& sgrad = step.s_tensors[ci][wi].grad();
        weight_grad_update(c->weights[wi].values(), sgrad,
                           step.masks[ci][wi], eta, cfg_.weight_decay);
      }
      for (auto& bias : c->biases) {
        const auto& g = bias.grad();
        auto& v = bias.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= eta * g[i];
      }
    }

    if (soft && !frozen) {
      // One update per distinct threshold, pooling every component that
      // shares it (the shared-threshold ablation aliases all of them).
      std::vector<const TensorNode*> seen;
      for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        const TensorNode* node = comps[ci]->theta.node();
        bool done = false;
        for (const auto* s : seen) done = done || s == node;
        if (done) continue;
        seen.push_back(node);

        std::vector<const std::vector<double>*> ws, gs;
        std::vector<const std::vector<std::uint8_t>*> ms;
        for (std::size_t cj = ci; cj < comps.size(); ++cj) {
          if (comps[cj]->theta.node() != node) continue;
          for (std::size_t wi = 0; wi < comps[cj]->weights.size(); ++wi) {
            ws.push_back(&comps[cj]->weights[wi].values());
            gs.push_back(&step.s_tensors[cj][wi].grad());
            ms.push_back(&step.masks[cj][wi]);
          }
        }
        const double theta = comps[ci]->theta.values()[0];
        const double g = theta_loss_grad(theta, ws, gs, ms);
        const double updated = theta_grad_update(
            theta, g, cfg_.lr_theta, cfg_.theta_weight_decay,
            cfg_.theta_drift);
        // sigmoid rounds to 1.0 once theta passes ~36.7; from there the
        // threshold dynamic has no brake left and the run is lost.
        if (!(sigmoid(updated) < 1.0))
          throw NumericError("threshold saturated for component '" +
                             comps[ci]->name + "' (theta " +
                             std::to_string(updated) + ")");
        comps[ci]->theta.values()[0] = updated;
      }
    }
  }

  void zero_param_grads() {
    for (auto* c : model_.components()) {
      for (auto& w : c->weights) w.zero_grad();
      for (auto& b : c->biases) b.zero_grad();
      c->theta.zero_grad();
    }
  }

  MultitaskModel& model_;
  const SynthDataset& ds_;
  TrainConfig cfg_;
  Pruner pruner_;
  WeightingState weighting_;
  std::vector<double> betas_;
  std::size_t epoch_ = 0;
  std::size_t iter_ = 0;
  RunLog log_;
};

inline RunLog train(MultitaskModel& model, const SynthDataset& ds,
                    const TrainConfig& cfg) {
  Trainer t(model, ds, cfg);
  return t.run();
}

inline RunLog train_baseline_shared_threshold(MultitaskModel& model,
                                              const SynthDataset& ds,
                                              TrainConfig cfg) {
  cfg.pruner_kind = PrunerKind::SharedThreshold;
  return train(model, ds, cfg);
}

inline RunLog train_baseline_magnitude(MultitaskModel& model,
                                       const SynthDataset& ds,
                                       TrainConfig cfg) {
  cfg.pruner_kind = PrunerKind::MagnitudeIterative;
  return train(model, ds, cfg);
}

}  // namespace adapmtl
