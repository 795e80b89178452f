#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adapmtl/common.hpp"
#include "adapmtl/log.hpp"
#include "adapmtl/tensor.hpp"

namespace adapmtl {

// Fixed-capacity ring of recent scalar task losses; evicts oldest-first.
class LossWindow {
 public:
  explicit LossWindow(std::size_t capacity = 400) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("loss window capacity must be >= 1");
  }

  void push(double v) {
    if (!std::isfinite(v))
      throw NumericError("loss window received a non-finite value: "
                         "training has diverged");
    if (buf_.size() < capacity_) {
      buf_.push_back(v);
    } else {
      buf_[count_ % capacity_] = v;
    }
    ++count_;
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return buf_.size(); }
  std::uint64_t count() const { return count_; }

  double mean() const {
    if (buf_.empty()) throw StateError("loss window is empty");
    double s = 0.0;
    for (double v : buf_) s += v;
    return s / static_cast<double>(buf_.size());
  }

  // Mean absolute deviation from the window mean.
  double avg_deviation() const {
    if (buf_.size() < 2)
      throw StateError("avg_deviation needs at least 2 window entries");
    const double m = mean();
    double s = 0.0;
    for (double v : buf_) s += std::fabs(v - m);
    return s / static_cast<double>(buf_.size());
  }

  // Entries oldest-first (for checkpoints).
  std::vector<double> contents() const {
    std::vector<double> out;
    out.reserve(buf_.size());
    if (buf_.size() < capacity_) {
      out = buf_;
    } else {
      const std::size_t head = count_ % capacity_;
      for (std::size_t i = 0; i < capacity_; ++i)
        out.push_back(buf_[(head + i) % capacity_]);
    }
    return out;
  }

  // Rebuilds the ring from an oldest-first listing and its push count, the
  // inverse of contents().
  void restore(const std::vector<double>& values, std::uint64_t count) {
    if (values.size() > capacity_)
      throw StateError("loss window restore exceeds capacity");
    if (values.size() == capacity_) {
      buf_.assign(capacity_, 0.0);
      const std::size_t head = count % capacity_;
      for (std::size_t i = 0; i < capacity_; ++i)
        buf_[(head + i) % capacity_] = values[i];
    } else {
      buf_ = values;
    }
    count_ = count;
  }

 private:
  std::size_t capacity_;
  std::vector<double> buf_;
  std::uint64_t count_ = 0;
};

// Per-task adaptive weighting factors:
//   beta_t = ( (sigma_t / L_t) / ((1/T) sum_u sigma_u / L_u) )^{-1}
//            * lambda * |W_B| / sum_t |W_t|
// where sigma_t is the window's mean absolute deviation and L_t its mean.
// Tasks whose loss has settled (small relative deviation) get larger beta
// and are pushed toward heavier pruning.
class WeightingState {
 public:
  WeightingState() = default;

  WeightingState(std::vector<std::string> task_names, std::size_t capacity,
                 double lambda, std::size_t warmup_epochs,
                 std::size_t backbone_params, std::size_t head_params_total)
      : task_names_(std::move(task_names)),
        lambda_(lambda),
        warmup_epochs_(warmup_epochs) {
    if (task_names_.empty()) throw ConfigError("weighting needs >= 1 task");
    if (!(lambda_ > 0.0)) throw ConfigError("lambda must be > 0");
    if (head_params_total == 0)
      throw ConfigError("head parameter count must be > 0");
    param_ratio_ = static_cast<double>(backbone_params) /
                   static_cast<double>(head_params_total);
    windows_.assign(task_names_.size(), LossWindow(capacity));
    betas_.assign(task_names_.size(), 1.0);
  }

  std::size_t task_count() const { return task_names_.size(); }
  const std::vector<std::string>& task_names() const { return task_names_; }
  double lambda() const { return lambda_; }
  double param_ratio() const { return param_ratio_; }
  std::size_t warmup_epochs() const { return warmup_epochs_; }
  const std::vector<double>& betas() const { return betas_; }
  LossWindow& window(std::size_t task) { return windows_.at(task); }
  const LossWindow& window(std::size_t task) const {
    return windows_.at(task);
  }
  // The backbone's weighting factor from the paper-defined set; no loss term
  // consumes it, so it stays at its initial value.
  double beta_backbone() const { return beta_backbone_; }

  void push_loss(std::size_t task, double value) {
    windows_.at(task).push(value);
  }

  // Recomputes and stores the betas for the given (0-based) epoch.  During
  // warm-up, or while any window is still too short, every beta is exactly 1.
  const std::vector<double>& compute_betas(std::size_t epoch) {
    const std::size_t t_count = task_names_.size();
    if (epoch < warmup_epochs_) {
      betas_.assign(t_count, 1.0);
      return betas_;
    }
    for (const auto& w : windows_) {
      if (w.size() < 2) {
        betas_.assign(t_count, 1.0);
        return betas_;
      }
    }
    std::vector<double> r(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      const double sigma = windows_[t].avg_deviation();
      double mean_loss = windows_[t].mean();
      if (mean_loss <= 1e-12) {
        log::warn("task '" + task_names_[t] +
                  "' mean loss below 1e-12; clamping for beta computation");
        mean_loss = 1e-12;
      }
      r[t] = sigma / mean_loss;
      // A perfectly flat window would zero the ratio and blow up the
      // inverse; clamp like the loss above.
      if (r[t] < 1e-12) r[t] = 1e-12;
    }
    double mean_r = 0.0;
    for (double v : r) mean_r += v;
    mean_r /= static_cast<double>(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      const double n_t = r[t] / mean_r;
      betas_[t] = (1.0 / n_t) * lambda_ * param_ratio_;
    }
    return betas_;
  }

  void restore_betas(const std::vector<double>& betas) {
    if (betas.size() != betas_.size())
      throw StateError("beta restore size mismatch");
    betas_ = betas;
  }

 private:
  std::vector<std::string> task_names_;
  double lambda_ = 1.0;
  std::size_t warmup_epochs_ = 0;
  double param_ratio_ = 1.0;
  std::vector<LossWindow> windows_;
  std::vector<double> betas_;
  double beta_backbone_ = 1.0;
};

// Sum of beta_t * L_t on the tape; betas are constants, so gradients flow
// only into the loss terms.
inline Tensor weighted_total_loss(Tape& tape, const std::vector<double>& betas,
                                  const std::vector<Tensor>& losses) {
  if (betas.size() != losses.size())
    throw ShapeError("weighted_total_loss: " + std::to_string(betas.size()) +
                     " betas vs " + std::to_string(losses.size()) +
                     " losses");
  for (double b : betas)
    if (!(std::isfinite(b) && b >= 0.0))
      throw Error("weighted_total_loss: betas must be finite and >= 0");
  return tape.weighted_sum(betas, losses);
}

}  // namespace adapmtl
