#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "adapmtl/common.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/tensor.hpp"

namespace adapmtl {

// ---------- value-level primitives ----------

inline void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw Error("alpha must lie in [0,1), got " + std::to_string(alpha));
}

// S(w, alpha) = sign(w) * max(|w| - alpha, 0), elementwise.
inline std::vector<double> soft_threshold_values(const std::vector<double>& w,
                                                 double alpha) {
  require_alpha(alpha);
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double m = std::fabs(w[i]) - alpha;
    out[i] = m > 0.0 ? sign(w[i]) * m : 0.0;
  }
  return out;
}

// B[i] = 0 iff S(w[i], alpha) == 0, i.e. |w[i]| <= alpha (ties pruned).
inline std::vector<std::uint8_t> indicator_mask_values(
    const std::vector<double>& w, double alpha) {
  require_alpha(alpha);
  std::vector<std::uint8_t> b(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    b[i] = std::fabs(w[i]) > alpha ? 1 : 0;
  return b;
}

// w <- w - lr * (grad_wrt_S ⊙ B) - lr * wd * w.  Positions with B = 0
// receive no loss gradient; decay applies to the raw weight everywhere.
inline void weight_grad_update(std::vector<double>& w,
                               const std::vector<double>& grad_wrt_s,
                               const std::vector<std::uint8_t>& mask,
                               double lr, double wd) {
  if (w.size() != grad_wrt_s.size() || w.size() != mask.size())
    throw ShapeError("weight_grad_update: mismatched lengths");
  if (!(lr > 0.0)) throw Error("weight_grad_update: lr must be > 0");
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] -= lr * (mask[i] ? grad_wrt_s[i] : 0.0) + lr * wd * w[i];
}

// dL/dtheta = -sigmoid'(theta) * sum_i sign(w_i) * (dL/dS)_i * B_i,
// accumulated over every weight tensor of the component.
inline double theta_loss_grad(
    double theta, const std::vector<const std::vector<double>*>& weights,
    const std::vector<const std::vector<double>*>& grads_wrt_s,
    const std::vector<const std::vector<std::uint8_t>*>& masks) {
  if (weights.size() != grads_wrt_s.size() || weights.size() != masks.size())
    throw ShapeError("theta_loss_grad: mismatched tensor counts");
  double acc = 0.0;
  for (std::size_t t = 0; t < weights.size(); ++t) {
    const auto& w = *weights[t];
    const auto& g = *grads_wrt_s[t];
    const auto& b = *masks[t];
    if (w.size() != g.size() || w.size() != b.size())
      throw ShapeError("theta_loss_grad: mismatched lengths");
    for (std::size_t i = 0; i < w.size(); ++i)
      if (b[i]) acc += sign(w[i]) * g[i];
  }
  return -sigmoid_prime(theta) * acc;
}

// theta <- theta - lr_theta * dL/dtheta - lr_theta * wd_theta * theta
//                + lr_theta * drift.
// The constant drift term is the sparsity pressure that walks alpha up from
// its near-zero start; the loss gradient acts as the brake.
inline double theta_grad_update(double theta, double loss_grad,
                                double lr_theta, double wd_theta,
                                double drift) {
  if (!(lr_theta > 0.0)) throw Error("theta_grad_update: lr must be > 0");
  return theta - lr_theta * loss_grad - lr_theta * wd_theta * theta +
         lr_theta * drift;
}

// ---------- tape operation ----------

// Soft threshold as a differentiable tape op: out = S(w, sigmoid(theta)).
// Backward: dw += g ⊙ B, dtheta += -sigmoid'(theta) * Σ sign(w)·g·B, which
// is exactly the masked weight gradient and the threshold chain rule.
inline Tensor soft_threshold_op(Tape& tape, const Tensor& w,
                                const Tensor& theta) {
  if (theta.size() != 1)
    throw ShapeError("soft_threshold_op: theta must be scalar");
  const double alpha = sigmoid(theta.values()[0]);
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double m = std::fabs(w.values()[i]) - alpha;
    out[i] = m > 0.0 ? sign(w.values()[i]) * m : 0.0;
  }
  const bool track = w.needs_grad() || theta.needs_grad();
  Tensor s = tape.alloc_output(w.shape(), std::move(out), track);
  if (track) {
    auto wn = w.handle(), tn = theta.handle(), sn = s.handle();
    tape.record(
        [wn, tn, sn, alpha] {
          double theta_acc = 0.0;
          const bool want_w = wn->requires_grad || wn->needs_grad;
          if (want_w) ensure_grad(wn.get());
          for (std::size_t i = 0; i < wn->value.size(); ++i) {
            if (std::fabs(wn->value[i]) > alpha) {
              const double g = sn->grad[i];
              if (want_w) wn->grad[i] += g;
              theta_acc += sign(wn->value[i]) * g;
            }
          }
          if (tn->requires_grad || tn->needs_grad) {
            ensure_grad(tn.get());
            const double t = tn->value[0];
            tn->grad[0] += -sigmoid_prime(t) * theta_acc;
          }
        },
        s, {w, theta});
  }
  return s;
}

// ---------- pruner state ----------

enum class PrunerKind { AdapMtl, SharedThreshold, MagnitudeIterative, None };

inline PrunerKind parse_pruner_kind(const std::string& name) {
  if (name == "adapmtl") return PrunerKind::AdapMtl;
  if (name == "shared-threshold") return PrunerKind::SharedThreshold;
  if (name == "magnitude-iterative") return PrunerKind::MagnitudeIterative;
  if (name == "none") return PrunerKind::None;
  throw ConfigError("unknown pruner kind: " + name);
}

inline std::string pruner_kind_name(PrunerKind kind) {
  switch (kind) {
    case PrunerKind::AdapMtl: return "adapmtl";
    case PrunerKind::SharedThreshold: return "shared-threshold";
    case PrunerKind::MagnitudeIterative: return "magnitude-iterative";
    case PrunerKind::None: return "none";
  }
  return "?";
}

struct SparsitySnapshot {
  struct Row {
    std::string component;
    std::size_t nnz = 0;
    std::size_t total = 0;
    double sparsity = 0.0;
  };
  std::size_t epoch = 0;
  std::vector<Row> rows;
  std::size_t nnz = 0;
  std::size_t total = 0;
  double overall = 0.0;
};

// One forward step's effective weights plus the pieces the update rules
// need: the S output tensors (whose tape grads are dL/dS) and the masks.
// Component order: backbone, then heads in task order.
struct EffectiveStep {
  EffectiveParams params;
  std::vector<std::vector<Tensor>> s_tensors;
  std::vector<std::vector<std::vector<std::uint8_t>>> masks;
};

// Owns the pruning dynamics for one model: thresholds (soft kinds), hard
// masks (magnitude kind), the freeze policy, and sparsity measurement.
class Pruner {
 public:
  Pruner() = default;

  Pruner(PrunerKind kind, MultitaskModel& model, double target_sparsity)
      : kind_(kind), target_(target_sparsity) {
    if (!(target_ >= 0.0 && target_ < 1.0))
      throw ConfigError("target sparsity must lie in [0,1)");
    if (kind_ == PrunerKind::SharedThreshold) {
      // One threshold for every component: alias all thetas to the
      // backbone's tensor.
      for (auto& head : model.heads) head.theta = model.backbone.theta;
    }
    if (kind_ == PrunerKind::MagnitudeIterative) {
      for (auto* c : model.components()) {
        std::vector<std::vector<std::uint8_t>> comp_masks;
        for (const auto& w : c->weights)
          comp_masks.emplace_back(w.size(), 1);
        hard_masks_.push_back(std::move(comp_masks));
      }
    }
  }

  PrunerKind kind() const { return kind_; }
  double target() const { return target_; }
  bool frozen() const { return freeze_triggered_; }
  std::size_t freeze_epoch() const { return freeze_epoch_; }

  // Distinct theta parameters (T+1 for adapmtl, 1 for shared-threshold).
  std::vector<Tensor> distinct_thetas(MultitaskModel& model) const {
    std::vector<Tensor> out;
    for (auto* c : model.components()) {
      bool seen = false;
      for (const auto& t : out)
        if (t.node() == c->theta.node()) seen = true;
      if (!seen) out.push_back(c->theta);
    }
    return out;
  }

  // Builds the soft-thresholded (or hard-masked) effective weights for one
  // training step.  For kind none the raw weights pass through untouched.
  EffectiveStep effective(Tape& tape, MultitaskModel& model) const {
    EffectiveStep step;
    const auto comps = model.components();
    step.s_tensors.resize(comps.size());
    step.masks.resize(comps.size());
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
      Component* c = comps[ci];
      for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
        Tensor eff;
        std::vector<std::uint8_t> mask;
        switch (kind_) {
          case PrunerKind::AdapMtl:
          case PrunerKind::SharedThreshold: {
            eff = soft_threshold_op(tape, c->weights[wi], c->theta);
            mask = c->mask_frozen
                       ? c->frozen_mask[wi]
                       : indicator_mask_values(c->weights[wi].values(),
                                               c->alpha());
            break;
          }
          case PrunerKind::MagnitudeIterative: {
            const auto& m = hard_masks_[ci][wi];
            std::vector<double> mv(m.begin(), m.end());
            auto mask_leaf = Tensor::leaf(c->weights[wi].shape(), mv);
            eff = tape.mul(c->weights[wi], mask_leaf);
            mask = m;
            break;
          }
          case PrunerKind::None: {
            eff = c->weights[wi];
            mask.assign(c->weights[wi].size(), 1);
            break;
          }
        }
        step.s_tensors[ci].push_back(eff);
        step.masks[ci].push_back(std::move(mask));
        if (ci == 0)
          step.params.backbone_weights.push_back(eff);
      }
      if (ci > 0) {
        step.params.head_weights.push_back(step.s_tensors[ci]);
      }
    }
    return step;
  }

  // Counts zero positions of S(w, alpha) per component; under a frozen (or
  // hard) mask the mask itself is authoritative.  Biases are exempt.
  SparsitySnapshot measure(const MultitaskModel& model,
                           std::size_t epoch) const {
    SparsitySnapshot snap;
    snap.epoch = epoch;
    const auto comps = model.components();
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
      const Component* c = comps[ci];
      SparsitySnapshot::Row row;
      row.component = c->name;
      for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
        const auto& w = c->weights[wi].values();
        row.total += w.size();
        if (c->mask_frozen) {
          for (std::uint8_t m : c->frozen_mask[wi]) row.nnz += m;
        } else if (kind_ == PrunerKind::MagnitudeIterative) {
          for (std::uint8_t m : hard_masks_[ci][wi]) row.nnz += m;
        } else if (kind_ == PrunerKind::None) {
          for (double v : w) row.nnz += (v != 0.0) ? 1 : 0;
        } else {
          const double alpha = c->alpha();
          for (double v : w) row.nnz += (std::fabs(v) > alpha) ? 1 : 0;
        }
      }
      row.sparsity =
          row.total == 0
              ? 0.0
              : 1.0 - static_cast<double>(row.nnz) /
                          static_cast<double>(row.total);
      snap.nnz += row.nnz;
      snap.total += row.total;
      snap.rows.push_back(std::move(row));
    }
    snap.overall = snap.total == 0
                       ? 0.0
                       : 1.0 - static_cast<double>(snap.nnz) /
                                   static_cast<double>(snap.total);
    return snap;
  }

  // Freezes the masks once overall sparsity reaches the target: captures the
  // current indicators, zeroes pruned raw weights permanently, and stops
  // threshold motion.  Idempotent.
  bool maybe_freeze(MultitaskModel& model, const SparsitySnapshot& snap) {
    if (freeze_triggered_ || snap.overall < target_) return false;
    do_freeze(model, snap.epoch);
    return true;
  }

  // Captures masks immediately regardless of the target (used for exporting
  // dense or partially pruned models, and in tests).
  void force_freeze(MultitaskModel& model, std::size_t epoch = 0) {
    if (!freeze_triggered_) do_freeze(model, epoch);
  }

  // Magnitude-iterative only: prune the smallest-magnitude surviving
  // weights globally until the cumulative sparsity target is met exactly
  // (count = round(target * total weights)).
  void apply_magnitude_round(MultitaskModel& model,
                             double cumulative_sparsity, bool final_round,
                             std::size_t epoch = 0) {
    if (kind_ != PrunerKind::MagnitudeIterative)
      throw StateError("apply_magnitude_round: pruner kind is not "
                       "magnitude-iterative");
    auto comps = model.components();
    std::size_t total = 0;
    for (auto* c : comps) total += c->weight_count();
    const auto target_pruned = static_cast<std::size_t>(
        std::llround(cumulative_sparsity * static_cast<double>(total)));

    // (|w|, component, tensor, element) over current survivors.
    std::vector<std::tuple<double, std::size_t, std::size_t, std::size_t>>
        survivors;
    std::size_t already_pruned = 0;
    for (std::size_t ci = 0; ci < comps.size(); ++ci)
      for (std::size_t wi = 0; wi < comps[ci]->weights.size(); ++wi) {
        const auto& w = comps[ci]->weights[wi].values();
        for (std::size_t k = 0; k < w.size(); ++k) {
          if (hard_masks_[ci][wi][k])
            survivors.emplace_back(std::fabs(w[k]), ci, wi, k);
          else
            ++already_pruned;
        }
      }
    if (target_pruned > already_pruned) {
      std::size_t need = target_pruned - already_pruned;
      std::sort(survivors.begin(), survivors.end());
      need = std::min(need, survivors.size());
      for (std::size_t i = 0; i < need; ++i) {
        const auto& [mag, ci, wi, k] = survivors[i];
        hard_masks_[ci][wi][k] = 0;
        comps[ci]->weights[wi].values()[k] = 0.0;
      }
    }
    if (final_round) {
      for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        comps[ci]->frozen_mask = hard_masks_[ci];
        comps[ci]->mask_frozen = true;
      }
      freeze_triggered_ = true;
      freeze_epoch_ = epoch;
    }
  }

  using HardMasks = std::vector<std::vector<std::vector<std::uint8_t>>>;

  const HardMasks& hard_masks() const { return hard_masks_; }

  // Reinstates pruner bookkeeping from a checkpoint.  The component-level
  // frozen masks live in the model and are restored separately.
  void restore_state(bool frozen, std::size_t freeze_epoch,
                     HardMasks hard_masks) {
    freeze_triggered_ = frozen;
    freeze_epoch_ = freeze_epoch;
    if (kind_ == PrunerKind::MagnitudeIterative) {
      if (!hard_masks.empty()) hard_masks_ = std::move(hard_masks);
    }
  }

 private:
  void do_freeze(MultitaskModel& model, std::size_t epoch) {
    const auto comps = model.components();
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
      Component* c = comps[ci];
      c->frozen_mask.clear();
      for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
        std::vector<std::uint8_t> mask;
        if (kind_ == PrunerKind::MagnitudeIterative)
          mask = hard_masks_[ci][wi];
        else if (kind_ == PrunerKind::None)
          mask.assign(c->weights[wi].size(), 1);
        else
          mask = indicator_mask_values(c->weights[wi].values(), c->alpha());
        auto& w = c->weights[wi].values();
        for (std::size_t k = 0; k < w.size(); ++k)
          if (!mask[k]) w[k] = 0.0;
        c->frozen_mask.push_back(std::move(mask));
      }
      c->mask_frozen = true;
    }
    freeze_triggered_ = true;
    freeze_epoch_ = epoch;
  }

  PrunerKind kind_ = PrunerKind::None;
  double target_ = 0.0;
  bool freeze_triggered_ = false;
  std::size_t freeze_epoch_ = 0;
  // magnitude-iterative masks, component-major, same layout as weights
  std::vector<std::vector<std::vector<std::uint8_t>>> hard_masks_;
};

}  // namespace adapmtl
