#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "adapmtl/common.hpp"
#include "adapmtl/tensor.hpp"

namespace adapmtl {

enum class LossKind { L1, Mse, CrossEntropy, NegCosine };

inline LossKind parse_loss_kind(const std::string& name) {
  if (name == "l1") return LossKind::L1;
  if (name == "mse") return LossKind::Mse;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  if (name == "neg_cosine") return LossKind::NegCosine;
  throw ConfigError("unknown loss kind: " + name);
}

inline std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::L1: return "l1";
    case LossKind::Mse: return "mse";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::NegCosine: return "neg_cosine";
  }
  return "?";
}

struct HeadSpec {
  std::string name;
  std::size_t input_dim = 0;  // must equal the backbone output width
  std::vector<std::size_t> widths;  // layer outputs, last one = output dim
  LossKind loss = LossKind::L1;
};

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> backbone_widths;
  std::vector<HeadSpec> heads;
};

// A named disjoint parameter group: the shared backbone or one task head.
// Owns its threshold parameter and, once pruning freezes, its binary masks.
struct Component {
  std::string name;
  std::vector<Tensor> weights;  // one [in,out] matrix per layer
  std::vector<Tensor> biases;   // one [out] vector per layer
  Tensor theta;                 // scalar, unconstrained; alpha = sigmoid(theta)
  bool mask_frozen = false;
  std::vector<std::vector<std::uint8_t>> frozen_mask;  // per weight tensor

  double alpha() const { return sigmoid(theta.values()[0]); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
  }

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    return n;
  }
};

// Shared backbone plus T task-specific heads.  Every parameter belongs to
// exactly one component.
struct MultitaskModel {
  ModelSpec spec;
  Component backbone;
  std::vector<Component> heads;

  // Counts forward passes that used raw weights while a pruner was supposed
  // to supply soft-thresholded ones; the trainer asserts this stays 0.
  mutable std::size_t raw_forward_calls = 0;

  std::size_t task_count() const { return heads.size(); }

  std::vector<const Component*> components() const {
    std::vector<const Component*> out;
    out.push_back(&backbone);
    for (const auto& h : heads) out.push_back(&h);
    return out;
  }

  std::vector<Component*> components() {
    std::vector<Component*> out;
    out.push_back(&backbone);
    for (auto& h : heads) out.push_back(&h);
    return out;
  }
};

namespace detail {

inline void init_layer(std::mt19937_64& rng, std::size_t in, std::size_t out,
                       Component& comp) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  comp.weights.push_back(Tensor::leaf({in, out}, std::move(w), true));
  comp.biases.push_back(Tensor::zeros({out}, true));
}

}  // namespace detail

inline MultitaskModel build_model(const ModelSpec& spec, double theta_init,
                                  std::uint64_t seed) {
  if (spec.heads.empty()) throw ConfigError("model spec lists no heads");
  if (spec.input_dim == 0) throw ConfigError("model input_dim must be >= 1");
  for (std::size_t w : spec.backbone_widths)
    if (w == 0) throw ConfigError("backbone width 0 is invalid");
  const std::size_t backbone_out = spec.backbone_widths.empty()
                                       ? spec.input_dim
                                       : spec.backbone_widths.back();
  for (const auto& h : spec.heads) {
    if (h.widths.empty())
      throw ConfigError("head '" + h.name + "' lists no layer widths");
    for (std::size_t w : h.widths)
      if (w == 0)
        throw ConfigError("head '" + h.name + "' has a zero width");
    if (h.input_dim != backbone_out)
      throw ConfigError("head '" + h.name + "' expects input width " +
                        std::to_string(h.input_dim) +
                        " but the backbone produces " +
                        std::to_string(backbone_out));
  }

  MultitaskModel model;
  model.spec = spec;
  std::mt19937_64 rng(seed);

  model.backbone.name = "backbone";
  std::size_t in = spec.input_dim;
  for (std::size_t w : spec.backbone_widths) {
    detail::init_layer(rng, in, w, model.backbone);
    in = w;
  }
  model.backbone.theta = Tensor::scalar(theta_init, true);

  for (const auto& hs : spec.heads) {
    Component head;
    head.name = "head:" + hs.name;
    std::size_t hin = hs.input_dim;
    for (std::size_t w : hs.widths) {
      detail::init_layer(rng, hin, w, head);
      hin = w;
    }
    head.theta = Tensor::scalar(theta_init, true);
    model.heads.push_back(std::move(head));
  }
  return model;
}

// Per-component effective weights (soft-thresholded tape tensors) supplied
// by the pruner.  Order matches Component::weights.
struct EffectiveParams {
  std::vector<Tensor> backbone_weights;
  std::vector<std::vector<Tensor>> head_weights;  // per head
};

// Runs x through the backbone then through head `task`.  ReLU follows every
// layer except the final head layer.  When `eff` is given, the matmuls use
// the supplied effective weights instead of the raw parameters.
inline Tensor forward_task(Tape& tape, const MultitaskModel& model,
                           const Tensor& x, std::size_t task,
                           const EffectiveParams* eff = nullptr) {
  if (task >= model.heads.size())
    throw Error("task index " + std::to_string(task) + " out of range (T=" +
                std::to_string(model.heads.size()) + ")");
  if (x.shape().size() != 2 || x.shape()[1] != model.spec.input_dim)
    throw ShapeError("forward_task: input " + shape_str(x.shape()) +
                     " does not match input_dim " +
                     std::to_string(model.spec.input_dim));
  if (eff == nullptr) ++model.raw_forward_calls;

  Tensor h = x;
  for (std::size_t i = 0; i < model.backbone.weights.size(); ++i) {
    const Tensor& w =
        eff ? eff->backbone_weights[i] : model.backbone.weights[i];
    h = tape.relu(tape.add_bias(tape.matmul(h, w), model.backbone.biases[i]));
  }
  const Component& head = model.heads[task];
  for (std::size_t i = 0; i < head.weights.size(); ++i) {
    const Tensor& w = eff ? eff->head_weights[task][i] : head.weights[i];
    h = tape.add_bias(tape.matmul(h, w), head.biases[i]);
    if (i + 1 < head.weights.size()) h = tape.relu(h);
  }
  return h;
}

// Exact per-component parameter counts (weights + biases).
inline std::map<std::string, std::size_t> param_counts(
    const MultitaskModel& model) {
  std::map<std::string, std::size_t> counts;
  for (const auto* c : model.components()) counts[c->name] = c->param_count();
  return counts;
}

}  // namespace adapmtl
