#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adapmtl/common.hpp"

namespace adapmtl {

class ComputationTape;

// Dense 64-bit tensor node.  Gradient storage stays empty until the tensor
// first participates in a backward pass.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;                 // leaf whose grad accumulates
  bool needs_grad = false;                    // lies on some gradient path
  const ComputationTape* producer = nullptr;  // tape that recorded it, if any
};

// Shared handle to a TensorNode.  Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("leaf: shape " + shape_str(shape) + " expects " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->needs_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(numel(shape), 0.0);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return leaf(Shape{1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_->needs_grad; }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1)
      throw ShapeError("item: tensor has " + std::to_string(size()) +
                       " elements");
    return node_->value[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }

  const std::vector<double>& grad() const {
    if (node_->grad.empty())
      throw StateError("grad: no gradient has been computed for this tensor");
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty())
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& handle() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend class ComputationTape;
};

inline void ensure_grad(TensorNode* n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
}

// Reverse-mode tape.  Operations record a backward closure; backward()
// replays them in reverse.  Leaf gradients accumulate across calls until
// explicitly zeroed; every op output is re-zeroed at the start of each
// backward pass.
class ComputationTape {
 public:
  struct Step {
    std::function<void()> fn;  // may be empty for derivative-free ops
    std::shared_ptr<TensorNode> out;
    std::vector<std::shared_ptr<TensorNode>> inputs;
  };

  // --- extension points (used by operations defined in other headers) ---

  Tensor alloc_output(Shape shape, std::vector<double> values,
                      bool needs_grad) {
    auto node = std::make_shared<TensorNode>();
    if (numel(shape) != values.size())
      throw ShapeError("alloc_output: value count does not match shape");
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->needs_grad = needs_grad;
    node->producer = this;
    if (needs_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
  }

  void record(std::function<void()> fn, const Tensor& out,
              std::vector<Tensor> inputs) {
    Step step;
    step.fn = std::move(fn);
    step.out = out.handle();
    step.inputs.reserve(inputs.size());
    for (auto& t : inputs) step.inputs.push_back(t.handle());
    steps_.push_back(std::move(step));
  }

  std::size_t step_count() const { return steps_.size(); }

  void clear() { steps_.clear(); }

  // --- operations ---

  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
      throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j)
          out[i * n + j] += aip * bv[p * n + j];
      }
    const bool track = a.needs_grad() || b.needs_grad();
    Tensor c = alloc_output({m, n}, std::move(out), track);
    check_finite(c, "matmul");
    if (track) {
      auto an = a.handle(), bn = b.handle(), cn = c.handle();
      record(
          [an, bn, cn, m, k, n] {
            const double* g = cn->grad.data();
            if (an->requires_grad || an->needs_grad) {
              ensure_grad(an.get());
              for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                  const double gij = g[i * n + j];
                  for (std::size_t p = 0; p < k; ++p)
                    an->grad[i * k + p] += gij * bn->value[p * n + j];
                }
            }
            if (bn->requires_grad || bn->needs_grad) {
              ensure_grad(bn.get());
              for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                  const double gij = g[i * n + j];
                  for (std::size_t p = 0; p < k; ++p)
                    bn->grad[p * n + j] += an->value[i * k + p] * gij;
                }
            }
          },
          c, {a, b});
    }
    return c;
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    return binary_pointwise(a, b, "add", [](double x, double y) { return x + y; },
                            1.0, 1.0);
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_pointwise(a, b, "sub", [](double x, double y) { return x - y; },
                            1.0, -1.0);
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = a.values()[i] * b.values()[i];
    const bool track = a.needs_grad() || b.needs_grad();
    Tensor c = alloc_output(a.shape(), std::move(out), track);
    check_finite(c, "mul");
    if (track) {
      auto an = a.handle(), bn = b.handle(), cn = c.handle();
      record(
          [an, bn, cn] {
            if (an->requires_grad || an->needs_grad) {
              ensure_grad(an.get());
              for (std::size_t i = 0; i < cn->grad.size(); ++i)
                an->grad[i] += cn->grad[i] * bn->value[i];
            }
            if (bn->requires_grad || bn->needs_grad) {
              ensure_grad(bn.get());
              for (std::size_t i = 0; i < cn->grad.size(); ++i)
                bn->grad[i] += cn->grad[i] * an->value[i];
            }
          },
          c, {a, b});
    }
    return c;
  }

  Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
    const bool track = a.needs_grad();
    Tensor r = alloc_output(a.shape(), std::move(out), track);
    check_finite(r, "scale");
    if (track) {
      auto an = a.handle(), rn = r.handle();
      record(
          [an, rn, c] {
            ensure_grad(an.get());
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
              an->grad[i] += c * rn->grad[i];
          },
          r, {a});
    }
    return r;
  }

  // x: [m,n], bias: [n]; adds the bias to every row.
  Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias input");
    require_rank(bias, 1, "add_bias bias");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (bias.shape()[0] != n)
      throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                       " does not match input " + shape_str(x.shape()));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[i * n + j] = x.values()[i * n + j] + bias.values()[j];
    const bool track = x.needs_grad() || bias.needs_grad();
    Tensor r = alloc_output({m, n}, std::move(out), track);
    check_finite(r, "add_bias");
    if (track) {
      auto xn = x.handle(), bn = bias.handle(), rn = r.handle();
      record(
          [xn, bn, rn, m, n] {
            if (xn->requires_grad || xn->needs_grad) {
              ensure_grad(xn.get());
              for (std::size_t i = 0; i < m * n; ++i)
                xn->grad[i] += rn->grad[i];
            }
            if (bn->requires_grad || bn->needs_grad) {
              ensure_grad(bn.get());
              for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                  bn->grad[j] += rn->grad[i * n + j];
            }
          },
          r, {x, bias});
    }
    return r;
  }

  Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    const bool track = x.needs_grad();
    Tensor r = alloc_output(x.shape(), std::move(out), track);
    check_finite(r, "relu");
    if (track) {
      auto xn = x.handle(), rn = r.handle();
      // Subgradient 0 at the kink.
      record(
          [xn, rn] {
            ensure_grad(xn.get());
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
              if (xn->value[i] > 0.0) xn->grad[i] += rn->grad[i];
          },
          r, {x});
    }
    return r;
  }

  Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = adapmtl::sigmoid(x.values()[i]);
    const bool track = x.needs_grad();
    Tensor r = alloc_output(x.shape(), std::move(out), track);
    check_finite(r, "sigmoid");
    if (track) {
      auto xn = x.handle(), rn = r.handle();
      record(
          [xn, rn] {
            ensure_grad(xn.get());
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
              const double s = rn->value[i];
              xn->grad[i] += rn->grad[i] * s * (1.0 - s);
            }
          },
          r, {x});
    }
    return r;
  }

  Tensor abs(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::fabs(x.values()[i]);
    const bool track = x.needs_grad();
    Tensor r = alloc_output(x.shape(), std::move(out), track);
    check_finite(r, "abs");
    if (track) {
      auto xn = x.handle(), rn = r.handle();
      // Subgradient 0 at 0.
      record(
          [xn, rn] {
            ensure_grad(xn.get());
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
              xn->grad[i] += rn->grad[i] * adapmtl::sign(xn->value[i]);
          },
          r, {x});
    }
    return r;
  }

  // Derivative is zero almost everywhere, so no gradient flows through.
  Tensor sign(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = adapmtl::sign(x.values()[i]);
    Tensor r = alloc_output(x.shape(), std::move(out), false);
    return r;
  }

  Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    const bool track = x.needs_grad();
    Tensor r = alloc_output({1}, {s}, track);
    check_finite(r, "sum");
    if (track) {
      auto xn = x.handle(), rn = r.handle();
      record(
          [xn, rn] {
            ensure_grad(xn.get());
            for (std::size_t i = 0; i < xn->grad.size(); ++i)
              xn->grad[i] += rn->grad[0];
          },
          r, {x});
    }
    return r;
  }

  // Mean absolute error over all elements.
  Tensor loss_l1(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "loss_l1");
    const double n = static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      s += std::fabs(pred.values()[i] - target.values()[i]);
    const bool track = pred.needs_grad();
    Tensor r = alloc_output({1}, {s / n}, track);
    check_finite(r, "loss_l1");
    if (track) {
      auto pn = pred.handle(), tn = target.handle(), rn = r.handle();
      record(
          [pn, tn, rn, n] {
            ensure_grad(pn.get());
            const double g = rn->grad[0] / n;
            for (std::size_t i = 0; i < pn->value.size(); ++i)
              pn->grad[i] += g * adapmtl::sign(pn->value[i] - tn->value[i]);
          },
          r, {pred, target});
    }
    return r;
  }

  // Mean squared error over all elements.
  Tensor loss_mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "loss_mse");
    const double n = static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.values()[i] - target.values()[i];
      s += d * d;
    }
    const bool track = pred.needs_grad();
    Tensor r = alloc_output({1}, {s / n}, track);
    check_finite(r, "loss_mse");
    if (track) {
      auto pn = pred.handle(), tn = target.handle(), rn = r.handle();
      record(
          [pn, tn, rn, n] {
            ensure_grad(pn.get());
            const double g = 2.0 * rn->grad[0] / n;
            for (std::size_t i = 0; i < pn->value.size(); ++i)
              pn->grad[i] += g * (pn->value[i] - tn->value[i]);
          },
          r, {pred, target});
    }
    return r;
  }

  // Softmax cross entropy.  logits: [m, C]; labels: [m] integral class ids.
  Tensor loss_cross_entropy(const Tensor& logits, const Tensor& labels) {
    require_rank(logits, 2, "loss_cross_entropy logits");
    require_rank(labels, 1, "loss_cross_entropy labels");
    const std::size_t m = logits.shape()[0], c = logits.shape()[1];
    if (labels.shape()[0] != m)
      throw ShapeError("loss_cross_entropy: batch sizes differ");
    std::vector<double> softmax(m * c);
    std::vector<std::size_t> ids(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double y = labels.values()[i];
      if (y != std::floor(y) || y < 0.0 || y >= static_cast<double>(c))
        throw DataError("loss_cross_entropy: label " + std::to_string(y) +
                        " outside [0," + std::to_string(c) + ")");
      ids[i] = static_cast<std::size_t>(y);
      double mx = logits.values()[i * c];
      for (std::size_t j = 1; j < c; ++j)
        mx = std::max(mx, logits.values()[i * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        softmax[i * c + j] = std::exp(logits.values()[i * c + j] - mx);
        z += softmax[i * c + j];
      }
      for (std::size_t j = 0; j < c; ++j) softmax[i * c + j] /= z;
      total -= std::log(softmax[i * c + ids[i]]);
    }
    const bool track = logits.needs_grad();
    Tensor r = alloc_output({1}, {total / static_cast<double>(m)}, track);
    check_finite(r, "loss_cross_entropy");
    if (track) {
      auto ln = logits.handle(), rn = r.handle();
      record(
          [ln, rn, softmax = std::move(softmax), ids = std::move(ids), m, c] {
            ensure_grad(ln.get());
            const double g = rn->grad[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < c; ++j) {
                const double onehot = (j == ids[i]) ? 1.0 : 0.0;
                ln->grad[i * c + j] += g * (softmax[i * c + j] - onehot);
              }
          },
          r, {logits, labels});
    }
    return r;
  }

  // Mean negative cosine similarity across rows.  pred/target: [m, d].
  Tensor loss_neg_cosine(const Tensor& pred, const Tensor& target) {
    require_rank(pred, 2, "loss_neg_cosine pred");
    require_same_shape(pred, target, "loss_neg_cosine");
    const std::size_t m = pred.shape()[0], d = pred.shape()[1];
    std::vector<double> np(m), nt(m), dot(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double sp = 0.0, st = 0.0, sd = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double p = pred.values()[i * d + j];
        const double t = target.values()[i * d + j];
        sp += p * p;
        st += t * t;
        sd += p * t;
      }
      np[i] = std::sqrt(sp);
      nt[i] = std::sqrt(st);
      if (np[i] == 0.0 || nt[i] == 0.0)
        throw NumericError("loss_neg_cosine: zero-norm row " +
                           std::to_string(i));
      dot[i] = sd;
      total -= sd / (np[i] * nt[i]);
    }
    const bool track = pred.needs_grad();
    Tensor r = alloc_output({1}, {total / static_cast<double>(m)}, track);
    check_finite(r, "loss_neg_cosine");
    if (track) {
      auto pn = pred.handle(), tn = target.handle(), rn = r.handle();
      record(
          [pn, tn, rn, np = std::move(np), nt = std::move(nt),
           dot = std::move(dot), m, d] {
            ensure_grad(pn.get());
            const double g = rn->grad[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
              const double inv = 1.0 / (np[i] * nt[i]);
              const double coef = dot[i] / (np[i] * np[i] * np[i] * nt[i]);
              for (std::size_t j = 0; j < d; ++j)
                pn->grad[i * d + j] +=
                    g * (-tn->value[i * d + j] * inv +
                         coef * pn->value[i * d + j]);
            }
          },
          r, {pred, target});
    }
    return r;
  }

  // Scalar combination sum_i coeffs[i] * terms[i]; coefficients are
  // constants, so gradients flow only into the terms.
  Tensor weighted_sum(const std::vector<double>& coeffs,
                      const std::vector<Tensor>& terms) {
    if (coeffs.size() != terms.size() || terms.empty())
      throw ShapeError("weighted_sum: need equal, nonzero counts of "
                       "coefficients and terms");
    double s = 0.0;
    bool track = false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].size() != 1)
        throw ShapeError("weighted_sum: term " + std::to_string(i) +
                         " is not a scalar");
      s += coeffs[i] * terms[i].values()[0];
      track = track || terms[i].needs_grad();
    }
    Tensor r = alloc_output({1}, {s}, track);
    check_finite(r, "weighted_sum");
    if (track) {
      std::vector<std::shared_ptr<TensorNode>> tns;
      tns.reserve(terms.size());
      for (const auto& t : terms) tns.push_back(t.handle());
      auto rn = r.handle();
      record(
          [tns, rn, coeffs] {
            for (std::size_t i = 0; i < tns.size(); ++i) {
              if (!(tns[i]->requires_grad || tns[i]->needs_grad)) continue;
              ensure_grad(tns[i].get());
              tns[i]->grad[0] += coeffs[i] * rn->grad[0];
            }
          },
          r, terms);
    }
    return r;
  }

  // Runs reverse-mode accumulation from a scalar root recorded on this tape.
  // Op-output gradients are reset first; leaf gradients accumulate across
  // calls until the caller zeroes them.
  void backward(const Tensor& root) {
    if (steps_.empty())
      throw TapeError("backward: tape has recorded no operations");
    if (root.node()->producer != this)
      throw TapeError("backward: root was not produced by this tape");
    if (root.size() != 1)
      throw TapeError("backward: root must be scalar, got shape " +
                      shape_str(root.shape()));
    for (auto& step : steps_) {
      if (!step.out->grad.empty())
        std::fill(step.out->grad.begin(), step.out->grad.end(), 0.0);
    }
    ensure_grad(root.node());
    root.node()->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it)
      if (it->fn) it->fn();
    for (auto& step : steps_) {
      check_grad_finite(*step.out);
      for (auto& in : step.inputs) check_grad_finite(*in);
    }
  }

 private:
  static void require_rank(const Tensor& t, std::size_t rank,
                           const char* what) {
    if (t.shape().size() != rank)
      throw ShapeError(std::string(what) + ": expected rank " +
                       std::to_string(rank) + ", got shape " +
                       shape_str(t.shape()));
  }

  static void require_same_shape(const Tensor& a, const Tensor& b,
                                 const char* what) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string(what) + ": shapes differ, " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }

  static void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
      if (!std::isfinite(v))
        throw NumericError(std::string(op) + ": non-finite value produced");
  }

  static void check_grad_finite(const TensorNode& n) {
    for (double v : n.grad)
      if (!std::isfinite(v))
        throw NumericError("backward: non-finite gradient");
  }

  template <typename F>
  Tensor binary_pointwise(const Tensor& a, const Tensor& b, const char* name,
                          F&& f, double da, double db) {
    require_same_shape(a, b, name);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = f(a.values()[i], b.values()[i]);
    const bool track = a.needs_grad() || b.needs_grad();
    Tensor c = alloc_output(a.shape(), std::move(out), track);
    check_finite(c, name);
    if (track) {
      auto an = a.handle(), bn = b.handle(), cn = c.handle();
      record(
          [an, bn, cn, da, db] {
            if (an->requires_grad || an->needs_grad) {
              ensure_grad(an.get());
              for (std::size_t i = 0; i < cn->grad.size(); ++i)
                an->grad[i] += da * cn->grad[i];
            }
            if (bn->requires_grad || bn->needs_grad) {
              ensure_grad(bn.get());
              for (std::size_t i = 0; i < cn->grad.size(); ++i)
                bn->grad[i] += db * cn->grad[i];
            }
          },
          c, {a, b});
    }
    return c;
  }

  std::vector<Step> steps_;
};

// Convenience alias used throughout the library.
using Tape = ComputationTape;

enum class ElementwiseKind { Add, Sub, Mul, Relu, Sigmoid, Abs, Sign, Scale };

inline ElementwiseKind parse_elementwise_kind(const std::string& name) {
  if (name == "add") return ElementwiseKind::Add;
  if (name == "sub") return ElementwiseKind::Sub;
  if (name == "mul") return ElementwiseKind::Mul;
  if (name == "relu") return ElementwiseKind::Relu;
  if (name == "sigmoid") return ElementwiseKind::Sigmoid;
  if (name == "abs") return ElementwiseKind::Abs;
  if (name == "sign") return ElementwiseKind::Sign;
  if (name == "scale") return ElementwiseKind::Scale;
  throw Error("unknown elementwise op kind: " + name);
}

// Dispatch wrapper over the pointwise tape ops.  Binary kinds require `b`;
// unary kinds reject it.  `c` is only read by Scale.
inline Tensor elementwise(Tape& tape, ElementwiseKind kind, const Tensor& a,
                          const Tensor* b = nullptr, double c = 0.0) {
  const bool binary = kind == ElementwiseKind::Add ||
                      kind == ElementwiseKind::Sub ||
                      kind == ElementwiseKind::Mul;
  if (binary && b == nullptr)
    throw Error("elementwise: binary op requires a second operand");
  if (!binary && b != nullptr)
    throw Error("elementwise: unary op takes a single operand");
  switch (kind) {
    case ElementwiseKind::Add: return tape.add(a, *b);
    case ElementwiseKind::Sub: return tape.sub(a, *b);
    case ElementwiseKind::Mul: return tape.mul(a, *b);
    case ElementwiseKind::Relu: return tape.relu(a);
    case ElementwiseKind::Sigmoid: return tape.sigmoid(a);
    case ElementwiseKind::Abs: return tape.abs(a);
    case ElementwiseKind::Sign: return tape.sign(a);
    case ElementwiseKind::Scale: return tape.scale(a, c);
  }
  throw Error("elementwise: unreachable");
}

}  // namespace adapmtl
