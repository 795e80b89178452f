#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "adapmtl/checkpoint.hpp"
#include "adapmtl/common.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"
#include "adapmtl/synth_data.hpp"

// Sparse inference: CSR export of a frozen model, a mul-add-counting sparse
// forward pass, and a small wall-clock benchmark against the dense loop.
namespace adapmtl {

struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // rows + 1 entries
  std::vector<std::size_t> col_indices;  // strictly increasing per row
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  void validate() const {
    if (row_offsets.size() != rows + 1)
      throw DataError("csr: row_offsets must have rows + 1 entries");
    if (row_offsets.front() != 0) throw DataError("csr: offsets must start at 0");
    if (row_offsets.back() != values.size())
      throw DataError("csr: final offset must equal nnz");
    if (col_indices.size() != values.size())
      throw DataError("csr: col_indices and values disagree on nnz");
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_offsets[r] > row_offsets[r + 1])
        throw DataError("csr: row offsets must be non-decreasing");
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        if (col_indices[k] >= cols)
          throw DataError("csr: column index out of range");
        if (k > row_offsets[r] && col_indices[k] <= col_indices[k - 1])
          throw DataError("csr: column indices must increase within a row");
      }
    }
  }
};

// Builds CSR structure from a row-major dense matrix; `keep` marks the
// structural positions (kept entries may still hold the value zero).
inline CsrMatrix csr_from_dense(std::size_t rows, std::size_t cols,
                                const std::vector<double>& dense,
                                const std::vector<std::uint8_t>& keep) {
  if (dense.size() != rows * cols)
    throw DataError("csr_from_dense: dense size does not match shape");
  if (keep.size() != dense.size())
    throw DataError("csr_from_dense: keep mask size does not match shape");
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_offsets.push_back(0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      if (keep[r * cols + c]) {
        m.col_indices.push_back(c);
        m.values.push_back(dense[r * cols + c]);
      }
    m.row_offsets.push_back(m.values.size());
  }
  return m;
}

struct SparseLayer {
  CsrMatrix weights;
  std::vector<double> bias;
};

struct SparseComponent {
  std::string name;
  std::vector<SparseLayer> layers;

  std::size_t nnz() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.weights.nnz();
    return total;
  }
  std::size_t dense_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.weights.rows * l.weights.cols;
    return total;
  }
};

struct SparseModel {
  ModelSpec spec;
  std::string pruner;
  SparseComponent backbone;
  std::vector<SparseComponent> heads;

  std::vector<const SparseComponent*> components() const {
    std::vector<const SparseComponent*> out{&backbone};
    for (const auto& h : heads) out.push_back(&h);
    return out;
  }
};

// Converts a frozen model into CSR form. The exported values are exactly
// what the masked forward pass multiplied by: soft-thresholded weights for
// the learned-threshold kinds, raw weights under hard or trivial masks.
// Refuses while any mask is still unfrozen.
inline SparseModel export_sparse(const MultitaskModel& model,
                                 const Pruner& pruner) {
  const auto comps = model.components();
  for (const auto* c : comps)
    if (!c->mask_frozen)
      throw StateError("export requires frozen masks: component '" + c->name +
                       "' is still training");

  const bool soft = pruner.kind() == PrunerKind::AdapMtl ||
                    pruner.kind() == PrunerKind::SharedThreshold;
  SparseModel out;
  out.spec = model.spec;
  out.pruner = pruner_kind_name(pruner.kind());
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    const Component* c = comps[ci];
    SparseComponent sc;
    sc.name = c->name;
    for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
      const auto& w = c->weights[wi];
      std::vector<double> effective =
          soft ? soft_threshold_values(w.values(), c->alpha()) : w.values();
      SparseLayer layer;
      layer.weights = csr_from_dense(w.shape()[0], w.shape()[1], effective,
                                     c->frozen_mask[wi]);
      layer.bias = c->biases[wi].values();
      sc.layers.push_back(std::move(layer));
    }
    if (ci == 0)
      out.backbone = std::move(sc);
    else
      out.heads.push_back(std::move(sc));
  }
  return out;
}

struct SpmvCounter {
  std::size_t muladds = 0;
};

// y[m, cols] += x[m, rows] * W for one CSR layer; counts one mul-add per
// stored entry per sample.
inline void spmv(const CsrMatrix& w, const std::vector<double>& x,
                 std::size_t m, std::vector<double>& y, SpmvCounter* counter) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double xv = x[r * w.rows + i];
      for (std::size_t k = w.row_offsets[i]; k < w.row_offsets[i + 1]; ++k)
        y[r * w.cols + w.col_indices[k]] += xv * w.values[k];
    }
  if (counter != nullptr) counter->muladds += m * w.nnz();
}

namespace detail {

inline std::vector<double> sparse_layers_forward(
    const std::vector<SparseLayer>& layers, std::vector<double> h,
    std::size_t m, bool relu_last, SpmvCounter* counter) {
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& layer = layers[li];
    std::vector<double> next(m * layer.weights.cols, 0.0);
    spmv(layer.weights, h, m, next, counter);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < layer.weights.cols; ++c)
        next[r * layer.weights.cols + c] += layer.bias[c];
    const bool relu = li + 1 < layers.size() || relu_last;
    if (relu)
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  return h;
}

inline std::vector<double> dense_layers_forward(
    const std::vector<SparseLayer>& layers, std::vector<double> h,
    std::size_t m, bool relu_last, SpmvCounter* counter) {
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& layer = layers[li];
    const std::size_t rows = layer.weights.rows;
    const std::size_t cols = layer.weights.cols;
    std::vector<double> dense(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = layer.weights.row_offsets[r];
           k < layer.weights.row_offsets[r + 1]; ++k)
        dense[r * cols + layer.weights.col_indices[k]] = layer.weights.values[k];
    std::vector<double> next(m * cols, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t i = 0; i < rows; ++i) {
        const double xv = h[r * rows + i];
        for (std::size_t c = 0; c < cols; ++c)
          next[r * cols + c] += xv * dense[i * cols + c];
      }
    if (counter != nullptr) counter->muladds += m * rows * cols;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < cols; ++c) next[r * cols + c] += layer.bias[c];
    const bool relu = li + 1 < layers.size() || relu_last;
    if (relu)
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  return h;
}

}  // namespace detail

// Full forward for one task on a batch laid out row-major [m, input_dim].
inline std::vector<double> sparse_forward_task(const SparseModel& model,
                                               const std::vector<double>& x,
                                               std::size_t m, std::size_t task,
                                               SpmvCounter* counter = nullptr) {
  if (task >= model.heads.size())
    throw ConfigError("sparse_forward_task: no task " + std::to_string(task));
  if (x.size() != m * model.spec.input_dim)
    throw DataError("sparse_forward_task: input size does not match m");
  auto h = detail::sparse_layers_forward(model.backbone.layers, x, m, true,
                                         counter);
  return detail::sparse_layers_forward(model.heads[task].layers, std::move(h),
                                       m, false, counter);
}

inline std::vector<double> dense_forward_task(const SparseModel& model,
                                              const std::vector<double>& x,
                                              std::size_t m, std::size_t task,
                                              SpmvCounter* counter = nullptr) {
  if (task >= model.heads.size())
    throw ConfigError("dense_forward_task: no task " + std::to_string(task));
  if (x.size() != m * model.spec.input_dim)
    throw DataError("dense_forward_task: input size does not match m");
  auto h = detail::dense_layers_forward(model.backbone.layers, x, m, true,
                                        counter);
  return detail::dense_layers_forward(model.heads[task].layers, std::move(h),
                                      m, false, counter);
}

// Full forward for every task at once: the shared backbone runs a single
// time and each head consumes its output.
inline std::vector<std::vector<double>> sparse_forward_all(
    const SparseModel& model, const std::vector<double>& x, std::size_t m,
    SpmvCounter* counter = nullptr) {
  if (x.size() != m * model.spec.input_dim)
    throw DataError("sparse_forward_all: input size does not match m");
  const auto h =
      detail::sparse_layers_forward(model.backbone.layers, x, m, true, counter);
  std::vector<std::vector<double>> out;
  for (const auto& head : model.heads)
    out.push_back(
        detail::sparse_layers_forward(head.layers, h, m, false, counter));
  return out;
}

inline std::vector<std::vector<double>> dense_forward_all(
    const SparseModel& model, const std::vector<double>& x, std::size_t m,
    SpmvCounter* counter = nullptr) {
  if (x.size() != m * model.spec.input_dim)
    throw DataError("dense_forward_all: input size does not match m");
  const auto h =
      detail::dense_layers_forward(model.backbone.layers, x, m, true, counter);
  std::vector<std::vector<double>> out;
  for (const auto& head : model.heads)
    out.push_back(
        detail::dense_layers_forward(head.layers, h, m, false, counter));
  return out;
}

inline constexpr char kSparseMagic[4] = {'A', 'M', 'T', 'S'};
inline constexpr std::uint32_t kSparseVersion = 1;

inline void save_sparse_model(const std::string& path,
                              const SparseModel& model) {
  auto os = io::open_out(path);
  io::write_magic(os, kSparseMagic);
  io::write_u32(os, kSparseVersion);
  detail::write_model_spec(os, model.spec);
  detail::write_string(os, model.pruner);
  for (const auto* sc : model.components()) {
    detail::write_string(os, sc->name);
    io::write_u32(os, static_cast<std::uint32_t>(sc->layers.size()));
    for (const auto& layer : sc->layers) {
      const auto& w = layer.weights;
      io::write_u64(os, w.rows);
      io::write_u64(os, w.cols);
      io::write_u64(os, w.nnz());
      for (auto o : w.row_offsets) io::write_u64(os, o);
      for (auto c : w.col_indices) io::write_u64(os, c);
      io::write_f64_array(os, w.values);
      io::write_u64(os, layer.bias.size());
      io::write_f64_array(os, layer.bias);
    }
  }
  if (!os) throw DataError("sparse model write failed: " + path);
}

inline SparseModel load_sparse_model(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kSparseMagic, "sparse model");
  const std::uint32_t version = io::read_u32(is, "sparse model version");
  if (version != kSparseVersion)
    throw DataError("unsupported sparse model version: " + path);
  SparseModel model;
  model.spec = detail::read_model_spec(is);
  model.pruner = detail::read_string(is, "pruner name");

  const std::size_t n_comps = model.spec.heads.size() + 1;
  for (std::size_t ci = 0; ci < n_comps; ++ci) {
    SparseComponent sc;
    sc.name = detail::read_string(is, "component name");
    const std::uint32_t n_layers = io::read_u32(is, "layer count");
    for (std::uint32_t li = 0; li < n_layers; ++li) {
      SparseLayer layer;
      auto& w = layer.weights;
      w.rows = io::read_u64(is, "csr rows");
      w.cols = io::read_u64(is, "csr cols");
      const std::uint64_t nnz = io::read_u64(is, "csr nnz");
      for (std::size_t r = 0; r <= w.rows; ++r)
        w.row_offsets.push_back(io::read_u64(is, "csr offsets"));
      for (std::uint64_t k = 0; k < nnz; ++k)
        w.col_indices.push_back(io::read_u64(is, "csr columns"));
      w.values = io::read_f64_array(is, nnz, "csr values");
      w.validate();
      const std::uint64_t bias_len = io::read_u64(is, "bias length");
      if (bias_len != w.cols)
        throw DataError("bias length does not match layer width");
      layer.bias = io::read_f64_array(is, bias_len, "bias values");
      sc.layers.push_back(std::move(layer));
    }
    if (ci == 0)
      model.backbone = std::move(sc);
    else
      model.heads.push_back(std::move(sc));
  }
  if (is.peek() != std::istream::traits_type::eof())
    throw DataError("trailing bytes after sparse model payload: " + path);
  return model;
}

struct BenchResult {
  std::size_t batch = 0;
  std::size_t repeats = 0;
  std::size_t sparse_muladds = 0;  // one full multitask forward
  std::size_t dense_muladds = 0;
  double sparse_ns = 0.0;  // median wall time of one full forward
  double dense_ns = 0.0;
  double muladd_ratio = 0.0;
};

// Times full multitask forwards (all heads) over a random batch, reporting
// medians and exact mul-add counts for the sparse and dense loops.  The
// dense side defaults to the same model densified; pass `dense` to time a
// different model (e.g. the raw unpruned weights) on the dense loop instead.
inline BenchResult bench_sparse_model(const SparseModel& model,
                                      const SparseModel* dense, std::size_t m,
                                      std::size_t repeats, std::uint64_t seed) {
  if (m < 1) throw ConfigError("bench batch must be >= 1");
  if (repeats < 1) throw ConfigError("bench repeats must be >= 1");
  const SparseModel& dense_model = dense != nullptr ? *dense : model;
  if (dense_model.spec.input_dim != model.spec.input_dim ||
      dense_model.heads.size() != model.heads.size())
    throw ConfigError("bench: dense model shape does not match sparse model");
  std::mt19937_64 rng(seed);
  std::vector<double> x(m * model.spec.input_dim);
  for (auto& v : x) v = detail::gaussian(rng);

  const auto run_all = [&](bool sparse, SpmvCounter* counter) {
    const auto ys = sparse ? sparse_forward_all(model, x, m, counter)
                           : dense_forward_all(dense_model, x, m, counter);
    double sink = 0.0;
    for (const auto& y : ys) sink += y.empty() ? 0.0 : y[0];
    return sink;
  };

  const auto time_median = [&](bool sparse) {
    std::vector<double> samples;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      volatile double sink = run_all(sparse, nullptr);
      (void)sink;
      const auto stop = std::chrono::steady_clock::now();
      samples.push_back(
          std::chrono::duration<double, std::nano>(stop - start).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };

  BenchResult res;
  res.batch = m;
  res.repeats = repeats;
  SpmvCounter sparse_counter, dense_counter;
  run_all(true, &sparse_counter);
  run_all(false, &dense_counter);
  res.sparse_muladds = sparse_counter.muladds;
  res.dense_muladds = dense_counter.muladds;
  res.muladd_ratio =
      res.dense_muladds == 0
          ? 0.0
          : static_cast<double>(res.sparse_muladds) /
                static_cast<double>(res.dense_muladds);
  res.sparse_ns = time_median(true);
  res.dense_ns = time_median(false);
  return res;
}

inline BenchResult bench_sparse_model(const SparseModel& model, std::size_t m,
                                      std::size_t repeats, std::uint64_t seed) {
  return bench_sparse_model(model, nullptr, m, repeats, seed);
}

// CSR view of the raw dense weights (all positions structural), for timing
// an unpruned forward on the dense loop.
inline SparseModel raw_dense_view(const MultitaskModel& model) {
  SparseModel out;
  out.spec = model.spec;
  out.pruner = "none";
  const auto comps = model.components();
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    const Component* c = comps[ci];
    SparseComponent sc;
    sc.name = c->name;
    for (std::size_t wi = 0; wi < c->weights.size(); ++wi) {
      const auto& w = c->weights[wi];
      SparseLayer layer;
      layer.weights =
          csr_from_dense(w.shape()[0], w.shape()[1], w.values(),
                         std::vector<std::uint8_t>(w.size(), 1));
      layer.bias = c->biases[wi].values();
      sc.layers.push_back(std::move(layer));
    }
    if (ci == 0)
      out.backbone = std::move(sc);
    else
      out.heads.push_back(std::move(sc));
  }
  return out;
}

}  // namespace adapmtl
