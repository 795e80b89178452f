#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adapmtl/common.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"
#include "adapmtl/trainer.hpp"

// Binary training checkpoints.  A checkpoint carries the model spec, all
// parameters, pruner and weighting state, and enough bookkeeping to resume
// training bit-identically.
namespace adapmtl {

inline constexpr char kCheckpointMagic[4] = {'A', 'M', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::size_t epoch = 0;
  std::size_t iter = 0;
  std::vector<double> betas;
  PrunerKind kind = PrunerKind::None;
  bool frozen = false;
  std::size_t freeze_epoch = 0;
  ModelSpec spec;

  struct Comp {
    std::string name;
    double theta = 0.0;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    bool mask_frozen = false;
    std::vector<std::vector<std::uint8_t>> frozen_mask;
  };
  std::vector<Comp> comps;
  Pruner::HardMasks hard_masks;

  struct Window {
    std::uint64_t count = 0;
    std::vector<double> values;
  };
  std::vector<Window> windows;
};

namespace detail {

inline void write_string(std::ostream& os, const std::string& s) {
  io::write_u32(os, static_cast<std::uint32_t>(s.size()));
  io::write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what) {
  const std::uint32_t n = io::read_u32(is, what);
  if (n > (1u << 20)) throw DataError(std::string("oversized string: ") + what);
  std::string s(n, '\0');
  io::read_bytes(is, s.data(), n, what);
  return s;
}

inline void write_mask(std::ostream& os, const std::vector<std::uint8_t>& m) {
  io::write_u64(os, m.size());
  io::write_bytes(os, m.data(), m.size());
}

inline std::vector<std::uint8_t> read_mask(std::istream& is) {
  const std::uint64_t n = io::read_u64(is, "mask length");
  std::vector<std::uint8_t> m(n);
  io::read_bytes(is, m.data(), n, "mask bytes");
  for (auto b : m)
    if (b > 1) throw DataError("mask byte is not 0/1");
  return m;
}

inline void write_model_spec(std::ostream& os, const ModelSpec& spec) {
  io::write_u64(os, spec.input_dim);
  io::write_u32(os, static_cast<std::uint32_t>(spec.backbone_widths.size()));
  for (auto w : spec.backbone_widths) io::write_u64(os, w);
  io::write_u32(os, static_cast<std::uint32_t>(spec.heads.size()));
  for (const auto& h : spec.heads) {
    write_string(os, h.name);
    io::write_u64(os, h.input_dim);
    io::write_u32(os, static_cast<std::uint32_t>(h.widths.size()));
    for (auto w : h.widths) io::write_u64(os, w);
    write_string(os, loss_kind_name(h.loss));
  }
}

inline ModelSpec read_model_spec(std::istream& is) {
  ModelSpec spec;
  spec.input_dim = io::read_u64(is, "input_dim");
  const std::uint32_t n_bb = io::read_u32(is, "backbone width count");
  for (std::uint32_t i = 0; i < n_bb; ++i)
    spec.backbone_widths.push_back(io::read_u64(is, "backbone width"));
  const std::uint32_t n_heads = io::read_u32(is, "head count");
  for (std::uint32_t i = 0; i < n_heads; ++i) {
    HeadSpec h;
    h.name = read_string(is, "head name");
    h.input_dim = io::read_u64(is, "head input_dim");
    const std::uint32_t n_w = io::read_u32(is, "head width count");
    for (std::uint32_t k = 0; k < n_w; ++k)
      h.widths.push_back(io::read_u64(is, "head width"));
    h.loss = parse_loss_kind(read_string(is, "head loss"));
    spec.heads.push_back(std::move(h));
  }
  return spec;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Trainer& trainer) {
  const auto& model = trainer.model();
  const auto& cfg = trainer.config();
  auto os = io::open_out(path);
  io::write_magic(os, kCheckpointMagic);
  io::write_u32(os, kCheckpointVersion);
  io::write_u64(os, config_fingerprint(cfg, model.spec, trainer.dataset()));
  io::write_u64(os, trainer.epoch());
  io::write_u64(os, trainer.iteration());

  io::write_u64(os, trainer.betas().size());
  io::write_f64_array(os, trainer.betas());

  const auto& pruner = trainer.pruner();
  os.put(static_cast<char>(pruner.kind()));
  os.put(pruner.frozen() ? 1 : 0);
  io::write_u64(os, pruner.freeze_epoch());

  // Model spec, so a checkpoint is self-describing for export.
  detail::write_model_spec(os, model.spec);

  const auto comps = model.components();
  io::write_u32(os, static_cast<std::uint32_t>(comps.size()));
  for (const auto* c : comps) {
    detail::write_string(os, c->name);
    io::write_f64(os, c->theta.values()[0]);
    io::write_u32(os, static_cast<std::uint32_t>(c->weights.size()));
    for (const auto& w : c->weights) {
      io::write_u64(os, w.shape()[0]);
      io::write_u64(os, w.shape()[1]);
      io::write_f64_array(os, w.values());
    }
    io::write_u32(os, static_cast<std::uint32_t>(c->biases.size()));
    for (const auto& b : c->biases) {
      io::write_u64(os, b.size());
      io::write_f64_array(os, b.values());
    }
    os.put(c->mask_frozen ? 1 : 0);
    if (c->mask_frozen)
      for (const auto& m : c->frozen_mask) detail::write_mask(os, m);
  }

  if (pruner.kind() == PrunerKind::MagnitudeIterative)
    for (const auto& comp_masks : pruner.hard_masks())
      for (const auto& m : comp_masks) detail::write_mask(os, m);

  const auto& weighting = trainer.weighting();
  io::write_u32(os, static_cast<std::uint32_t>(weighting.task_count()));
  for (std::size_t t = 0; t < weighting.task_count(); ++t) {
    const auto& w = weighting.window(t);
    io::write_u64(os, w.count());
    const auto values = w.contents();
    io::write_u64(os, values.size());
    io::write_f64_array(os, values);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kCheckpointMagic, "checkpoint");
  CheckpointData d;
  d.version = io::read_u32(is, "checkpoint version");
  if (d.version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version: " + path);
  d.config_hash = io::read_u64(is, "config hash");
  d.epoch = io::read_u64(is, "epoch");
  d.iter = io::read_u64(is, "iteration");

  const std::uint64_t n_betas = io::read_u64(is, "beta count");
  d.betas = io::read_f64_array(is, n_betas, "betas");

  char kind_byte = 0, frozen_byte = 0;
  io::read_bytes(is, &kind_byte, 1, "pruner kind");
  if (kind_byte < 0 || kind_byte > 3)
    throw DataError("bad pruner kind byte in checkpoint");
  d.kind = static_cast<PrunerKind>(kind_byte);
  io::read_bytes(is, &frozen_byte, 1, "frozen flag");
  d.frozen = frozen_byte != 0;
  d.freeze_epoch = io::read_u64(is, "freeze epoch");

  d.spec = detail::read_model_spec(is);

  const std::uint32_t n_comps = io::read_u32(is, "component count");
  for (std::uint32_t ci = 0; ci < n_comps; ++ci) {
    CheckpointData::Comp c;
    c.name = detail::read_string(is, "component name");
    c.theta = io::read_f64(is, "theta");
    const std::uint32_t n_w = io::read_u32(is, "weight tensor count");
    std::vector<std::size_t> sizes;
    for (std::uint32_t wi = 0; wi < n_w; ++wi) {
      const std::uint64_t rows = io::read_u64(is, "weight rows");
      const std::uint64_t cols = io::read_u64(is, "weight cols");
      sizes.push_back(rows * cols);
      c.weights.push_back(io::read_f64_array(is, rows * cols, "weights"));
    }
    const std::uint32_t n_b = io::read_u32(is, "bias tensor count");
    for (std::uint32_t bi = 0; bi < n_b; ++bi) {
      const std::uint64_t len = io::read_u64(is, "bias length");
      c.biases.push_back(io::read_f64_array(is, len, "biases"));
    }
    char mf = 0;
    io::read_bytes(is, &mf, 1, "mask_frozen flag");
    c.mask_frozen = mf != 0;
    if (c.mask_frozen)
      for (std::uint32_t wi = 0; wi < n_w; ++wi) {
        auto m = detail::read_mask(is);
        if (m.size() != sizes[wi])
          throw DataError("frozen mask length mismatch in checkpoint");
        c.frozen_mask.push_back(std::move(m));
      }
    d.comps.push_back(std::move(c));
  }

  if (d.kind == PrunerKind::MagnitudeIterative)
    for (const auto& c : d.comps) {
      std::vector<std::vector<std::uint8_t>> comp_masks;
      for (const auto& w : c.weights) {
        auto m = detail::read_mask(is);
        if (m.size() != w.size())
          throw DataError("hard mask length mismatch in checkpoint");
        comp_masks.push_back(std::move(m));
      }
      d.hard_masks.push_back(std::move(comp_masks));
    }

  const std::uint32_t n_tasks = io::read_u32(is, "task count");
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    CheckpointData::Window w;
    w.count = io::read_u64(is, "window count");
    const std::uint64_t stored = io::read_u64(is, "window size");
    w.values = io::read_f64_array(is, stored, "window values");
    d.windows.push_back(std::move(w));
  }

  if (is.peek() != std::istream::traits_type::eof())
    throw DataError("trailing bytes after checkpoint payload: " + path);
  return d;
}

// Overwrites a freshly built model's parameters and frozen masks with the
// checkpoint's. The model must have been built from the same spec.
inline void apply_checkpoint_to_model(const CheckpointData& d,
                                      MultitaskModel& model) {
  auto comps = model.components();
  if (comps.size() != d.comps.size())
    throw StateError("checkpoint component count does not match model");
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    Component* c = comps[ci];
    const auto& s = d.comps[ci];
    if (c->name != s.name)
      throw StateError("checkpoint component order does not match model");
    if (c->weights.size() != s.weights.size() ||
        c->biases.size() != s.biases.size())
      throw StateError("checkpoint layer count does not match model");
    c->theta.values()[0] = s.theta;
    for (std::size_t wi = 0; wi < s.weights.size(); ++wi) {
      if (c->weights[wi].size() != s.weights[wi].size())
        throw StateError("checkpoint weight shape does not match model");
      c->weights[wi].values() = s.weights[wi];
    }
    for (std::size_t bi = 0; bi < s.biases.size(); ++bi) {
      if (c->biases[bi].size() != s.biases[bi].size())
        throw StateError("checkpoint bias shape does not match model");
      c->biases[bi].values() = s.biases[bi];
    }
    c->mask_frozen = s.mask_frozen;
    c->frozen_mask = s.frozen_mask;
  }
}

// Rebuilds a standalone model from a checkpoint (for export and bench).
inline MultitaskModel model_from_checkpoint(const CheckpointData& d) {
  MultitaskModel model = build_model(d.spec, 0.0, 1);
  if (d.kind == PrunerKind::SharedThreshold)
    for (auto& head : model.heads) head.theta = model.backbone.theta;
  apply_checkpoint_to_model(d, model);
  return model;
}

// Reconstructs a Trainer mid-run.  The caller supplies a freshly built model
// plus the same dataset and config the original run used.
inline Trainer resume_training(const std::string& path, MultitaskModel& model,
                               const SynthDataset& ds, const TrainConfig& cfg) {
  const CheckpointData d = read_checkpoint(path);
  const std::uint64_t expect = config_fingerprint(cfg, model.spec, ds);
  if (d.config_hash != expect)
    throw ConfigError("checkpoint was written under a different setup");
  if (d.kind != cfg.pruner_kind)
    throw ConfigError("checkpoint pruner kind does not match config");

  Trainer trainer(model, ds, cfg);
  apply_checkpoint_to_model(d, model);
  trainer.pruner().restore_state(d.frozen, d.freeze_epoch, d.hard_masks);
  if (d.windows.size() != trainer.weighting().task_count())
    throw StateError("checkpoint window count does not match tasks");
  for (std::size_t t = 0; t < d.windows.size(); ++t)
    trainer.weighting().window(t).restore(d.windows[t].values,
                                          d.windows[t].count);
  trainer.restore_progress(d.epoch, d.iter, d.betas);
  return trainer;
}

}  // namespace adapmtl
