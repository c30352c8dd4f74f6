// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/data.hpp"
#include "patchcast/init.hpp"
#include "patchcast/model.hpp"
#include "patchcast/pretrain.hpp"

#include <random>
#include <vector>

namespace patchcast::testing {

/// d_model=8, 2 layers, 2 heads, L=64 with scales {16, 32, 64} -> N=4 tokens.
inline ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.context_len = 64;
  mc.horizon = 8;
  mc.n_vars = 1;
  mc.scales = {16, 32, 64};
  mc.encoder.n_layers = 2;
  mc.encoder.n_heads = 2;
  mc.encoder.d_model = 8;
  mc.encoder.d_ff = 16;
  mc.init_seed = 3;
  return mc;
}

/// Noisy sine windows whose domain has fitted teachers.
struct TinyCorpus {
  std::vector<Series> series;
  std::vector<TimeSeriesWindow> windows;
  TeacherSet teachers;
};

inline TinyCorpus tiny_corpus(const ModelConfig& mc, Index length = 400, std::uint64_t seed = 4) {
  SyntheticSpec spec;
  spec.length = length;
  spec.level = 2.0;
  spec.noise_std = 0.2;
  spec.slope = 0.002;
  spec.n_vars = mc.n_vars;
  spec.seed = seed;
  TinyCorpus c;
  c.series = generate_synthetic(spec);
  c.windows = make_windows(c.series.front(), mc.context_len, mc.horizon, 8).windows;
  c.teachers = fit_teachers(c.series);
  return c;
}

/// Perturbs every tensor so zero-initialized heads and adapters carry gradient
/// signal through all paths.
inline void perturb_params(ParamStore& s, std::uint64_t seed, double std = 0.2) {
  std::mt19937_64 rng(seed);
  for (auto& p : s) p.value += normal_init(p.value.rows(), p.value.cols(), std, rng);
  s.round_to_f32();
}

}  // namespace patchcast::testing
