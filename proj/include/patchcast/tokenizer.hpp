// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-scale patch tokenization: patchify each scale, embed, upsample the
// coarse grids onto the finest one, blend with softmax scale weights, and add
// a fixed sinusoidal positional encoding.

#pragma once

#include "patchcast/autodiff.hpp"
#include "patchcast/data.hpp"
#include "patchcast/params.hpp"

#include <random>
#include <span>
#include <vector>

namespace patchcast {

/// Non-overlapping patches of one scale. Leftover timesteps are dropped from
/// the oldest end so that the last patch ends at the final context row.
struct PatchGrid {
  int scale_index = 1;  // 1-based
  Index patch_len = 0;
  Index n_patches = 0;
  Index n_vars = 0;
  Index dropped_prefix = 0;
  /// n_patches x (patch_len * n_vars); each row is one patch flattened
  /// time-major (all variables of step 0, then step 1, ...).
  Matrix patches;

  /// patch_len x n_vars view of patch i.
  Matrix patch(Index i) const;
};

PatchGrid patchify(const Matrix& values, Index patch_len, int scale_index = 1);
PatchGrid patchify(const TimeSeriesWindow& w, Index patch_len, int scale_index = 1);

/// Concatenates the patches back into (n_patches * patch_len) x n_vars rows.
Matrix unpatchify(const PatchGrid& grid);

/// tokens = patches * weight + bias, weight is (P*D) x d_model.
Matrix embed_patches(const PatchGrid& grid, const Matrix& weight, const RowVector& bias);

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same angle).
Matrix positional_encoding(Index n_positions, Index d_model);

/// Throws unless scales are positive and each is twice the previous one.
void validate_scales(std::span<const Index> scales);

/// For each finest-grid token, the index of the coarse token that covers it.
/// Grids are aligned at the most recent end; fine tokens older than the
/// coarse grid reuse the oldest coarse token.
std::vector<Index> upsample_map(Index n_fine, Index n_coarse, Index factor);

struct TokenEmbedding {
  Matrix tokens;            // N x d_model
  RowVector scale_weights;  // softmax of the scale logits
  Index d_model = 0;
};

namespace tokenizer_names {
std::string embed_weight(std::size_t k);
std::string embed_bias(std::size_t k);
inline constexpr const char* kScaleLogits = "tok.scale_logits";
inline constexpr const char* kMaskToken = "tok.mask_token";
}  // namespace tokenizer_names

/// Embedding tables for every scale, zero scale logits, and the mask token.
void add_tokenizer_params(ParamStore& store, std::span<const Index> scales, Index n_vars, Index d_model,
                          std::mt19937_64& rng);

struct TokenizeOptions {
  /// Finest-grid rows replaced by the mask token (before positional encoding).
  std::span<const Index> mask_rows;
  bool positional = true;
};

/// Differentiable tokenization of a (normalized) L x D context.
ad::Var tokenize(ad::Tape& tape, const Matrix& values, const ParamStore& params, std::span<const Index> scales,
                 const TokenizeOptions& options = {});

/// Value-only convenience wrapper over tokenize().
TokenEmbedding multiscale_tokenize(const TimeSeriesWindow& w, const ParamStore& params, std::span<const Index> scales,
                                   bool positional = true);

}  // namespace patchcast
