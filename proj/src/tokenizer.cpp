// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/tokenizer.hpp"

#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <cmath>
#include <string>

namespace patchcast {

Matrix PatchGrid::patch(Index i) const {
  if (i < 0 || i >= n_patches) throw std::out_of_range("patch index out of range");
  return Eigen::Map<const Matrix>(patches.row(i).data(), patch_len, n_vars);
}

PatchGrid patchify(const Matrix& values, Index patch_len, int scale_index) {
  if (patch_len < 1) throw ShapeError("patchify: patch length must be positive");
  const Index L = values.rows();
  if (L < patch_len)
    throw ShapeError("patchify: context length " + std::to_string(L) + " is shorter than patch length " +
                     std::to_string(patch_len));
  PatchGrid g;
  g.scale_index = scale_index;
  g.patch_len = patch_len;
  g.n_vars = values.cols();
  g.n_patches = L / patch_len;
  g.dropped_prefix = L - g.n_patches * patch_len;
  // Row-major storage makes a run of consecutive rows one contiguous
  // time-major block, so each patch is a straight copy.
  const Matrix kept = values.bottomRows(g.n_patches * patch_len);
  g.patches = Eigen::Map<const Matrix>(kept.data(), g.n_patches, patch_len * g.n_vars);
  return g;
}

PatchGrid patchify(const TimeSeriesWindow& w, Index patch_len, int scale_index) {
  return patchify(w.values, patch_len, scale_index);
}

Matrix unpatchify(const PatchGrid& grid) {
  return Eigen::Map<const Matrix>(grid.patches.data(), grid.n_patches * grid.patch_len, grid.n_vars);
}

Matrix embed_patches(const PatchGrid& grid, const Matrix& weight, const RowVector& bias) {
  if (weight.rows() != grid.patches.cols())
    throw ShapeError("embed_patches: weight has " + std::to_string(weight.rows()) + " rows, patches flatten to " +
                     std::to_string(grid.patches.cols()));
  if (bias.cols() != weight.cols()) throw ShapeError("embed_patches: bias width does not match d_model");
  Matrix out = grid.patches * weight;
  out.rowwise() += bias;
  return out;
}

Matrix positional_encoding(Index n_positions, Index d_model) {
  if (d_model < 2 || d_model % 2 != 0)
    throw ShapeError("positional_encoding: d_model must be even, got " + std::to_string(d_model));
  Matrix pe(n_positions, d_model);
  for (Index pos = 0; pos < n_positions; ++pos)
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  return pe;
}

void validate_scales(std::span<const Index> scales) {
  if (scales.empty()) throw ShapeError("scales: at least one patch size is required");
  if (scales[0] < 1) throw ShapeError("scales: patch sizes must be positive");
  for (std::size_t k = 1; k < scales.size(); ++k)
    if (scales[k] != 2 * scales[k - 1])
      throw ShapeError("scales: patch size " + std::to_string(scales[k]) + " is not twice " +
                       std::to_string(scales[k - 1]));
}

std::vector<Index> upsample_map(Index n_fine, Index n_coarse, Index factor) {
  std::vector<Index> map(static_cast<std::size_t>(n_fine));
  for (Index i = 0; i < n_fine; ++i) {
    const Index from_end = (n_fine - 1 - i) / factor;
    map[static_cast<std::size_t>(i)] = n_coarse - 1 - std::min(from_end, n_coarse - 1);
  }
  return map;
}

namespace tokenizer_names {
std::string embed_weight(std::size_t k) { return "tok.embed." + std::to_string(k) + ".weight"; }
std::string embed_bias(std::size_t k) { return "tok.embed." + std::to_string(k) + ".bias"; }
}  // namespace tokenizer_names

void add_tokenizer_params(ParamStore& store, std::span<const Index> scales, Index n_vars, Index d_model,
                          std::mt19937_64& rng) {
  validate_scales(scales);
  for (std::size_t k = 0; k < scales.size(); ++k) {
    store.add(tokenizer_names::embed_weight(k), xavier_uniform(scales[k] * n_vars, d_model, rng));
    store.add(tokenizer_names::embed_bias(k), Matrix::Zero(1, d_model));
  }
  store.add(tokenizer_names::kScaleLogits, Matrix::Zero(1, static_cast<Index>(scales.size())));
  store.add(tokenizer_names::kMaskToken, normal_init(1, d_model, 0.02, rng));
}

ad::Var tokenize(ad::Tape& tape, const Matrix& values, const ParamStore& params, std::span<const Index> scales,
                 const TokenizeOptions& options) {
  validate_scales(scales);
  const Index L = values.rows();
  if (L < scales.back())
    throw ShapeError("tokenize: context length " + std::to_string(L) + " is shorter than the largest patch " +
                     std::to_string(scales.back()));
  const Index n_fine = L / scales[0];
  ad::Var alpha = ad::softmax_rows(tape.param(params, tokenizer_names::kScaleLogits));
  if (alpha.cols() != static_cast<Index>(scales.size()))
    throw ShapeError("tokenize: scale logits do not match the number of scales");

  ad::Var agg;
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const PatchGrid grid = patchify(values, scales[k], static_cast<int>(k + 1));
    ad::Var w = tape.param(params, tokenizer_names::embed_weight(k));
    ad::Var b = tape.param(params, tokenizer_names::embed_bias(k));
    if (w.rows() != grid.patches.cols())
      throw ShapeError("tokenize: embedding for scale " + std::to_string(k + 1) + " expects " +
                       std::to_string(w.rows()) + " inputs, patches have " + std::to_string(grid.patches.cols()));
    ad::Var e = ad::add_row(ad::matmul(tape.constant(grid.patches), w), b);
    if (k > 0) {
      const auto map = upsample_map(n_fine, grid.n_patches, scales[k] / scales[0]);
      e = ad::gather_rows(e, map);
    }
    ad::Var term = ad::scale_by_entry(e, alpha, static_cast<Index>(k));
    agg = agg.valid() ? ad::add(agg, term) : term;
  }
  if (!options.mask_rows.empty())
    agg = ad::replace_rows(agg, options.mask_rows, tape.param(params, tokenizer_names::kMaskToken));
  if (options.positional) agg = ad::add(agg, tape.constant(positional_encoding(n_fine, agg.cols())));
  return agg;
}

TokenEmbedding multiscale_tokenize(const TimeSeriesWindow& w, const ParamStore& params, std::span<const Index> scales,
                                   bool positional) {
  ad::Tape tape(false);
  TokenizeOptions opts;
  opts.positional = positional;
  ad::Var tokens = tokenize(tape, w.values, params, scales, opts);
  TokenEmbedding out;
  out.tokens = tokens.value();
  out.scale_weights = ad::softmax_rows(tape.param(params, tokenizer_names::kScaleLogits)).value();
  out.d_model = out.tokens.cols();
  return out;
}

}  // namespace patchcast
