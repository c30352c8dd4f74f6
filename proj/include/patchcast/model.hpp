// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/autodiff.hpp"
#include "patchcast/config.hpp"
#include "patchcast/encoder.hpp"
#include "patchcast/params.hpp"
#include "patchcast/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace patchcast {

inline const std::vector<double>& default_quantile_levels() {
  static const std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  return levels;
}

struct ModelConfig {
  Index context_len = 512;
  Index horizon = 96;
  Index n_vars = 1;
  std::vector<Index> scales{16, 32, 64};
  EncoderConfig encoder = EncoderConfig::desk();
  /// Output width of the contrastive projection head.
  Index proj_dim = 128;
  std::vector<double> quantile_levels = default_quantile_levels();
  std::uint64_t init_seed = 0;

  Index n_tokens() const { return context_len / scales.front(); }
  Index patch_width() const { return scales.front() * n_vars; }
  void validate() const;

  /// Writes every hyperparameter under [model] and [encoder].
  void write(Config& c) const;
  static ModelConfig read(const Config& c);
};

/// All learnable tensors plus the forward pieces that use them.
class PatchModel {
 public:
  explicit PatchModel(ModelConfig config);
  /// Adopts existing tensors; throws DataError if any name or shape differs
  /// from what the config implies.
  PatchModel(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Expected tensor census for a config, in storage order.
  static std::vector<TensorShape> tensor_shapes(const ModelConfig& config);

  /// Switches adapters on, adding zero-initialized adapter tensors if needed.
  void enable_adapters();

  /// Marks only adapters and forecast heads trainable.
  void freeze_backbone();
  void unfreeze_all();

  ad::Var tokens(ad::Tape& tape, const Matrix& normalized, std::span<const Index> mask_rows = {},
                 bool positional = true) const;
  ad::Var encode(ad::Tape& tape, ad::Var tokens, AttentionTrace* trace = nullptr) const;
  /// Linear per-token reconstruction of the finest-scale patches: N x (P_1 * D).
  ad::Var decode(ad::Tape& tape, ad::Var encoded) const;
  /// Mean-pool then two-layer ReLU projection: 1 x proj_dim.
  ad::Var project(ad::Tape& tape, ad::Var encoded) const;
  /// Normalized-unit point forecast, H x D.
  ad::Var point_head(ad::Tape& tape, ad::Var encoded) const;
  /// Raw quantile outputs, (H * D) x Q with row h * D + d.
  ad::Var quantile_head(ad::Tape& tape, ad::Var encoded) const;

 private:
  ModelConfig config_;
  ParamStore params_;
};

/// True for tensors updated by adapter fine-tuning.
bool is_finetune_trainable(const std::string& name);

}  // namespace patchcast
