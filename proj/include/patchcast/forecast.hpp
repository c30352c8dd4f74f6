// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"
#include "patchcast/optim.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace patchcast {

struct ForecastResult {
  Matrix point;                  // H x D, original units
  std::vector<Matrix> quantiles; // one H x D matrix per level, nondecreasing across levels
  std::vector<double> levels;
  std::string model_id;
  Index window_id = 0;
  Index horizon = 0;
};

enum class MissingStrategy {
  /// Observed-only statistics, zero fill in normalized units, and the mask
  /// token for any finest-scale patch that is more than half missing.
  mask_token,
  /// Placeholders are treated as real zeros: no mask, no token substitution.
  zero_fill,
};

struct ForecastOptions {
  MissingStrategy missing = MissingStrategy::mask_token;
  double heavy_missing_fraction = 0.5;
  std::string model_id = "patchcast";
};

/// Finest-grid tokens whose patch has strictly more than `fraction` of its
/// entries unobserved.
std::vector<Index> heavily_missing_tokens(const Mask& observed, Index patch_len, double fraction = 0.5);

/// normalize -> tokenize -> encode -> heads -> sort quantiles -> denormalize.
ForecastResult zero_shot_forecast(const PatchModel& model, const TimeSeriesWindow& raw,
                                  const ForecastOptions& options = {}, Index window_id = 0);

/// Sorts the quantile outputs of every (h, d) coordinate in place.
void enforce_quantile_monotonicity(std::vector<Matrix>& quantiles);

/// Mean over (h, d, q) of q * max(y - yhat, 0) + (1 - q) * max(yhat - y, 0).
double pinball_loss(std::span<const Matrix> quantiles, const Matrix& target, std::span<const double> levels);

struct FinetuneConfig {
  long steps = 200;
  Index batch_size = 8;
  double peak_lr = 1e-3;
  double warmup_frac = 0.05;
  double grad_clip = 1.0;
  double pinball_weight = 1.0;
  std::uint64_t seed = 0;
  AdamWConfig adamw;

  void write(Config& c) const;
  static FinetuneConfig read(const Config& c);
};

/// Normalized-space MSE(point) + pinball_weight * pinball(quantiles) over a
/// batch, with gradients for trainable tensors when `grads` is non-null.
double supervised_loss(const PatchModel& model, std::span<const TimeSeriesWindow> batch, double pinball_weight,
                       Gradients* grads);

/// Trains whatever is marked trainable in `model.params()` on raw windows
/// (with targets). Returns the per-step losses.
std::vector<double> train_supervised(PatchModel& model, std::span<const TimeSeriesWindow> windows,
                                     const FinetuneConfig& config);

/// Copy of `model` with adapters enabled and only adapters + heads trained.
PatchModel finetune_adapters(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                             const FinetuneConfig& config);

/// window_id,h,variable,point,q10,...,q90 (levels as percent).
void write_forecast_csv(std::ostream& out, std::span<const ForecastResult> results);

}  // namespace patchcast
