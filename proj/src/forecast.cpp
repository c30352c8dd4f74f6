// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/forecast.hpp"

#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace patchcast {

std::vector<Index> heavily_missing_tokens(const Mask& observed, Index patch_len, double fraction) {
  const Index L = observed.rows(), D = observed.cols();
  if (patch_len < 1 || L < patch_len) throw ShapeError("heavily_missing_tokens: invalid patch length");
  const Index n = L / patch_len;
  const Index offset = L - n * patch_len;
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i) {
    const Index missing = (!observed.middleRows(offset + i * patch_len, patch_len)).count();
    if (static_cast<double>(missing) > fraction * static_cast<double>(patch_len * D)) out.push_back(i);
  }
  return out;
}

void enforce_quantile_monotonicity(std::vector<Matrix>& quantiles) {
  if (quantiles.empty()) return;
  std::vector<double> buf(quantiles.size());
  for (Index i = 0; i < quantiles[0].size(); ++i) {
    for (std::size_t q = 0; q < quantiles.size(); ++q) buf[q] = quantiles[q].data()[i];
    std::sort(buf.begin(), buf.end());
    for (std::size_t q = 0; q < quantiles.size(); ++q) quantiles[q].data()[i] = buf[q];
  }
}

namespace {

TimeSeriesWindow prepare_input(const TimeSeriesWindow& raw, MissingStrategy strategy) {
  if (strategy == MissingStrategy::zero_fill) {
    TimeSeriesWindow filled = raw;
    filled.values = raw.observed.select(raw.values, 0.0);
    filled.observed.setConstant(true);
    return normalize_window(filled);
  }
  return normalize_window(raw);
}

}  // namespace

ForecastResult zero_shot_forecast(const PatchModel& model, const TimeSeriesWindow& raw, const ForecastOptions& options,
                                  Index window_id) {
  const ModelConfig& mc = model.config();
  if (raw.context_len() < mc.scales.back())
    throw ShapeError("forecast: context length " + std::to_string(raw.context_len()) +
                     " is shorter than the largest patch " + std::to_string(mc.scales.back()));
  const TimeSeriesWindow norm = prepare_input(raw, options.missing);
  std::vector<Index> masked;
  if (options.missing == MissingStrategy::mask_token)
    masked = heavily_missing_tokens(raw.observed, mc.scales.front(), options.heavy_missing_fraction);

  ad::Tape tape(false);
  ad::Var encoded = model.encode(tape, model.tokens(tape, norm.values, masked));
  const Matrix point = model.point_head(tape, encoded).value();
  const Matrix quant = model.quantile_head(tape, encoded).value();

  ForecastResult r;
  r.model_id = options.model_id;
  r.window_id = window_id;
  r.horizon = mc.horizon;
  r.levels = mc.quantile_levels;
  r.point = denormalize(point, *norm.norm_state);
  for (Index q = 0; q < quant.cols(); ++q) {
    Matrix m(mc.horizon, mc.n_vars);
    for (Index h = 0; h < mc.horizon; ++h)
      for (Index d = 0; d < mc.n_vars; ++d) m(h, d) = quant(h * mc.n_vars + d, q);
    r.quantiles.push_back(std::move(m));
  }
  enforce_quantile_monotonicity(r.quantiles);
  for (auto& q : r.quantiles) q = denormalize(q, *norm.norm_state);
  if (!r.point.allFinite()) throw NumericError("forecast: non-finite point forecast");
  return r;
}

double pinball_loss(std::span<const Matrix> quantiles, const Matrix& target, std::span<const double> levels) {
  if (quantiles.size() != levels.size() || quantiles.empty())
    throw std::invalid_argument("pinball_loss: need one quantile matrix per level");
  for (std::size_t q = 0; q < levels.size(); ++q) {
    if (!(levels[q] > 0.0 && levels[q] < 1.0)) throw std::invalid_argument("pinball_loss: level outside (0, 1)");
    if (q > 0 && !(levels[q] > levels[q - 1])) throw std::invalid_argument("pinball_loss: levels must increase");
    if (quantiles[q].rows() != target.rows() || quantiles[q].cols() != target.cols())
      throw ShapeError("pinball_loss: quantile/target shape mismatch");
  }
  double total = 0.0;
  for (std::size_t q = 0; q < levels.size(); ++q)
    for (Index i = 0; i < target.size(); ++i) {
      const double diff = target.data()[i] - quantiles[q].data()[i];
      total += diff > 0.0 ? levels[q] * diff : (levels[q] - 1.0) * diff;
    }
  return total / (static_cast<double>(levels.size()) * static_cast<double>(target.size()));
}

void FinetuneConfig::write(Config& c) const {
  c.set("finetune.steps", static_cast<std::int64_t>(steps));
  c.set("finetune.batch_size", static_cast<std::int64_t>(batch_size));
  c.set("finetune.peak_lr", peak_lr);
  c.set("finetune.warmup_frac", warmup_frac);
  c.set("finetune.grad_clip", grad_clip);
  c.set("finetune.pinball_weight", pinball_weight);
  c.set("finetune.seed", seed);
  c.set("finetune.weight_decay", adamw.weight_decay);
}

FinetuneConfig FinetuneConfig::read(const Config& c) {
  FinetuneConfig f;
  f.steps = c.get_int("finetune.steps", f.steps);
  f.batch_size = c.get_int("finetune.batch_size", f.batch_size);
  f.peak_lr = c.get_double("finetune.peak_lr", f.peak_lr);
  f.warmup_frac = c.get_double("finetune.warmup_frac", f.warmup_frac);
  f.grad_clip = c.get_double("finetune.grad_clip", f.grad_clip);
  f.pinball_weight = c.get_double("finetune.pinball_weight", f.pinball_weight);
  f.seed = c.get_uint("finetune.seed", f.seed);
  f.adamw.weight_decay = c.get_double("finetune.weight_decay", f.adamw.weight_decay);
  if (f.steps < 0 || f.batch_size < 1) throw DataError(DataErrc::invalid_argument, "finetune config: invalid steps/batch");
  return f;
}

double supervised_loss(const PatchModel& model, std::span<const TimeSeriesWindow> batch, double pinball_weight,
                       Gradients* grads) {
  if (batch.empty()) throw std::invalid_argument("supervised_loss: empty batch");
  const ModelConfig& mc = model.config();
  ad::Tape tape(grads != nullptr);
  ad::Var total;
  for (const auto& raw : batch) {
    if (!raw.target) throw DataError(DataErrc::invalid_argument, "supervised_loss: window has no target");
    const TimeSeriesWindow norm = normalize_window(raw);
    ad::Var encoded = model.encode(tape, model.tokens(tape, norm.values));
    ad::Var target = tape.constant(*norm.target);
    ad::Var loss = ad::mse(model.point_head(tape, encoded), target);
    if (pinball_weight > 0.0) {
      ad::Var flat_target = ad::reshape(target, mc.horizon * mc.n_vars, 1);
      loss = ad::add(loss, ad::scale(ad::pinball(model.quantile_head(tape, encoded), flat_target, mc.quantile_levels),
                                     pinball_weight));
    }
    total = total.valid() ? ad::add(total, loss) : loss;
  }
  total = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  if (grads) {
    *grads = zero_gradients(model.params());
    tape.backward(total);
    tape.accumulate(*grads);
  }
  return total.item();
}

std::vector<double> train_supervised(PatchModel& model, std::span<const TimeSeriesWindow> windows,
                                     const FinetuneConfig& config) {
  std::vector<double> losses;
  if (config.steps == 0) return losses;
  if (windows.empty()) throw DataError(DataErrc::invalid_argument, "train: empty training set");
  bool any = false;
  for (const auto& p : model.params()) any = any || p.trainable;
  if (!any) throw std::invalid_argument("train: no trainable parameters");

  AdamW opt(model.params(), config.adamw);
  std::mt19937_64 rng(mix_seed(config.seed, 0xf17e));
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  std::vector<TimeSeriesWindow> batch(static_cast<std::size_t>(config.batch_size));
  for (long s = 0; s < config.steps; ++s) {
    for (auto& w : batch) w = windows[pick(rng)];
    Gradients grads;
    const double loss = supervised_loss(model, batch, config.pinball_weight, &grads);
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step " + std::to_string(s));
    clip_global_norm(grads, config.grad_clip);
    opt.step(model.params(), grads, warmup_cosine_lr(s, config.steps, config.peak_lr, config.warmup_frac));
    model.params().round_to_f32(true);
    losses.push_back(loss);
  }
  return losses;
}

PatchModel finetune_adapters(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                             const FinetuneConfig& config) {
  PatchModel tuned = model;
  tuned.enable_adapters();
  tuned.freeze_backbone();
  bool any = false;
  for (const auto& p : tuned.params()) any = any || p.trainable;
  if (!any) throw std::invalid_argument("finetune: no trainable parameters");
  if (config.steps > 0 && windows.empty()) throw DataError(DataErrc::invalid_argument, "finetune: empty training set");
  train_supervised(tuned, windows, config);
  return tuned;
}

void write_forecast_csv(std::ostream& out, std::span<const ForecastResult> results) {
  out << "window_id,h,variable,point";
  if (!results.empty())
    for (double l : results.front().levels) out << ",q" << std::llround(l * 100.0);
  out << '\n';
  for (const auto& r : results)
    for (Index h = 0; h < r.point.rows(); ++h)
      for (Index d = 0; d < r.point.cols(); ++d) {
        out << r.window_id << ',' << h << ',' << d << ',' << format_double(r.point(h, d));
        for (const auto& q : r.quantiles) out << ',' << format_double(q(h, d));
        out << '\n';
      }
}

}  // namespace patchcast
