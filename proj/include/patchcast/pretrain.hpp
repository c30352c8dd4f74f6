// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

// Self-supervised objective stack: dynamic masking, masked-patch
// reconstruction, InfoNCE over augmented views, teacher distillation, and the
// joint training step.

#pragma once

#include "patchcast/autodiff.hpp"
#include "patchcast/data.hpp"
#include "patchcast/model.hpp"
#include "patchcast/optim.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace patchcast {

// ---- masking ----------------------------------------------------------

inline constexpr double kMaskRatioMin = 0.10;
inline constexpr double kMaskRatioMax = 0.80;

struct MaskPlan {
  std::vector<Index> indices;  // sorted, distinct
  double ratio = 0.4;
  double p_base = 0.4;
  double beta = 0.3;
};

/// clamp(p_base / (1 + beta * cv), 0.10, 0.80).
double dynamic_mask_ratio_from_cv(double cv, double p_base = 0.4, double beta = 0.3);

/// Coefficient of variation sigma/|mu| over the observed raw context values
/// of all variables; 0 when |mu| < 1e-8.
double coefficient_of_variation(const TimeSeriesWindow& raw);

double dynamic_mask_ratio(const TimeSeriesWindow& raw, double p_base = 0.4, double beta = 0.3);

/// max(1, round(ratio * n_tokens)) distinct indices, uniform without replacement.
MaskPlan sample_mask(Index n_tokens, double ratio, std::mt19937_64& rng);

/// Rows listed in plan replaced by mask_token; the rest copied bit-for-bit.
Matrix apply_mask(const Matrix& tokens, const MaskPlan& plan, const RowVector& mask_token);

/// Mean over masked rows of the per-element squared error.
double reconstruction_loss(const Matrix& decoded, const Matrix& original, std::span<const Index> masked);

// ---- augmentation -----------------------------------------------------

struct AugmentConfig {
  double jitter_std = 0.05;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  /// Crop length is drawn from [min_crop, 1] * L, then resized back to L.
  double min_crop = 0.8;
};

std::pair<TimeSeriesWindow, TimeSeriesWindow> augment(const TimeSeriesWindow& w, std::uint64_t seed,
                                                      const AugmentConfig& config = {});

// ---- contrastive ------------------------------------------------------

/// Row i and row positive[i] form a positive pair; every other row is a
/// negative. Similarity is cosine / tau.
ad::Var contrastive_loss(ad::Var z, std::span<const Index> positive, double tau);
double contrastive_loss(const Matrix& z, std::span<const Index> positive, double tau);

/// Pairing for [view1 of 0..B-1, view2 of 0..B-1]: i <-> i + B.
std::vector<Index> two_view_pairing(Index batch);

// ---- distillation -----------------------------------------------------

enum class TeacherKind { seasonal_naive, linear_ar };

const char* to_string(TeacherKind k);

struct TeacherModel {
  TeacherKind kind = TeacherKind::seasonal_naive;
  std::string domain;
  Index period = 1;                // seasonal_naive
  double intercept = 0.0;          // linear_ar
  std::vector<double> ar_coeffs;   // linear_ar, lag 1 first
  double weight = 1.0;

  /// Forecasts `horizon` rows from a raw L x D context, per variable.
  Matrix forecast(const Matrix& context, Index horizon) const;
};

struct TeacherFitConfig {
  Index min_lag = 2;
  Index max_lag = 64;
  Index ar_order = 4;
  double ridge = 1e-3;
};

TeacherModel fit_teacher(TeacherKind kind, std::span<const Series> corpus, const TeacherFitConfig& config = {});

struct TeacherSet {
  std::vector<TeacherModel> teachers;

  /// Teachers whose domain matches (empty if none).
  std::vector<const TeacherModel*> for_domain(const std::string& domain) const;
  bool empty() const { return teachers.empty(); }
};

/// One seasonal-naive and one linear-AR teacher per domain, weights 0.5 each.
TeacherSet fit_teachers(std::span<const Series> corpus, const TeacherFitConfig& config = {});

/// sum_k w_k * mean((student - teacher_k)^2) / 2 (unit-variance Gaussian KL).
ad::Var distill_loss(ad::Var student, std::span<const Matrix> teachers, std::span<const double> weights);
double distill_loss(const Matrix& student, std::span<const Matrix> teachers, std::span<const double> weights);

// ---- training ---------------------------------------------------------

struct PretrainConfig {
  double lambda_con = 0.1;
  double lambda_distill = 0.5;
  double tau = 0.1;
  Index batch_size = 8;
  long steps = 200;
  std::uint64_t seed = 0;
  double peak_lr = 3e-4;
  double warmup_frac = 0.05;
  double grad_clip = 1.0;
  AdamWConfig adamw;
  AugmentConfig augment;
  double p_base = 0.4;
  double mask_beta = 0.3;

  void write(Config& c) const;
  static PretrainConfig read(const Config& c);
};

struct LossReport {
  long step = 0;
  double rec = 0.0;
  double con = 0.0;
  double distill = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double mask_ratio_mean = 0.0;
  double lr = 0.0;
};

/// Losses (and optionally gradients) of one batch of raw windows. All
/// randomness (masks, augmentations) derives from `step_seed`, so repeated
/// calls with the same seed see identical masks.
LossReport pretrain_losses(const PatchModel& model, std::span<const TimeSeriesWindow> batch,
                           const PretrainConfig& config, const TeacherSet& teachers, std::uint64_t step_seed,
                           Gradients* grads);

/// Owns the optimizer state for one model.
class Pretrainer {
 public:
  Pretrainer(PatchModel& model, PretrainConfig config, TeacherSet teachers);

  /// One update: losses, backprop, clip, AdamW at the scheduled step size.
  /// Throws NumericError on a non-finite loss.
  LossReport step(std::span<const TimeSeriesWindow> batch);

  long steps_done() const { return step_; }
  const PretrainConfig& config() const { return config_; }

 private:
  PatchModel& model_;
  PretrainConfig config_;
  TeacherSet teachers_;
  AdamW optimizer_;
  long step_ = 0;
};

void write_loss_log_header(std::ostream& out);
void write_loss_log_row(std::ostream& out, const LossReport& r);

/// Runs config.steps updates over batches sampled uniformly (seeded) from
/// `corpus`, optionally streaming a CSV metrics log.
std::vector<LossReport> pretrain(PatchModel& model, std::span<const TimeSeriesWindow> corpus,
                                 const PretrainConfig& config, const TeacherSet& teachers, std::ostream* log = nullptr);

}  // namespace patchcast
