// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/data.hpp"
#include "patchcast/forecast.hpp"
#include "patchcast/model.hpp"
#include "patchcast/pretrain.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace patchcast {

/// PF_THREADS if set and positive, otherwise the hardware concurrency.
unsigned worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---- metrics ---------------------------------------------------------------

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double pinball = 0.0;
  double crps = 0.0;      // 2 x mean pinball over the quantile levels
  double coverage = 0.0;  // fraction of targets inside [q10, q90], inclusive
  Index n_windows = 0;
};

MetricReport compute_metrics(std::span<const ForecastResult> results, std::span<const Matrix> targets);

/// Zero-shot forecasts for every window (in parallel) and their metrics.
MetricReport evaluate(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                      const ForecastOptions& options = {});

// ---- missing data ----------------------------------------------------------

struct MissingSweepRow {
  double rate = 0.0;
  MetricReport report;
  double degradation = 0.0;  // (mse - mse at rate 0) / mse at rate 0
};

/// The first rate must be 0. Missingness for window i at rate r is drawn from
/// mix_seed(seed, i), so every strategy sees the same cells removed.
std::vector<MissingSweepRow> missing_data_sweep(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                                                std::span<const double> rates, std::uint64_t seed,
                                                MissingStrategy strategy = MissingStrategy::mask_token);

void write_missing_csv(std::ostream& out, std::span<const MissingSweepRow> rows, const std::string& strategy);

// ---- experiments -----------------------------------------------------------

/// Default generator settings for each synthetic family used by the runners.
SyntheticSpec family_spec(Family family, Index length, Index n_series, std::uint64_t seed);

struct ExperimentConfig {
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;    // few-shot adaptation and from-scratch baseline
  FinetuneConfig supervised;  // supervised-full-data regime
  Index series_length = 1024;
  Index series_per_family = 8;
  Index stride = 8;
  Index eval_windows = 64;
  Index fewshot_samples = 500;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  /// Small model for experiments: L=128, H=24, desk encoder, 1000 pretraining steps.
  static ExperimentConfig defaults();
  void write(Config& c) const;
  static ExperimentConfig read(const Config& c);
};

/// Training windows (with targets) for one family. Disjoint series from
/// `evaluation_windows` for the same seed.
std::vector<TimeSeriesWindow> training_windows(Family family, const ExperimentConfig& config, std::uint64_t seed);
std::vector<TimeSeriesWindow> evaluation_windows(Family family, const ExperimentConfig& config, std::uint64_t seed);

/// Pretrains a fresh model (init seed = `seed`) on the given families.
PatchModel pretrain_on_families(std::span<const Family> families, const ExperimentConfig& config, std::uint64_t seed,
                                std::vector<LossReport>* losses = nullptr);

struct RegimeResult {
  std::string regime;
  std::vector<double> mse;  // one per seed
  double mean = 0.0;
  double std = 0.0;         // population std over seeds
};

struct ExperimentTable {
  std::string target;
  std::vector<RegimeResult> rows;
  const RegimeResult& row(const std::string& regime) const;
};

/// Rows: no-pretrain, single-family (first pretrain family other than the
/// target), all-families, supervised-full-data.
ExperimentTable transfer_experiment(std::span<const Family> pretrain_families, Family target,
                                    const ExperimentConfig& config);

/// Rows: zero-shot, finetuned-pretrained, train-from-scratch, each using
/// config.fewshot_samples target windows.
ExperimentTable fewshot_experiment(std::span<const Family> pretrain_families, Family target,
                                   const ExperimentConfig& config);

void write_table_csv(std::ostream& out, const ExperimentTable& table);

struct ScalingPoint {
  double fraction = 0.0;
  Index n_points = 0;
  double log10_n = 0.0;
  std::vector<double> mse;
  double mean = 0.0;
  double std = 0.0;
};

/// Pretrains on increasing prefixes of an all-family corpus of
/// `total_points` points and reports zero-shot validation MSE.
std::vector<ScalingPoint> scaling_curve(std::span<const double> fractions, Index total_points,
                                        const ExperimentConfig& config);

void write_scaling_csv(std::ostream& out, std::span<const ScalingPoint> points);

// ---- attention benchmark ---------------------------------------------------

struct BenchEntry {
  Index L = 0;
  Index P = 0;
  Index d = 0;
  double flops = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double ratio_to_largest_patch = 0.0;  // median(L, P) / median(L, max P)
};

struct BenchConfig {
  Index n_heads = 4;
  int warmup = 3;
  int repetitions = 21;
  double min_sample_ms = 2.0;  // inner loop length is calibrated to reach this
  std::uint64_t seed = 0;
};

/// Times the attention stage (scores, softmax, weighted sum) on N = L / P
/// tokens of width d.
std::vector<BenchEntry> attention_bench(std::span<const Index> lengths, std::span<const Index> patches, Index d,
                                        const BenchConfig& config = {});

void write_bench_csv(std::ostream& out, std::span<const BenchEntry> entries);
std::string bench_json(std::span<const BenchEntry> entries);

}  // namespace patchcast
