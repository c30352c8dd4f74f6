// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace patchcast {

/// A full multivariate series (T x D) from which windows are cut.
struct Series {
  Matrix values;   // T x D; unobserved cells hold 0.0
  Mask observed;   // T x D
  std::vector<std::string> names;
  std::string domain;

  Index length() const { return values.rows(); }
  Index n_vars() const { return values.cols(); }
};

struct NormStat {
  double mean = 0.0;
  double std = 1.0;
};

/// L context rows plus optional H target rows of one series.
struct TimeSeriesWindow {
  Matrix values;  // L x D context; unobserved cells hold 0.0
  Mask observed;  // L x D
  Index horizon = 0;
  std::optional<Matrix> target;  // H x D
  std::optional<std::vector<NormStat>> norm_state;
  std::string domain;
  Index start = 0;  // offset of the first context row in the source series

  Index context_len() const { return values.rows(); }
  Index n_vars() const { return values.cols(); }
};

// ---- CSV ---------------------------------------------------------------

struct CsvConfig {
  char delimiter = ',';
  /// Column excluded from modeling; values must increase strictly.
  std::optional<std::string> timestamp_column;
  /// Variable groups, one output series each. Empty = one group with every
  /// numeric column.
  std::vector<std::vector<std::string>> groups;
  std::string domain = "csv";
};

std::vector<Series> ingest_csv(const std::filesystem::path& path, const CsvConfig& config = {});

/// Writes "t,<names...>" followed by one row per timestep; missing cells are
/// left empty. Values use shortest round-trip formatting.
void write_csv(const std::filesystem::path& path, std::span<const Series> series);
void write_csv(const std::filesystem::path& path, const Series& series);

// ---- synthetic families -----------------------------------------------

enum class Family { sine_trend, ar_process, square_seasonal };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct SyntheticSpec {
  Family family = Family::sine_trend;
  double amplitude = 1.0;
  double period = 24.0;
  double slope = 0.0;
  double level = 0.0;
  double noise_std = 0.0;
  std::vector<double> ar_coeffs{0.5};
  /// Each series draws its period uniformly from period * [1 - spread, 1 + spread].
  double period_spread = 0.0;
  /// Independent uniform phase per series and variable.
  bool random_phase = false;
  Index length = 1024;
  Index n_series = 1;
  Index n_vars = 1;
  std::uint64_t seed = 0;
};

/// Spectral radius of the AR companion matrix.
double ar_spectral_radius(std::span<const double> coeffs);

std::vector<Series> generate_synthetic(const SyntheticSpec& spec);

std::string to_config_text(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_config_text(const std::string& text);

// ---- windows ----------------------------------------------------------

struct WindowingResult {
  std::vector<TimeSeriesWindow> windows;
  std::optional<std::string> warning;
};

WindowingResult make_windows(const Series& source, Index context_len, Index horizon, Index stride);

inline constexpr double kStdFloor = 1e-5;

/// Per-variable standardization using observed context entries (population
/// std, floored). Unobserved context cells become 0 in normalized units.
TimeSeriesWindow normalize_window(const TimeSeriesWindow& w, double std_floor = kStdFloor);

/// Inverse of normalize_window; requires norm_state.
TimeSeriesWindow denormalize_window(const TimeSeriesWindow& w);

/// values * std + mean, column by column.
Matrix denormalize(const Matrix& values, std::span<const NormStat> stats);
Matrix normalize(const Matrix& values, std::span<const NormStat> stats);

/// Marks exactly round(rate * L * D) currently observed context cells as
/// unobserved, chosen uniformly without replacement.
TimeSeriesWindow inject_missing(const TimeSeriesWindow& w, double rate, std::uint64_t seed);

}  // namespace patchcast
