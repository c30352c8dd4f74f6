// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/data.hpp"

#include "patchcast/config.hpp"
#include "patchcast/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace patchcast {

const char* to_string(DataErrc code) {
  switch (code) {
    case DataErrc::file_not_found: return "file_not_found";
    case DataErrc::ragged_row: return "ragged_row";
    case DataErrc::zero_numeric_columns: return "zero_numeric_columns";
    case DataErrc::zero_data_rows: return "zero_data_rows";
    case DataErrc::non_monotone_timestamp: return "non_monotone_timestamp";
    case DataErrc::parse_error: return "parse_error";
    case DataErrc::invalid_argument: return "invalid_argument";
    case DataErrc::all_missing_variable: return "all_missing_variable";
    case DataErrc::bad_checkpoint: return "bad_checkpoint";
  }
  return "unknown";
}

// ---- CSV ---------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delim, pos);
    out.push_back(trim(std::string_view(line).substr(pos, next == std::string::npos ? std::string::npos : next - pos)));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NaN" || s == "nan" || s == "NA" || s == "null";
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first < last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) return std::nullopt;
  return v;
}

}  // namespace

std::vector<Series> ingest_csv(const std::filesystem::path& path, const CsvConfig& config) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrc::file_not_found, "file not found: " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line, config.delimiter);
      break;
    }
  }
  if (header.empty()) throw DataError(DataErrc::zero_data_rows, path.string() + ": zero data rows (empty file)");

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line, config.delimiter);
    if (cells.size() != header.size())
      throw DataError(DataErrc::ragged_row, path.string() + ":" + std::to_string(line_no) + ": ragged row, expected " +
                                                std::to_string(header.size()) + " fields, got " +
                                                std::to_string(cells.size()));
    rows.push_back(std::move(cells));
    row_lines.push_back(line_no);
  }
  if (rows.empty()) throw DataError(DataErrc::zero_data_rows, path.string() + ": zero data rows");

  auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(DataErrc::parse_error, path.string() + ": no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::optional<std::size_t> ts_col;
  if (config.timestamp_column) {
    ts_col = column_index(*config.timestamp_column);
    std::optional<double> prev_num;
    std::string prev_str;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& cell = rows[r][*ts_col];
      const auto num = parse_double(cell);
      bool ok = true;
      if (r > 0) ok = (num && prev_num) ? *num > *prev_num : cell > prev_str;
      if (!ok)
        throw DataError(DataErrc::non_monotone_timestamp, path.string() + ":" + std::to_string(row_lines[r]) +
                                                              ": timestamp '" + cell + "' does not increase");
      prev_num = num;
      prev_str = cell;
    }
  }

  auto column_numeric = [&](std::size_t c) {
    for (const auto& row : rows)
      if (!is_missing_token(row[c]) && !parse_double(row[c])) return false;
    return true;
  };

  std::vector<std::vector<std::size_t>> groups;
  if (config.groups.empty()) {
    std::vector<std::size_t> all;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != ts_col && column_numeric(c)) all.push_back(c);
    if (all.empty()) throw DataError(DataErrc::zero_numeric_columns, path.string() + ": zero numeric columns");
    groups.push_back(std::move(all));
  } else {
    for (const auto& g : config.groups) {
      std::vector<std::size_t> cols;
      for (const auto& name : g) cols.push_back(column_index(name));
      if (cols.empty()) throw DataError(DataErrc::zero_numeric_columns, path.string() + ": empty column group");
      groups.push_back(std::move(cols));
    }
  }

  std::vector<Series> out;
  const auto n = static_cast<Index>(rows.size());
  for (const auto& cols : groups) {
    Series s;
    s.domain = config.domain;
    s.values = Matrix::Zero(n, static_cast<Index>(cols.size()));
    s.observed = Mask::Constant(n, static_cast<Index>(cols.size()), true);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      s.names.push_back(header[cols[j]]);
      for (Index r = 0; r < n; ++r) {
        const std::string& cell = rows[static_cast<std::size_t>(r)][cols[j]];
        if (is_missing_token(cell)) {
          s.observed(r, static_cast<Index>(j)) = false;
          continue;
        }
        auto v = parse_double(cell);
        if (!v)
          throw DataError(DataErrc::parse_error, path.string() + ":" + std::to_string(row_lines[static_cast<std::size_t>(r)]) +
                                                     ": column '" + header[cols[j]] + "' is not numeric: '" + cell + "'");
        s.values(r, static_cast<Index>(j)) = *v;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const Series> series) {
  if (series.empty()) throw std::invalid_argument("write_csv: no series");
  const Index t = series[0].length();
  for (const auto& s : series)
    if (s.length() != t) throw ShapeError("write_csv: series lengths differ");
  std::ofstream out(path);
  if (!out) throw DataError(DataErrc::file_not_found, "cannot write " + path.string());
  out << "t";
  for (std::size_t k = 0; k < series.size(); ++k)
    for (Index j = 0; j < series[k].n_vars(); ++j) {
      const auto& names = series[k].names;
      out << ',' << (static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                                : "s" + std::to_string(k) + "_v" + std::to_string(j));
    }
  out << '\n';
  for (Index r = 0; r < t; ++r) {
    out << r;
    for (const auto& s : series)
      for (Index j = 0; j < s.n_vars(); ++j) {
        out << ',';
        if (s.observed(r, j)) out << format_double(s.values(r, j));
      }
    out << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const Series& series) {
  write_csv(path, std::span<const Series>(&series, 1));
}

// ---- synthetic --------------------------------------------------------

const char* to_string(Family f) {
  switch (f) {
    case Family::sine_trend: return "sine_trend";
    case Family::ar_process: return "ar_process";
    case Family::square_seasonal: return "square_seasonal";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "sine_trend") return Family::sine_trend;
  if (s == "ar_process") return Family::ar_process;
  if (s == "square_seasonal") return Family::square_seasonal;
  throw DataError(DataErrc::invalid_argument, "unknown synthetic family '" + s + "'");
}

double ar_spectral_radius(std::span<const double> coeffs) {
  const auto p = static_cast<Index>(coeffs.size());
  if (p == 0) return 0.0;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i) companion(0, i) = coeffs[static_cast<std::size_t>(i)];
  for (Index i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

std::vector<Series> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 1 || spec.n_series < 1 || spec.n_vars < 1)
    throw DataError(DataErrc::invalid_argument, "synthetic: length, n_series and n_vars must be positive");
  if (spec.family != Family::ar_process && !(spec.period > 0.0))
    throw DataError(DataErrc::invalid_argument, "synthetic: period must be positive");
  if (spec.period_spread < 0.0 || spec.period_spread >= 1.0)
    throw DataError(DataErrc::invalid_argument, "synthetic: period_spread must lie in [0, 1)");
  if (spec.noise_std < 0.0) throw DataError(DataErrc::invalid_argument, "synthetic: noise_std must be nonnegative");
  if (spec.family == Family::ar_process) {
    if (spec.ar_coeffs.empty()) throw DataError(DataErrc::invalid_argument, "synthetic: ar_process needs coefficients");
    const double rho = ar_spectral_radius(spec.ar_coeffs);
    if (!(rho < 1.0))
      throw DataError(DataErrc::invalid_argument,
                      "synthetic: AR coefficients are nonstationary (spectral radius " + format_double(rho) + ")");
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  constexpr Index kBurnIn = 500;

  std::vector<Series> out;
  out.reserve(static_cast<std::size_t>(spec.n_series));
  for (Index s = 0; s < spec.n_series; ++s) {
    Series series;
    series.domain = to_string(spec.family);
    series.values = Matrix::Zero(spec.length, spec.n_vars);
    series.observed = Mask::Constant(spec.length, spec.n_vars, true);
    const double period = spec.period * (1.0 + spec.period_spread * (2.0 * unit(rng) - 1.0));
    for (Index j = 0; j < spec.n_vars; ++j) {
      series.names.push_back("x" + std::to_string(j));
      const double phase = spec.random_phase ? two_pi * unit(rng) : 0.0;
      switch (spec.family) {
        case Family::sine_trend:
        case Family::square_seasonal:
          for (Index t = 0; t < spec.length; ++t) {
            const double arg = two_pi * static_cast<double>(t) / period + phase;
            double wave = std::sin(arg);
            if (spec.family == Family::square_seasonal) wave = wave >= 0.0 ? 1.0 : -1.0;
            double x = spec.level + spec.amplitude * wave + spec.slope * static_cast<double>(t);
            if (spec.noise_std > 0.0) x += spec.noise_std * noise(rng);
            series.values(t, j) = x;
          }
          break;
        case Family::ar_process: {
          const std::size_t p = spec.ar_coeffs.size();
          std::vector<double> hist(p, 0.0);  // hist[0] = most recent deviation
          for (Index t = -kBurnIn; t < spec.length; ++t) {
            double dev = spec.noise_std * noise(rng);
            for (std::size_t i = 0; i < p; ++i) dev += spec.ar_coeffs[i] * hist[i];
            std::rotate(hist.rbegin(), hist.rbegin() + 1, hist.rend());
            hist[0] = dev;
            if (t >= 0)
              series.values(t, j) = spec.level + spec.amplitude * dev + spec.slope * static_cast<double>(t);
          }
          break;
        }
      }
    }
    out.push_back(std::move(series));
  }
  return out;
}

std::string to_config_text(const SyntheticSpec& spec) {
  Config c;
  c.set("synthetic.family", std::string(to_string(spec.family)));
  c.set("synthetic.amplitude", spec.amplitude);
  c.set("synthetic.period", spec.period);
  c.set("synthetic.slope", spec.slope);
  c.set("synthetic.level", spec.level);
  c.set("synthetic.noise_std", spec.noise_std);
  c.set("synthetic.ar_coeffs", spec.ar_coeffs);
  c.set("synthetic.period_spread", spec.period_spread);
  c.set("synthetic.random_phase", spec.random_phase);
  c.set("synthetic.length", static_cast<std::int64_t>(spec.length));
  c.set("synthetic.n_series", static_cast<std::int64_t>(spec.n_series));
  c.set("synthetic.n_vars", static_cast<std::int64_t>(spec.n_vars));
  c.set("synthetic.seed", spec.seed);
  return c.to_text();
}

SyntheticSpec synthetic_spec_from_config_text(const std::string& text) {
  const Config c = Config::parse(text);
  SyntheticSpec s;
  s.family = family_from_string(c.get_string("synthetic.family", to_string(s.family)));
  s.amplitude = c.get_double("synthetic.amplitude", s.amplitude);
  s.period = c.get_double("synthetic.period", s.period);
  s.slope = c.get_double("synthetic.slope", s.slope);
  s.level = c.get_double("synthetic.level", s.level);
  s.noise_std = c.get_double("synthetic.noise_std", s.noise_std);
  s.ar_coeffs = c.get_doubles("synthetic.ar_coeffs", s.ar_coeffs);
  s.period_spread = c.get_double("synthetic.period_spread", s.period_spread);
  s.random_phase = c.get_bool("synthetic.random_phase", s.random_phase);
  s.length = c.get_int("synthetic.length", s.length);
  s.n_series = c.get_int("synthetic.n_series", s.n_series);
  s.n_vars = c.get_int("synthetic.n_vars", s.n_vars);
  s.seed = c.get_uint("synthetic.seed", s.seed);
  return s;
}

// ---- windows ----------------------------------------------------------

WindowingResult make_windows(const Series& source, Index context_len, Index horizon, Index stride) {
  if (context_len < 1 || horizon < 0 || stride < 1)
    throw DataError(DataErrc::invalid_argument, "make_windows: need L >= 1, H >= 0, stride >= 1");
  WindowingResult result;
  const Index span = context_len + horizon;
  if (source.length() < span) {
    result.warning = "series of length " + std::to_string(source.length()) + " is shorter than L+H=" +
                     std::to_string(span) + "; no windows produced";
    return result;
  }
  for (Index start = 0; start + span <= source.length(); start += stride) {
    TimeSeriesWindow w;
    w.values = source.values.middleRows(start, context_len);
    w.observed = source.observed.middleRows(start, context_len);
    w.horizon = horizon;
    w.target = source.values.middleRows(start + context_len, horizon);
    w.domain = source.domain;
    w.start = start;
    result.windows.push_back(std::move(w));
  }
  return result;
}

Matrix denormalize(const Matrix& values, std::span<const NormStat> stats) {
  if (static_cast<Index>(stats.size()) != values.cols()) throw ShapeError("denormalize: stats/variable count mismatch");
  Matrix out = values;
  for (Index j = 0; j < values.cols(); ++j)
    out.col(j) = values.col(j).array() * stats[static_cast<std::size_t>(j)].std + stats[static_cast<std::size_t>(j)].mean;
  return out;
}

Matrix normalize(const Matrix& values, std::span<const NormStat> stats) {
  if (static_cast<Index>(stats.size()) != values.cols()) throw ShapeError("normalize: stats/variable count mismatch");
  Matrix out = values;
  for (Index j = 0; j < values.cols(); ++j)
    out.col(j) =
        (values.col(j).array() - stats[static_cast<std::size_t>(j)].mean) / stats[static_cast<std::size_t>(j)].std;
  return out;
}

TimeSeriesWindow normalize_window(const TimeSeriesWindow& w, double std_floor) {
  if (w.norm_state) throw std::logic_error("normalize_window: window is already normalized");
  std::vector<NormStat> stats(static_cast<std::size_t>(w.n_vars()));
  for (Index j = 0; j < w.n_vars(); ++j) {
    double sum = 0.0;
    Index count = 0;
    for (Index t = 0; t < w.context_len(); ++t)
      if (w.observed(t, j)) {
        sum += w.values(t, j);
        ++count;
      }
    if (count == 0)
      throw DataError(DataErrc::all_missing_variable,
                      "normalize_window: variable " + std::to_string(j) + " has no observed context values");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (Index t = 0; t < w.context_len(); ++t)
      if (w.observed(t, j)) ss += (w.values(t, j) - mean) * (w.values(t, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(count));
    stats[static_cast<std::size_t>(j)] = NormStat{mean, std::max(sd, std_floor)};
  }
  TimeSeriesWindow out = w;
  out.values = normalize(w.values, stats);
  out.values = w.observed.select(out.values, 0.0);
  if (w.target) out.target = normalize(*w.target, stats);
  out.norm_state = std::move(stats);
  return out;
}

TimeSeriesWindow denormalize_window(const TimeSeriesWindow& w) {
  if (!w.norm_state) throw std::logic_error("denormalize_window: window has no norm_state");
  TimeSeriesWindow out = w;
  out.values = denormalize(w.values, *w.norm_state);
  out.values = w.observed.select(out.values, 0.0);
  if (w.target) out.target = denormalize(*w.target, *w.norm_state);
  out.norm_state.reset();
  return out;
}

TimeSeriesWindow inject_missing(const TimeSeriesWindow& w, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) throw DataError(DataErrc::invalid_argument, "inject_missing: rate must lie in [0, 1)");
  TimeSeriesWindow out = w;
  const Index total = w.values.size();
  const auto want = static_cast<Index>(std::llround(rate * static_cast<double>(total)));
  if (want == 0) return out;
  std::vector<Index> candidates;
  for (Index i = 0; i < total; ++i)
    if (w.observed(i / w.n_vars(), i % w.n_vars())) candidates.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(want), candidates.size());
  for (std::size_t i = 0; i < k; ++i) {
    const Index r = candidates[i] / w.n_vars(), c = candidates[i] % w.n_vars();
    out.observed(r, c) = false;
    out.values(r, c) = 0.0;
  }
  return out;
}

}  // namespace patchcast
