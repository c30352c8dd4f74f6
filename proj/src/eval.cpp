// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/eval.hpp"

#include "patchcast/encoder.hpp"
#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <thread>

namespace patchcast {

unsigned worker_threads() {
  if (const char* env = std::getenv("PF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- metrics ---------------------------------------------------------------

namespace {

std::size_t level_index(std::span<const double> levels, double target, bool lower) {
  for (std::size_t q = 0; q < levels.size(); ++q)
    if (std::abs(levels[q] - target) < 1e-12) return q;
  return lower ? 0 : levels.size() - 1;
}

}  // namespace

MetricReport compute_metrics(std::span<const ForecastResult> results, std::span<const Matrix> targets) {
  if (results.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (results.size() != targets.size()) throw ShapeError("compute_metrics: results/targets count mismatch");
  double se = 0.0, ae = 0.0, pin = 0.0, covered = 0.0;
  double n_elem = 0.0, n_pin = 0.0;
  for (std::size_t w = 0; w < results.size(); ++w) {
    const auto& r = results[w];
    const Matrix& y = targets[w];
    if (r.point.rows() != y.rows() || r.point.cols() != y.cols() || r.quantiles.size() != r.levels.size() ||
        r.levels.empty())
      throw ShapeError("compute_metrics: shape mismatch in window " + std::to_string(w));
    for (const auto& q : r.quantiles)
      if (q.rows() != y.rows() || q.cols() != y.cols())
        throw ShapeError("compute_metrics: quantile shape mismatch in window " + std::to_string(w));
    const std::size_t lo = level_index(r.levels, 0.1, true), hi = level_index(r.levels, 0.9, false);
    for (Index i = 0; i < y.size(); ++i) {
      const double t = y.data()[i];
      const double e = t - r.point.data()[i];
      se += e * e;
      ae += std::abs(e);
      if (t >= r.quantiles[lo].data()[i] && t <= r.quantiles[hi].data()[i]) covered += 1.0;
      for (std::size_t q = 0; q < r.levels.size(); ++q) {
        const double diff = t - r.quantiles[q].data()[i];
        pin += diff > 0.0 ? r.levels[q] * diff : (r.levels[q] - 1.0) * diff;
        n_pin += 1.0;
      }
      n_elem += 1.0;
    }
  }
  MetricReport m;
  m.mse = se / n_elem;
  m.mae = ae / n_elem;
  m.rmse = std::sqrt(m.mse);
  m.pinball = pin / n_pin;
  m.crps = 2.0 * m.pinball;
  m.coverage = covered / n_elem;
  m.n_windows = static_cast<Index>(results.size());
  return m;
}

MetricReport evaluate(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                      const ForecastOptions& options) {
  if (windows.empty()) throw std::invalid_argument("evaluate: no windows");
  std::vector<ForecastResult> results(windows.size());
  std::vector<Matrix> targets(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].target) throw DataError(DataErrc::invalid_argument, "evaluate: window without target");
    targets[i] = *windows[i].target;
  }
  parallel_for(windows.size(), [&](std::size_t i) {
    results[i] = zero_shot_forecast(model, windows[i], options, static_cast<Index>(i));
  });
  return compute_metrics(results, targets);
}

// ---- missing data ----------------------------------------------------------

std::vector<MissingSweepRow> missing_data_sweep(const PatchModel& model, std::span<const TimeSeriesWindow> windows,
                                                std::span<const double> rates, std::uint64_t seed,
                                                MissingStrategy strategy) {
  if (rates.empty() || rates.front() != 0.0)
    throw std::invalid_argument("missing_data_sweep: rates must start at 0");
  ForecastOptions options;
  options.missing = strategy;
  std::vector<MissingSweepRow> rows;
  for (double rate : rates) {
    std::vector<TimeSeriesWindow> damaged(windows.begin(), windows.end());
    if (rate > 0.0)
      for (std::size_t i = 0; i < damaged.size(); ++i) damaged[i] = inject_missing(windows[i], rate, mix_seed(seed, i));
    MissingSweepRow row;
    row.rate = rate;
    row.report = evaluate(model, damaged, options);
    row.degradation = rows.empty() ? 0.0 : (row.report.mse - rows.front().report.mse) / rows.front().report.mse;
    rows.push_back(row);
  }
  return rows;
}

void write_missing_csv(std::ostream& out, std::span<const MissingSweepRow> rows, const std::string& strategy) {
  out << "strategy,rate,mse,mae,rmse,pinball,crps,coverage,degradation\n";
  for (const auto& r : rows)
    out << strategy << ',' << format_double(r.rate) << ',' << format_double(r.report.mse) << ','
        << format_double(r.report.mae) << ',' << format_double(r.report.rmse) << ','
        << format_double(r.report.pinball) << ',' << format_double(r.report.crps) << ','
        << format_double(r.report.coverage) << ',' << format_double(r.degradation) << '\n';
}

// ---- experiments -----------------------------------------------------------

SyntheticSpec family_spec(Family family, Index length, Index n_series, std::uint64_t seed) {
  SyntheticSpec s;
  s.family = family;
  s.length = length;
  s.n_series = n_series;
  s.seed = seed;
  switch (family) {
    case Family::sine_trend:
      s.amplitude = 1.0;
      s.period = 24.0;
      s.period_spread = 0.25;
      s.random_phase = true;
      s.slope = 5e-4;
      s.level = 1.0;
      s.noise_std = 0.05;
      break;
    case Family::square_seasonal:
      s.amplitude = 1.0;
      s.period = 32.0;
      s.period_spread = 0.25;
      s.random_phase = true;
      s.level = 0.5;
      s.noise_std = 0.05;
      break;
    case Family::ar_process:
      s.amplitude = 1.0;
      s.ar_coeffs = {0.8, -0.3};
      s.noise_std = 0.5;
      s.level = 0.0;
      break;
  }
  return s;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.model.context_len = 128;
  c.model.horizon = 24;
  c.pretrain.steps = 1000;
  c.finetune.steps = 600;
  c.supervised.steps = 300;
  return c;
}

void ExperimentConfig::write(Config& c) const {
  model.write(c);
  pretrain.write(c);
  finetune.write(c);
  Config sup;
  supervised.write(sup);
  for (const char* k : {"steps", "batch_size", "peak_lr", "warmup_frac", "grad_clip", "pinball_weight", "seed",
                        "weight_decay"})
    c.set(std::string("supervised.") + k, sup.get_string(std::string("finetune.") + k, ""));
  c.set("experiment.series_length", static_cast<std::int64_t>(series_length));
  c.set("experiment.series_per_family", static_cast<std::int64_t>(series_per_family));
  c.set("experiment.stride", static_cast<std::int64_t>(stride));
  c.set("experiment.eval_windows", static_cast<std::int64_t>(eval_windows));
  c.set("experiment.fewshot_samples", static_cast<std::int64_t>(fewshot_samples));
  std::vector<std::int64_t> s(seeds.begin(), seeds.end());
  c.set("experiment.seeds", s);
}

ExperimentConfig ExperimentConfig::read(const Config& c) {
  ExperimentConfig e = defaults();
  if (c.contains("model.context_len")) e.model = ModelConfig::read(c);
  e.pretrain = PretrainConfig::read(c);
  e.finetune = c.contains("finetune.steps") ? FinetuneConfig::read(c) : e.finetune;
  Config sup;
  for (const char* k : {"steps", "batch_size", "peak_lr", "warmup_frac", "grad_clip", "pinball_weight", "seed",
                        "weight_decay"})
    if (c.contains(std::string("supervised.") + k))
      sup.set(std::string("finetune.") + k, c.get_string(std::string("supervised.") + k, ""));
  if (sup.contains("finetune.steps")) e.supervised = FinetuneConfig::read(sup);
  e.series_length = c.get_int("experiment.series_length", e.series_length);
  e.series_per_family = c.get_int("experiment.series_per_family", e.series_per_family);
  e.stride = c.get_int("experiment.stride", e.stride);
  e.eval_windows = c.get_int("experiment.eval_windows", e.eval_windows);
  e.fewshot_samples = c.get_int("experiment.fewshot_samples", e.fewshot_samples);
  std::vector<std::int64_t> fallback(e.seeds.begin(), e.seeds.end());
  const auto s = c.get_ints("experiment.seeds", fallback);
  e.seeds.assign(s.begin(), s.end());
  if (e.seeds.empty()) throw DataError(DataErrc::invalid_argument, "experiment: no seeds");
  return e;
}

namespace {

enum class Split : std::uint64_t { train = 1, eval = 2 };

std::vector<Series> family_series(Family family, const ExperimentConfig& config, std::uint64_t seed, Split split,
                                  Index n_series) {
  const std::uint64_t s = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(family) + 1),
                                   static_cast<std::uint64_t>(split));
  return generate_synthetic(family_spec(family, config.series_length, n_series, s));
}

void append_windows(std::vector<TimeSeriesWindow>& out, const std::vector<Series>& series, const ModelConfig& mc,
                    Index stride) {
  for (const auto& s : series) {
    auto w = make_windows(s, mc.context_len, mc.horizon, stride).windows;
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
}

RegimeResult summarize(std::string name, std::vector<double> mse) {
  RegimeResult r;
  r.regime = std::move(name);
  r.mse = std::move(mse);
  const double n = static_cast<double>(r.mse.size());
  r.mean = std::accumulate(r.mse.begin(), r.mse.end(), 0.0) / n;
  double var = 0.0;
  for (double v : r.mse) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / n);
  return r;
}

std::vector<Family> distinct(std::span<const Family> families) {
  std::vector<Family> out;
  for (Family f : families)
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
  return out;
}

PatchModel fresh_model(const ExperimentConfig& config, std::uint64_t seed) {
  ModelConfig mc = config.model;
  mc.init_seed = seed;
  return PatchModel(mc);
}

FinetuneConfig seeded(FinetuneConfig f, std::uint64_t seed) {
  f.seed = mix_seed(f.seed, seed);
  return f;
}

}  // namespace

std::vector<TimeSeriesWindow> training_windows(Family family, const ExperimentConfig& config, std::uint64_t seed) {
  std::vector<TimeSeriesWindow> out;
  append_windows(out, family_series(family, config, seed, Split::train, config.series_per_family), config.model,
                 config.stride);
  return out;
}

std::vector<TimeSeriesWindow> evaluation_windows(Family family, const ExperimentConfig& config, std::uint64_t seed) {
  std::vector<TimeSeriesWindow> all;
  const Index n_series = std::max<Index>(1, config.series_per_family / 2);
  append_windows(all, family_series(family, config, seed, Split::eval, n_series), config.model, config.model.horizon);
  if (all.empty()) throw DataError(DataErrc::invalid_argument, "experiment: series too short for one window");
  if (static_cast<Index>(all.size()) <= config.eval_windows) return all;
  std::vector<TimeSeriesWindow> out;
  for (Index k = 0; k < config.eval_windows; ++k)
    out.push_back(all[static_cast<std::size_t>(k * static_cast<Index>(all.size()) / config.eval_windows)]);
  return out;
}

PatchModel pretrain_on_families(std::span<const Family> families, const ExperimentConfig& config, std::uint64_t seed,
                                std::vector<LossReport>* losses) {
  PatchModel model = fresh_model(config, seed);
  std::vector<Series> series;
  std::vector<TimeSeriesWindow> corpus;
  for (Family f : distinct(families)) {
    auto s = family_series(f, config, seed, Split::train, config.series_per_family);
    append_windows(corpus, s, config.model, config.stride);
    std::move(s.begin(), s.end(), std::back_inserter(series));
  }
  PretrainConfig pc = config.pretrain;
  pc.seed = mix_seed(pc.seed, seed);
  const TeacherSet teachers = fit_teachers(series);
  auto reports = pretrain(model, corpus, pc, teachers);
  if (losses) *losses = std::move(reports);
  return model;
}

const RegimeResult& ExperimentTable::row(const std::string& regime) const {
  for (const auto& r : rows)
    if (r.regime == regime) return r;
  throw std::out_of_range("experiment table has no regime " + regime);
}

ExperimentTable transfer_experiment(std::span<const Family> pretrain_families, Family target,
                                    const ExperimentConfig& config) {
  const auto families = distinct(pretrain_families);
  if (families.size() < 2) throw DataError(DataErrc::invalid_argument, "transfer: need at least 2 distinct families");
  const auto single = std::find_if(families.begin(), families.end(), [&](Family f) { return f != target; });
  std::vector<double> none, one, all, sup;
  for (std::uint64_t seed : config.seeds) {
    const auto eval = evaluation_windows(target, config, seed);
    none.push_back(evaluate(fresh_model(config, seed), eval).mse);
    const Family single_family[] = {*single};
    one.push_back(evaluate(pretrain_on_families(single_family, config, seed), eval).mse);
    all.push_back(evaluate(pretrain_on_families(families, config, seed), eval).mse);
    PatchModel supervised = fresh_model(config, seed);
    train_supervised(supervised, training_windows(target, config, seed), seeded(config.supervised, seed));
    sup.push_back(evaluate(supervised, eval).mse);
  }
  ExperimentTable t;
  t.target = to_string(target);
  t.rows.push_back(summarize("no-pretrain", none));
  t.rows.push_back(summarize(std::string("single-family:") + to_string(*single), one));
  t.rows.push_back(summarize("all-families", all));
  t.rows.push_back(summarize("supervised-full-data", sup));
  return t;
}

ExperimentTable fewshot_experiment(std::span<const Family> pretrain_families, Family target,
                                   const ExperimentConfig& config) {
  const auto families = distinct(pretrain_families);
  if (families.empty()) throw DataError(DataErrc::invalid_argument, "fewshot: no pretraining families");
  std::vector<double> zero, tuned, scratch;
  for (std::uint64_t seed : config.seeds) {
    const auto eval = evaluation_windows(target, config, seed);
    auto pool = training_windows(target, config, seed);
    std::mt19937_64 rng(mix_seed(seed, 0xfe35));
    std::shuffle(pool.begin(), pool.end(), rng);
    if (static_cast<Index>(pool.size()) < config.fewshot_samples)
      throw DataError(DataErrc::invalid_argument, "fewshot: only " + std::to_string(pool.size()) +
                                                      " training windows for " +
                                                      std::to_string(config.fewshot_samples) + " samples");
    pool.resize(static_cast<std::size_t>(config.fewshot_samples));

    const PatchModel pretrained = pretrain_on_families(families, config, seed);
    zero.push_back(evaluate(pretrained, eval).mse);
    tuned.push_back(evaluate(finetune_adapters(pretrained, pool, seeded(config.finetune, seed)), eval).mse);
    PatchModel fresh = fresh_model(config, seed);
    train_supervised(fresh, pool, seeded(config.finetune, seed));
    scratch.push_back(evaluate(fresh, eval).mse);
  }
  ExperimentTable t;
  t.target = to_string(target);
  t.rows.push_back(summarize("zero-shot", zero));
  t.rows.push_back(summarize("finetuned-pretrained", tuned));
  t.rows.push_back(summarize("train-from-scratch", scratch));
  return t;
}

void write_table_csv(std::ostream& out, const ExperimentTable& table) {
  out << "target,regime,mean_mse,std_mse,n_seeds";
  const std::size_t n = table.rows.empty() ? 0 : table.rows.front().mse.size();
  for (std::size_t s = 0; s < n; ++s) out << ",mse_seed" << s;
  out << '\n';
  for (const auto& r : table.rows) {
    out << table.target << ',' << r.regime << ',' << format_double(r.mean) << ',' << format_double(r.std) << ','
        << r.mse.size();
    for (double v : r.mse) out << ',' << format_double(v);
    out << '\n';
  }
}

std::vector<ScalingPoint> scaling_curve(std::span<const double> fractions, Index total_points,
                                        const ExperimentConfig& config) {
  if (fractions.size() < 2) throw DataError(DataErrc::invalid_argument, "scaling: need at least two fractions");
  for (std::size_t i = 0; i < fractions.size(); ++i)
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0) || (i > 0 && !(fractions[i] > fractions[i - 1])))
      throw DataError(DataErrc::invalid_argument, "scaling: fractions must increase within (0, 1]");
  const Family families[] = {Family::sine_trend, Family::ar_process, Family::square_seasonal};
  const Index per_family = std::max<Index>(1, total_points / (3 * config.series_length));

  std::vector<ScalingPoint> points(fractions.size());
  for (std::size_t i = 0; i < fractions.size(); ++i) points[i].fraction = fractions[i];
  for (std::uint64_t seed : config.seeds) {
    // Interleave families so every prefix is balanced.
    std::vector<std::vector<Series>> by_family;
    for (Family f : families) by_family.push_back(family_series(f, config, seed, Split::train, per_family));
    std::vector<Series> pool;
    for (Index k = 0; k < per_family; ++k)
      for (auto& fam : by_family) pool.push_back(fam[static_cast<std::size_t>(k)]);
    std::vector<TimeSeriesWindow> eval;
    for (Family f : families) {
      auto w = evaluation_windows(f, config, seed);
      std::move(w.begin(), w.end(), std::back_inserter(eval));
    }
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      const auto n = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(fractions[i] * static_cast<double>(pool.size()) - 1e-9)));
      const std::span<const Series> subset(pool.data(), n);
      std::vector<TimeSeriesWindow> corpus;
      append_windows(corpus, std::vector<Series>(subset.begin(), subset.end()), config.model, config.stride);
      PatchModel model = fresh_model(config, seed);
      PretrainConfig pc = config.pretrain;
      pc.seed = mix_seed(pc.seed, seed);
      pretrain(model, corpus, pc, fit_teachers(subset));
      points[i].n_points = static_cast<Index>(n) * config.series_length;
      points[i].mse.push_back(evaluate(model, eval).mse);
    }
  }
  for (auto& p : points) {
    const RegimeResult r = summarize("", p.mse);
    p.mean = r.mean;
    p.std = r.std;
    p.log10_n = std::log10(static_cast<double>(p.n_points));
  }
  return points;
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingPoint> points) {
  out << "fraction,n_points,log10_n,mean_mse,std_mse\n";
  for (const auto& p : points)
    out << format_double(p.fraction) << ',' << p.n_points << ',' << format_double(p.log10_n) << ','
        << format_double(p.mean) << ',' << format_double(p.std) << '\n';
}

// ---- attention benchmark ---------------------------------------------------

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<BenchEntry> attention_bench(std::span<const Index> lengths, std::span<const Index> patches, Index d,
                                        const BenchConfig& config) {
  using clock = std::chrono::steady_clock;
  if (config.repetitions < 1) throw std::invalid_argument("attention_bench: repetitions must be positive");
  std::vector<BenchEntry> out;
  for (Index L : lengths) {
    const std::size_t first = out.size();
    for (Index P : patches) {
      const Index n = L / P;
      if (n < 1) throw ShapeError("attention_bench: L=" + std::to_string(L) + " shorter than P=" + std::to_string(P));
      std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(L * 131 + P)));
      const Matrix q = normal_init(n, d, 1.0, rng), k = normal_init(n, d, 1.0, rng), v = normal_init(n, d, 1.0, rng);
      double sink = 0.0;
      auto run = [&](int times) {
        const auto t0 = clock::now();
        for (int i = 0; i < times; ++i) sink += attention_core(q, k, v, config.n_heads)(0, 0);
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      };
      for (int w = 0; w < config.warmup; ++w) run(1);
      const double single = std::max(run(1), 1e-6);
      const int inner = std::max(1, static_cast<int>(std::ceil(config.min_sample_ms / single)));
      std::vector<double> samples;
      for (int r = 0; r < config.repetitions; ++r) samples.push_back(run(inner) / inner);
      if (!std::isfinite(sink)) throw NumericError("attention_bench: non-finite attention output");
      BenchEntry e;
      e.L = L;
      e.P = P;
      e.d = d;
      e.flops = attention_flops(L, P, d);
      e.median_ms = percentile(samples, 0.5);
      e.p95_ms = percentile(samples, 0.95);
      out.push_back(e);
    }
    const auto largest = std::max_element(out.begin() + static_cast<std::ptrdiff_t>(first), out.end(),
                                          [](const BenchEntry& a, const BenchEntry& b) { return a.P < b.P; });
    const double base = largest->median_ms;
    for (auto it = out.begin() + static_cast<std::ptrdiff_t>(first); it != out.end(); ++it)
      it->ratio_to_largest_patch = it->median_ms / base;
  }
  return out;
}

void write_bench_csv(std::ostream& out, std::span<const BenchEntry> entries) {
  out << "L,P,d,flops,median_ms,p95_ms,ratio_to_largest_patch\n";
  for (const auto& e : entries)
    out << e.L << ',' << e.P << ',' << e.d << ',' << format_double(e.flops) << ',' << format_double(e.median_ms) << ','
        << format_double(e.p95_ms) << ',' << format_double(e.ratio_to_largest_patch) << '\n';
}

std::string bench_json(std::span<const BenchEntry> entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries)
    j.push_back({{"L", e.L}, {"P", e.P}, {"d", e.d}, {"flops", e.flops}, {"median_ms", e.median_ms},
                 {"p95_ms", e.p95_ms}});
  return j.dump(2);
}

}  // namespace patchcast
