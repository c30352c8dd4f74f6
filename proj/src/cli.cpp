// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/cli.hpp"

#include "patchcast/checkpoint.hpp"
#include "patchcast/error.hpp"
#include "patchcast/eval.hpp"
#include "patchcast/forecast.hpp"
#include "patchcast/pretrain.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace patchcast {

namespace fs = std::filesystem;

namespace {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out_dir = ".";
  std::string log_level = "info";
  bool no_timestamps = false;
};

class Logger {
 public:
  Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void operator()(LogLevel l, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (l <= level_) err_ << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
  }

 private:
  std::ostream& err_;
  LogLevel level_;
};

LogLevel parse_level(const std::string& s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw CLI::ValidationError("--log-level", "expected one of error, warn, info, debug");
}

/// Input series: a CSV file when --data is set, otherwise a synthetic corpus.
struct DataArgs {
  std::string path;
  std::string timestamp_column;
  std::string family;
  Index length = 0;
  Index n_series = 0;
  double noise = -1.0;
  Index stride = 16;
};

void add_data_options(CLI::App* sub, DataArgs& d) {
  sub->add_option("--data", d.path, "CSV input (default: synthetic corpus from [synthetic])");
  sub->add_option("--timestamp-column", d.timestamp_column, "CSV column holding timestamps");
  sub->add_option("--family", d.family, "synthetic family: sine_trend, ar_process, square_seasonal");
  sub->add_option("--length", d.length, "synthetic series length");
  sub->add_option("--series", d.n_series, "number of synthetic series");
  sub->add_option("--noise", d.noise, "synthetic noise std");
  sub->add_option("--stride", d.stride, "window stride")->check(CLI::PositiveNumber);
}

SyntheticSpec synthetic_spec(const Config& cfg, const DataArgs& d, const Globals& g) {
  SyntheticSpec s = synthetic_spec_from_config_text(cfg.to_text());
  if (!d.family.empty()) s.family = family_from_string(d.family);
  if (d.length > 0) s.length = d.length;
  if (d.n_series > 0) s.n_series = d.n_series;
  if (d.noise >= 0.0) s.noise_std = d.noise;
  if (g.seed) s.seed = *g.seed;
  return s;
}

std::vector<Series> load_series(const Config& cfg, const DataArgs& d, const Globals& g, std::string* description) {
  if (!d.path.empty()) {
    CsvConfig csv;
    csv.domain = fs::path(d.path).stem().string();
    if (!d.timestamp_column.empty()) csv.timestamp_column = d.timestamp_column;
    if (description) *description = "csv:" + fs::path(d.path).filename().string();
    return ingest_csv(d.path, csv);
  }
  const SyntheticSpec s = synthetic_spec(cfg, d, g);
  if (description) *description = std::string("synthetic:") + to_string(s.family);
  return generate_synthetic(s);
}

std::vector<TimeSeriesWindow> windows_of(const std::vector<Series>& series, const ModelConfig& mc, Index stride,
                                         const Logger& log) {
  std::vector<TimeSeriesWindow> out;
  for (const auto& s : series) {
    auto r = make_windows(s, mc.context_len, mc.horizon, stride);
    if (r.warning) log(LogLevel::warn, *r.warning);
    std::move(r.windows.begin(), r.windows.end(), std::back_inserter(out));
  }
  if (out.empty()) throw DataError(DataErrc::invalid_argument, "no windows could be cut from the input series");
  return out;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataErrc::file_not_found, p.string() + ": cannot open for writing");
  return f;
}

std::vector<Family> parse_families(const std::vector<std::string>& names) {
  std::vector<Family> out;
  for (const auto& n : names) out.push_back(family_from_string(n));
  return out;
}

CheckpointMeta make_meta(const Globals& g, std::int64_t step, std::uint64_t seed, std::string corpus) {
  CheckpointMeta m;
  m.step = step;
  m.seed = seed;
  m.created = g.no_timestamps ? "" : utc_timestamp();
  m.corpus = std::move(corpus);
  return m;
}

std::string json_report(const MetricReport& m) {
  std::ostringstream s;
  s << "{\"mse\": " << format_double(m.mse) << ", \"mae\": " << format_double(m.mae)
    << ", \"rmse\": " << format_double(m.rmse) << ", \"pinball\": " << format_double(m.pinball)
    << ", \"crps\": " << format_double(m.crps) << ", \"coverage\": " << format_double(m.coverage)
    << ", \"n_windows\": " << m.n_windows << "}";
  return s.str();
}

MissingStrategy parse_strategy(const std::string& s) {
  if (s == "mask_token") return MissingStrategy::mask_token;
  if (s == "zero_fill") return MissingStrategy::zero_fill;
  throw CLI::ValidationError("--missing-strategy", "expected mask_token or zero_fill");
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"patchcast: patch-based time series forecasting", "patchcast"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "config file (flat key-value with sections)");
  app.add_option("--seed", g.seed, "seed for every random stream");
  app.add_option("--checkpoint", g.checkpoint, "checkpoint to load");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--log-level", g.log_level, "error, warn, info or debug");
  app.add_flag("--no-timestamps", g.no_timestamps, "omit creation time from checkpoints");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus as CSV");
  DataArgs synth_data;
  add_data_options(synth, synth_data);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  DataArgs pre_data;
  add_data_options(pre, pre_data);
  std::optional<long> pre_steps;
  std::optional<Index> pre_batch;
  std::string pre_save;
  pre->add_option("--steps", pre_steps, "optimizer steps")->check(CLI::NonNegativeNumber);
  pre->add_option("--batch", pre_batch, "windows per batch")->check(CLI::PositiveNumber);
  pre->add_option("--save", pre_save, "checkpoint output (default <out>/pretrained.pfmt)");

  // finetune
  auto* fine = app.add_subcommand("finetune", "adapter fine-tuning of a checkpoint");
  DataArgs fine_data;
  add_data_options(fine, fine_data);
  std::optional<long> fine_steps;
  std::string fine_save;
  fine->add_option("--steps", fine_steps, "optimizer steps")->check(CLI::NonNegativeNumber);
  fine->add_option("--save", fine_save, "checkpoint output (default <out>/finetuned.pfmt)");

  // forecast
  auto* fc = app.add_subcommand("forecast", "zero-shot forecast of the last context of every series");
  DataArgs fc_data;
  add_data_options(fc, fc_data);
  std::string fc_strategy = "mask_token";
  fc->add_option("--missing-strategy", fc_strategy, "mask_token or zero_fill");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics of a checkpoint on rolling windows");
  DataArgs ev_data;
  add_data_options(ev, ev_data);
  std::string ev_strategy = "mask_token";
  ev->add_option("--missing-strategy", ev_strategy, "mask_token or zero_fill");

  // bench
  auto* bench = app.add_subcommand("bench", "attention-stage timing");
  std::vector<Index> bench_l{512}, bench_p{16, 32, 64};
  Index bench_d = 64;
  BenchConfig bench_cfg;
  bench->add_option("--l", bench_l, "sequence lengths")->delimiter(',');
  bench->add_option("--patch", bench_p, "patch sizes")->delimiter(',');
  bench->add_option("--d", bench_d, "model width")->check(CLI::PositiveNumber);
  bench->add_option("--heads", bench_cfg.n_heads, "attention heads")->check(CLI::PositiveNumber);
  bench->add_option("--reps", bench_cfg.repetitions, "timed repetitions")->check(CLI::PositiveNumber);

  // experiments
  std::vector<std::string> families{"sine_trend", "ar_process", "square_seasonal"};
  std::string target = "sine_trend";
  std::vector<std::uint64_t> seeds;
  auto add_experiment = [&](CLI::App* sub) {
    sub->add_option("--families", families, "pretraining families")->delimiter(',');
    sub->add_option("--target", target, "target family");
    sub->add_option("--seeds", seeds, "seeds")->delimiter(',');
  };
  auto* transfer = app.add_subcommand("transfer", "cross-family transfer table");
  add_experiment(transfer);
  auto* fewshot = app.add_subcommand("fewshot", "few-shot adaptation table");
  add_experiment(fewshot);
  std::optional<Index> fewshot_samples;
  fewshot->add_option("--samples", fewshot_samples, "few-shot training windows")->check(CLI::PositiveNumber);
  auto* scaling = app.add_subcommand("scaling", "validation MSE against pretraining corpus size");
  add_experiment(scaling);
  std::vector<double> fractions{0.01, 0.1, 1.0};
  Index total_points = 1'000'000;
  scaling->add_option("--fractions", fractions, "corpus fractions")->delimiter(',');
  scaling->add_option("--total-points", total_points, "full corpus size")->check(CLI::PositiveNumber);

  // missing
  auto* missing = app.add_subcommand("missing", "missing-data sweep for both inference strategies");
  DataArgs miss_data;
  add_data_options(missing, miss_data);
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3};
  Index miss_windows = 200;
  missing->add_option("--rates", rates, "missing rates (first must be 0)")->delimiter(',');
  missing->add_option("--windows", miss_windows, "evaluation windows")->check(CLI::PositiveNumber);

  app.fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const bool needs_checkpoint = fc->parsed() || fine->parsed() || ev->parsed() || missing->parsed();
  if (needs_checkpoint && g.checkpoint.empty()) {
    const auto* sub = app.get_subcommands().front();
    err << "error: " << sub->get_name() << " requires --checkpoint <path>\n\n" << sub->help();
    return kExitUsage;
  }

  try {
    const Logger log(err, parse_level(g.log_level));
    Config cfg = g.config_path.empty() ? Config{} : Config::load(g.config_path);

    if (synth->parsed()) {
      const SyntheticSpec s = synthetic_spec(cfg, synth_data, g);
      const auto series = generate_synthetic(s);
      write_csv(out_path(g, "synthetic.csv"), series);
      open_out(out_path(g, "synthetic.ini")) << to_config_text(s);
      log(LogLevel::info, "wrote " + std::to_string(series.size()) + " series to " + g.out_dir);
      return kExitOk;
    }

    if (pre->parsed()) {
      ModelConfig mc = ModelConfig::read(cfg);
      PretrainConfig pc = PretrainConfig::read(cfg);
      if (g.seed) mc.init_seed = pc.seed = *g.seed;
      if (pre_steps) pc.steps = *pre_steps;
      if (pre_batch) pc.batch_size = *pre_batch;
      std::string corpus_desc;
      const auto series = load_series(cfg, pre_data, g, &corpus_desc);
      PatchModel model = g.checkpoint.empty() ? PatchModel(mc) : load_model(fs::path(g.checkpoint));
      const auto corpus = windows_of(series, model.config(), pre_data.stride, log);
      const TeacherSet teachers = fit_teachers(series);
      auto log_file = open_out(out_path(g, "pretrain_log.csv"));
      const auto reports = pretrain(model, corpus, pc, teachers, &log_file);
      if (!reports.empty())
        log(LogLevel::info, "final l_rec=" + format_double(reports.back().rec) +
                                " l_total=" + format_double(reports.back().total));
      const fs::path dest = pre_save.empty() ? out_path(g, "pretrained.pfmt") : fs::path(pre_save);
      save_checkpoint(dest, model, make_meta(g, pc.steps, pc.seed, corpus_desc));
      out << dest.string() << '\n';
      return kExitOk;
    }

    if (fine->parsed()) {
      const PatchModel base = load_model(fs::path(g.checkpoint));
      FinetuneConfig fcfg = FinetuneConfig::read(cfg);
      if (g.seed) fcfg.seed = *g.seed;
      if (fine_steps) fcfg.steps = *fine_steps;
      std::string corpus_desc;
      const auto windows = windows_of(load_series(cfg, fine_data, g, &corpus_desc), base.config(), fine_data.stride, log);
      const PatchModel tuned = finetune_adapters(base, windows, fcfg);
      const auto count = count_params(tuned.params(), is_finetune_trainable);
      log(LogLevel::info, "trainable fraction " + format_double(count.fraction));
      const fs::path dest = fine_save.empty() ? out_path(g, "finetuned.pfmt") : fs::path(fine_save);
      save_checkpoint(dest, tuned, make_meta(g, fcfg.steps, fcfg.seed, corpus_desc));
      out << dest.string() << '\n';
      return kExitOk;
    }

    if (fc->parsed()) {
      const PatchModel model = load_model(fs::path(g.checkpoint));
      const auto series = load_series(cfg, fc_data, g, nullptr);
      const Index L = model.config().context_len;
      ForecastOptions opts;
      opts.missing = parse_strategy(fc_strategy);
      opts.model_id = fs::path(g.checkpoint).stem().string();
      std::vector<ForecastResult> results;
      for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        if (s.length() < L)
          throw DataError(DataErrc::invalid_argument, "series " + std::to_string(i) + " is shorter than the context");
        TimeSeriesWindow w;
        w.values = s.values.bottomRows(L);
        w.observed = s.observed.bottomRows(L);
        w.horizon = model.config().horizon;
        w.domain = s.domain;
        w.start = s.length() - L;
        results.push_back(zero_shot_forecast(model, w, opts, static_cast<Index>(i)));
      }
      auto f = open_out(out_path(g, "forecast.csv"));
      write_forecast_csv(f, results);
      return kExitOk;
    }

    if (ev->parsed()) {
      const PatchModel model = load_model(fs::path(g.checkpoint));
      const auto windows = windows_of(load_series(cfg, ev_data, g, nullptr), model.config(), ev_data.stride, log);
      ForecastOptions opts;
      opts.missing = parse_strategy(ev_strategy);
      const MetricReport m = evaluate(model, windows, opts);
      auto f = open_out(out_path(g, "metrics.csv"));
      f << "mse,mae,rmse,pinball,crps,coverage,n_windows\n"
        << format_double(m.mse) << ',' << format_double(m.mae) << ',' << format_double(m.rmse) << ','
        << format_double(m.pinball) << ',' << format_double(m.crps) << ',' << format_double(m.coverage) << ','
        << m.n_windows << '\n';
      out << json_report(m) << '\n';
      return kExitOk;
    }

    if (bench->parsed()) {
      if (g.seed) bench_cfg.seed = *g.seed;
      const auto entries = attention_bench(bench_l, bench_p, bench_d, bench_cfg);
      auto csv = open_out(out_path(g, "bench.csv"));
      write_bench_csv(csv, entries);
      open_out(out_path(g, "bench.json")) << bench_json(entries) << '\n';
      out << bench_json(entries) << '\n';
      return kExitOk;
    }

    if (transfer->parsed() || fewshot->parsed() || scaling->parsed()) {
      ExperimentConfig ec = ExperimentConfig::read(cfg);
      if (!seeds.empty()) ec.seeds = seeds;
      if (g.seed) ec.pretrain.seed = ec.finetune.seed = ec.supervised.seed = *g.seed;
      const auto fams = parse_families(families);
      const Family tgt = family_from_string(target);
      if (scaling->parsed()) {
        const auto points = scaling_curve(fractions, total_points, ec);
        auto f = open_out(out_path(g, "scaling.csv"));
        write_scaling_csv(f, points);
        write_scaling_csv(out, points);
        return kExitOk;
      }
      if (fewshot_samples) ec.fewshot_samples = *fewshot_samples;
      const ExperimentTable table =
          transfer->parsed() ? transfer_experiment(fams, tgt, ec) : fewshot_experiment(fams, tgt, ec);
      auto f = open_out(out_path(g, transfer->parsed() ? "transfer.csv" : "fewshot.csv"));
      write_table_csv(f, table);
      write_table_csv(out, table);
      return kExitOk;
    }

    if (missing->parsed()) {
      const PatchModel model = load_model(fs::path(g.checkpoint));
      auto windows = windows_of(load_series(cfg, miss_data, g, nullptr), model.config(), miss_data.stride, log);
      if (static_cast<Index>(windows.size()) > miss_windows) windows.resize(static_cast<std::size_t>(miss_windows));
      const std::uint64_t seed = g.seed.value_or(0);
      auto f = open_out(out_path(g, "missing.csv"));
      bool first = true;
      for (auto [strategy, name] : {std::pair{MissingStrategy::mask_token, "mask_token"},
                                    std::pair{MissingStrategy::zero_fill, "zero_fill"}}) {
        std::ostringstream rows;
        write_missing_csv(rows, missing_data_sweep(model, windows, rates, seed, strategy), name);
        std::string text = rows.str();
        if (!first) text = text.substr(text.find('\n') + 1);
        f << text;
        out << text;
        first = false;
      }
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, out, err);
}

}  // namespace patchcast
