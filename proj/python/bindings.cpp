// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/checkpoint.hpp"
#include "patchcast/encoder.hpp"
#include "patchcast/error.hpp"
#include "patchcast/eval.hpp"
#include "patchcast/forecast.hpp"
#include "patchcast/pretrain.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

namespace py = pybind11;
using namespace patchcast;

namespace {

// NaN cells become unobserved placeholders.
Series to_series(const Matrix& values, const std::string& domain) {
  Series s;
  s.values = values;
  s.observed = values.array().isFinite();
  for (Index i = 0; i < s.values.size(); ++i)
    if (!s.observed.data()[i]) s.values.data()[i] = 0.0;
  s.domain = domain;
  return s;
}

Matrix with_nans(const Series& s) {
  Matrix out = s.values;
  for (Index i = 0; i < out.size(); ++i)
    if (!s.observed.data()[i]) out.data()[i] = std::nan("");
  return out;
}

std::vector<TimeSeriesWindow> windows_of(const std::vector<Matrix>& series, const ModelConfig& mc, Index stride,
                                         const std::string& domain) {
  std::vector<TimeSeriesWindow> out;
  for (const auto& m : series) {
    auto w = make_windows(to_series(m, domain), mc.context_len, mc.horizon, stride).windows;
    out.insert(out.end(), w.begin(), w.end());
  }
  if (out.empty()) throw DataError(DataErrc::invalid_argument, "no windows could be cut from the input series");
  return out;
}

MissingStrategy strategy_of(const std::string& s) {
  if (s == "mask_token") return MissingStrategy::mask_token;
  if (s == "zero_fill") return MissingStrategy::zero_fill;
  throw std::invalid_argument("missing must be 'mask_token' or 'zero_fill'");
}

py::dict report_dict(const MetricReport& m) {
  py::dict d;
  d["mse"] = m.mse;
  d["mae"] = m.mae;
  d["rmse"] = m.rmse;
  d["pinball"] = m.pinball;
  d["crps"] = m.crps;
  d["coverage"] = m.coverage;
  d["n_windows"] = m.n_windows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_patchcast, m) {
  m.doc() = "Patch-based time series forecasting with self-supervised pretraining";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def(
      "generate_synthetic",
      [](const std::string& family, Index length, Index n_series, std::uint64_t seed, double noise_std) {
        SyntheticSpec s;
        s.family = family_from_string(family);
        s.length = length;
        s.n_series = n_series;
        s.seed = seed;
        s.noise_std = noise_std;
        std::vector<Matrix> out;
        for (const auto& series : generate_synthetic(s)) out.push_back(series.values);
        return out;
      },
      py::arg("family") = "sine_trend", py::arg("length") = 1024, py::arg("n_series") = 1, py::arg("seed") = 0,
      py::arg("noise_std") = 0.0, "Synthetic series as (length, 1) arrays.");

  m.def(
      "read_csv",
      [](const std::filesystem::path& path, std::optional<std::string> timestamp_column) {
        CsvConfig c;
        c.timestamp_column = std::move(timestamp_column);
        std::vector<Matrix> out;
        for (const auto& s : ingest_csv(path, c)) out.push_back(with_nans(s));
        return out;
      },
      py::arg("path"), py::arg("timestamp_column") = py::none(), "CSV series; missing cells are NaN.");

  m.def("dynamic_mask_ratio", &dynamic_mask_ratio_from_cv, py::arg("cv"), py::arg("p_base") = 0.4,
        py::arg("beta") = 0.3, "Mask ratio for a coefficient of variation.");

  m.def(
      "contrastive_loss",
      [](const Matrix& z, double tau) {
        if (z.rows() < 4 || z.rows() % 2 != 0) throw ShapeError("contrastive_loss: need 2B rows with B >= 2");
        return contrastive_loss(z, two_view_pairing(z.rows() / 2), tau);
      },
      py::arg("z"), py::arg("tau") = 0.1, "InfoNCE over 2B embeddings; row i pairs with row i + B.");

  m.def(
      "pinball_loss",
      [](const std::vector<Matrix>& quantiles, const Matrix& target, const std::vector<double>& levels) {
        return pinball_loss(quantiles, target, levels);
      },
      py::arg("quantiles"), py::arg("target"), py::arg("levels"));

  m.def("attention_flops", &attention_flops, py::arg("L"), py::arg("P"), py::arg("d"));

  m.def(
      "attention_bench",
      [](const std::vector<Index>& lengths, const std::vector<Index>& patches, Index d, int repetitions) {
        BenchConfig cfg;
        cfg.repetitions = repetitions;
        py::list out;
        for (const auto& e : attention_bench(lengths, patches, d, cfg)) {
          py::dict row;
          row["L"] = e.L;
          row["P"] = e.P;
          row["d"] = e.d;
          row["flops"] = e.flops;
          row["median_ms"] = e.median_ms;
          row["p95_ms"] = e.p95_ms;
          out.append(row);
        }
        return out;
      },
      py::arg("lengths"), py::arg("patches"), py::arg("d") = 64, py::arg("repetitions") = 21);

  py::class_<PatchModel>(m, "Model")
      .def(py::init([](Index context_len, Index horizon, Index n_vars, std::vector<Index> scales, Index n_layers,
                       Index n_heads, Index d_model, Index d_ff, std::uint64_t seed) {
             ModelConfig c;
             c.context_len = context_len;
             c.horizon = horizon;
             c.n_vars = n_vars;
             c.scales = std::move(scales);
             c.encoder.n_layers = n_layers;
             c.encoder.n_heads = n_heads;
             c.encoder.d_model = d_model;
             c.encoder.d_ff = d_ff;
             c.init_seed = seed;
             return PatchModel(c);
           }),
           py::arg("context_len") = 512, py::arg("horizon") = 96, py::arg("n_vars") = 1,
           py::arg("scales") = std::vector<Index>{16, 32, 64}, py::arg("n_layers") = 4, py::arg("n_heads") = 4,
           py::arg("d_model") = 64, py::arg("d_ff") = 256, py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"))
      .def(
          "save",
          [](const PatchModel& self, const std::filesystem::path& p, std::int64_t step, std::uint64_t seed,
             const std::string& corpus) {
            CheckpointMeta meta;
            meta.step = step;
            meta.seed = seed;
            meta.corpus = corpus;
            save_checkpoint(p, self, meta);
          },
          py::arg("path"), py::arg("step") = 0, py::arg("seed") = 0, py::arg("corpus") = "")
      .def_property_readonly("context_len", [](const PatchModel& s) { return s.config().context_len; })
      .def_property_readonly("horizon", [](const PatchModel& s) { return s.config().horizon; })
      .def_property_readonly("n_vars", [](const PatchModel& s) { return s.config().n_vars; })
      .def_property_readonly("quantile_levels", [](const PatchModel& s) { return s.config().quantile_levels; })
      .def("checksum", [](const PatchModel& s) { return s.params().checksum(); })
      .def("enable_adapters", &PatchModel::enable_adapters)
      .def("freeze_backbone", &PatchModel::freeze_backbone)
      .def("param_count",
           [](const PatchModel& s) {
             const ParamCount c = count_params(s.params(), [&](const std::string& n) { return s.params().at(n).trainable; });
             return py::make_tuple(c.trainable, c.total, c.fraction);
           })
      .def(
          "forecast",
          [](const PatchModel& self, const Matrix& context, const std::string& missing) {
            const Series s = to_series(context, "python");
            TimeSeriesWindow w;
            w.values = s.values;
            w.observed = s.observed;
            ForecastOptions opts;
            opts.missing = strategy_of(missing);
            ForecastResult r;
            {
              py::gil_scoped_release release;
              r = zero_shot_forecast(self, w, opts);
            }
            py::dict out;
            out["point"] = r.point;
            out["quantiles"] = r.quantiles;
            out["levels"] = r.levels;
            return out;
          },
          py::arg("context"), py::arg("missing") = "mask_token",
          "Forecast from an (L, D) context; NaN marks missing cells.")
      .def(
          "pretrain",
          [](PatchModel& self, const std::vector<Matrix>& series, long steps, Index batch_size, std::uint64_t seed,
             Index stride, double peak_lr) {
            std::vector<Series> raw;
            for (const auto& s : series) raw.push_back(to_series(s, "python"));
            const auto corpus = windows_of(series, self.config(), stride, "python");
            PretrainConfig pc;
            pc.steps = steps;
            pc.batch_size = batch_size;
            pc.seed = seed;
            pc.peak_lr = peak_lr;
            std::vector<LossReport> reports;
            {
              py::gil_scoped_release release;
              reports = pretrain(self, corpus, pc, fit_teachers(raw));
            }
            py::list out;
            for (const auto& r : reports) {
              py::dict d;
              d["step"] = r.step;
              d["rec"] = r.rec;
              d["con"] = r.con;
              d["distill"] = r.distill;
              d["total"] = r.total;
              out.append(d);
            }
            return out;
          },
          py::arg("series"), py::arg("steps") = 200, py::arg("batch_size") = 8, py::arg("seed") = 0,
          py::arg("stride") = 16, py::arg("peak_lr") = 3e-4, "Self-supervised pretraining in place; returns losses.")
      .def(
          "finetune",
          [](const PatchModel& self, const std::vector<Matrix>& series, long steps, Index batch_size,
             std::uint64_t seed, Index stride) {
            const auto windows = windows_of(series, self.config(), stride, "python");
            FinetuneConfig fc;
            fc.steps = steps;
            fc.batch_size = batch_size;
            fc.seed = seed;
            py::gil_scoped_release release;
            return finetune_adapters(self, windows, fc);
          },
          py::arg("series"), py::arg("steps") = 200, py::arg("batch_size") = 8, py::arg("seed") = 0,
          py::arg("stride") = 16, "Adapter fine-tuning; returns a new model.")
      .def(
          "evaluate",
          [](const PatchModel& self, const std::vector<Matrix>& series, Index stride, const std::string& missing) {
            const auto windows = windows_of(series, self.config(), stride, "python");
            ForecastOptions opts;
            opts.missing = strategy_of(missing);
            MetricReport r;
            {
              py::gil_scoped_release release;
              r = evaluate(self, windows, opts);
            }
            return report_dict(r);
          },
          py::arg("series"), py::arg("stride") = 16, py::arg("missing") = "mask_token",
          "Metrics over rolling windows in original units.");
}
