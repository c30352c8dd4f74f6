// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"
#include "patchcast/error.hpp"
#include "patchcast/forecast.hpp"

#include <doctest.h>

#include <sstream>

using namespace patchcast;
using namespace patchcast::testing;

namespace {

ModelConfig two_var_config() {
  ModelConfig mc = tiny_model_config();
  mc.n_vars = 2;
  return mc;
}

TimeSeriesWindow random_window(const ModelConfig& mc, std::uint64_t seed, double level = 5.0) {
  std::mt19937_64 rng(seed);
  TimeSeriesWindow w;
  w.values = normal_init(mc.context_len, mc.n_vars, 2.0, rng).array() + level;
  w.observed = Mask::Constant(mc.context_len, mc.n_vars, true);
  w.horizon = mc.horizon;
  w.target = normal_init(mc.horizon, mc.n_vars, 2.0, rng).array() + level;
  return w;
}

}  // namespace

TEST_CASE("untrained zero heads forecast the window mean") {
  const ModelConfig mc = two_var_config();
  const PatchModel model(mc);
  TimeSeriesWindow c;
  c.values = Matrix::Constant(mc.context_len, 2, 3.5);
  c.observed = Mask::Constant(mc.context_len, 2, true);
  const ForecastResult rc = zero_shot_forecast(model, c);
  CHECK((rc.point.array() - 3.5).abs().maxCoeff() < 1e-12);

  const auto w = random_window(mc, 1);
  const ForecastResult r = zero_shot_forecast(model, w, {}, 7);
  REQUIRE(r.point.rows() == mc.horizon);
  REQUIRE(r.point.cols() == 2);
  for (Index d = 0; d < 2; ++d)
    CHECK((r.point.col(d).array() - w.values.col(d).mean()).abs().maxCoeff() < 1e-9);
  CHECK(r.window_id == 7);
  CHECK(r.horizon == mc.horizon);
  CHECK(r.quantiles.size() == 9);
  CHECK(r.levels.size() == 9);
}

TEST_CASE("forecast is deterministic, read-only and quantile monotone") {
  const ModelConfig mc = two_var_config();
  PatchModel model(mc);
  perturb_params(model.params(), 2, 0.3);
  const auto before = model.params().checksum();
  const auto w = random_window(mc, 3);
  const ForecastResult a = zero_shot_forecast(model, w);
  const ForecastResult b = zero_shot_forecast(model, w);
  CHECK(model.params().checksum() == before);
  CHECK(a.point == b.point);
  for (std::size_t q = 0; q < a.quantiles.size(); ++q) CHECK(a.quantiles[q] == b.quantiles[q]);
  CHECK(a.point.allFinite());
  for (std::size_t q = 1; q < a.quantiles.size(); ++q)
    CHECK((a.quantiles[q].array() >= a.quantiles[q - 1].array()).all());

  TimeSeriesWindow shortw = w;
  shortw.values = w.values.topRows(32);
  shortw.observed = w.observed.topRows(32);
  CHECK_THROWS_AS(zero_shot_forecast(model, shortw), ShapeError);
}

TEST_CASE("denormalization maps head output u to u*s + m") {
  const ModelConfig mc = two_var_config();
  PatchModel model(mc);
  perturb_params(model.params(), 4, 0.3);
  auto& weight = model.params().at("head.point.weight").value;
  auto& bias = model.params().at("head.point.bias").value;
  weight.setZero();
  std::mt19937_64 rng(5);
  bias = normal_init(1, mc.horizon * 2, 1.0, rng);
  const auto w = random_window(mc, 6);
  const auto stats = *normalize_window(w).norm_state;
  const ForecastResult r = zero_shot_forecast(model, w);
  for (Index h = 0; h < mc.horizon; ++h)
    for (Index d = 0; d < 2; ++d) {
      const double u = bias(0, h * 2 + d);
      CHECK(std::abs(r.point(h, d) - (u * stats[d].std + stats[d].mean)) < 1e-6);
    }
}

TEST_CASE("quantile crossing is repaired by sorting") {
  std::vector<Matrix> q{Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 2.0)};
  enforce_quantile_monotonicity(q);
  CHECK(q[0](0, 0) == 1.0);
  CHECK(q[1](0, 0) == 2.0);
  CHECK(q[2](0, 0) == 3.0);
}

TEST_CASE("pinball loss") {
  const Matrix y = Matrix::Constant(2, 1, 1.0);
  const std::vector<double> median{0.5};
  const std::vector<Matrix> exact{y};
  CHECK(pinball_loss(exact, y, median) == 0.0);
  const std::vector<Matrix> over{Matrix(y.array() + 2.0)};
  CHECK(pinball_loss(over, y, median) == doctest::Approx(1.0));
  const std::vector<double> high{0.9};
  const std::vector<Matrix> under{Matrix(y.array() - 1.0)};
  CHECK(pinball_loss(under, y, high) == doctest::Approx(0.9));
  const std::vector<double> bad{1.0};
  CHECK_THROWS(pinball_loss(exact, y, bad));
  const std::vector<double> unsorted{0.6, 0.4};
  const std::vector<Matrix> two{y, y};
  CHECK_THROWS(pinball_loss(two, y, unsorted));
}

TEST_CASE("missing-data strategies") {
  Mask obs = Mask::Constant(64, 1, true);
  obs.block(0, 0, 9, 1).setConstant(false);   // 9/16 missing in patch 0
  obs.block(16, 0, 8, 1).setConstant(false);  // exactly half in patch 1
  CHECK(heavily_missing_tokens(obs, 16) == std::vector<Index>{0});

  const ModelConfig mc = tiny_model_config();
  PatchModel model(mc);
  perturb_params(model.params(), 7, 0.3);
  auto w = random_window(mc, 8);
  const auto holey = inject_missing(w, 0.3, 9);
  ForecastOptions zf;
  zf.missing = MissingStrategy::zero_fill;
  const auto a = zero_shot_forecast(model, holey);
  const auto b = zero_shot_forecast(model, holey, zf);
  CHECK(a.point.allFinite());
  CHECK(b.point.allFinite());
  CHECK(a.point != b.point);
  // Without gaps the strategies coincide.
  CHECK(zero_shot_forecast(model, w).point == zero_shot_forecast(model, w, zf).point);
}

TEST_CASE("fine-tuning honours the freeze contract") {
  const ModelConfig mc = tiny_model_config();
  const TinyCorpus corpus = tiny_corpus(mc);
  PatchModel base(mc);
  perturb_params(base.params(), 10, 0.1);
  base.params().at("head.point.weight").value.setZero();

  FinetuneConfig none;
  none.steps = 0;
  PatchModel adapted = base;
  adapted.enable_adapters();
  const PatchModel same = finetune_adapters(base, corpus.windows, none);
  CHECK(same.params().checksum() == adapted.params().checksum());

  FinetuneConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 4;
  PatchModel frozen_ref = base;
  frozen_ref.enable_adapters();
  frozen_ref.freeze_backbone();
  const PatchModel tuned = finetune_adapters(base, corpus.windows, cfg);
  CHECK(tuned.params().checksum(false) == frozen_ref.params().checksum(false));
  CHECK(tuned.params().checksum(true) != frozen_ref.params().checksum(true));
  for (const auto& p : tuned.params())
    if (!p.trainable) CHECK(p.value == frozen_ref.params().at(p.name).value);

  const PatchModel again = finetune_adapters(base, corpus.windows, cfg);
  CHECK(again.params().checksum() == tuned.params().checksum());

  CHECK_THROWS(finetune_adapters(base, std::vector<TimeSeriesWindow>{}, cfg));
  PatchModel nothing = base;
  nothing.params().set_trainable([](const std::string&) { return false; });
  CHECK_THROWS(train_supervised(nothing, corpus.windows, cfg));
}

TEST_CASE("supervised fine-tuning does not worsen held-out MSE") {
  const ModelConfig mc = tiny_model_config();
  const TinyCorpus corpus = tiny_corpus(mc, 1200, 11);
  const std::vector<TimeSeriesWindow> train(corpus.windows.begin(), corpus.windows.begin() + 100);
  const std::vector<TimeSeriesWindow> held(corpus.windows.end() - 20, corpus.windows.end());
  PatchModel base(mc);
  FinetuneConfig cfg;
  cfg.steps = 100;
  const PatchModel tuned = finetune_adapters(base, train, cfg);
  auto mse = [&](const PatchModel& m) {
    double s = 0.0;
    for (const auto& w : held) s += (zero_shot_forecast(m, w).point - *w.target).squaredNorm();
    return s;
  };
  const double zs = mse(base), ft = mse(tuned);
  MESSAGE("held-out squared error: zero-shot " << zs << ", fine-tuned " << ft);
  CHECK(ft <= 1.05 * zs);
}

TEST_CASE("forecast CSV") {
  ForecastResult r;
  r.window_id = 3;
  r.horizon = 2;
  r.point = (Matrix(2, 1) << 1.5, 2.0).finished();
  r.levels = default_quantile_levels();
  for (double l : r.levels) r.quantiles.push_back(Matrix::Constant(2, 1, l));
  std::ostringstream out;
  write_forecast_csv(out, std::span<const ForecastResult>(&r, 1));
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "window_id,h,variable,point,q10,q20,q30,q40,q50,q60,q70,q80,q90");
  CHECK(first == "3,0,0,1.5,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9");
}
