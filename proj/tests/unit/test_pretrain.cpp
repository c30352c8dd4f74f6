// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "patchcast/error.hpp"
#include "patchcast/pretrain.hpp"
#include "patchcast/tokenizer.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

using namespace patchcast;
using namespace patchcast::testing;

namespace {

TimeSeriesWindow window_of(const Matrix& values) {
  TimeSeriesWindow w;
  w.values = values;
  w.observed = Mask::Constant(values.rows(), values.cols(), true);
  return w;
}

}  // namespace

TEST_CASE("dynamic mask ratio") {
  CHECK(std::abs(dynamic_mask_ratio_from_cv(0.0) - 0.4) < 1e-12);
  CHECK(std::abs(dynamic_mask_ratio_from_cv(1.0) - 0.4 / 1.3) < 1e-12);
  CHECK(std::abs(dynamic_mask_ratio_from_cv(1.0) - 0.30769) < 1e-5);
  CHECK(std::abs(dynamic_mask_ratio_from_cv(2.0) - 0.25) < 1e-12);
  for (double cv = 0.0; cv < 5.0; cv += 0.25)
    CHECK(dynamic_mask_ratio_from_cv(cv + 0.25) < dynamic_mask_ratio_from_cv(cv));
  CHECK(dynamic_mask_ratio_from_cv(1000.0) == kMaskRatioMin);
  CHECK(dynamic_mask_ratio_from_cv(0.0, 2.0) == kMaskRatioMax);
}

TEST_CASE("coefficient of variation on raw observed values") {
  Matrix x(4, 1);
  x << 1, 3, 1, 3;  // mean 2, population std 1
  CHECK(coefficient_of_variation(window_of(x)) == doctest::Approx(0.5));
  CHECK(dynamic_mask_ratio(window_of(x)) == doctest::Approx(0.4 / 1.15));
  Matrix neg = -x;
  CHECK(coefficient_of_variation(window_of(neg)) == doctest::Approx(0.5));
  Matrix centered(2, 1);
  centered << -1, 1;
  CHECK(coefficient_of_variation(window_of(centered)) == 0.0);
  CHECK(dynamic_mask_ratio(window_of(centered)) == doctest::Approx(0.4));
  auto partial = window_of((Matrix(3, 1) << 1, 3, 1000).finished());
  partial.observed(2, 0) = false;
  CHECK(coefficient_of_variation(partial) == doctest::Approx(0.5));
}

TEST_CASE("sample_mask and apply_mask") {
  std::mt19937_64 rng(1);
  const MaskPlan plan = sample_mask(32, 0.25, rng);
  CHECK(plan.indices.size() == 8);
  CHECK(std::set<Index>(plan.indices.begin(), plan.indices.end()).size() == 8);
  for (Index i : plan.indices) CHECK((i >= 0 && i < 32));
  CHECK(sample_mask(4, 0.1, rng).indices.size() == 1);
  CHECK(sample_mask(1, 0.1, rng).indices.size() == 1);

  const Matrix tokens = normal_init(32, 6, 1.0, rng);
  const RowVector mask = RowVector::Constant(6, 9.0);
  const Matrix out = apply_mask(tokens, plan, mask);
  const std::set<Index> m(plan.indices.begin(), plan.indices.end());
  Index replaced = 0;
  for (Index i = 0; i < 32; ++i) {
    if (m.count(i)) {
      CHECK(out.row(i) == mask);
      ++replaced;
    } else {
      CHECK(out.row(i) == tokens.row(i));
    }
  }
  CHECK(replaced == 8);
  MaskPlan bad;
  bad.indices = {32};
  CHECK_THROWS_AS(apply_mask(tokens, bad, mask), std::out_of_range);
}

TEST_CASE("reconstruction loss") {
  std::mt19937_64 rng(2);
  const Matrix x = normal_init(6, 4, 1.0, rng);
  const Index m[] = {1, 4};
  CHECK(reconstruction_loss(x, x, m) == 0.0);
  CHECK(reconstruction_loss(x.array() + 1.0, x, m) == doctest::Approx(1.0).epsilon(1e-14));

  const Matrix y = normal_init(6, 4, 1.0, rng);
  double oracle = 0.0;
  for (Index i : m)
    for (Index c = 0; c < 4; ++c) oracle += (y(i, c) - x(i, c)) * (y(i, c) - x(i, c));
  oracle /= 8.0;
  CHECK(std::abs(reconstruction_loss(y, x, m) - oracle) < 1e-7);

  Matrix x2 = x;
  x2.row(0).array() += 100.0;  // unmasked row
  CHECK(reconstruction_loss(y, x2, m) == reconstruction_loss(y, x, m));
  CHECK_THROWS(reconstruction_loss(y, x, std::span<const Index>{}));
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(3);
  const auto w = window_of(normal_init(64, 2, 1.0, rng));
  AugmentConfig identity;
  identity.jitter_std = 0.0;
  identity.scale_lo = identity.scale_hi = 1.0;
  identity.min_crop = 1.0;
  const auto [a, b] = augment(w, 11, identity);
  CHECK(a.values == w.values);
  CHECK(b.values == w.values);

  const auto [c1, c2] = augment(w, 12);
  const auto [d1, d2] = augment(w, 12);
  CHECK(c1.values == d1.values);
  CHECK(c2.values == d2.values);
  CHECK(c1.values.rows() == 64);
  CHECK((c1.values.array() != w.values.array()).any());
  CHECK(c1.values != c2.values);
}

TEST_CASE("contrastive loss: identical, orthogonal negatives, scale invariance") {
  const Index B = 4;
  const auto pairing = two_view_pairing(B);
  CHECK(pairing == std::vector<Index>{4, 5, 6, 7, 0, 1, 2, 3});

  const Matrix same = Matrix::Constant(2 * B, 5, 0.3);
  CHECK(std::abs(contrastive_loss(same, pairing, 0.1) - std::log(2.0 * B - 1.0)) < 1e-6);

  // View pairs share a basis vector; different pairs are orthogonal.
  Matrix ortho = Matrix::Zero(2 * B, B);
  for (Index i = 0; i < B; ++i) ortho(i, i) = ortho(i + B, i) = 1.0;
  const double closed = -std::log(std::exp(10.0) / (std::exp(10.0) + 6.0));
  CHECK(std::abs(contrastive_loss(ortho, pairing, 0.1) - closed) < 1e-6);
  CHECK(closed == doctest::Approx(2.7237e-4).epsilon(1e-3));

  std::mt19937_64 rng(4);
  const Matrix z = normal_init(2 * B, 6, 1.0, rng);
  const double base = contrastive_loss(z, pairing, 0.1);
  CHECK(base > 0.0);
  CHECK(base <= std::log(2.0 * B - 1.0) + 10.0 / 0.1);
  CHECK(std::abs(contrastive_loss(Matrix(3.7 * z), pairing, 0.1) - base) < 1e-12);

  const auto small = two_view_pairing(1);
  CHECK_THROWS(contrastive_loss(Matrix(Matrix::Ones(2, 3)), small, 0.1));
  Matrix zero_row = z;
  zero_row.row(2).setZero();
  CHECK(std::isfinite(contrastive_loss(zero_row, pairing, 0.1)));
  Matrix nan_row = z;
  nan_row(2, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(contrastive_loss(nan_row, pairing, 0.1), NumericError);
}

TEST_CASE("distillation loss") {
  const Matrix s = Matrix::Constant(4, 2, 1.0);
  const std::vector<Matrix> same{s};
  const std::vector<double> one{1.0};
  CHECK(distill_loss(s, same, one) == 0.0);
  const std::vector<Matrix> shifted{Matrix::Zero(4, 2)};
  CHECK(distill_loss(s, shifted, one) == doctest::Approx(0.5));
  const std::vector<Matrix> two{Matrix::Zero(4, 2), s};
  const std::vector<double> half{0.5, 0.5};
  CHECK(distill_loss(s, two, half) == doctest::Approx(0.25));
  const std::vector<double> bad{0.5, 0.4};
  CHECK_THROWS(distill_loss(s, two, bad));
  const std::vector<Matrix> wrong{Matrix::Zero(3, 2)};
  CHECK_THROWS(distill_loss(s, wrong, one));
}

TEST_CASE("teachers") {
  SyntheticSpec sine;
  sine.length = 960;
  auto corpus = generate_synthetic(sine);
  const TeacherModel sn = fit_teacher(TeacherKind::seasonal_naive, corpus);
  CHECK(sn.period == 24);
  const Matrix ctx = corpus[0].values.topRows(480);
  const Matrix fc = sn.forecast(ctx, 48);
  CHECK((fc - corpus[0].values.middleRows(480, 48)).squaredNorm() / 48.0 < 1e-20);

  SyntheticSpec ar;
  ar.family = Family::ar_process;
  ar.ar_coeffs = {0.5};
  ar.noise_std = 1.0;
  ar.length = 10000;
  ar.seed = 5;
  TeacherFitConfig cfg;
  cfg.ar_order = 1;
  const TeacherModel lin = fit_teacher(TeacherKind::linear_ar, generate_synthetic(ar), cfg);
  CHECK(std::abs(lin.ar_coeffs[0] - 0.5) < 0.05);

  sine.length = 50;
  CHECK_THROWS_AS(fit_teacher(TeacherKind::seasonal_naive, generate_synthetic(sine)), DataError);
  CHECK_THROWS_AS(fit_teacher(TeacherKind::linear_ar, std::vector<Series>{}), DataError);

  const TeacherSet set = fit_teachers(corpus);
  CHECK(set.teachers.size() == 2);
  double total = 0.0;
  for (const auto* t : set.for_domain("sine_trend")) total += t->weight;
  CHECK(total == doctest::Approx(1.0));
  CHECK(set.for_domain("other").empty());
}

TEST_CASE("combined objective terms") {
  const ModelConfig mc = tiny_model_config();
  const TinyCorpus corpus = tiny_corpus(mc);
  PatchModel model(mc);
  perturb_params(model.params(), 5);
  const std::vector<TimeSeriesWindow> batch(corpus.windows.begin(), corpus.windows.begin() + 3);

  PretrainConfig cfg;
  const LossReport r = pretrain_losses(model, batch, cfg, corpus.teachers, 77, nullptr);
  CHECK(r.rec > 0.0);
  CHECK(r.con > 0.0);
  CHECK(r.distill > 0.0);
  CHECK(std::abs(r.total - (r.rec + 0.1 * r.con + 0.5 * r.distill)) < 1e-6);

  PretrainConfig only_rec = cfg;
  only_rec.lambda_con = only_rec.lambda_distill = 0.0;
  const LossReport z = pretrain_losses(model, batch, only_rec, corpus.teachers, 77, nullptr);
  CHECK(z.total == z.rec);
  CHECK(z.rec == r.rec);
}

TEST_CASE("gradient of the total loss matches finite differences") {
  const ModelConfig mc = tiny_model_config();
  REQUIRE(mc.n_tokens() == 4);
  const TinyCorpus corpus = tiny_corpus(mc);
  PatchModel model(mc);
  perturb_params(model.params(), 6);
  const std::vector<TimeSeriesWindow> batch{corpus.windows[0], corpus.windows[5]};
  PretrainConfig cfg;
  Gradients grads;
  const LossReport r = pretrain_losses(model, batch, cfg, corpus.teachers, 99, &grads);
  REQUIRE(r.con > 0.0);
  REQUIRE(r.distill > 0.0);
  const auto g = compare_gradients(model.params(), grads, [&] {
    return pretrain_losses(model, batch, cfg, corpus.teachers, 99, nullptr).total;
  });
  MESSAGE("L_total gradcheck max rel " << g.max_rel << " over " << g.checked << " entries; worst " << g.worst);
  CHECK(g.max_rel < 1e-4);
}

TEST_CASE("training steps are deterministic and reduce the loss") {
  const ModelConfig mc = tiny_model_config();
  const TinyCorpus corpus = tiny_corpus(mc);
  PretrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 4;
  cfg.peak_lr = 3e-3;
  cfg.seed = 8;
  PatchModel a(mc), b(mc);
  std::ostringstream log_a, log_b;
  const auto ra = pretrain(a, corpus.windows, cfg, corpus.teachers, &log_a);
  const auto rb = pretrain(b, corpus.windows, cfg, corpus.teachers, &log_b);
  CHECK(log_a.str() == log_b.str());
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(ra.size() == 30);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) {
    first += ra[i].rec / 5.0;
    last += ra[ra.size() - 1 - i].rec / 5.0;
  }
  MESSAGE("rec first-5 mean " << first << ", last-5 mean " << last);
  CHECK(last < first);
  CHECK(log_a.str().rfind("step,l_rec,l_con,l_distill,l_total,grad_norm,mask_ratio_mean,lr\n", 0) == 0);

  PatchModel c(mc);
  const auto before = c.params().checksum();
  PretrainConfig none = cfg;
  none.steps = 0;
  CHECK(pretrain(c, corpus.windows, none, corpus.teachers).empty());
  CHECK(c.params().checksum() == before);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const ModelConfig mc = tiny_model_config();
  const TinyCorpus corpus = tiny_corpus(mc);
  PatchModel model(mc);
  model.params().at("head.point.weight").value(0, 0) = std::numeric_limits<double>::infinity();
  PretrainConfig cfg;
  cfg.steps = 1;
  cfg.batch_size = 2;
  CHECK_THROWS_AS(pretrain(model, corpus.windows, cfg, corpus.teachers), NumericError);
}
