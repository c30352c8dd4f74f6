// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"
#include "patchcast/config.hpp"
#include "patchcast/error.hpp"
#include "patchcast/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace patchcast;
using namespace patchcast::testing;

TEST_CASE("model config validation and round trip") {
  ModelConfig mc = tiny_model_config();
  CHECK_NOTHROW(mc.validate());
  CHECK(mc.n_tokens() == 4);

  ModelConfig bad = mc;
  bad.context_len = 32;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = mc;
  bad.quantile_levels = {0.5, 0.4};
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = mc;
  bad.encoder.n_heads = 3;
  CHECK_THROWS(bad.validate());

  mc.encoder.adapter_enabled = true;
  mc.encoder.d_bottleneck = 3;
  Config c;
  mc.write(c);
  const ModelConfig back = ModelConfig::read(Config::parse(c.to_text()));
  CHECK(back.context_len == mc.context_len);
  CHECK(back.horizon == mc.horizon);
  CHECK(back.scales == mc.scales);
  CHECK(back.quantile_levels == mc.quantile_levels);
  CHECK(back.encoder.adapter_enabled);
  CHECK(back.encoder.d_bottleneck == 3);
  CHECK(back.init_seed == mc.init_seed);
}

TEST_CASE("parameter store follows tensor_shapes and is f32-representable") {
  const ModelConfig mc = tiny_model_config();
  const PatchModel m(mc);
  const auto shapes = PatchModel::tensor_shapes(mc);
  REQUIRE(shapes.size() == m.params().size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    CHECK(m.params()[i].name == shapes[i].name);
    CHECK(m.params()[i].value.rows() == shapes[i].rows);
    CHECK(m.params()[i].value.cols() == shapes[i].cols);
    const Matrix& v = m.params()[i].value;
    CHECK(v.cast<float>().cast<double>() == v);
  }
  CHECK(PatchModel(mc).params().checksum() == m.params().checksum());
  ModelConfig other = mc;
  other.init_seed = 4;
  CHECK(PatchModel(other).params().checksum() != m.params().checksum());
}

TEST_CASE("adapters and freezing") {
  PatchModel m(tiny_model_config());
  const auto before = m.params().size();
  m.enable_adapters();
  CHECK(m.config().encoder.adapter_enabled);
  CHECK(m.params().size() == before + 2 * 2 * 4);
  m.enable_adapters();
  CHECK(m.params().size() == before + 2 * 2 * 4);
  m.freeze_backbone();
  for (const auto& p : m.params()) CHECK(p.trainable == is_finetune_trainable(p.name));
  CHECK(!m.params().at("enc.0.attn.q.weight").trainable);
  CHECK(m.params().at("head.point.weight").trainable);
  m.unfreeze_all();
  for (const auto& p : m.params()) CHECK(p.trainable);
}

TEST_CASE("AdamW: first step moves each coordinate by lr against the gradient sign") {
  ParamStore s;
  s.add("a.weight", Matrix::Constant(2, 2, 1.0));
  s.add("a.bias", Matrix::Constant(1, 2, 1.0));
  s.add("frozen.weight", Matrix::Constant(1, 1, 1.0), false);
  Gradients g = zero_gradients(s);
  g[0] << 0.5, -2.0, 3.0, -0.1;
  g[1] << 1.0, -1.0;
  g[2](0, 0) = 10.0;
  AdamWConfig cfg;
  cfg.eps = 0.0;
  AdamW opt(s, cfg);
  const double lr = 0.01;
  opt.step(s, g, lr);
  CHECK(opt.steps_taken() == 1);
  const double decayed = 1.0 * (1.0 - lr * cfg.weight_decay);
  for (Index i = 0; i < 4; ++i) {
    const double sign = g[0].data()[i] > 0 ? 1.0 : -1.0;
    CHECK(s[0].value.data()[i] == doctest::Approx(decayed - lr * sign).epsilon(1e-12));
  }
  CHECK(s[1].value(0, 0) == doctest::Approx(1.0 - lr).epsilon(1e-12));
  CHECK(s[1].value(0, 1) == doctest::Approx(1.0 + lr).epsilon(1e-12));
  CHECK(s[2].value(0, 0) == 1.0);

  // Second step with the same gradient: m_hat = g, v_hat = g^2 again.
  opt.step(s, g, lr);
  CHECK(s[1].value(0, 0) == doctest::Approx(1.0 - 2.0 * lr).epsilon(1e-12));
}

TEST_CASE("warmup then cosine schedule") {
  const double peak = 1e-3;
  // 100 steps, 5% warmup = 5 steps.
  CHECK(warmup_cosine_lr(0, 100, peak, 0.05) == doctest::Approx(peak / 5.0));
  CHECK(warmup_cosine_lr(4, 100, peak, 0.05) == doctest::Approx(peak));
  CHECK(warmup_cosine_lr(5, 100, peak, 0.05) == doctest::Approx(peak));
  const double mid = warmup_cosine_lr(5 + 95 / 2, 100, peak, 0.05);
  CHECK(mid == doctest::Approx(0.5 * peak * (1.0 + std::cos(std::numbers::pi * 47.0 / 95.0))));
  CHECK(warmup_cosine_lr(99, 100, peak, 0.05) < 0.01 * peak);
  for (long s = 5; s < 99; ++s) CHECK(warmup_cosine_lr(s + 1, 100, peak, 0.05) <= warmup_cosine_lr(s, 100, peak, 0.05));
  CHECK(warmup_cosine_lr(0, 0, peak, 0.05) == 0.0);
}

TEST_CASE("global-norm clipping") {
  Gradients g{Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 4.0)};
  CHECK(global_norm(g) == doctest::Approx(5.0));
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(g[1](0, 0) == doctest::Approx(0.8));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
}
