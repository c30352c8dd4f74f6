// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "gradcheck.hpp"
#include "patchcast/encoder.hpp"
#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace patchcast;

namespace {

EncoderConfig tiny(Index layers, Index heads, Index d, Index ff, bool adapters = false) {
  EncoderConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.d_ff = ff;
  c.adapter_enabled = adapters;
  return c;
}

ParamStore encoder_params(const EncoderConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore s;
  add_encoder_params(s, c, rng);
  if (c.adapter_enabled) add_adapter_params(s, c, rng);
  return s;
}

// Gains and biases away from their init values so every path is exercised.
void perturb_all(ParamStore& s, std::uint64_t seed, double std = 0.3) {
  std::mt19937_64 rng(seed);
  for (auto& p : s) p.value += normal_init(p.value.rows(), p.value.cols(), std, rng);
}

Matrix random_tokens(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return normal_init(n, d, 1.0, rng);
}

// Plain-loop single-head, single-layer post-norm encoder step.
Matrix naive_layer(const Matrix& z, const ParamStore& p) {
  const Index n = z.rows(), d = z.cols();
  auto lin = [&](const Matrix& x, const std::string& name) {
    const Matrix& W = p.at(name + ".weight").value;
    const Matrix& b = p.at(name + ".bias").value;
    Matrix out(x.rows(), W.cols());
    for (Index i = 0; i < x.rows(); ++i)
      for (Index c = 0; c < W.cols(); ++c) {
        double acc = b(0, c);
        for (Index k = 0; k < x.cols(); ++k) acc += x(i, k) * W(k, c);
        out(i, c) = acc;
      }
    return out;
  };
  auto ln = [&](const Matrix& x, const std::string& name) {
    const Matrix& g = p.at(name + ".gain").value;
    const Matrix& b = p.at(name + ".bias").value;
    Matrix out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      double mu = 0.0, var = 0.0;
      for (Index k = 0; k < x.cols(); ++k) mu += x(i, k);
      mu /= static_cast<double>(x.cols());
      for (Index k = 0; k < x.cols(); ++k) var += (x(i, k) - mu) * (x(i, k) - mu);
      var /= static_cast<double>(x.cols());
      for (Index k = 0; k < x.cols(); ++k) out(i, k) = g(0, k) * (x(i, k) - mu) / std::sqrt(var + 1e-5) + b(0, k);
    }
    return out;
  };
  const Matrix q = lin(z, "enc.0.attn.q"), k = lin(z, "enc.0.attn.k"), v = lin(z, "enc.0.attn.v");
  Matrix mixed = Matrix::Zero(n, d);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> s(static_cast<std::size_t>(n));
    double mx = -1e300, total = 0.0;
    for (Index j = 0; j < n; ++j) {
      double dot = 0.0;
      for (Index c = 0; c < d; ++c) dot += q(i, c) * k(j, c);
      s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[static_cast<std::size_t>(j)]);
    }
    for (auto& x : s) total += (x = std::exp(x - mx));
    for (Index j = 0; j < n; ++j)
      for (Index c = 0; c < d; ++c) mixed(i, c) += s[static_cast<std::size_t>(j)] / total * v(j, c);
  }
  const Matrix z1 = ln(z + lin(mixed, "enc.0.attn.o"), "enc.0.norm1");
  Matrix hidden = lin(z1, "enc.0.ffn.1");
  for (Index i = 0; i < hidden.size(); ++i) hidden.data()[i] = std::max(0.0, hidden.data()[i]);
  return ln(z1 + lin(hidden, "enc.0.ffn.2"), "enc.0.norm2");
}

}  // namespace

TEST_CASE("shape contract and attention rows") {
  const EncoderConfig c = tiny(2, 4, 16, 32);
  const ParamStore p = encoder_params(c, 1);
  for (Index n : {1, 3, 17}) {
    AttentionTrace trace;
    const Matrix out = encoder_forward(random_tokens(n, 16, 2), c, p, &trace);
    CHECK(out.rows() == n);
    CHECK(out.cols() == 16);
    CHECK(trace.probs.size() == 8);
    for (const auto& probs : trace.probs)
      for (Index i = 0; i < n; ++i) CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("one layer, one head, three tokens matches a step-by-step oracle") {
  const EncoderConfig c = tiny(1, 1, 6, 10);
  ParamStore p = encoder_params(c, 3);
  perturb_all(p, 4);
  const Matrix z = random_tokens(3, 6, 5);
  CHECK((encoder_forward(z, c, p) - naive_layer(z, p)).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("layer norm init and validation") {
  const EncoderConfig c = tiny(1, 2, 8, 16);
  const ParamStore p = encoder_params(c, 6);
  CHECK(p.at("enc.0.norm1.gain").value.isOnes());
  CHECK(p.at("enc.0.norm2.bias").value.isZero());
  CHECK_THROWS(tiny(1, 3, 8, 16).validate());
  CHECK(EncoderConfig::base().bottleneck() == 32);
  CHECK(EncoderConfig::desk().bottleneck() == 4);
}

TEST_CASE("adapter_forward examples") {
  std::mt19937_64 rng(7);
  const RowVector h = normal_init(1, 8, 1.0, rng);
  const Matrix w_down = normal_init(8, 2, 1.0, rng), w_up = normal_init(2, 8, 1.0, rng);
  const RowVector b_down = normal_init(1, 2, 1.0, rng), b_up = normal_init(1, 8, 1.0, rng);
  CHECK(adapter_forward(h, w_down, b_down, Matrix::Zero(2, 8), RowVector::Zero(8)) == h);
  const RowVector bias_path = h + b_down.cwiseMax(0.0) * w_up + b_up;
  CHECK((adapter_forward(h, Matrix::Zero(8, 2), b_down, w_up, b_up) - bias_path).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(adapter_forward(h, Matrix::Zero(7, 2), b_down, w_up, b_up), ShapeError);
}

TEST_CASE("fresh adapters are an exact identity") {
  EncoderConfig plain = tiny(3, 2, 16, 32);
  ParamStore p = encoder_params(plain, 8);
  perturb_all(p, 9);
  EncoderConfig with = plain;
  with.adapter_enabled = true;
  ParamStore q = p;
  std::mt19937_64 rng(10);
  add_adapter_params(q, with, rng);
  const Matrix z = random_tokens(5, 16, 11);
  CHECK(encoder_forward(z, plain, p) == encoder_forward(z, with, q));
}

TEST_CASE("permutation equivariance without positional encoding") {
  const EncoderConfig c = tiny(2, 2, 8, 16, true);
  ParamStore p = encoder_params(c, 12);
  perturb_all(p, 13);
  const Matrix z = random_tokens(6, 8, 14);
  const std::vector<Index> perm{4, 0, 5, 2, 1, 3};
  Matrix zp(6, 8);
  for (Index i = 0; i < 6; ++i) zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
  const Matrix out = encoder_forward(z, c, p), outp = encoder_forward(zp, c, p);
  for (Index i = 0; i < 6; ++i) CHECK((outp.row(i) - out.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("determinism") {
  const EncoderConfig c = tiny(2, 4, 16, 32);
  const ParamStore p = encoder_params(c, 15);
  const Matrix z = random_tokens(7, 16, 16);
  CHECK(encoder_forward(z, c, p) == encoder_forward(z, c, p));
}

TEST_CASE("non-finite input is reported with its layer") {
  const EncoderConfig c = tiny(1, 1, 4, 8);
  const ParamStore p = encoder_params(c, 17);
  Matrix z = random_tokens(2, 4, 18);
  z(0, 0) = std::nan("");
  try {
    encoder_forward(z, c, p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("gradient check through the encoder, every parameter group") {
  const EncoderConfig c = tiny(2, 2, 8, 16, true);
  ParamStore p = encoder_params(c, 19);
  perturb_all(p, 20);
  const Matrix z = random_tokens(3, 8, 21);
  std::mt19937_64 rng(22);
  const Matrix target = normal_init(3, 8, 1.0, rng);
  const auto g = testing::gradcheck(
      p,
      [&](ad::Tape& t, const ParamStore& s) { return ad::mse(encoder_forward(t, t.constant(z), c, s), t.constant(target)); },
      1e-4);
  MESSAGE("encoder gradcheck max rel " << g.max_rel << " over " << g.checked << " entries; worst " << g.worst);
  CHECK(g.max_rel < 1e-4);
}

TEST_CASE("parameter census: Base config closed form") {
  EncoderConfig base = EncoderConfig::base();
  base.adapter_enabled = true;
  const double d = 512, ff = 2048, b = 32, layers = 12;
  const double attn = 4 * (d * d + d), ffn = d * ff + ff + ff * d + d, norms = 4 * d;
  const double adapter = d * b + b + b * d + d;
  const double backbone = layers * (attn + ffn + norms), adapters = layers * 2 * adapter;

  const auto shapes = encoder_tensor_shapes(base);
  const auto count = count_params(shapes, encoder_names::is_adapter);
  CHECK(static_cast<double>(count.total) == backbone + adapters);
  CHECK(static_cast<double>(count.trainable) == adapters);
  CHECK(count.fraction == doctest::Approx(adapters / (backbone + adapters)).epsilon(1e-12));
  CHECK(count.fraction >= 0.02);
  CHECK(count.fraction <= 0.05);
  CHECK(count_params(shapes, [](const std::string&) { return true; }).fraction == 1.0);
}

TEST_CASE("attention FLOPs") {
  CHECK(attention_flops(2048, 16, 64) / attention_flops(2048, 32, 64) == 4.0);
  CHECK(attention_flops(512, 16, 64) / attention_flops(512, 1, 64) == 1.0 / 256.0);
  CHECK(attention_flops(1024, 16, 64) / attention_flops(512, 16, 64) == 4.0);
  CHECK(attention_flops(512, 16, 128) / attention_flops(512, 16, 64) == 2.0);
  CHECK(attention_flops(512, 16, 64) == kAttentionFlopConstant * 32.0 * 32.0 * 64.0);
}

TEST_CASE("attention_core agrees with the traced encoder probabilities") {
  std::mt19937_64 rng(23);
  const Matrix q = normal_init(5, 8, 1.0, rng), k = normal_init(5, 8, 1.0, rng), v = normal_init(5, 8, 1.0, rng);
  const Matrix out = attention_core(q, k, v, 2);
  for (Index h = 0; h < 2; ++h) {
    Matrix s = q.middleCols(h * 4, 4) * k.middleCols(h * 4, 4).transpose() / 2.0;
    for (Index i = 0; i < 5; ++i) {
      s.row(i) = (s.row(i).array() - s.row(i).maxCoeff()).exp();
      s.row(i) /= s.row(i).sum();
    }
    CHECK((out.middleCols(h * 4, 4) - s * v.middleCols(h * 4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  }
}
