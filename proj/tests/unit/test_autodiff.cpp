// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "gradcheck.hpp"
#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace patchcast;
using patchcast::testing::gradcheck;

namespace {

ParamStore random_store(std::initializer_list<std::tuple<const char*, Index, Index>> specs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore s;
  for (const auto& [name, r, c] : specs) s.add(name, normal_init(r, c, 1.0, rng));
  return s;
}

// Smooth scalar reduction of an arbitrary output.
ad::Var reduce(ad::Tape& t, ad::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::mse(x, t.constant(normal_init(x.rows(), x.cols(), 1.0, rng)));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("matmul, matmul_nt, add, sub, scale, add_row") {
  auto s = random_store({{"a", 3, 4}, {"b", 4, 5}, {"c", 5, 4}, {"r", 1, 5}}, 1);
  auto g = gradcheck(s, [](ad::Tape& t, const ParamStore& p) {
    auto a = t.param(p, "a"), b = t.param(p, "b"), c = t.param(p, "c"), r = t.param(p, "r");
    auto ab = ad::add_row(ad::matmul(a, b), r);
    auto ac = ad::matmul_nt(a, c);  // 3 x 5
    return reduce(t, ad::sub(ad::scale(ab, 0.7), ac));
  });
  CHECK_MESSAGE(g.max_rel < kTol, g.worst);
}

TEST_CASE("relu away from the kink") {
  auto s = random_store({{"x", 4, 6}}, 2);
  for (Index i = 0; i < s[0].value.size(); ++i)
    if (std::abs(s[0].value.data()[i]) < 0.05) s[0].value.data()[i] = 0.3;
  auto g = gradcheck(s, [](ad::Tape& t, const ParamStore& p) { return reduce(t, ad::relu(t.param(p, "x"))); });
  CHECK_MESSAGE(g.max_rel < kTol, g.worst);
}

TEST_CASE("layer_norm and softmax_rows") {
  auto s = random_store({{"x", 4, 6}, {"g", 1, 6}, {"b", 1, 6}}, 3);
  auto g = gradcheck(s, [](ad::Tape& t, const ParamStore& p) {
    auto y = ad::layer_norm(t.param(p, "x"), t.param(p, "g"), t.param(p, "b"));
    return reduce(t, ad::softmax_rows(y));
  });
  CHECK_MESSAGE(g.max_rel < kTol, g.worst);
}

TEST_CASE("shape ops: slice, concat, replace, gather, mean, reshape, scale_by_entry") {
  auto s = random_store({{"x", 4, 6}, {"y", 4, 2}, {"row", 1, 6}, {"w", 1, 3}}, 4);
  auto g = gradcheck(s, [](ad::Tape& t, const ParamStore& p) {
    auto x = t.param(p, "x");
    const Index rows[] = {1, 3};
    const Index src[] = {3, 3, 0, 2, 1};
    auto replaced = ad::replace_rows(x, rows, t.param(p, "row"));
    const ad::Var cols[] = {ad::slice_cols(replaced, 1, 3), t.param(p, "y")};
    auto cat = ad::concat_cols(cols);                              // 4 x 5
    auto gathered = ad::gather_rows(ad::reshape(x, 8, 3), src);    // 5 x 3
    auto scaled = ad::scale_by_entry(gathered, t.param(p, "w"), 2);
    const ad::Var parts[] = {ad::reshape(cat, 5, 4), scaled};
    auto both = ad::concat_cols(parts);                            // 5 x 7
    const ad::Var vert[] = {both, ad::mean_rows(both)};
    return reduce(t, ad::concat_rows(vert));
  });
  CHECK_MESSAGE(g.max_rel < kTol, g.worst);
}

TEST_CASE("masked_row_mse, l2_normalize_rows, info_nce, pinball") {
  auto s = random_store({{"x", 6, 4}, {"t", 6, 4}, {"q", 5, 3}}, 5);
  const Index masked[] = {0, 2, 5};
  const Index positive[] = {3, 4, 5, 0, 1, 2};
  const double levels[] = {0.1, 0.5, 0.9};
  auto g = gradcheck(s, [&](ad::Tape& t, const ParamStore& p) {
    auto x = t.param(p, "x");
    auto rec = ad::masked_row_mse(x, t.param(p, "t"), masked);
    auto z = ad::l2_normalize_rows(x);
    auto nce = ad::info_nce(ad::scale(ad::matmul_nt(z, z), 10.0), positive);
    std::mt19937_64 rng(7);
    auto pin = ad::pinball(t.param(p, "q"), t.constant(normal_init(5, 1, 1.0, rng)), levels);
    return ad::add(ad::add(rec, nce), pin);
  });
  CHECK_MESSAGE(g.max_rel < kTol, g.worst);
}

TEST_CASE("values only when not recording") {
  ParamStore s;
  s.add("a", Matrix::Constant(2, 2, 1.5));
  ad::Tape t(false);
  auto a = t.param(s, "a");
  CHECK_FALSE(t.needs_grad(a.id()));
  CHECK(ad::mse(a, t.constant(Matrix::Zero(2, 2))).item() == doctest::Approx(2.25));
}

TEST_CASE("frozen tensors receive no gradient") {
  ParamStore s;
  s.add("a", Matrix::Constant(2, 2, 1.0));
  s.add("b", Matrix::Constant(2, 2, 2.0), false);
  ad::Tape t(true);
  t.backward(ad::mse(t.param(s, "a"), t.param(s, "b")));
  Gradients g = zero_gradients(s);
  t.accumulate(g);
  CHECK(g[0].isApproxToConstant(-0.5));
  CHECK(g[1].isZero());
}

TEST_CASE("l2_normalize_rows floors the norm") {
  ad::Tape t(false);
  Matrix x = Matrix::Zero(2, 3);
  x(1, 0) = 3.0;
  x(1, 2) = 4.0;
  const Matrix y = ad::l2_normalize_rows(t.constant(x)).value();
  CHECK(y.row(0).isZero());
  CHECK(y(1, 0) == doctest::Approx(0.6));
  CHECK(y(1, 2) == doctest::Approx(0.8));
  x(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ad::l2_normalize_rows(t.constant(x)), NumericError);
}
