// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/eval.hpp"
#include "patchcast/init.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace patchcast::testing {

struct MetricFixture {
  std::vector<ForecastResult> results;
  std::vector<Matrix> targets;
};

inline MetricFixture random_fixture(std::uint64_t seed, Index windows, Index H, Index D) {
  std::mt19937_64 rng(seed);
  MetricFixture f;
  for (Index w = 0; w < windows; ++w) {
    ForecastResult r;
    r.levels = default_quantile_levels();
    r.point = normal_init(H, D, 1.0, rng);
    const Matrix spread = normal_init(H, D, 1.0, rng).cwiseAbs();
    for (double l : r.levels) r.quantiles.push_back(r.point + (l - 0.5) * 2.5 * spread);
    f.results.push_back(r);
    f.targets.push_back(normal_init(H, D, 1.0, rng));
  }
  // Exact hits on the interval bounds count as covered.
  f.targets[0](0, 0) = f.results[0].quantiles.front()(0, 0);
  f.targets[0](1, 0) = f.results[0].quantiles.back()(1, 0);
  return f;
}

/// Element-by-element brute force, written independently of compute_metrics.
inline MetricReport metric_oracle(const MetricFixture& f) {
  MetricReport m;
  double count = 0.0, qcount = 0.0;
  for (std::size_t w = 0; w < f.results.size(); ++w) {
    const auto& r = f.results[w];
    for (Index h = 0; h < r.point.rows(); ++h)
      for (Index d = 0; d < r.point.cols(); ++d) {
        const double y = f.targets[w](h, d);
        const double e = r.point(h, d) - y;
        m.mse += e * e;
        m.mae += std::fabs(e);
        m.coverage += (r.quantiles[0](h, d) <= y && y <= r.quantiles[8](h, d)) ? 1.0 : 0.0;
        count += 1.0;
        for (std::size_t q = 0; q < 9; ++q) {
          const double tau = 0.1 * static_cast<double>(q + 1);
          const double yhat = r.quantiles[q](h, d);
          m.pinball += tau * std::max(y - yhat, 0.0) + (1.0 - tau) * std::max(yhat - y, 0.0);
          qcount += 1.0;
        }
      }
  }
  m.mse /= count;
  m.mae /= count;
  m.coverage /= count;
  m.pinball /= qcount;
  m.rmse = std::sqrt(m.mse);
  m.crps = 2.0 * m.pinball;
  return m;
}

}  // namespace patchcast::testing
