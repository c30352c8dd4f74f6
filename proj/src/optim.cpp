// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace patchcast {

AdamW::AdamW(const ParamStore& params, AdamWConfig config)
    : config_(config), m_(zero_gradients(params)), v_(zero_gradients(params)) {}

void AdamW::step(ParamStore& params, const Gradients& grads, double lr) {
  if (grads.size() != params.size() || m_.size() != params.size())
    throw std::invalid_argument("AdamW: gradient list does not match the parameter store");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable || grads[i].size() == 0) continue;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i].cwiseProduct(grads[i]);
    const bool decay = p.name.size() >= 7 && p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
    if (decay && config_.weight_decay > 0.0) p.value *= 1.0 - lr * config_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
}

double warmup_cosine_lr(long step, long total, double peak, double warmup_frac) {
  if (total <= 0) return 0.0;
  const long warmup = std::max(1L, static_cast<long>(std::ceil(warmup_frac * static_cast<double>(total))));
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

}  // namespace patchcast
