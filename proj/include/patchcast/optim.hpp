// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/params.hpp"

namespace patchcast {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay, applied to ".weight" tensors only.
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig config = {});

  /// Updates trainable tensors in place.
  void step(ParamStore& params, const Gradients& grads, double lr);
  long steps_taken() const { return t_; }

 private:
  AdamWConfig config_;
  Gradients m_, v_;
  long t_ = 0;
};

/// Linear warmup over ceil(warmup_frac * total) steps to `peak`, then cosine
/// decay to zero at step `total`.
double warmup_cosine_lr(long step, long total, double peak, double warmup_frac);

/// Scales grads in place so their global norm is at most max_norm (<=0: off).
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace patchcast
