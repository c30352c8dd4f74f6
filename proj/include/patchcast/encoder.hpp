// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

// Post-norm transformer encoder with optional bottleneck adapters.
//
// Per layer:
//   A = MHSA(Z)           (A = adapter_attn(A) when adapters are enabled)
//   Z = LayerNorm(Z + A)
//   F = FFN(Z)            (F = adapter_ffn(F) when adapters are enabled)
//   Z = LayerNorm(Z + F)
// Weights multiply from the right: y = x W + b with W of shape in x out.

#pragma once

#include "patchcast/autodiff.hpp"
#include "patchcast/params.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace patchcast {

struct EncoderConfig {
  Index n_layers = 4;
  Index n_heads = 4;
  Index d_model = 64;
  Index d_ff = 256;
  bool adapter_enabled = false;
  /// 0 selects the default d_model / 16 (at least 1).
  Index d_bottleneck = 0;

  Index bottleneck() const { return d_bottleneck > 0 ? d_bottleneck : std::max<Index>(1, d_model / 16); }
  Index head_dim() const { return d_model / n_heads; }
  void validate() const;

  /// 12 layers, 8 heads, d_model 512, d_ff 2048.
  static EncoderConfig base();
  /// 4 layers, 4 heads, d_model 64, d_ff 256.
  static EncoderConfig desk();
};

struct TensorShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

namespace encoder_names {
std::string layer(Index l);
bool is_adapter(const std::string& name);
}  // namespace encoder_names

/// Tensor census of the trunk; adapter tensors included iff adapter_enabled.
std::vector<TensorShape> encoder_tensor_shapes(const EncoderConfig& config);
std::vector<TensorShape> adapter_tensor_shapes(const EncoderConfig& config);

void add_encoder_params(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng);
/// Adds adapters with random down-projection and zero up-projection, so a
/// fresh adapter is an exact identity.
void add_adapter_params(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng);

/// Attention probabilities per layer and head (each N x N), when requested.
struct AttentionTrace {
  std::vector<Matrix> probs;
};

ad::Var encoder_forward(ad::Tape& tape, ad::Var tokens, const EncoderConfig& config, const ParamStore& params,
                        AttentionTrace* trace = nullptr);
Matrix encoder_forward(const Matrix& tokens, const EncoderConfig& config, const ParamStore& params,
                       AttentionTrace* trace = nullptr);

/// h + ReLU(h W_down + b_down) W_up + b_up, row-wise.
ad::Var adapter_forward(ad::Tape& tape, ad::Var h, const ParamStore& params, const std::string& prefix);
RowVector adapter_forward(const RowVector& h, const Matrix& w_down, const RowVector& b_down, const Matrix& w_up,
                          const RowVector& b_up);

/// Scaled dot-product attention for one head set; q, k, v are N x d with d
/// split evenly across `n_heads`. Value-only; used by the benchmark.
Matrix attention_core(const Matrix& q, const Matrix& k, const Matrix& v, Index n_heads);

struct ParamCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction = 0.0;
};

ParamCount count_params(const ParamStore& params, const std::function<bool(const std::string&)>& trainable);
ParamCount count_params(std::span<const TensorShape> shapes, const std::function<bool(const std::string&)>& trainable);

/// Multiply-accumulates of the score and value-mix products count two FLOPs
/// each: 4 * (L/P)^2 * d.
inline constexpr double kAttentionFlopConstant = 4.0;
double attention_flops(Index L, Index P, Index d);

}  // namespace patchcast
