// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/encoder.hpp"

#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <cmath>

namespace patchcast {

void EncoderConfig::validate() const {
  if (n_layers < 0 || n_heads < 1 || d_model < 1 || d_ff < 1) throw ShapeError("encoder: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ShapeError("encoder: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  if (bottleneck() < 1) throw ShapeError("encoder: d_bottleneck must be at least 1");
}

EncoderConfig EncoderConfig::base() { return EncoderConfig{12, 8, 512, 2048, false, 0}; }
EncoderConfig EncoderConfig::desk() { return EncoderConfig{4, 4, 64, 256, false, 0}; }

namespace encoder_names {
std::string layer(Index l) { return "enc." + std::to_string(l) + "."; }
bool is_adapter(const std::string& name) { return name.find(".adapter_") != std::string::npos; }
}  // namespace encoder_names

namespace {

constexpr const char* kAdapters[] = {"adapter_attn", "adapter_ffn"};

void append_trunk_shapes(std::vector<TensorShape>& out, const EncoderConfig& c, Index l) {
  const std::string p = encoder_names::layer(l);
  for (const char* proj : {"q", "k", "v", "o"}) {
    out.push_back({p + "attn." + proj + ".weight", c.d_model, c.d_model});
    out.push_back({p + "attn." + proj + ".bias", 1, c.d_model});
  }
  out.push_back({p + "ffn.1.weight", c.d_model, c.d_ff});
  out.push_back({p + "ffn.1.bias", 1, c.d_ff});
  out.push_back({p + "ffn.2.weight", c.d_ff, c.d_model});
  out.push_back({p + "ffn.2.bias", 1, c.d_model});
  for (const char* norm : {"norm1", "norm2"}) {
    out.push_back({p + norm + ".gain", 1, c.d_model});
    out.push_back({p + norm + ".bias", 1, c.d_model});
  }
}

void append_adapter_shapes(std::vector<TensorShape>& out, const EncoderConfig& c, Index l) {
  const std::string p = encoder_names::layer(l);
  const Index b = c.bottleneck();
  for (const char* a : kAdapters) {
    const std::string q = p + a;
    out.push_back({q + ".down.weight", c.d_model, b});
    out.push_back({q + ".down.bias", 1, b});
    out.push_back({q + ".up.weight", b, c.d_model});
    out.push_back({q + ".up.bias", 1, c.d_model});
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Matrix init_tensor(const TensorShape& s, std::mt19937_64& rng) {
  if (ends_with(s.name, ".gain")) return Matrix::Ones(s.rows, s.cols);
  if (ends_with(s.name, ".up.weight")) return Matrix::Zero(s.rows, s.cols);
  if (ends_with(s.name, ".weight")) return xavier_uniform(s.rows, s.cols, rng);
  return Matrix::Zero(s.rows, s.cols);
}

}  // namespace

std::vector<TensorShape> encoder_tensor_shapes(const EncoderConfig& config) {
  config.validate();
  std::vector<TensorShape> out;
  for (Index l = 0; l < config.n_layers; ++l) {
    append_trunk_shapes(out, config, l);
    if (config.adapter_enabled) append_adapter_shapes(out, config, l);
  }
  return out;
}

std::vector<TensorShape> adapter_tensor_shapes(const EncoderConfig& config) {
  config.validate();
  std::vector<TensorShape> out;
  for (Index l = 0; l < config.n_layers; ++l) append_adapter_shapes(out, config, l);
  return out;
}

void add_encoder_params(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng) {
  for (const auto& s : encoder_tensor_shapes(config)) store.add(s.name, init_tensor(s, rng));
}

void add_adapter_params(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng) {
  for (const auto& s : adapter_tensor_shapes(config))
    if (!store.contains(s.name)) store.add(s.name, init_tensor(s, rng));
}

namespace {

ad::Var linear(ad::Tape& tape, ad::Var x, const ParamStore& params, const std::string& prefix) {
  return ad::add_row(ad::matmul(x, tape.param(params, prefix + ".weight")), tape.param(params, prefix + ".bias"));
}

ad::Var mhsa(ad::Tape& tape, ad::Var z, const EncoderConfig& c, const ParamStore& params, const std::string& p,
             AttentionTrace* trace) {
  ad::Var q = linear(tape, z, params, p + "attn.q");
  ad::Var k = linear(tape, z, params, p + "attn.k");
  ad::Var v = linear(tape, z, params, p + "attn.v");
  const Index dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(c.n_heads));
  for (Index h = 0; h < c.n_heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * dh, dh);
    ad::Var kh = ad::slice_cols(k, h * dh, dh);
    ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var probs = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    if (trace) trace->probs.push_back(probs.value());
    heads.push_back(ad::matmul(probs, vh));
  }
  ad::Var mixed = c.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
  return linear(tape, mixed, params, p + "attn.o");
}

void check_finite(const ad::Var& v, Index layer, const char* stage) {
  if (!v.value().allFinite())
    throw NumericError("encoder: non-finite values after " + std::string(stage) + " in layer " + std::to_string(layer));
}

}  // namespace

ad::Var adapter_forward(ad::Tape& tape, ad::Var h, const ParamStore& params, const std::string& prefix) {
  ad::Var down = ad::relu(linear(tape, h, params, prefix + ".down"));
  return ad::add(h, linear(tape, down, params, prefix + ".up"));
}

RowVector adapter_forward(const RowVector& h, const Matrix& w_down, const RowVector& b_down, const Matrix& w_up,
                          const RowVector& b_up) {
  if (w_down.rows() != h.cols() || b_down.cols() != w_down.cols() || w_up.rows() != w_down.cols() ||
      w_up.cols() != h.cols() || b_up.cols() != h.cols())
    throw ShapeError("adapter_forward: inconsistent bottleneck dimensions");
  const RowVector hidden = (h * w_down + b_down).cwiseMax(0.0);
  return h + hidden * w_up + b_up;
}

ad::Var encoder_forward(ad::Tape& tape, ad::Var tokens, const EncoderConfig& config, const ParamStore& params,
                        AttentionTrace* trace) {
  config.validate();
  if (tokens.cols() != config.d_model)
    throw ShapeError("encoder: tokens have width " + std::to_string(tokens.cols()) + ", d_model is " +
                     std::to_string(config.d_model));
  ad::Var z = tokens;
  for (Index l = 0; l < config.n_layers; ++l) {
    const std::string p = encoder_names::layer(l);
    ad::Var a = mhsa(tape, z, config, params, p, trace);
    if (config.adapter_enabled) a = adapter_forward(tape, a, params, p + "adapter_attn");
    z = ad::layer_norm(ad::add(z, a), tape.param(params, p + "norm1.gain"), tape.param(params, p + "norm1.bias"));
    check_finite(z, l, "attention");
    ad::Var f = linear(tape, ad::relu(linear(tape, z, params, p + "ffn.1")), params, p + "ffn.2");
    if (config.adapter_enabled) f = adapter_forward(tape, f, params, p + "adapter_ffn");
    z = ad::layer_norm(ad::add(z, f), tape.param(params, p + "norm2.gain"), tape.param(params, p + "norm2.bias"));
    check_finite(z, l, "feed-forward");
  }
  return z;
}

Matrix encoder_forward(const Matrix& tokens, const EncoderConfig& config, const ParamStore& params,
                       AttentionTrace* trace) {
  ad::Tape tape(false);
  return encoder_forward(tape, tape.constant(tokens), config, params, trace).value();
}

Matrix attention_core(const Matrix& q, const Matrix& k, const Matrix& v, Index n_heads) {
  const Index n = q.rows(), d = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d || n_heads < 1 || d % n_heads != 0)
    throw ShapeError("attention_core: inconsistent shapes");
  const Index dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(n, d);
  Matrix scores(n, n);
  for (Index h = 0; h < n_heads; ++h) {
    scores.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    scores *= inv_sqrt;
    for (Index i = 0; i < n; ++i) {
      const double m = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - m).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    out.middleCols(h * dh, dh).noalias() = scores * v.middleCols(h * dh, dh);
  }
  return out;
}

ParamCount count_params(const ParamStore& params, const std::function<bool(const std::string&)>& trainable) {
  ParamCount c;
  for (const auto& p : params) {
    const auto n = static_cast<std::size_t>(p.value.size());
    c.total += n;
    if (trainable(p.name)) c.trainable += n;
  }
  c.fraction = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

ParamCount count_params(std::span<const TensorShape> shapes, const std::function<bool(const std::string&)>& trainable) {
  ParamCount c;
  for (const auto& s : shapes) {
    const auto n = static_cast<std::size_t>(s.size());
    c.total += n;
    if (trainable(s.name)) c.trainable += n;
  }
  c.fraction = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

double attention_flops(Index L, Index P, Index d) {
  const double n = static_cast<double>(L) / static_cast<double>(P);
  return kAttentionFlopConstant * n * n * static_cast<double>(d);
}

}  // namespace patchcast
