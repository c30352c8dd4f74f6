// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/model.hpp"

#include "patchcast/error.hpp"
#include "patchcast/init.hpp"

#include <random>

namespace patchcast {

void ModelConfig::validate() const {
  validate_scales(scales);
  encoder.validate();
  if (n_vars < 1 || horizon < 1 || proj_dim < 1) throw ShapeError("model: n_vars, horizon and proj_dim must be positive");
  if (context_len < scales.back())
    throw ShapeError("model: context length " + std::to_string(context_len) + " is shorter than the largest patch " +
                     std::to_string(scales.back()));
  if (encoder.d_model % 2 != 0) throw ShapeError("model: d_model must be even for positional encoding");
  if (quantile_levels.empty()) throw ShapeError("model: at least one quantile level is required");
  for (std::size_t i = 0; i < quantile_levels.size(); ++i) {
    if (!(quantile_levels[i] > 0.0 && quantile_levels[i] < 1.0)) throw ShapeError("model: quantile level outside (0,1)");
    if (i > 0 && !(quantile_levels[i] > quantile_levels[i - 1]))
      throw ShapeError("model: quantile levels must increase strictly");
  }
}

void ModelConfig::write(Config& c) const {
  c.set("model.context_len", static_cast<std::int64_t>(context_len));
  c.set("model.horizon", static_cast<std::int64_t>(horizon));
  c.set("model.n_vars", static_cast<std::int64_t>(n_vars));
  c.set("model.scales", std::vector<std::int64_t>(scales.begin(), scales.end()));
  c.set("model.proj_dim", static_cast<std::int64_t>(proj_dim));
  c.set("model.quantile_levels", quantile_levels);
  c.set("model.init_seed", init_seed);
  c.set("encoder.n_layers", static_cast<std::int64_t>(encoder.n_layers));
  c.set("encoder.n_heads", static_cast<std::int64_t>(encoder.n_heads));
  c.set("encoder.d_model", static_cast<std::int64_t>(encoder.d_model));
  c.set("encoder.d_ff", static_cast<std::int64_t>(encoder.d_ff));
  c.set("encoder.adapter_enabled", encoder.adapter_enabled);
  c.set("encoder.d_bottleneck", static_cast<std::int64_t>(encoder.bottleneck()));
}

ModelConfig ModelConfig::read(const Config& c) {
  ModelConfig m;
  m.context_len = c.get_int("model.context_len", m.context_len);
  m.horizon = c.get_int("model.horizon", m.horizon);
  m.n_vars = c.get_int("model.n_vars", m.n_vars);
  const auto scales = c.get_ints("model.scales", std::vector<std::int64_t>(m.scales.begin(), m.scales.end()));
  m.scales.assign(scales.begin(), scales.end());
  m.proj_dim = c.get_int("model.proj_dim", m.proj_dim);
  m.quantile_levels = c.get_doubles("model.quantile_levels", m.quantile_levels);
  m.init_seed = c.get_uint("model.init_seed", m.init_seed);
  m.encoder.n_layers = c.get_int("encoder.n_layers", m.encoder.n_layers);
  m.encoder.n_heads = c.get_int("encoder.n_heads", m.encoder.n_heads);
  m.encoder.d_model = c.get_int("encoder.d_model", m.encoder.d_model);
  m.encoder.d_ff = c.get_int("encoder.d_ff", m.encoder.d_ff);
  m.encoder.adapter_enabled = c.get_bool("encoder.adapter_enabled", m.encoder.adapter_enabled);
  m.encoder.d_bottleneck = c.get_int("encoder.d_bottleneck", m.encoder.d_bottleneck);
  m.validate();
  return m;
}

namespace {

constexpr const char* kDecoder = "dec";
constexpr const char* kProj1 = "proj.1";
constexpr const char* kProj2 = "proj.2";
constexpr const char* kPointHead = "head.point";
constexpr const char* kQuantileHead = "head.quantile";

Index head_inputs(const ModelConfig& c) { return c.n_tokens() * c.encoder.d_model; }

}  // namespace

std::vector<TensorShape> PatchModel::tensor_shapes(const ModelConfig& c) {
  c.validate();
  std::vector<TensorShape> out;
  const Index d = c.encoder.d_model;
  for (std::size_t k = 0; k < c.scales.size(); ++k) {
    out.push_back({tokenizer_names::embed_weight(k), c.scales[k] * c.n_vars, d});
    out.push_back({tokenizer_names::embed_bias(k), 1, d});
  }
  out.push_back({tokenizer_names::kScaleLogits, 1, static_cast<Index>(c.scales.size())});
  out.push_back({tokenizer_names::kMaskToken, 1, d});
  for (auto& s : encoder_tensor_shapes(c.encoder)) out.push_back(std::move(s));
  out.push_back({std::string(kDecoder) + ".weight", d, c.patch_width()});
  out.push_back({std::string(kDecoder) + ".bias", 1, c.patch_width()});
  out.push_back({std::string(kProj1) + ".weight", d, d});
  out.push_back({std::string(kProj1) + ".bias", 1, d});
  out.push_back({std::string(kProj2) + ".weight", d, c.proj_dim});
  out.push_back({std::string(kProj2) + ".bias", 1, c.proj_dim});
  const Index hd = c.horizon * c.n_vars;
  out.push_back({std::string(kPointHead) + ".weight", head_inputs(c), hd});
  out.push_back({std::string(kPointHead) + ".bias", 1, hd});
  const Index q = static_cast<Index>(c.quantile_levels.size());
  out.push_back({std::string(kQuantileHead) + ".weight", head_inputs(c), hd * q});
  out.push_back({std::string(kQuantileHead) + ".bias", 1, hd * q});
  return out;
}

PatchModel::PatchModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  add_tokenizer_params(params_, config_.scales, config_.n_vars, config_.encoder.d_model, rng);
  add_encoder_params(params_, config_.encoder, rng);
  const Index d = config_.encoder.d_model;
  params_.add(std::string(kDecoder) + ".weight", xavier_uniform(d, config_.patch_width(), rng));
  params_.add(std::string(kDecoder) + ".bias", Matrix::Zero(1, config_.patch_width()));
  params_.add(std::string(kProj1) + ".weight", xavier_uniform(d, d, rng));
  params_.add(std::string(kProj1) + ".bias", Matrix::Zero(1, d));
  params_.add(std::string(kProj2) + ".weight", xavier_uniform(d, config_.proj_dim, rng));
  params_.add(std::string(kProj2) + ".bias", Matrix::Zero(1, config_.proj_dim));
  // Zero heads start as the "repeat the context mean" forecaster.
  const Index hd = config_.horizon * config_.n_vars;
  const Index q = static_cast<Index>(config_.quantile_levels.size());
  params_.add(std::string(kPointHead) + ".weight", Matrix::Zero(head_inputs(config_), hd));
  params_.add(std::string(kPointHead) + ".bias", Matrix::Zero(1, hd));
  params_.add(std::string(kQuantileHead) + ".weight", Matrix::Zero(head_inputs(config_), hd * q));
  params_.add(std::string(kQuantileHead) + ".bias", Matrix::Zero(1, hd * q));
  params_.round_to_f32();
  // Tensor order must match tensor_shapes(); checkpoints depend on it.
  const auto shapes = tensor_shapes(config_);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (params_[i].name != shapes[i].name) throw std::logic_error("model: tensor order drifted from tensor_shapes()");
}

PatchModel::PatchModel(ModelConfig config, ParamStore params) : config_(std::move(config)), params_(std::move(params)) {
  const auto shapes = tensor_shapes(config_);
  if (shapes.size() != params_.size())
    throw DataError(DataErrc::bad_checkpoint, "model: expected " + std::to_string(shapes.size()) + " tensors, got " +
                                                  std::to_string(params_.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& p = params_[i];
    if (p.name != shapes[i].name)
      throw DataError(DataErrc::bad_checkpoint,
                      "model: tensor #" + std::to_string(i) + " is '" + p.name + "', expected '" + shapes[i].name + "'");
    if (p.value.rows() != shapes[i].rows || p.value.cols() != shapes[i].cols)
      throw DataError(DataErrc::bad_checkpoint, "model: tensor '" + p.name + "' has shape " +
                                                    std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()) +
                                                    ", config expects " + std::to_string(shapes[i].rows) + "x" +
                                                    std::to_string(shapes[i].cols));
  }
}

void PatchModel::enable_adapters() {
  if (config_.encoder.adapter_enabled) return;
  config_.encoder.adapter_enabled = true;
  // Rebuild in canonical order so the census and checkpoints stay aligned.
  std::mt19937_64 rng(mix_seed(config_.init_seed, 0xada7));
  ParamStore tmp;
  add_adapter_params(tmp, config_.encoder, rng);
  tmp.round_to_f32();
  ParamStore rebuilt;
  for (const auto& s : tensor_shapes(config_)) {
    if (params_.contains(s.name)) {
      const auto& p = params_.at(s.name);
      rebuilt.add(p.name, p.value, p.trainable);
    } else {
      rebuilt.add(s.name, tmp.at(s.name).value);
    }
  }
  params_ = std::move(rebuilt);
}

bool is_finetune_trainable(const std::string& name) {
  return encoder_names::is_adapter(name) || name.rfind("head.", 0) == 0;
}

void PatchModel::freeze_backbone() { params_.set_trainable(is_finetune_trainable); }
void PatchModel::unfreeze_all() {
  params_.set_trainable([](const std::string&) { return true; });
}

ad::Var PatchModel::tokens(ad::Tape& tape, const Matrix& normalized, std::span<const Index> mask_rows,
                           bool positional) const {
  if (normalized.rows() != config_.context_len || normalized.cols() != config_.n_vars)
    throw ShapeError("model: window is " + std::to_string(normalized.rows()) + "x" + std::to_string(normalized.cols()) +
                     ", model expects " + std::to_string(config_.context_len) + "x" + std::to_string(config_.n_vars));
  TokenizeOptions opts;
  opts.mask_rows = mask_rows;
  opts.positional = positional;
  return tokenize(tape, normalized, params_, config_.scales, opts);
}

ad::Var PatchModel::encode(ad::Tape& tape, ad::Var tokens, AttentionTrace* trace) const {
  return encoder_forward(tape, tokens, config_.encoder, params_, trace);
}

namespace {

ad::Var linear(ad::Tape& tape, ad::Var x, const ParamStore& params, const std::string& prefix) {
  return ad::add_row(ad::matmul(x, tape.param(params, prefix + ".weight")), tape.param(params, prefix + ".bias"));
}

}  // namespace

ad::Var PatchModel::decode(ad::Tape& tape, ad::Var encoded) const { return linear(tape, encoded, params_, kDecoder); }

ad::Var PatchModel::project(ad::Tape& tape, ad::Var encoded) const {
  ad::Var pooled = ad::mean_rows(encoded);
  return linear(tape, ad::relu(linear(tape, pooled, params_, kProj1)), params_, kProj2);
}

ad::Var PatchModel::point_head(ad::Tape& tape, ad::Var encoded) const {
  ad::Var flat = ad::reshape(encoded, 1, encoded.value().size());
  return ad::reshape(linear(tape, flat, params_, kPointHead), config_.horizon, config_.n_vars);
}

ad::Var PatchModel::quantile_head(ad::Tape& tape, ad::Var encoded) const {
  ad::Var flat = ad::reshape(encoded, 1, encoded.value().size());
  return ad::reshape(linear(tape, flat, params_, kQuantileHead), config_.horizon * config_.n_vars,
                     static_cast<Index>(config_.quantile_levels.size()));
}

}  // namespace patchcast
