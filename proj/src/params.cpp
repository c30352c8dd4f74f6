// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace patchcast {

std::size_t ParamStore::add(std::string name, Matrix value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  const std::size_t i = params_.size();
  index_.emplace(name, i);
  params_.push_back(Parameter{std::move(name), std::move(value), trainable});
  return i;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (auto& p : params_) p.trainable = pred(p.name);
}

void ParamStore::round_to_f32(bool trainable_only) {
  for (auto& p : params_)
    if (!trainable_only || p.trainable)
      p.value = p.value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t ParamStore::checksum(bool trainable) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    if (p.trainable != trainable) continue;
    fnv(h, p.name.data(), p.name.size());
    fnv(h, p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  return h;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    fnv(h, p.name.data(), p.name.size());
    fnv(h, p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  return h;
}

Gradients zero_gradients(const ParamStore& store) {
  Gradients g(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    g[i] = Matrix::Zero(store[i].value.rows(), store[i].value.cols());
  return g;
}

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

}  // namespace patchcast
