// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace patchcast {

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

/// Insertion-ordered collection of named learnable tensors.
class ParamStore {
 public:
  /// Adds a tensor; throws if the name already exists.
  std::size_t add(std::string name, Matrix value, bool trainable = true);

  bool contains(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name) { return params_[index_of(name)]; }
  const Parameter& at(const std::string& name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const;

  /// Marks every tensor trainable iff `pred(name)` holds.
  void set_trainable(const std::function<bool(const std::string&)>& pred);

  /// Rounds values to the nearest 32-bit float (the persisted precision).
  void round_to_f32(bool trainable_only = false);

  /// FNV-1a over names and the raw bytes of values whose trainable flag equals
  /// `trainable`; used to verify freeze contracts bitwise.
  std::uint64_t checksum(bool trainable) const;
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffers aligned with a ParamStore (empty matrix = no gradient).
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(const ParamStore& store);
double global_norm(const Gradients& grads);

}  // namespace patchcast
