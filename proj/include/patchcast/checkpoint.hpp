// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchcast/config.hpp"
#include "patchcast/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace patchcast {

inline constexpr char kCheckpointMagic[4] = {'P', 'F', 'M', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string created;  // empty when timestamps are disabled
  std::string corpus;
};

struct Checkpoint {
  Config config;  // model configuration and metadata
  ParamStore params;
};

/// Layout (all integers little-endian u32):
///   "PFMT" | version | config length | config text (UTF-8)
///   then, until EOF, per tensor: name length | name | rank | dims... | f32 data
void save_checkpoint(const std::filesystem::path& path, const PatchModel& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

Checkpoint read_checkpoint(const std::filesystem::path& path);
PatchModel load_model(const Checkpoint& ckpt);
PatchModel load_model(const std::filesystem::path& path);
CheckpointMeta checkpoint_meta(const Checkpoint& ckpt);

/// ISO-8601 UTC timestamp of "now".
std::string utc_timestamp();

}  // namespace patchcast
