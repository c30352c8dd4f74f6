// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/checkpoint.hpp"

#include "patchcast/error.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>
#include <vector>

namespace patchcast {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  bool done() const { return pos_ == bytes_.size(); }

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw DataError(DataErrc::bad_checkpoint,
                      path_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what), 4);
    return v;
  }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const PatchModel& model, const CheckpointMeta& meta) {
  Checkpoint ckpt;
  model.config().write(ckpt.config);
  ckpt.config.set("train.step", meta.step);
  ckpt.config.set("train.seed", meta.seed);
  ckpt.config.set("meta.created", meta.created);
  ckpt.config.set("meta.corpus", meta.corpus);
  ckpt.params = model.params();
  save_checkpoint(path, ckpt);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string text = ckpt.config.to_text();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& p : ckpt.params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Index i = 0; i < p.value.size(); ++i) {
      const float f = static_cast<float>(p.value.data()[i]);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataErrc::file_not_found, path.string() + ": cannot open checkpoint for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError(DataErrc::file_not_found, path.string() + ": write failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataErrc::file_not_found, path.string() + ": checkpoint not found");
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path.string());
  if (std::memcmp(r.take(4, "magic"), kCheckpointMagic, 4) != 0)
    throw DataError(DataErrc::bad_checkpoint, path.string() + ": bad magic (not a patchcast checkpoint)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw DataError(DataErrc::bad_checkpoint, path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t text_len = r.u32("config length");
  Checkpoint ckpt;
  ckpt.config = Config::parse(std::string(r.take(text_len, "config"), text_len));
  while (!r.done()) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name(r.take(name_len, "tensor name"), name_len);
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank < 1 || rank > 2)
      throw DataError(DataErrc::bad_checkpoint, path.string() + ": tensor " + name + " has unsupported rank");
    Index rows = r.u32("tensor dims");
    Index cols = rank == 2 ? static_cast<Index>(r.u32("tensor dims")) : 1;
    if (rank == 1) std::swap(rows, cols);
    Matrix m(rows, cols);
    const char* data = r.take(static_cast<std::size_t>(rows * cols) * 4, ("tensor " + name).c_str());
    for (Index i = 0; i < m.size(); ++i) {
      float v;
      std::memcpy(&v, data + 4 * i, 4);
      m.data()[i] = v;
    }
    ckpt.params.add(std::move(name), std::move(m));
  }
  return ckpt;
}

PatchModel load_model(const Checkpoint& ckpt) {
  return PatchModel(ModelConfig::read(ckpt.config), ckpt.params);
}

PatchModel load_model(const std::filesystem::path& path) { return load_model(read_checkpoint(path)); }

CheckpointMeta checkpoint_meta(const Checkpoint& ckpt) {
  CheckpointMeta m;
  m.step = ckpt.config.get_int("train.step", 0);
  m.seed = ckpt.config.get_uint("train.seed", 0);
  m.created = ckpt.config.get_string("meta.created", "");
  m.corpus = ckpt.config.get_string("meta.corpus", "");
  return m;
}

}  // namespace patchcast
