// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fddiff/image.hpp"

namespace fddiff {

/// Binary layout, all integers little-endian:
///   "FDDF" | u32 version | u64 text length | config text (UTF-8)
///   | u64 entry count | per entry: u64 name length, name, u64 rank,
///   rank × u64 dims, f32 values.
/// The config text is `key = value` lines and carries `step`.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::vector<std::uint64_t> dims;
    Buffer<float> values;
  };

  std::uint32_t version = kVersion;
  std::string config_text;  // without the step line
  std::uint64_t step = 0;
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const;
};

std::vector<unsigned char> serialize(const Checkpoint& ckpt);
/// Throws DataError on truncation, bad magic, unknown version or size
/// mismatches.
Checkpoint deserialize(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fddiff
