#pragma once

#include "fpd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace fpd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   8 bytes   magic "FPDCKPT\0"
///   u32       format version
///   u64       iteration
///   u64 + n   config snapshot (JSON text)
///   u64       array count, then per array in name order:
///             u32 + n name, u64 rows, u64 cols, rows*cols f64 in row-major order
/// Parameters are stored under their registry names; optimizer state under "opt/<name>".
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t iteration = 0;
  std::string config;
  std::map<std::string, Matrix> arrays;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fpd
