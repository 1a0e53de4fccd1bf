#include "fpd/checkpoint.hpp"

#include "fpd/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fpd {

namespace {

constexpr char kMagic[8] = {'F', 'P', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated checkpoint: " + path.string());
  return v;
}

std::string take_string(std::istream& in, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ULL << 32)) throw IoError("corrupt checkpoint (string length): " + path.string());
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw IoError("truncated checkpoint: " + path.string());
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, ckpt.iteration);
  put<std::uint64_t>(out, ckpt.config.size());
  out.write(ckpt.config.data(), static_cast<std::streamsize>(ckpt.config.size()));
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& [name, m] : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("not a checkpoint file: " + path.string());
  Checkpoint ckpt;
  ckpt.version = take<std::uint32_t>(in, path);
  if (ckpt.version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.iteration = take<std::uint64_t>(in, path);
  ckpt.config = take_string(in, take<std::uint64_t>(in, path), path);
  const auto count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = take_string(in, take<std::uint32_t>(in, path), path);
    const auto rows = take<std::uint64_t>(in, path);
    const auto cols = take<std::uint64_t>(in, path);
    if (rows > (1ULL << 28) || cols > (1ULL << 28))
      throw IoError("corrupt checkpoint (array shape): " + path.string());
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    if (m.size() > 0 &&
        !in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw IoError("truncated checkpoint: " + path.string());
    ckpt.arrays.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace fpd
