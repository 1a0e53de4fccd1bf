#include "fpd/tensor.hpp"

#include "fpd/error.hpp"

#include <cstring>

namespace fpd {

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + ")";
}

void require_shape(bool ok, const char* what, const Matrix& a, const char* a_name, const Matrix& b,
                   const char* b_name) {
  if (ok) return;
  throw ShapeError(std::string(what) + ": " + a_name + " " + shape_string(a) + " incompatible with " +
                   b_name + " " + shape_string(b));
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const char* name) {
  if (!m.allFinite()) throw ValidationError(std::string(name) + " contains non-finite values");
}

std::uint64_t hash_matrix(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  feed(dims, sizeof dims);
  feed(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  return h;
}

}  // namespace fpd
