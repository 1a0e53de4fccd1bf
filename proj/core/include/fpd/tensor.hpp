#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace fpd {

// Row-major so that an (H*W x C) feature map flattens the same way an image does.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

std::string shape_string(const Matrix& m);

/// Throws ShapeError naming both operands when `ok` is false.
void require_shape(bool ok, const char* what, const Matrix& a, const char* a_name, const Matrix& b,
                   const char* b_name);

/// Throws ValidationError when any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* name);

bool all_finite(const Matrix& m);

/// FNV-1a over the raw bytes of the entries. Used for regression hashes.
std::uint64_t hash_matrix(const Matrix& m);

}  // namespace fpd
