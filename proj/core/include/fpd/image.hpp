#pragma once

#include "fpd/types.hpp"

#include <filesystem>

namespace fpd {

/// Binary PPM (P6), 8 bits per channel. Values are clamped to [0, 1] and rounded.
void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb);
FeatureMap read_ppm(const std::filesystem::path& path);

/// Binary PGM (P5) of an (h x w) grid with values in [0, 1].
void write_pgm(const std::filesystem::path& path, const Matrix& gray);

/// Bilinear crop of `box` from `image`, resized to (size x size).
FeatureMap crop_resize(const FeatureMap& image, const Box& box, int size);

/// Nearest-neighbour upsampling of an (h x w) grid to (out_h x out_w).
Matrix upsample_nearest(const Matrix& grid, int out_h, int out_w);

/// Min-max normalization to [0, 1]; a constant grid maps to zeros.
Matrix normalize_unit(const Matrix& grid);

}  // namespace fpd
