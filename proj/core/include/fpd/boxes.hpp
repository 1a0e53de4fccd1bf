#pragma once

#include "fpd/tensor.hpp"
#include "fpd/types.hpp"

#include <array>
#include <span>
#include <vector>

namespace fpd {

double iou(const Box& a, const Box& b);

/// Greedy non-maximum suppression. Returns kept indices in descending score order;
/// equal scores keep input order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep);

Box clip_box(const Box& b, double width, double height);

/// Regression deltas (dx, dy, dw, dh) of `target` relative to `reference`, divided by stds.
std::array<double, 4> encode_box(const Box& reference, const Box& target,
                                 const std::array<double, 4>& stds);
Box decode_box(const Box& reference, const double* deltas, const std::array<double, 4>& stds);

/// Anchors for every cell of a (height x width) grid with the given stride, ordered
/// cell-major then size-major then ratio-major. Ratio is height / width.
std::vector<Box> grid_anchors(int height, int width, int stride, std::span<const double> sizes,
                              std::span<const double> ratios);

}  // namespace fpd
