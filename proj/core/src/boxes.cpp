#include "fpd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpd {

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size() && keep.size() < max_keep; ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou(boxes[i], boxes[j]) > iou_threshold) removed[j] = 1;
    }
  }
  return keep;
}

Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

std::array<double, 4> encode_box(const Box& reference, const Box& target,
                                 const std::array<double, 4>& stds) {
  const double rw = reference.width(), rh = reference.height();
  const double rx = reference.x1 + 0.5 * rw, ry = reference.y1 + 0.5 * rh;
  const double tw = target.width(), th = target.height();
  const double tx = target.x1 + 0.5 * tw, ty = target.y1 + 0.5 * th;
  return {(tx - rx) / rw / stds[0], (ty - ry) / rh / stds[1], std::log(tw / rw) / stds[2],
          std::log(th / rh) / stds[3]};
}

Box decode_box(const Box& reference, const double* deltas, const std::array<double, 4>& stds) {
  constexpr double kMaxLog = 4.135166556742356;  // log(1000 / 16)
  const double rw = reference.width(), rh = reference.height();
  const double rx = reference.x1 + 0.5 * rw, ry = reference.y1 + 0.5 * rh;
  const double cx = rx + deltas[0] * stds[0] * rw;
  const double cy = ry + deltas[1] * stds[1] * rh;
  const double w = rw * std::exp(std::min(deltas[2] * stds[2], kMaxLog));
  const double h = rh * std::exp(std::min(deltas[3] * stds[3], kMaxLog));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Box> grid_anchors(int height, int width, int stride, std::span<const double> sizes,
                              std::span<const double> ratios) {
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(height * width) * sizes.size() * ratios.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (double s : sizes) {
        for (double r : ratios) {
          const double w = s / std::sqrt(r), h = s * std::sqrt(r);
          out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return out;
}

}  // namespace fpd
