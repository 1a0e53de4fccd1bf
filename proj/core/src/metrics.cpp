#include "fpd/metrics.hpp"

#include "fpd/boxes.hpp"
#include "fpd/error.hpp"

#include <algorithm>
#include <numeric>

namespace fpd::metrics {

double average_precision(std::span<const double> recall, std::span<const double> precision) {
  if (recall.size() != precision.size())
    throw ValidationError("average_precision: recall and precision lengths differ");
  std::vector<double> r{0.0}, p{0.0};
  r.insert(r.end(), recall.begin(), recall.end());
  p.insert(p.end(), precision.begin(), precision.end());
  r.push_back(1.0);
  p.push_back(0.0);
  for (std::size_t i = p.size() - 1; i > 0; --i) p[i - 1] = std::max(p[i - 1], p[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < r.size(); ++i)
    if (r[i] != r[i - 1]) ap += (r[i] - r[i - 1]) * p[i];
  return ap;
}

ClassCurve class_curve(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<Annotation>> ground_truth, ClassId id,
                       double iou_threshold) {
  if (detections.size() != ground_truth.size())
    throw ValidationError("class_curve: detections and ground truth cover different image counts");
  struct Entry {
    double score;
    std::size_t image;
    Box box;
  };
  std::vector<Entry> entries;
  ClassCurve curve;
  std::vector<std::vector<bool>> used(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    used[i].assign(ground_truth[i].size(), false);
    for (const auto& a : ground_truth[i]) curve.ground_truth += a.class_id == id;
    for (const auto& d : detections[i])
      if (d.class_id == id) entries.push_back({d.score, i, d.box});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.score > b.score; });
  int tp = 0, fp = 0;
  for (const auto& e : entries) {
    const auto& gts = ground_truth[e.image];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].class_id != id) continue;
      const double v = iou(e.box, gts[j].box);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best >= iou_threshold && !used[e.image][best_j]) {
      used[e.image][best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
    curve.recall.push_back(curve.ground_truth > 0 ? static_cast<double>(tp) / curve.ground_truth : 0.0);
    curve.precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  curve.ap = curve.ground_truth > 0 ? average_precision(curve.recall, curve.precision) : 0.0;
  return curve;
}

ApReport evaluate_ap50(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<Annotation>> ground_truth,
                       std::span<const ClassId> base_classes, std::span<const ClassId> novel_classes) {
  if (ground_truth.empty()) throw ValidationError("evaluate: empty test split");
  ApReport report;
  auto mean_over = [&](std::span<const ClassId> ids) {
    double sum = 0.0;
    int count = 0;
    for (ClassId id : ids) {
      auto it = report.per_class.find(id);
      if (it == report.per_class.end()) continue;
      sum += it->second;
      ++count;
    }
    return count > 0 ? sum / count : 0.0;
  };
  std::vector<ClassId> all(base_classes.begin(), base_classes.end());
  all.insert(all.end(), novel_classes.begin(), novel_classes.end());
  std::sort(all.begin(), all.end());
  for (ClassId id : all) {
    const ClassCurve c = class_curve(detections, ground_truth, id, 0.5);
    if (c.ground_truth > 0) report.per_class[id] = c.ap;
  }
  report.mean_all = mean_over(all);
  report.mean_novel = mean_over(novel_classes);
  report.mean_base = mean_over(base_classes);
  return report;
}

}  // namespace fpd::metrics
