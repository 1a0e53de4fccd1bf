#pragma once

#include "fpd/types.hpp"

#include <map>
#include <span>
#include <vector>

namespace fpd::metrics {

/// Area under the precision/recall curve with all-points interpolation: precision is
/// replaced by its running maximum from the right and integrated over every recall step.
double average_precision(std::span<const double> recall, std::span<const double> precision);

struct ClassCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  int ground_truth = 0;
  double ap = 0.0;
};

/// Greedy matching of score-sorted detections of one class to ground truth at the IoU
/// threshold; each ground-truth box can be matched once. Images are aligned by index.
ClassCurve class_curve(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<Annotation>> ground_truth, ClassId id,
                       double iou_threshold = 0.5);

struct ApReport {
  std::map<ClassId, double> per_class;  // classes without ground truth are omitted
  double mean_all = 0.0;
  double mean_novel = 0.0;
  double mean_base = 0.0;
};

ApReport evaluate_ap50(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<Annotation>> ground_truth,
                       std::span<const ClassId> base_classes, std::span<const ClassId> novel_classes);

}  // namespace fpd::metrics
