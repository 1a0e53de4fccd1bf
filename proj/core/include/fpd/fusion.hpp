#pragma once

#include "fpd/autograd.hpp"
#include "fpd/rng.hpp"
#include "fpd/types.hpp"

#include <map>
#include <span>
#include <vector>

/// High-level aggregation of RoI features with class-level prototypes: the pairing
/// strategies used during training and the non-linear fusion network.
namespace fpd::fusion {

enum class Polarity {
  kPositive,    // prototype of the RoI's own class
  kNegative,    // prototype of another class, for a foreground RoI
  kBackground,  // any prototype, for a background RoI
};

/// One (RoI, prototype) pairing. The RoI is referenced by index into the sampled list.
struct SamplePair {
  std::size_t roi_index = 0;
  ClassId prototype_label = 0;
  Polarity polarity = Polarity::kPositive;
  ClassId target_label = kBackground;  // class for positives, kBackground otherwise
};

/// Balanced sampling: every foreground RoI gets one positive and one uniformly drawn
/// negative prototype; every background RoI gets one uniformly drawn prototype.
std::vector<SamplePair> bcas_sample(std::span<const ClassId> roi_labels,
                                    std::span<const ClassId> classes, Rng& rng);
std::vector<SamplePair> bcas_sample(std::span<const RoIFeature> rois,
                                    const std::map<ClassId, ClassPrototype>& prototypes, Rng& rng);

/// Foreground RoIs are paired only with their own class prototype.
std::vector<SamplePair> class_specific_sample(std::span<const ClassId> roi_labels,
                                              std::span<const ClassId> classes, Rng& rng);

/// Every RoI is paired with one uniformly drawn prototype.
std::vector<SamplePair> class_agnostic_sample(std::span<const ClassId> roi_labels,
                                              std::span<const ClassId> classes, Rng& rng);

/// Affine maps are y = x W + b with W stored (in x out).
struct FusionParams {
  Matrix f1_weight, f1_bias;    // 2d -> 2d, then ReLU (product path)
  Matrix f2_weight, f2_bias;    // 2d -> 2d, then ReLU (difference path)
  Matrix f3_weight, f3_bias;    // 4d -> 2d, then ReLU (concatenation path)
  Matrix agg_weight, agg_bias;  // 8d -> 2d, no activation

  int width() const { return static_cast<int>(f1_weight.rows()); }
  static FusionParams initialize(int width, std::uint64_t seed);
  void validate() const;
};

struct FusionVars {
  ag::Var f1_weight, f1_bias, f2_weight, f2_bias, f3_weight, f3_bias, agg_weight, agg_bias;
};

/// Batched fusion of row-aligned RoI features and prototypes (N x 2d each).
ag::Var nlf(const ag::Var& rois, const ag::Var& prototypes, const FusionVars& params);

/// Element-wise product fusion used by the baseline.
ag::Var multiply_fusion(const ag::Var& rois, const ag::Var& prototypes);

RowVector nlf_fuse(const RoIFeature& roi, const ClassPrototype& prototype, const FusionParams& params);

}  // namespace fpd::fusion
