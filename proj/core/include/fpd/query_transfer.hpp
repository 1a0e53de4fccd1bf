#pragma once

#include "fpd/types.hpp"

#include <span>
#include <vector>

/// Feature-query transfer from base to novel classes, and compatibility-weighted
/// integration of prototypes across shots.
namespace fpd::transfer {

/// Raw scores, retained top-k values and per-query weights for one novel support map.
struct CompatibilityReport {
  Matrix scores;                     // (n*c) x hw, Q (X W)^T
  Matrix topk_values;                // (n*c) x k, descending per row
  std::vector<double> per_query_weight;  // (n*c), sum of the retained values
  std::vector<ClassId> source_class_of_query;
  std::vector<int> source_row_in_class;
  int k = 0;
};

/// Default top-k depth: a quarter of the support positions, at least one.
int default_topk(int hw);

/// Sum of the k largest entries of a row, added in descending order.
double topk_sum(std::span<const double> row, int k, std::vector<double>* retained = nullptr);

CompatibilityReport compatibility(std::span<const FeatureQuerySet> base_queries,
                                  const FeatureMap& novel_support, const ProjectionParams& params,
                                  int k);

/// Per-shot compatibility with weights summed over shots (in shot order).
CompatibilityReport compatibility(std::span<const FeatureQuerySet> base_queries,
                                  std::span<const FeatureMap> novel_shots,
                                  const ProjectionParams& params, int k);

/// Indices (into the stacked base rows) of the n largest weights; ties go to the lower index.
std::vector<int> select_rows(const CompatibilityReport& report, int n);

/// Independent copies of the n most compatible base rows, in selection order.
FeatureQuerySet select_and_duplicate(const CompatibilityReport& report,
                                     std::span<const FeatureQuerySet> base_queries, int n,
                                     ClassId novel_class);

enum class ShotWeighting {
  kPerQuery,       // one softmax across shots per feature-query index
  kPerShotScalar,  // mean weight over queries, one softmax across shots
};

/// weight[i, s]: top-k compatibility of the class's own query i with shot s (n x K).
Matrix shot_weights(const FeatureQuerySet& own_queries, std::span<const FeatureMap> shots,
                    const ProjectionParams& params, int k);

/// Softmax of the raw weights across shots, per row (n x K).
Matrix normalized_shot_weights(const Matrix& weight_per_shot, ShotWeighting mode = ShotWeighting::kPerQuery);

PrototypeSet integrate_shots(std::span<const PrototypeSet> prototype_per_shot,
                             const Matrix& weight_per_shot,
                             ShotWeighting mode = ShotWeighting::kPerQuery);

}  // namespace fpd::transfer
