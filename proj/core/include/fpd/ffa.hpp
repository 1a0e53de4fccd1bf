#pragma once

#include "fpd/autograd.hpp"
#include "fpd/types.hpp"

#include <span>
#include <string>
#include <utility>

/// Fine-grained feature aggregation.
///
/// Per-class feature queries attend over the cells of a support map to distill n
/// fine-grained prototypes (affinity normalized over support positions, values taken
/// from the unprojected support map, plus a class embedding). The prototypes of every
/// class, followed by learned background prototypes, form a bank that each query-map
/// cell attends over (affinity normalized over bank rows); the attended prototypes are
/// added back through a gate alpha that starts at zero.
namespace fpd::ffa {

enum class NormalizedAxis { kColumns, kRows };

/// Attention weights with the axis softmax ran along. Each row of `values` is a
/// distribution when normalized_axis == kColumns.
struct AffinityMatrix {
  Matrix values;
  std::string row_axis;
  std::string col_axis;
  NormalizedAxis normalized_axis = NormalizedAxis::kColumns;
};

// ---- differentiable building blocks ----

struct Distilled {
  ag::Var prototypes;  // n x d
  ag::Var affinity;    // n x hw
};

/// support: hw x d, queries: n x d', projection: d x d', class_embedding: 1 x d.
Distilled distill(const ag::Var& support, const ag::Var& queries, const ag::Var& projection,
                  const ag::Var& class_embedding);

struct Assigned {
  ag::Var output;    // HW x d, query + alpha * affinity * bank
  ag::Var affinity;  // HW x rows(bank)
  ag::Var attended;  // HW x d, affinity * bank (before the gate)
};

/// query: HW x d, bank: B x d, shared_projection: d x d', alpha: 1 x 1.
Assigned assign(const ag::Var& query, const ag::Var& bank, const ag::Var& shared_projection,
                const ag::Var& alpha);

/// Dense cross-attention from every query cell onto every support cell (keys projected
/// by support_projection, query by shared_projection, values are the raw cells).
Assigned dense_match(const ag::Var& query, const ag::Var& support_cells,
                     const ag::Var& support_projection, const ag::Var& shared_projection,
                     const ag::Var& alpha);

// ---- value-level operations ----

PrototypeSet distill_prototypes(const FeatureMap& support, const FeatureQuerySet& queries,
                                const ProjectionParams& params);
AffinityMatrix distillation_affinity(const FeatureMap& support, const FeatureQuerySet& queries,
                                     const ProjectionParams& params);

/// Concatenates class prototypes in the given order followed by the background rows.
PrototypeBank build_prototype_bank(std::span<const PrototypeSet> per_class,
                                   const ProjectionParams& params);

FeatureMap assign_prototypes(const FeatureMap& query, const PrototypeBank& bank,
                             const ProjectionParams& params);
AffinityMatrix assignment_affinity(const FeatureMap& query, const PrototypeBank& bank,
                                   const ProjectionParams& params);

FeatureMap dense_match_baseline(const FeatureMap& query,
                                std::span<const std::pair<ClassId, FeatureMap>> supports,
                                const ProjectionParams& params);

}  // namespace fpd::ffa
