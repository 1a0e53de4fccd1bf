#include "fpd/ffa.hpp"

#include "fpd/error.hpp"

#include <cmath>
#include <set>

namespace fpd::ffa {

namespace {

double inv_sqrt(Index d_prime) { return 1.0 / std::sqrt(static_cast<double>(d_prime)); }

ag::Var constant(const Matrix& m) { return ag::Var(m); }

ag::Var scalar(double v) { return ag::Var::scalar(v); }

}  // namespace

Distilled distill(const ag::Var& support, const ag::Var& queries, const ag::Var& projection,
                  const ag::Var& class_embedding) {
  require_shape(support.cols() == projection.rows(), "distill", support.value(), "support map",
                projection.value(), "W");
  require_shape(queries.cols() == projection.cols(), "distill", queries.value(), "feature queries",
                projection.value(), "W");
  require_shape(class_embedding.rows() == 1 && class_embedding.cols() == support.cols(), "distill",
                class_embedding.value(), "class embedding", support.value(), "support map");
  ag::Var keys = ag::matmul(support, projection);                           // hw x d'
  ag::Var logits = ag::scale(ag::matmul_nt(queries, keys), inv_sqrt(projection.cols()));  // n x hw
  ag::Var affinity = ag::softmax_rows(logits);
  ag::Var pooled = ag::matmul(affinity, support);                           // n x d
  return {ag::add_row(pooled, class_embedding), affinity};
}

Assigned assign(const ag::Var& query, const ag::Var& bank, const ag::Var& shared_projection,
                const ag::Var& alpha) {
  if (bank.rows() == 0) throw ValidationError("assign: empty prototype bank");
  require_shape(query.cols() == bank.cols(), "assign", query.value(), "query map", bank.value(),
                "prototype bank");
  require_shape(query.cols() == shared_projection.rows(), "assign", query.value(), "query map",
                shared_projection.value(), "W'");
  ag::Var q = ag::matmul(query, shared_projection);
  ag::Var k = ag::matmul(bank, shared_projection);
  ag::Var affinity = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv_sqrt(shared_projection.cols())));
  ag::Var attended = ag::matmul(affinity, bank);
  return {ag::add(query, ag::scale_by(attended, alpha)), affinity, attended};
}

Assigned dense_match(const ag::Var& query, const ag::Var& support_cells,
                     const ag::Var& support_projection, const ag::Var& shared_projection,
                     const ag::Var& alpha) {
  if (support_cells.rows() == 0) throw ValidationError("dense_match: no support cells");
  require_shape(query.cols() == support_cells.cols(), "dense_match", query.value(), "query map",
                support_cells.value(), "support cells");
  ag::Var q = ag::matmul(query, shared_projection);
  ag::Var k = ag::matmul(support_cells, support_projection);
  ag::Var affinity = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv_sqrt(shared_projection.cols())));
  ag::Var attended = ag::matmul(affinity, support_cells);
  return {ag::add(query, ag::scale_by(attended, alpha)), affinity, attended};
}

namespace {

Distilled distill_values(const FeatureMap& support, const FeatureQuerySet& queries,
                         const ProjectionParams& params) {
  params.validate();
  require_shape(support.channels() == params.d(), "distill_prototypes", support.values(),
                "support map", params.support_projection, "W");
  require_shape(queries.d_prime() == params.d_prime(), "distill_prototypes", queries.queries,
                "feature queries", params.support_projection, "W");
  require_finite(queries.queries, "feature queries");
  ag::Var emb(params.class_embedding(queries.class_id));
  return distill(constant(support.values()), constant(queries.queries),
                 constant(params.support_projection), emb);
}

}  // namespace

PrototypeSet distill_prototypes(const FeatureMap& support, const FeatureQuerySet& queries,
                                const ProjectionParams& params) {
  return {queries.class_id, distill_values(support, queries, params).prototypes.value()};
}

AffinityMatrix distillation_affinity(const FeatureMap& support, const FeatureQuerySet& queries,
                                     const ProjectionParams& params) {
  return {distill_values(support, queries, params).affinity.value(), "feature query",
          "support position", NormalizedAxis::kColumns};
}

PrototypeBank build_prototype_bank(std::span<const PrototypeSet> per_class,
                                   const ProjectionParams& params) {
  if (per_class.empty()) throw ValidationError("build_prototype_bank: no classes");
  params.validate();
  const Index d = params.background_queries.cols();
  std::set<ClassId> seen;
  Index rows = params.background_queries.rows();
  for (const auto& p : per_class) {
    if (!seen.insert(p.class_id).second)
      throw ValidationError("build_prototype_bank: duplicate class " + std::to_string(p.class_id));
    require_shape(p.prototypes.cols() == d, "build_prototype_bank", p.prototypes, "prototypes",
                  params.background_queries, "background prototypes");
    rows += p.prototypes.rows();
  }
  PrototypeBank bank;
  bank.rows.resize(rows, d);
  Index off = 0;
  for (const auto& p : per_class) {
    bank.rows.middleRows(off, p.prototypes.rows()) = p.prototypes;
    bank.row_labels.insert(bank.row_labels.end(), static_cast<std::size_t>(p.prototypes.rows()), p.class_id);
    off += p.prototypes.rows();
  }
  bank.rows.middleRows(off, params.background_queries.rows()) = params.background_queries;
  bank.row_labels.insert(bank.row_labels.end(), static_cast<std::size_t>(params.background_queries.rows()),
                         kBackground);
  return bank;
}

namespace {

Assigned assign_values(const FeatureMap& query, const PrototypeBank& bank,
                       const ProjectionParams& params) {
  if (bank.size() == 0) throw ValidationError("assign_prototypes: empty prototype bank");
  if (bank.row_labels.size() != static_cast<std::size_t>(bank.size()))
    throw ValidationError("assign_prototypes: row_labels length differs from row count");
  require_finite(bank.rows, "prototype bank");
  return assign(constant(query.values()), constant(bank.rows), constant(params.shared_projection),
                scalar(params.alpha));
}

}  // namespace

FeatureMap assign_prototypes(const FeatureMap& query, const PrototypeBank& bank,
                             const ProjectionParams& params) {
  return FeatureMap(query.height(), query.width(), assign_values(query, bank, params).output.value());
}

AffinityMatrix assignment_affinity(const FeatureMap& query, const PrototypeBank& bank,
                                   const ProjectionParams& params) {
  return {assign_values(query, bank, params).affinity.value(), "query position", "bank row",
          NormalizedAxis::kColumns};
}

FeatureMap dense_match_baseline(const FeatureMap& query,
                                std::span<const std::pair<ClassId, FeatureMap>> supports,
                                const ProjectionParams& params) {
  if (supports.empty()) throw ValidationError("dense_match_baseline: no support maps");
  Index rows = 0;
  for (const auto& [id, map] : supports) {
    require_shape(map.channels() == query.channels(), "dense_match_baseline", map.values(),
                  "support map", query.values(), "query map");
    rows += map.cells();
  }
  Matrix cells(rows, query.channels());
  Index off = 0;
  for (const auto& [id, map] : supports) {
    cells.middleRows(off, map.cells()) = map.values();
    off += map.cells();
  }
  auto out = dense_match(constant(query.values()), constant(cells), constant(params.support_projection),
                         constant(params.shared_projection), scalar(params.alpha));
  return FeatureMap(query.height(), query.width(), out.output.value());
}

}  // namespace fpd::ffa
