#include "fpd/types.hpp"

#include "fpd/error.hpp"
#include "fpd/rng.hpp"

#include <cmath>
#include <set>

namespace fpd {

FeatureMap::FeatureMap(int height, int width, Matrix values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height <= 0 || width <= 0 || values_.cols() <= 0)
    throw ValidationError("FeatureMap needs positive height, width and channels");
  if (values_.rows() != static_cast<Index>(height) * width)
    throw ShapeError("FeatureMap: " + std::to_string(height) + "x" + std::to_string(width) +
                     " grid does not match " + shape_string(values_));
  require_finite(values_, "FeatureMap");
}

FeatureMap FeatureMap::zeros(int height, int width, int channels) {
  return FeatureMap(height, width, Matrix::Zero(static_cast<Index>(height) * width, channels));
}

RowVector ProjectionParams::class_embedding(ClassId id) const {
  if (id < 0 || id >= class_embeddings.rows())
    throw ValidationError("no class embedding for class " + std::to_string(id));
  return class_embeddings.row(id);
}

ProjectionParams ProjectionParams::initialize(int d, int d_prime, int num_classes, int n_bg,
                                              std::uint64_t seed) {
  Rng rng(seed);
  auto randn = [&rng](Index r, Index c, double stddev) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
    return m;
  };
  ProjectionParams p;
  p.support_projection = randn(d, d_prime, 1.0 / std::sqrt(static_cast<double>(d)));
  p.shared_projection = randn(d, d_prime, 1.0 / std::sqrt(static_cast<double>(d)));
  p.class_embeddings = Matrix::Zero(num_classes, d);
  p.alpha = 0.0;
  p.background_queries = randn(n_bg, d, 0.1);
  return p;
}

void ProjectionParams::validate() const {
  require_finite(support_projection, "W");
  require_finite(shared_projection, "W'");
  require_finite(background_queries, "background prototypes");
  require_finite(class_embeddings, "class embeddings");
  if (!std::isfinite(alpha)) throw ValidationError("alpha is not finite");
  require_shape(support_projection.rows() == shared_projection.rows() &&
                    support_projection.cols() == shared_projection.cols(),
                "ProjectionParams", support_projection, "W", shared_projection, "W'");
  if (background_queries.rows() < 1) throw ValidationError("need at least one background prototype");
  require_shape(background_queries.cols() == support_projection.rows(), "ProjectionParams",
                background_queries, "background_queries", support_projection, "W");
  if (class_embeddings.size() != 0)
    require_shape(class_embeddings.cols() == support_projection.rows(), "ProjectionParams",
                  class_embeddings, "class_embeddings", support_projection, "W");
}

int Episode::shots() const {
  if (support_crops.empty()) return 0;
  return static_cast<int>(support_crops.begin()->second.size());
}

void Episode::validate(int k) const {
  std::set<ClassId> roster(class_roster.begin(), class_roster.end());
  if (roster.size() != class_roster.size()) throw ValidationError("episode roster has duplicates");
  for (ClassId c : class_roster) {
    auto it = support_crops.find(c);
    if (it == support_crops.end() || static_cast<int>(it->second.size()) != k)
      throw ValidationError("episode class " + std::to_string(c) + " does not have exactly " +
                            std::to_string(k) + " support crops");
  }
  for (const auto& q : query_images)
    for (const auto& a : q.annotations)
      if (!roster.contains(a.class_id))
        throw ValidationError("query label " + std::to_string(a.class_id) + " not in roster");
}

}  // namespace fpd
