#pragma once

#include "fpd/tensor.hpp"

#include <map>
#include <vector>

namespace fpd {

using ClassId = int;

/// Marks background rows in a prototype bank and background RoIs.
inline constexpr ClassId kBackground = -1;

/// A (height x width x channels) grid stored as an (height*width x channels) row-major matrix.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, Matrix values);

  static FeatureMap zeros(int height, int width, int channels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return static_cast<int>(values_.cols()); }
  int cells() const { return height_ * width_; }

  const Matrix& values() const { return values_; }
  double at(int y, int x, int c) const { return values_(static_cast<Index>(y) * width_ + x, c); }

  /// Copy of the (HW x C) matrix view.
  Matrix flatten() const { return values_; }
  static FeatureMap unflatten(int height, int width, const Matrix& flat) {
    return FeatureMap(height, width, flat);
  }

 private:
  int height_ = 0;
  int width_ = 0;
  Matrix values_;
};

/// Learnable per-class queries guiding prototype distillation (n x d').
struct FeatureQuerySet {
  ClassId class_id = 0;
  Matrix queries;

  int n() const { return static_cast<int>(queries.rows()); }
  int d_prime() const { return static_cast<int>(queries.cols()); }
};

/// Projection and gating parameters of the fine-grained aggregation.
struct ProjectionParams {
  Matrix support_projection;  // W  (d x d')
  Matrix shared_projection;   // W' (d x d')
  Matrix class_embeddings;    // one row of width d per class id
  double alpha = 0.0;
  Matrix background_queries;  // n_bg x d

  int d() const { return static_cast<int>(support_projection.rows()); }
  int d_prime() const { return static_cast<int>(support_projection.cols()); }
  RowVector class_embedding(ClassId id) const;

  /// alpha = 0, small random projections, zero class embeddings.
  static ProjectionParams initialize(int d, int d_prime, int num_classes, int n_bg,
                                     std::uint64_t seed);
  void validate() const;
};

struct PrototypeSet {
  ClassId class_id = 0;
  Matrix prototypes;  // n x d
};

struct PrototypeBank {
  Matrix rows;                  // (n*c + n_bg) x d
  std::vector<ClassId> row_labels;  // kBackground for background rows

  Index size() const { return rows.rows(); }
};

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const Box&) const = default;
};

struct Annotation {
  Box box;
  ClassId class_id = 0;
  bool operator==(const Annotation&) const = default;
};

struct QueryImage {
  int image_id = -1;
  FeatureMap image;  // H*W x 3, values in [0, 1]
  std::vector<Annotation> annotations;
};

struct SupportCrop {
  int source_image_id = -1;
  Box source_box;
  FeatureMap image;  // support_size^2 x 3
};

struct Episode {
  std::vector<QueryImage> query_images;
  std::map<ClassId, std::vector<SupportCrop>> support_crops;
  std::vector<ClassId> class_roster;

  /// Checks the K-crops-per-class and labels-in-roster invariants.
  void validate(int k) const;
  int shots() const;
};

/// High-level RoI feature (length 2d) with the label assigned during RoI sampling.
struct RoIFeature {
  RowVector vector;
  Box source_box;
  ClassId assigned_label = kBackground;
};

/// Class-level prototype from the high-level support branch (length 2d).
struct ClassPrototype {
  RowVector vector;
  ClassId label = 0;
};

struct Detection {
  Box box;
  ClassId class_id = 0;
  double score = 0.0;
};

}  // namespace fpd
