#include "fpd/fusion.hpp"

#include "fpd/error.hpp"

#include <algorithm>
#include <cmath>

namespace fpd::fusion {

namespace {

void check_labels(std::span<const ClassId> roi_labels, std::span<const ClassId> classes) {
  if (classes.empty()) throw ValidationError("sampling: no prototype classes available");
  for (ClassId l : roi_labels) {
    if (l == kBackground) continue;
    if (std::find(classes.begin(), classes.end(), l) == classes.end())
      throw ValidationError("sampling: foreground RoI of class " + std::to_string(l) +
                            " has no prototype");
  }
}

ClassId draw_other(std::span<const ClassId> classes, ClassId exclude, Rng& rng) {
  if (classes.size() < 2)
    throw ValidationError("sampling: a negative prototype needs at least two classes");
  // Draw from the classes other than `exclude` without materializing the list.
  auto j = static_cast<std::size_t>(rng.index(classes.size() - 1));
  const auto pos = static_cast<std::size_t>(std::find(classes.begin(), classes.end(), exclude) - classes.begin());
  if (j >= pos) ++j;
  return classes[j];
}

ClassId draw_any(std::span<const ClassId> classes, Rng& rng) {
  return classes[static_cast<std::size_t>(rng.index(classes.size()))];
}

}  // namespace

std::vector<SamplePair> bcas_sample(std::span<const ClassId> roi_labels,
                                    std::span<const ClassId> classes, Rng& rng) {
  check_labels(roi_labels, classes);
  std::vector<SamplePair> pairs;
  pairs.reserve(roi_labels.size() * 2);
  for (std::size_t i = 0; i < roi_labels.size(); ++i) {
    const ClassId l = roi_labels[i];
    if (l == kBackground) {
      pairs.push_back({i, draw_any(classes, rng), Polarity::kBackground, kBackground});
    } else {
      pairs.push_back({i, l, Polarity::kPositive, l});
      pairs.push_back({i, draw_other(classes, l, rng), Polarity::kNegative, kBackground});
    }
  }
  return pairs;
}

std::vector<SamplePair> bcas_sample(std::span<const RoIFeature> rois,
                                    const std::map<ClassId, ClassPrototype>& prototypes, Rng& rng) {
  std::vector<ClassId> labels, classes;
  for (const auto& r : rois) labels.push_back(r.assigned_label);
  for (const auto& [id, p] : prototypes) classes.push_back(id);
  return bcas_sample(labels, classes, rng);
}

std::vector<SamplePair> class_specific_sample(std::span<const ClassId> roi_labels,
                                              std::span<const ClassId> classes, Rng& rng) {
  check_labels(roi_labels, classes);
  std::vector<SamplePair> pairs;
  for (std::size_t i = 0; i < roi_labels.size(); ++i) {
    const ClassId l = roi_labels[i];
    if (l == kBackground)
      pairs.push_back({i, draw_any(classes, rng), Polarity::kBackground, kBackground});
    else
      pairs.push_back({i, l, Polarity::kPositive, l});
  }
  return pairs;
}

std::vector<SamplePair> class_agnostic_sample(std::span<const ClassId> roi_labels,
                                              std::span<const ClassId> classes, Rng& rng) {
  check_labels(roi_labels, classes);
  std::vector<SamplePair> pairs;
  for (std::size_t i = 0; i < roi_labels.size(); ++i) {
    const ClassId l = roi_labels[i];
    const ClassId p = draw_any(classes, rng);
    if (l == kBackground)
      pairs.push_back({i, p, Polarity::kBackground, kBackground});
    else if (p == l)
      pairs.push_back({i, p, Polarity::kPositive, l});
    else
      pairs.push_back({i, p, Polarity::kNegative, kBackground});
  }
  return pairs;
}

FusionParams FusionParams::initialize(int width, std::uint64_t seed) {
  Rng rng(seed);
  auto dense = [&rng](int in, int out) {
    Matrix m(in, out);
    const double s = std::sqrt(2.0 / in);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
    return m;
  };
  FusionParams p;
  p.f1_weight = dense(width, width);
  p.f1_bias = Matrix::Zero(1, width);
  p.f2_weight = dense(width, width);
  p.f2_bias = Matrix::Zero(1, width);
  p.f3_weight = dense(2 * width, width);
  p.f3_bias = Matrix::Zero(1, width);
  p.agg_weight = dense(4 * width, width);
  p.agg_weight *= std::sqrt(0.5);
  p.agg_bias = Matrix::Zero(1, width);
  return p;
}

void FusionParams::validate() const {
  const Index w = f1_weight.rows();
  auto check = [](bool ok, const Matrix& m, const char* name) {
    if (!ok) throw ShapeError(std::string("FusionParams: ") + name + " has shape " + shape_string(m));
  };
  check(f1_weight.cols() == w, f1_weight, "f1_weight");
  check(f2_weight.rows() == w && f2_weight.cols() == w, f2_weight, "f2_weight");
  check(f3_weight.rows() == 2 * w && f3_weight.cols() == w, f3_weight, "f3_weight");
  check(agg_weight.rows() == 4 * w && agg_weight.cols() == w, agg_weight, "agg_weight");
  for (const Matrix* b : {&f1_bias, &f2_bias, &f3_bias, &agg_bias})
    check(b->rows() == 1 && b->cols() == w, *b, "bias");
}

ag::Var nlf(const ag::Var& rois, const ag::Var& prototypes, const FusionVars& p) {
  require_shape(rois.rows() == prototypes.rows() && rois.cols() == prototypes.cols(), "nlf",
                rois.value(), "RoI features", prototypes.value(), "prototypes");
  require_shape(rois.cols() == p.f1_weight.rows(), "nlf", rois.value(), "RoI features",
                p.f1_weight.value(), "f1 weight");
  auto affine = [](const ag::Var& x, const ag::Var& w, const ag::Var& b) {
    return ag::add_row(ag::matmul(x, w), b);
  };
  const ag::Var pair[] = {rois, prototypes};
  ag::Var product = ag::relu(affine(ag::hadamard(rois, prototypes), p.f1_weight, p.f1_bias));
  ag::Var difference = ag::relu(affine(ag::sub(rois, prototypes), p.f2_weight, p.f2_bias));
  ag::Var joint = ag::relu(affine(ag::concat_cols(pair), p.f3_weight, p.f3_bias));
  const ag::Var paths[] = {product, difference, joint, rois};
  return affine(ag::concat_cols(paths), p.agg_weight, p.agg_bias);
}

ag::Var multiply_fusion(const ag::Var& rois, const ag::Var& prototypes) {
  return ag::hadamard(rois, prototypes);
}

RowVector nlf_fuse(const RoIFeature& roi, const ClassPrototype& prototype, const FusionParams& params) {
  params.validate();
  if (roi.vector.size() != prototype.vector.size())
    throw ShapeError("nlf_fuse: RoI feature length " + std::to_string(roi.vector.size()) +
                     " vs prototype length " + std::to_string(prototype.vector.size()));
  if (roi.vector.size() != params.width())
    throw ShapeError("nlf_fuse: feature length " + std::to_string(roi.vector.size()) +
                     " vs fusion width " + std::to_string(params.width()));
  FusionVars v{ag::Var(params.f1_weight), ag::Var(params.f1_bias), ag::Var(params.f2_weight),
               ag::Var(params.f2_bias),   ag::Var(params.f3_weight), ag::Var(params.f3_bias),
               ag::Var(params.agg_weight), ag::Var(params.agg_bias)};
  const Matrix r = roi.vector, p = prototype.vector;
  return nlf(ag::Var(r), ag::Var(p), v).value().row(0);
}

}  // namespace fpd::fusion
