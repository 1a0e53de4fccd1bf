#pragma once

#include "fpd/autograd.hpp"
#include "fpd/fusion.hpp"
#include "fpd/params.hpp"
#include "fpd/query_transfer.hpp"
#include "fpd/rng.hpp"
#include "fpd/types.hpp"

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpd {

enum class AggregationMode { kNone, kPrototype, kDenseMatch };
enum class FusionMode { kMultiply, kNonLinear };
enum class SamplingMode { kClassSpecific, kBalanced, kClassAgnostic };

/// Which aggregation components are switched on.
struct Variant {
  AggregationMode aggregation = AggregationMode::kPrototype;
  FusionMode fusion = FusionMode::kNonLinear;
  SamplingMode sampling = SamplingMode::kBalanced;

  /// One of: baseline, bcas, bcas+nlf, full, dense-match.
  static Variant parse(std::string_view name);
  std::string name() const;
  bool operator==(const Variant&) const = default;
};

struct StageSpec {
  int width = 0;
  int stride = 1;
};

/// Toy backbone: the mid stages produce d channels and feed aggregation and the RPN;
/// the high stage (2d channels) runs on RoIs and on support maps.
struct BackboneConfig {
  int image_size = 64;
  int support_size = 32;
  int d = 32;
  std::vector<StageSpec> mid_stages{{16, 2}, {32, 2}, {32, 1}};
  StageSpec high_stage{64, 2};

  int mid_stride() const;
  int mid_size(int input_size) const;
  void validate() const;
};

struct RpnConfig {
  std::vector<double> anchor_sizes{10.0, 14.0, 18.0};
  std::vector<double> anchor_ratios{0.75, 1.0, 1.0 / 0.75};
  int pre_nms = 300;
  int post_nms_train = 64;
  int post_nms_test = 64;
  double nms_iou = 0.7;
  double positive_iou = 0.7;
  double negative_iou = 0.3;
  int batch = 64;
  double positive_fraction = 0.5;

  int anchors_per_cell() const { return static_cast<int>(anchor_sizes.size() * anchor_ratios.size()); }
  void validate() const;
};

struct HeadConfig {
  int roi_size = 6;
  int rois_per_image = 32;
  double foreground_fraction = 0.25;
  double foreground_iou = 0.5;
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 100;
  void validate() const;
};

struct FfaConfig {
  int n_queries = 5;
  int n_background = 0;  // 0 -> n_queries
  int d_prime = 0;       // 0 -> d
  int topk = 0;          // 0 -> max(1, hw / 4)
  transfer::ShotWeighting shot_weighting = transfer::ShotWeighting::kPerQuery;
};

struct DetectorConfig {
  BackboneConfig backbone;
  RpnConfig rpn;
  HeadConfig head;
  FfaConfig ffa;
  Variant variant;
  int num_classes = 9;
  std::uint64_t seed = 0;

  int n_background() const { return ffa.n_background > 0 ? ffa.n_background : ffa.n_queries; }
  int d_prime() const { return ffa.d_prime > 0 ? ffa.d_prime : backbone.d; }
  int topk(int hw) const { return ffa.topk > 0 ? ffa.topk : transfer::default_topk(hw); }
  void validate() const;
};

struct LossMap {
  std::map<std::string, double> values;
  ag::Var total;
  bool empty_targets = false;

  double total_value() const { return total.defined() ? total.item() : 0.0; }
};

/// Support-side encodings computed once per class roster and reused for every query image.
struct SupportEncoding {
  std::vector<ClassId> roster;
  Matrix bank;                        // prototype aggregation: integrated prototypes + background
  std::vector<ClassId> bank_labels;
  Matrix support_cells;               // dense aggregation: every support cell of every shot
  Matrix class_prototypes;            // roster.size() x 2d, mean over shots
  std::map<ClassId, Matrix> shot_weights;  // raw n x K compatibility weights
  std::map<ClassId, std::vector<FeatureMap>> support_mid;  // per class, per shot
};

/// Intermediate tensors of one query image at test time.
struct QueryTrace {
  FeatureMap mid;
  FeatureMap aggregated;
  Matrix assignment_affinity;  // HW x bank rows, empty without aggregation
  Matrix objectness;           // anchors x 1
  std::vector<Box> proposals;
};

struct TrainDiagnostics {
  int rpn_positive = 0;
  int roi_foreground = 0;
  int roi_background = 0;
  std::vector<fusion::SamplePair> pairs;
};

class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // ---- backbone (weights shared by both branches) ----
  /// (B*S*S x 3) images -> (B*s*s x d) mid-level maps.
  ag::Var mid_features(const ag::Var& images, int batch, int size) const;
  /// (B*s*s x d) mid maps -> (B*t*t x 2d) high-level maps.
  ag::Var high_features(const ag::Var& mid, int batch, int size) const;
  /// Mean over the cells of each high-level map: (B x 2d).
  ag::Var high_pooled(const ag::Var& mid, int batch, int size) const;

  /// Image must be image_size (query path) or support_size (support path) square.
  FeatureMap extract_mid(const FeatureMap& image) const;
  FeatureMap extract_high(const FeatureMap& mid) const;

  // ---- aggregation parameters ----
  FeatureQuerySet query_set(ClassId id) const;
  void set_query_set(const FeatureQuerySet& queries);
  ProjectionParams projection_params() const;
  fusion::FusionParams fusion_params() const;

  // ---- episodes ----
  /// Training losses; total keeps the graph for backward(). TRAIN episodes use one
  /// randomly chosen shot per class.
  LossMap forward_train(const Episode& episode, Rng& rng, TrainDiagnostics* diagnostics = nullptr);
  /// Detections for every query image, integrating all K shots.
  std::vector<std::vector<Detection>> forward_test(const Episode& episode) const;

  SupportEncoding encode_supports(const std::map<ClassId, std::vector<FeatureMap>>& crops) const;
  std::vector<Detection> detect(const FeatureMap& image, const SupportEncoding& supports,
                                QueryTrace* trace = nullptr) const;

  /// Meta loss on class-level prototypes (C x 2d) labelled by class id.
  ag::Var meta_loss(const ag::Var& prototypes, std::span<const ClassId> labels) const;

  static std::string backbone_prefix() { return "backbone."; }

 private:
  struct RpnOutput {
    ag::Var objectness;  // anchors x 1
    ag::Var deltas;      // anchors x 4
  };
  struct HeadOutput {
    ag::Var logits;  // pairs x (num_classes + 1)
    ag::Var deltas;  // pairs x 4
  };

  void build_parameters();
  ag::Var conv(const std::string& name, const ag::Var& x, const ag::ConvShape& shape, int kernel,
               int stride, int pad) const;
  /// Per-class distillation of stacked single-shot support maps followed by the background rows.
  ag::Var distill_bank(const ag::Var& support_mid, std::span<const ClassId> roster) const;
  /// source is the prototype bank or, for dense matching, the support cells.
  ag::Var aggregate(const ag::Var& query_mid, const ag::Var& source, ag::Var* affinity) const;
  RpnOutput rpn_forward(const ag::Var& map) const;
  std::vector<Box> propose(const RpnOutput& rpn, int post_nms) const;
  ag::Var roi_features(const ag::Var& map, std::span<const Box> rois) const;
  ag::Var fuse(const ag::Var& rois, const ag::Var& prototypes) const;
  HeadOutput head(const ag::Var& fused) const;
  const std::vector<Box>& anchors() const { return anchors_; }
  ag::Var param(const std::string& name) const { return params_.get(name); }

  DetectorConfig config_;
  ParameterStore params_;
  std::vector<Box> anchors_;
};

/// Regression normalization of the RoI head.
inline constexpr std::array<double, 4> kRoiBoxStds{0.1, 0.1, 0.2, 0.2};
inline constexpr std::array<double, 4> kRpnBoxStds{1.0, 1.0, 1.0, 1.0};

}  // namespace fpd
