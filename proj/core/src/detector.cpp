#include "fpd/detector.hpp"

#include "fpd/boxes.hpp"
#include "fpd/error.hpp"
#include "fpd/ffa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpd {

namespace {

Matrix gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

ag::Var affine(const ag::Var& x, const ag::Var& w, const ag::Var& b) {
  return ag::add_row(ag::matmul(x, w), b);
}

int index_in(std::span<const ClassId> roster, ClassId id) {
  auto it = std::find(roster.begin(), roster.end(), id);
  if (it == roster.end()) throw ValidationError("class " + std::to_string(id) + " not in roster");
  return static_cast<int>(it - roster.begin());
}

Matrix stack_images(std::span<const FeatureMap* const> images) {
  const Index cells = images.front()->values().rows();
  Matrix out(cells * static_cast<Index>(images.size()), images.front()->channels());
  for (std::size_t i = 0; i < images.size(); ++i)
    out.middleRows(static_cast<Index>(i) * cells, cells) = images[i]->values();
  return out;
}

}  // namespace

// ---------------------------------------------------------------- variants / configs

Variant Variant::parse(std::string_view name) {
  if (name == "baseline")
    return {AggregationMode::kNone, FusionMode::kMultiply, SamplingMode::kClassSpecific};
  if (name == "bcas") return {AggregationMode::kNone, FusionMode::kMultiply, SamplingMode::kBalanced};
  if (name == "bcas+nlf")
    return {AggregationMode::kNone, FusionMode::kNonLinear, SamplingMode::kBalanced};
  if (name == "full")
    return {AggregationMode::kPrototype, FusionMode::kNonLinear, SamplingMode::kBalanced};
  if (name == "dense-match")
    return {AggregationMode::kDenseMatch, FusionMode::kNonLinear, SamplingMode::kBalanced};
  throw ValidationError("unknown variant: " + std::string(name));
}

std::string Variant::name() const {
  for (const char* n : {"baseline", "bcas", "bcas+nlf", "full", "dense-match"})
    if (parse(n) == *this) return n;
  std::string s = aggregation == AggregationMode::kNone        ? "none"
                  : aggregation == AggregationMode::kPrototype ? "prototype"
                                                               : "dense";
  s += fusion == FusionMode::kMultiply ? "/multiply" : "/nlf";
  s += sampling == SamplingMode::kBalanced        ? "/balanced"
       : sampling == SamplingMode::kClassSpecific ? "/class-specific"
                                                  : "/class-agnostic";
  return s;
}

int BackboneConfig::mid_stride() const {
  int s = 1;
  for (const auto& st : mid_stages) s *= st.stride;
  return s;
}

int BackboneConfig::mid_size(int input_size) const {
  int s = input_size;
  for (const auto& st : mid_stages) s = ag::conv_out_size(s, 3, st.stride, 1);
  return s;
}

void BackboneConfig::validate() const {
  if (mid_stages.empty()) throw ValidationError("backbone: no mid stages");
  if (d <= 0) throw ValidationError("backbone: d must be positive");
  for (const auto& st : mid_stages)
    if (st.width <= 0 || st.stride <= 0) throw ValidationError("backbone: bad stage spec");
  if (mid_stages.back().width != d)
    throw ValidationError("backbone: last mid stage width must equal d = " + std::to_string(d));
  if (high_stage.width != 2 * d)
    throw ValidationError("backbone: high stage width must equal 2d = " + std::to_string(2 * d));
  if (high_stage.stride <= 0) throw ValidationError("backbone: bad high stage stride");
  if (image_size <= 0 || support_size <= 0) throw ValidationError("backbone: bad input size");
  if (image_size % mid_stride() != 0 || support_size % mid_stride() != 0)
    throw ValidationError("backbone: input sizes must be multiples of the mid stride");
}

void RpnConfig::validate() const {
  if (anchor_sizes.empty() || anchor_ratios.empty()) throw ValidationError("rpn: no anchors");
  for (double v : anchor_sizes)
    if (!(v > 0)) throw ValidationError("rpn: anchor sizes must be positive");
  for (double v : anchor_ratios)
    if (!(v > 0)) throw ValidationError("rpn: anchor ratios must be positive");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(nms_iou) || !unit(positive_iou) || !unit(negative_iou) || !unit(positive_fraction))
    throw ValidationError("rpn: thresholds must lie in [0, 1]");
  if (!(positive_iou > negative_iou))
    throw ValidationError("rpn: positive IoU threshold must exceed the negative one");
  if (pre_nms <= 0 || post_nms_train <= 0 || post_nms_test <= 0 || batch <= 0)
    throw ValidationError("rpn: counts must be positive");
}

void HeadConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(foreground_fraction) || !unit(foreground_iou) || !unit(score_threshold) || !unit(nms_iou))
    throw ValidationError("head: thresholds must lie in [0, 1]");
  if (roi_size <= 0 || rois_per_image <= 0 || max_detections <= 0)
    throw ValidationError("head: counts must be positive");
}

void DetectorConfig::validate() const {
  backbone.validate();
  rpn.validate();
  head.validate();
  if (num_classes < 2) throw ValidationError("detector: need at least two classes");
  if (ffa.n_queries <= 0 || ffa.n_background < 0 || ffa.d_prime < 0 || ffa.topk < 0)
    throw ValidationError("detector: bad aggregation sizes");
}

// ---------------------------------------------------------------- construction

Detector::Detector(DetectorConfig config) : config_(std::move(config)) {
  config_.validate();
  const int grid = config_.backbone.mid_size(config_.backbone.image_size);
  anchors_ = grid_anchors(grid, grid, config_.backbone.mid_stride(), config_.rpn.anchor_sizes,
                          config_.rpn.anchor_ratios);
  build_parameters();
}

void Detector::build_parameters() {
  Rng rng(derive_seed(config_.seed, 0x6465746563746f72ULL));
  const int d = config_.backbone.d;
  const int wide = 2 * d;
  const int classes = config_.num_classes;

  int cin = 3;
  int stage = 1;
  auto conv_param = [&](int in, int out) {
    const std::string base = "backbone.stage" + std::to_string(stage++);
    params_.add(base + ".weight", gaussian(9 * in, out, std::sqrt(2.0 / (9 * in)), rng));
    params_.add(base + ".bias", Matrix::Zero(1, out));
  };
  for (const auto& st : config_.backbone.mid_stages) {
    conv_param(cin, st.width);
    cin = st.width;
  }
  conv_param(cin, config_.backbone.high_stage.width);

  const int a = config_.rpn.anchors_per_cell();
  params_.add("rpn.conv.weight", gaussian(9 * d, d, 0.01, rng));
  params_.add("rpn.conv.bias", Matrix::Zero(1, d));
  params_.add("rpn.out.weight", gaussian(d, 5 * a, 0.01, rng));
  params_.add("rpn.out.bias", Matrix::Zero(1, 5 * a));

  const int n = config_.ffa.n_queries;
  const int dp = config_.d_prime();
  const ProjectionParams proj =
      ProjectionParams::initialize(d, dp, classes, config_.n_background(), rng.uniform_int(0, 1 << 30));
  params_.add("ffa.queries", gaussian(static_cast<Index>(classes) * n, dp, 1.0, rng));
  params_.add("ffa.W", proj.support_projection);
  params_.add("ffa.W_prime", proj.shared_projection);
  params_.add("ffa.class_embeddings", proj.class_embeddings);
  params_.add("ffa.alpha", Matrix::Constant(1, 1, proj.alpha));
  params_.add("ffa.background", proj.background_queries);

  const fusion::FusionParams fp = fusion::FusionParams::initialize(wide, rng.uniform_int(0, 1 << 30));
  params_.add("nlf.f1.weight", fp.f1_weight);
  params_.add("nlf.f1.bias", fp.f1_bias);
  params_.add("nlf.f2.weight", fp.f2_weight);
  params_.add("nlf.f2.bias", fp.f2_bias);
  params_.add("nlf.f3.weight", fp.f3_weight);
  params_.add("nlf.f3.bias", fp.f3_bias);
  params_.add("nlf.agg.weight", fp.agg_weight);
  params_.add("nlf.agg.bias", fp.agg_bias);

  params_.add("head.fc.weight", gaussian(wide, wide, std::sqrt(2.0 / wide), rng));
  params_.add("head.fc.bias", Matrix::Zero(1, wide));
  params_.add("head.cls.weight", gaussian(wide, classes + 1, 0.01, rng));
  params_.add("head.cls.bias", Matrix::Zero(1, classes + 1));
  params_.add("head.box.weight", gaussian(wide, 4, 0.001, rng));
  params_.add("head.box.bias", Matrix::Zero(1, 4));

  params_.add("meta.weight", gaussian(wide, classes, 0.01, rng));
  params_.add("meta.bias", Matrix::Zero(1, classes));
}

// ---------------------------------------------------------------- backbone

ag::Var Detector::conv(const std::string& name, const ag::Var& x, const ag::ConvShape& shape,
                       int kernel, int stride, int pad) const {
  return ag::relu(ag::conv2d(x, shape, param(name + ".weight"), param(name + ".bias"), kernel,
                             stride, pad));
}

ag::Var Detector::mid_features(const ag::Var& images, int batch, int size) const {
  ag::Var x = ag::add_row(images, ag::Var(Matrix::Constant(1, images.cols(), -0.5)));
  int s = size;
  int stage = 1;
  for (const auto& st : config_.backbone.mid_stages) {
    x = conv("backbone.stage" + std::to_string(stage++), x, {batch, s, s}, 3, st.stride, 1);
    s = ag::conv_out_size(s, 3, st.stride, 1);
  }
  return x;
}

ag::Var Detector::high_features(const ag::Var& mid, int batch, int size) const {
  const std::string name =
      "backbone.stage" + std::to_string(config_.backbone.mid_stages.size() + 1);
  return conv(name, mid, {batch, size, size}, 3, config_.backbone.high_stage.stride, 1);
}

ag::Var Detector::high_pooled(const ag::Var& mid, int batch, int size) const {
  const int out = ag::conv_out_size(size, 3, config_.backbone.high_stage.stride, 1);
  return ag::group_mean_rows(high_features(mid, batch, size), static_cast<Index>(out) * out);
}

FeatureMap Detector::extract_mid(const FeatureMap& image) const {
  const auto& bb = config_.backbone;
  if (image.height() != image.width() ||
      (image.height() != bb.image_size && image.height() != bb.support_size) || image.channels() != 3)
    throw ValidationError("extract_mid: expected a 3-channel " + std::to_string(bb.image_size) +
                          " or " + std::to_string(bb.support_size) + " square image, got " +
                          std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                          "x" + std::to_string(image.channels()));
  ag::NoGradGuard guard;
  const int s = bb.mid_size(image.height());
  return FeatureMap(s, s, mid_features(ag::Var(image.values()), 1, image.height()).value());
}

FeatureMap Detector::extract_high(const FeatureMap& mid) const {
  if (mid.height() != mid.width() || mid.channels() != config_.backbone.d)
    throw ValidationError("extract_high: expected a square map with d channels");
  ag::NoGradGuard guard;
  const int s = ag::conv_out_size(mid.height(), 3, config_.backbone.high_stage.stride, 1);
  return FeatureMap(s, s, high_features(ag::Var(mid.values()), 1, mid.height()).value());
}

// ---------------------------------------------------------------- aggregation parameters

FeatureQuerySet Detector::query_set(ClassId id) const {
  if (id < 0 || id >= config_.num_classes) throw ValidationError("query_set: bad class id");
  const Index n = config_.ffa.n_queries;
  return {id, param("ffa.queries").value().middleRows(id * n, n)};
}

void Detector::set_query_set(const FeatureQuerySet& queries) {
  if (queries.class_id < 0 || queries.class_id >= config_.num_classes)
    throw ValidationError("set_query_set: bad class id");
  ag::Var& q = params_.get("ffa.queries");
  const Index n = config_.ffa.n_queries;
  require_shape(queries.queries.rows() == n && queries.queries.cols() == q.cols(), "set_query_set",
                queries.queries, "queries", q.value(), "ffa.queries");
  q.mutable_value().middleRows(queries.class_id * n, n) = queries.queries;
}

ProjectionParams Detector::projection_params() const {
  ProjectionParams p;
  p.support_projection = param("ffa.W").value();
  p.shared_projection = param("ffa.W_prime").value();
  p.class_embeddings = param("ffa.class_embeddings").value();
  p.alpha = param("ffa.alpha").item();
  p.background_queries = param("ffa.background").value();
  return p;
}

fusion::FusionParams Detector::fusion_params() const {
  fusion::FusionParams p;
  p.f1_weight = param("nlf.f1.weight").value();
  p.f1_bias = param("nlf.f1.bias").value();
  p.f2_weight = param("nlf.f2.weight").value();
  p.f2_bias = param("nlf.f2.bias").value();
  p.f3_weight = param("nlf.f3.weight").value();
  p.f3_bias = param("nlf.f3.bias").value();
  p.agg_weight = param("nlf.agg.weight").value();
  p.agg_bias = param("nlf.agg.bias").value();
  return p;
}

ag::Var Detector::distill_bank(const ag::Var& support_mid, std::span<const ClassId> roster) const {
  const Index hw = support_mid.rows() / static_cast<Index>(roster.size());
  const Index n = config_.ffa.n_queries;
  std::vector<ag::Var> rows;
  for (std::size_t j = 0; j < roster.size(); ++j) {
    const Index idx[] = {static_cast<Index>(roster[j])};
    auto dist = ffa::distill(ag::slice_rows(support_mid, static_cast<Index>(j) * hw, hw),
                             ag::slice_rows(param("ffa.queries"), idx[0] * n, n), param("ffa.W"),
                             ag::gather_rows(param("ffa.class_embeddings"), idx));
    rows.push_back(dist.prototypes);
  }
  rows.push_back(param("ffa.background"));
  return ag::concat_rows(rows);
}

ag::Var Detector::aggregate(const ag::Var& query_mid, const ag::Var& source, ag::Var* affinity) const {
  ffa::Assigned r;
  switch (config_.variant.aggregation) {
    case AggregationMode::kNone:
      return query_mid;
    case AggregationMode::kDenseMatch:
      r = ffa::dense_match(query_mid, source, param("ffa.W"), param("ffa.W_prime"), param("ffa.alpha"));
      break;
    case AggregationMode::kPrototype:
      r = ffa::assign(query_mid, source, param("ffa.W_prime"), param("ffa.alpha"));
      break;
  }
  if (affinity) *affinity = r.affinity;
  return r.output;
}

// ---------------------------------------------------------------- RPN

Detector::RpnOutput Detector::rpn_forward(const ag::Var& map) const {
  const int s = config_.backbone.mid_size(config_.backbone.image_size);
  const int a = config_.rpn.anchors_per_cell();
  ag::Var h = conv("rpn.conv", map, {1, s, s}, 3, 1, 1);
  ag::Var out = affine(h, param("rpn.out.weight"), param("rpn.out.bias"));
  const Index total = static_cast<Index>(s) * s * a;
  return {ag::reshape(ag::slice_cols(out, 0, a), total, 1),
          ag::reshape(ag::slice_cols(out, a, 4 * a), total, 4)};
}

std::vector<Box> Detector::propose(const RpnOutput& rpn, int post_nms) const {
  const double size = config_.backbone.image_size;
  const Matrix& obj = rpn.objectness.value();
  const Matrix& deltas = rpn.deltas.value();
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(anchors_.size());
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    const double dl[4] = {deltas(static_cast<Index>(i), 0), deltas(static_cast<Index>(i), 1),
                          deltas(static_cast<Index>(i), 2), deltas(static_cast<Index>(i), 3)};
    Box b = clip_box(decode_box(anchors_[i], dl, kRpnBoxStds), size, size);
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    boxes.push_back(b);
    scores.push_back(obj(static_cast<Index>(i), 0));
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t pre = std::min<std::size_t>(order.size(), config_.rpn.pre_nms);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
  order.resize(pre);
  std::vector<Box> top;
  std::vector<double> top_scores;
  for (std::size_t i : order) {
    top.push_back(boxes[i]);
    top_scores.push_back(scores[i]);
  }
  std::vector<Box> out;
  for (std::size_t k : nms(top, top_scores, config_.rpn.nms_iou, static_cast<std::size_t>(post_nms)))
    out.push_back(top[k]);
  return out;
}

// ---------------------------------------------------------------- RoI head

ag::Var Detector::roi_features(const ag::Var& map, std::span<const Box> rois) const {
  const int s = config_.backbone.mid_size(config_.backbone.image_size);
  const int r = config_.head.roi_size;
  ag::Var pooled = ag::roi_align(map, s, s, rois, 1.0 / config_.backbone.mid_stride(), r, 2);
  return high_pooled(pooled, static_cast<int>(rois.size()), r);
}

ag::Var Detector::fuse(const ag::Var& rois, const ag::Var& prototypes) const {
  if (config_.variant.fusion == FusionMode::kMultiply) return fusion::multiply_fusion(rois, prototypes);
  fusion::FusionVars v{param("nlf.f1.weight"), param("nlf.f1.bias"),  param("nlf.f2.weight"),
                       param("nlf.f2.bias"),   param("nlf.f3.weight"), param("nlf.f3.bias"),
                       param("nlf.agg.weight"), param("nlf.agg.bias")};
  return fusion::nlf(rois, prototypes, v);
}

Detector::HeadOutput Detector::head(const ag::Var& fused) const {
  ag::Var h = ag::relu(affine(fused, param("head.fc.weight"), param("head.fc.bias")));
  return {affine(h, param("head.cls.weight"), param("head.cls.bias")),
          affine(h, param("head.box.weight"), param("head.box.bias"))};
}

ag::Var Detector::meta_loss(const ag::Var& prototypes, std::span<const ClassId> labels) const {
  require_shape(prototypes.rows() == static_cast<Index>(labels.size()), "meta_loss",
                prototypes.value(), "prototypes", Matrix(static_cast<Index>(labels.size()), 1),
                "labels");
  std::vector<int> y(labels.begin(), labels.end());
  return ag::cross_entropy(affine(prototypes, param("meta.weight"), param("meta.bias")), y);
}

// ---------------------------------------------------------------- training

LossMap Detector::forward_train(const Episode& episode, Rng& rng, TrainDiagnostics* diag) {
  if (episode.query_images.empty()) throw ValidationError("forward_train: no query images");
  const auto& bb = config_.backbone;
  const std::vector<ClassId>& roster = episode.class_roster;
  if (roster.empty()) throw ValidationError("forward_train: empty class roster");
  for (ClassId id : roster)
    if (id < 0 || id >= config_.num_classes)
      throw ValidationError("forward_train: class id out of range: " + std::to_string(id));

  // support branch: one randomly drawn shot per class
  std::vector<const FeatureMap*> crops;
  for (ClassId id : roster) {
    auto it = episode.support_crops.find(id);
    if (it == episode.support_crops.end() || it->second.empty())
      throw ValidationError("forward_train: no support crop for class " + std::to_string(id));
    const auto& shots = it->second;
    const FeatureMap& img = shots[rng.index(shots.size())].image;
    if (img.height() != bb.support_size || img.width() != bb.support_size)
      throw ValidationError("forward_train: support crop size mismatch");
    crops.push_back(&img);
  }
  const int c = static_cast<int>(roster.size());
  const int sm = bb.mid_size(bb.support_size);
  ag::Var support_mid = mid_features(ag::Var(stack_images(crops)), c, bb.support_size);
  ag::Var class_protos = high_pooled(support_mid, c, sm);  // c x 2d

  // query branch
  std::vector<const FeatureMap*> queries;
  for (const auto& q : episode.query_images) {
    if (q.image.height() != bb.image_size || q.image.width() != bb.image_size)
      throw ValidationError("forward_train: query image size mismatch");
    queries.push_back(&q.image);
  }
  const int b = static_cast<int>(queries.size());
  const int qm = bb.mid_size(bb.image_size);
  const Index cells = static_cast<Index>(qm) * qm;
  ag::Var query_mid = mid_features(ag::Var(stack_images(queries)), b, bb.image_size);

  ag::Var source = support_mid;
  if (config_.variant.aggregation == AggregationMode::kPrototype) source = distill_bank(support_mid, roster);

  const auto& rc = config_.rpn;
  const auto& hc = config_.head;
  std::vector<ag::Var> rpn_cls, rpn_box, cls_terms, box_terms;
  std::vector<double> cls_weights, box_weights, rpn_weights;
  LossMap losses;
  int total_pairs = 0;

  for (int bi = 0; bi < b; ++bi) {
    const auto& annotations = episode.query_images[static_cast<std::size_t>(bi)].annotations;
    ag::Var qmap = ag::slice_rows(query_mid, bi * cells, cells);
    ag::Var agg = aggregate(qmap, source, nullptr);

    // RPN targets
    RpnOutput rpn = rpn_forward(agg);
    const std::size_t na = anchors_.size();
    std::vector<int> label(na, -1);
    std::vector<int> matched(na, -1);
    std::vector<double> best(na, 0.0);
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t g = 0; g < annotations.size(); ++g) {
        const double v = iou(anchors_[i], annotations[g].box);
        if (v > best[i]) {
          best[i] = v;
          matched[i] = static_cast<int>(g);
        }
      }
      if (best[i] < rc.negative_iou) label[i] = 0;
      if (best[i] >= rc.positive_iou) label[i] = 1;
    }
    for (std::size_t g = 0; g < annotations.size(); ++g) {
      double top = 0.0;
      for (std::size_t i = 0; i < na; ++i) top = std::max(top, iou(anchors_[i], annotations[g].box));
      if (top <= 0.0) continue;
      for (std::size_t i = 0; i < na; ++i) {
        if (iou(anchors_[i], annotations[g].box) == top) {
          label[i] = 1;
          matched[i] = static_cast<int>(g);
        }
      }
    }
    std::vector<Index> pos, neg;
    for (std::size_t i = 0; i < na; ++i) {
      if (label[i] == 1) pos.push_back(static_cast<Index>(i));
      if (label[i] == 0) neg.push_back(static_cast<Index>(i));
    }
    rng.shuffle(pos);
    rng.shuffle(neg);
    const std::size_t max_pos = static_cast<std::size_t>(rc.batch * rc.positive_fraction);
    if (pos.size() > max_pos) pos.resize(max_pos);
    const std::size_t max_neg = static_cast<std::size_t>(rc.batch) - pos.size();
    if (neg.size() > max_neg) neg.resize(max_neg);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    std::vector<Index> sampled = pos;
    sampled.insert(sampled.end(), neg.begin(), neg.end());
    if (!sampled.empty()) {
      Matrix target(static_cast<Index>(sampled.size()), 1);
      for (std::size_t i = 0; i < sampled.size(); ++i) target(static_cast<Index>(i), 0) = i < pos.size();
      rpn_cls.push_back(ag::sigmoid_bce(ag::gather_rows(rpn.objectness, sampled), target));
      rpn_weights.push_back(1.0);
      if (!pos.empty()) {
        Matrix t(static_cast<Index>(pos.size()), 4);
        for (std::size_t i = 0; i < pos.size(); ++i) {
          const auto e = encode_box(anchors_[static_cast<std::size_t>(pos[i])],
                                    annotations[static_cast<std::size_t>(matched[static_cast<std::size_t>(pos[i])])].box,
                                    kRpnBoxStds);
          for (int k = 0; k < 4; ++k) t(static_cast<Index>(i), k) = e[static_cast<std::size_t>(k)];
        }
        rpn_box.push_back(ag::smooth_l1(ag::gather_rows(rpn.deltas, pos), t, 1.0 / 9.0,
                                        static_cast<double>(sampled.size())));
      }
    }
    if (diag) diag->rpn_positive += static_cast<int>(pos.size());

    // proposals plus ground truth, then RoI sampling
    std::vector<Box> proposals = propose(rpn, rc.post_nms_train);
    for (const auto& a : annotations) proposals.push_back(a.box);
    std::vector<std::size_t> fg, bg;
    std::vector<ClassId> prop_label(proposals.size(), kBackground);
    std::vector<int> prop_gt(proposals.size(), -1);
    for (std::size_t p = 0; p < proposals.size(); ++p) {
      double top = 0.0;
      for (std::size_t g = 0; g < annotations.size(); ++g) {
        const double v = iou(proposals[p], annotations[g].box);
        if (v > top) {
          top = v;
          prop_gt[p] = static_cast<int>(g);
        }
      }
      if (top >= hc.foreground_iou) {
        prop_label[p] = annotations[static_cast<std::size_t>(prop_gt[p])].class_id;
        fg.push_back(p);
      } else {
        bg.push_back(p);
      }
    }
    rng.shuffle(fg);
    rng.shuffle(bg);
    const std::size_t max_fg =
        static_cast<std::size_t>(std::lround(hc.rois_per_image * hc.foreground_fraction));
    if (fg.size() > max_fg) fg.resize(max_fg);
    const std::size_t max_bg = static_cast<std::size_t>(hc.rois_per_image) - fg.size();
    if (bg.size() > max_bg) bg.resize(max_bg);
    std::vector<std::size_t> keep = fg;
    keep.insert(keep.end(), bg.begin(), bg.end());
    if (keep.empty()) continue;
    if (diag) {
      diag->roi_foreground += static_cast<int>(fg.size());
      diag->roi_background += static_cast<int>(bg.size());
    }

    std::vector<Box> rois;
    std::vector<ClassId> roi_labels;
    for (std::size_t p : keep) {
      rois.push_back(proposals[p]);
      roi_labels.push_back(prop_label[p]);
    }
    ag::Var roi_vec = roi_features(agg, rois);  // R x 2d

    std::vector<fusion::SamplePair> pairs;
    switch (config_.variant.sampling) {
      case SamplingMode::kBalanced:
        pairs = fusion::bcas_sample(roi_labels, roster, rng);
        break;
      case SamplingMode::kClassSpecific:
        pairs = fusion::class_specific_sample(roi_labels, roster, rng);
        break;
      case SamplingMode::kClassAgnostic:
        pairs = fusion::class_agnostic_sample(roi_labels, roster, rng);
        break;
    }
    if (pairs.empty()) continue;
    std::vector<Index> roi_idx, proto_idx;
    std::vector<int> targets;
    std::vector<Index> positive_rows;
    Matrix box_targets(0, 4);
    std::vector<std::array<double, 4>> encoded;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& pr = pairs[i];
      roi_idx.push_back(static_cast<Index>(pr.roi_index));
      proto_idx.push_back(index_in(roster, pr.prototype_label));
      targets.push_back(pr.target_label == kBackground ? c : index_in(roster, pr.target_label));
      if (pr.polarity == fusion::Polarity::kPositive) {
        positive_rows.push_back(static_cast<Index>(i));
        const std::size_t p = keep[pr.roi_index];
        encoded.push_back(encode_box(proposals[p],
                                     annotations[static_cast<std::size_t>(prop_gt[p])].box, kRoiBoxStds));
      }
    }
    if (diag) diag->pairs.insert(diag->pairs.end(), pairs.begin(), pairs.end());
    ag::Var fused = fuse(ag::gather_rows(roi_vec, roi_idx), ag::gather_rows(class_protos, proto_idx));
    HeadOutput out = head(fused);
    std::vector<Index> columns(roster.begin(), roster.end());
    columns.push_back(config_.num_classes);
    cls_terms.push_back(ag::cross_entropy(ag::gather_cols(out.logits, columns), targets));
    cls_weights.push_back(static_cast<double>(pairs.size()));
    total_pairs += static_cast<int>(pairs.size());
    if (!positive_rows.empty()) {
      Matrix t(static_cast<Index>(encoded.size()), 4);
      for (std::size_t i = 0; i < encoded.size(); ++i)
        for (int k = 0; k < 4; ++k) t(static_cast<Index>(i), k) = encoded[i][static_cast<std::size_t>(k)];
      box_terms.push_back(
          ag::smooth_l1(ag::gather_rows(out.deltas, positive_rows), t, 1.0, static_cast<double>(keep.size())));
    }
  }

  auto average = [](std::vector<ag::Var>& terms, double count) -> ag::Var {
    if (terms.empty()) return ag::Var::scalar(0.0);
    return ag::scale(ag::sum_all(terms), 1.0 / count);
  };
  // classification terms are per-image means; weight them by pair count
  std::vector<ag::Var> weighted_cls;
  for (std::size_t i = 0; i < cls_terms.size(); ++i)
    weighted_cls.push_back(ag::scale(cls_terms[i], cls_weights[i]));
  ag::Var loss_rpn_cls = average(rpn_cls, static_cast<double>(b));
  ag::Var loss_rpn_box = average(rpn_box, static_cast<double>(b));
  ag::Var loss_cls = average(weighted_cls, std::max(1, total_pairs));
  ag::Var loss_box = average(box_terms, static_cast<double>(b));
  ag::Var loss_meta = meta_loss(class_protos, roster);

  losses.empty_targets = total_pairs == 0;
  losses.values["rpn_cls"] = loss_rpn_cls.item();
  losses.values["rpn_box"] = loss_rpn_box.item();
  losses.values["cls"] = loss_cls.item();
  losses.values["box"] = loss_box.item();
  losses.values["meta"] = loss_meta.item();
  const ag::Var parts[] = {loss_rpn_cls, loss_rpn_box, loss_cls, loss_box, loss_meta};
  losses.total = ag::sum_all(parts);
  losses.values["total"] = losses.total.item();
  return losses;
}

// ---------------------------------------------------------------- inference

SupportEncoding Detector::encode_supports(
    const std::map<ClassId, std::vector<FeatureMap>>& crops) const {
  if (crops.empty()) throw ValidationError("encode_supports: no classes");
  ag::NoGradGuard guard;
  const auto& bb = config_.backbone;
  const int sm = bb.mid_size(bb.support_size);
  const ProjectionParams proj = projection_params();
  SupportEncoding enc;
  enc.class_prototypes.resize(static_cast<Index>(crops.size()), 2 * bb.d);
  std::vector<PrototypeSet> integrated;
  std::vector<Matrix> cells;
  for (const auto& [id, shots] : crops) {
    if (shots.empty()) throw ValidationError("encode_supports: class " + std::to_string(id) + " has no shots");
    if (id < 0 || id >= config_.num_classes) throw ValidationError("encode_supports: bad class id");
    std::vector<const FeatureMap*> ptrs;
    for (const auto& s : shots) {
      if (s.height() != bb.support_size || s.width() != bb.support_size || s.channels() != 3)
        throw ValidationError("encode_supports: support crop size mismatch");
      ptrs.push_back(&s);
    }
    const int k = static_cast<int>(shots.size());
    ag::Var mid = mid_features(ag::Var(stack_images(ptrs)), k, bb.support_size);
    const Matrix pooled = high_pooled(mid, k, sm).value();
    const Index row = static_cast<Index>(enc.roster.size());
    enc.class_prototypes.row(row) = pooled.colwise().mean();
    enc.roster.push_back(id);

    const Index hw = static_cast<Index>(sm) * sm;
    std::vector<FeatureMap> maps;
    for (int s = 0; s < k; ++s) maps.emplace_back(sm, sm, Matrix(mid.value().middleRows(s * hw, hw)));
    if (config_.variant.aggregation == AggregationMode::kPrototype) {
      const FeatureQuerySet qs = query_set(id);
      std::vector<PrototypeSet> per_shot;
      for (const auto& m : maps) per_shot.push_back(ffa::distill_prototypes(m, qs, proj));
      Matrix w = transfer::shot_weights(qs, maps, proj, config_.topk(static_cast<int>(hw)));
      integrated.push_back(transfer::integrate_shots(per_shot, w, config_.ffa.shot_weighting));
      enc.shot_weights[id] = std::move(w);
    } else if (config_.variant.aggregation == AggregationMode::kDenseMatch) {
      cells.push_back(mid.value());
    }
    enc.support_mid[id] = std::move(maps);
  }
  if (config_.variant.aggregation == AggregationMode::kPrototype) {
    PrototypeBank bank = ffa::build_prototype_bank(integrated, proj);
    enc.bank = std::move(bank.rows);
    enc.bank_labels = std::move(bank.row_labels);
  } else if (config_.variant.aggregation == AggregationMode::kDenseMatch) {
    Index total = 0;
    for (const auto& m : cells) total += m.rows();
    enc.support_cells.resize(total, bb.d);
    Index at = 0;
    for (const auto& m : cells) {
      enc.support_cells.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
  }
  return enc;
}

std::vector<Detection> Detector::detect(const FeatureMap& image, const SupportEncoding& supports,
                                        QueryTrace* trace) const {
  const auto& bb = config_.backbone;
  if (image.height() != bb.image_size || image.width() != bb.image_size)
    throw ValidationError("detect: query image must be " + std::to_string(bb.image_size) + " square");
  if (supports.roster.empty()) throw ValidationError("detect: empty support encoding");
  ag::NoGradGuard guard;
  const int qm = bb.mid_size(bb.image_size);
  ag::Var mid = mid_features(ag::Var(image.values()), 1, bb.image_size);
  ag::Var affinity;
  const bool dense = config_.variant.aggregation == AggregationMode::kDenseMatch;
  ag::Var agg = aggregate(mid, ag::Var(dense ? supports.support_cells : supports.bank), &affinity);

  RpnOutput rpn = rpn_forward(agg);
  std::vector<Box> proposals = propose(rpn, config_.rpn.post_nms_test);
  if (trace) {
    trace->mid = FeatureMap(qm, qm, mid.value());
    trace->aggregated = FeatureMap(qm, qm, agg.value());
    trace->assignment_affinity = affinity.defined() ? affinity.value() : Matrix();
    trace->objectness = rpn.objectness.value();
    trace->proposals = proposals;
  }
  if (proposals.empty()) return {};

  const Index r = static_cast<Index>(proposals.size());
  const Index c = static_cast<Index>(supports.roster.size());
  const Matrix roi_vec = roi_features(agg, proposals).value();
  Matrix rois(r * c, roi_vec.cols());
  Matrix protos(r * c, roi_vec.cols());
  for (Index j = 0; j < c; ++j) {
    rois.middleRows(j * r, r) = roi_vec;
    protos.middleRows(j * r, r) = supports.class_prototypes.row(j).replicate(r, 1);
  }
  HeadOutput out = head(fuse(ag::Var(rois), ag::Var(protos)));
  std::vector<Index> columns(supports.roster.begin(), supports.roster.end());
  columns.push_back(config_.num_classes);
  const Matrix prob = ag::softmax_rows(ag::gather_cols(out.logits, columns)).value();
  const Matrix& deltas = out.deltas.value();

  const double size = bb.image_size;
  std::vector<Detection> dets;
  for (Index j = 0; j < c; ++j) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (Index i = 0; i < r; ++i) {
      const double s = prob(j * r + i, j);
      if (s <= config_.head.score_threshold) continue;
      const double dl[4] = {deltas(j * r + i, 0), deltas(j * r + i, 1), deltas(j * r + i, 2),
                            deltas(j * r + i, 3)};
      Box b = clip_box(decode_box(proposals[static_cast<std::size_t>(i)], dl, kRoiBoxStds), size, size);
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(s);
    }
    for (std::size_t k : nms(boxes, scores, config_.head.nms_iou, boxes.size()))
      dets.push_back({boxes[k], supports.roster[static_cast<std::size_t>(j)], scores[k]});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (dets.size() > static_cast<std::size_t>(config_.head.max_detections))
    dets.resize(static_cast<std::size_t>(config_.head.max_detections));
  return dets;
}

std::vector<std::vector<Detection>> Detector::forward_test(const Episode& episode) const {
  std::map<ClassId, std::vector<FeatureMap>> crops;
  for (const auto& [id, shots] : episode.support_crops)
    for (const auto& s : shots) crops[id].push_back(s.image);
  const SupportEncoding enc = encode_supports(crops);
  std::vector<std::vector<Detection>> out;
  for (const auto& q : episode.query_images) out.push_back(detect(q.image, enc));
  return out;
}

}  // namespace fpd
