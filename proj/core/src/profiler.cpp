#include "fpd/profiler.hpp"

#include "fpd/error.hpp"

#include <json.hpp>

namespace fpd::profile {

namespace {

double conv_macs(double out_h, double out_w, double k, double cin, double cout) {
  return out_h * out_w * k * k * cin * cout;
}

double conv_params(double k, double cin, double cout) { return k * k * cin * cout + cout; }

double linear_params(double in, double out) { return in * out + out; }

int down(int size, int stride) { return (size + stride - 1) / stride; }

/// Bottleneck residual stage: blocks of 1x1 (mid) -> 3x3 (mid) -> 1x1 (out), first block
/// strided with a projection shortcut.
ComponentCost bottleneck_stage(const std::string& name, int blocks, double in, double mid, double out,
                               double out_h, double out_w) {
  ComponentCost c{name, 0, 0};
  for (int b = 0; b < blocks; ++b) {
    const double cin = b == 0 ? in : out;
    c.macs += conv_macs(out_h, out_w, 1, cin, mid) + conv_macs(out_h, out_w, 3, mid, mid) +
              conv_macs(out_h, out_w, 1, mid, out);
    c.params += conv_params(1, cin, mid) + conv_params(3, mid, mid) + conv_params(1, mid, out);
    if (b == 0) {
      c.macs += conv_macs(out_h, out_w, 1, in, out);
      c.params += conv_params(1, in, out);
    }
  }
  return c;
}

double nlf_macs_per_pair(double wide) {
  return wide * wide * 2 + 2 * wide * wide + 4 * wide * wide;
}

double nlf_param_count(double wide) {
  return linear_params(wide, wide) * 2 + linear_params(2 * wide, wide) + linear_params(4 * wide, wide);
}

struct Common {
  std::vector<ComponentCost> shared;  // backbone, RPN, RoI stage, head
  double support_backbone = 0;        // per support crop
  double rois = 0;
  double wide = 0;
  double head_pair_macs = 0;
};

VariantCost assemble(const std::string& variant, const Common& common, const AggregationDims& dims,
                     long long total_classes) {
  const Variant v = Variant::parse(variant);
  VariantCost out{variant, 0, 0, 0, common.shared};
  const double pairs = common.rois * static_cast<double>(dims.classes);
  if (v.fusion == FusionMode::kNonLinear)
    out.components.push_back({"fusion.nlf", pairs * nlf_macs_per_pair(common.wide), nlf_param_count(common.wide)});
  else
    out.components.push_back({"fusion.multiply", pairs * common.wide, 0});
  out.components.push_back({"head.pairs", pairs * common.head_pair_macs, 0});
  if (v.aggregation == AggregationMode::kPrototype)
    out.components.push_back({"aggregation.ffa", ffa_assign_macs(dims), ffa_params(dims, total_classes)});
  if (v.aggregation == AggregationMode::kDenseMatch)
    out.components.push_back({"aggregation.dense", dense_match_macs(dims), dense_params(dims)});
  for (const auto& c : out.components) {
    out.macs += c.macs;
    out.params += c.params;
  }
  out.support_macs = common.support_backbone * static_cast<double>(dims.classes);
  if (v.aggregation == AggregationMode::kPrototype) out.support_macs += distill_macs(dims);
  if (v.aggregation == AggregationMode::kDenseMatch && dims.dense_form == DenseForm::kEncoder)
    out.support_macs += static_cast<double>(dims.dense_rows()) * 9.0 * dims.d *
                        (dims.key_width + dims.value_width);
  return out;
}

}  // namespace

double ffa_assign_macs(const AggregationDims& a) {
  const double hw = a.query_cells, b = a.bank_rows(), d = a.d, dp = a.d_prime;
  // query projection, bank projection, logits, attended sum, gated residual
  return hw * d * dp + b * d * dp + hw * b * dp + hw * b * d + hw * d;
}

double dense_match_macs(const AggregationDims& a) {
  const double hw = a.query_cells, s = a.dense_rows(), d = a.d, dp = a.d_prime;
  if (a.dense_form == DenseForm::kProjection)
    return hw * d * dp + s * d * dp + hw * s * dp + hw * s * d + hw * d;
  const double kw = a.key_width, vw = a.value_width;
  // query key/value encoders, logits, attended support values, fusion back to d channels
  return hw * 9 * d * (kw + vw) + hw * s * kw + hw * s * vw + hw * vw * d;
}

double distill_macs(const AggregationDims& a) {
  const double hw = a.support_cells, d = a.d, dp = a.d_prime, n = a.n, c = a.classes;
  return c * (hw * d * dp + n * hw * dp + n * hw * d + n * d);
}

double ffa_params(const AggregationDims& a, long long total_classes) {
  const double d = a.d, dp = a.d_prime;
  return static_cast<double>(total_classes) * a.n * dp + 2 * d * dp +
         static_cast<double>(total_classes) * d + static_cast<double>(a.n_bg) * d + 1;
}

double dense_params(const AggregationDims& a) {
  const double d = a.d, dp = a.d_prime;
  if (a.dense_form == DenseForm::kProjection) return 2 * d * dp + 1;
  const double kw = a.key_width, vw = a.value_width;
  return 2 * (conv_params(3, d, kw) + conv_params(3, d, vw)) + linear_params(vw, d);
}

const VariantCost& CostReport::get(const std::string& variant) const {
  for (const auto& v : variants)
    if (v.variant == variant) return v;
  throw ValidationError("cost report has no variant " + variant);
}

CostReport desk_costs(const DetectorConfig& config, int episode_classes) {
  config.validate();
  const auto& bb = config.backbone;
  const double d = bb.d, wide = 2.0 * bb.d;
  Common common;
  common.wide = wide;
  common.rois = config.rpn.post_nms_test;

  ComponentCost backbone{"backbone.mid", 0, 0};
  double cin = 3;
  int size = bb.image_size, ssize = bb.support_size;
  for (const auto& st : bb.mid_stages) {
    size = ag::conv_out_size(size, 3, st.stride, 1);
    ssize = ag::conv_out_size(ssize, 3, st.stride, 1);
    backbone.macs += conv_macs(size, size, 3, cin, st.width);
    common.support_backbone += conv_macs(ssize, ssize, 3, cin, st.width);
    backbone.params += conv_params(3, cin, st.width);
    cin = st.width;
  }
  const int high_support = ag::conv_out_size(ssize, 3, bb.high_stage.stride, 1);
  common.support_backbone += conv_macs(high_support, high_support, 3, d, wide);
  const double cells = static_cast<double>(size) * size;
  const double a = config.rpn.anchors_per_cell();
  ComponentCost rpn{"rpn", conv_macs(size, size, 3, d, d) + cells * d * 5 * a,
                    conv_params(3, d, d) + linear_params(d, 5 * a)};
  const int r = config.head.roi_size;
  const int t = ag::conv_out_size(r, 3, bb.high_stage.stride, 1);
  ComponentCost roi{"roi.high_stage",
                    common.rois * (4.0 * r * r * d + conv_macs(t, t, 3, d, wide)),
                    conv_params(3, d, wide)};
  const double classes = config.num_classes;
  ComponentCost head{"head", 0,
                     linear_params(wide, wide) + linear_params(wide, classes + 1) + linear_params(wide, 4) +
                         linear_params(wide, classes)};
  common.head_pair_macs = wide * wide + wide * (episode_classes + 1) + wide * 4;
  common.shared = {backbone, rpn, roi, head};

  CostReport report;
  report.scale = "desk";
  report.dims.query_cells = static_cast<long long>(cells);
  report.dims.support_cells = static_cast<long long>(ssize) * ssize;
  report.dims.d = bb.d;
  report.dims.d_prime = config.d_prime();
  report.dims.classes = episode_classes;
  report.dims.n = config.ffa.n_queries;
  report.dims.n_bg = config.n_background();
  report.dims.dense_form = DenseForm::kProjection;
  for (const char* v : {"baseline", "bcas", "bcas+nlf", "full", "dense-match"})
    report.variants.push_back(assemble(v, common, report.dims, config.num_classes));
  return report;
}

CostReport paper_costs() {
  const int qh = 800, qw = 1333, support = 224;
  const double d = 1024, wide = 2048;
  const int classes = 20;
  Common common;
  common.wide = wide;
  common.rois = 300;

  auto stem_and_c4 = [](int h, int w, std::vector<ComponentCost>& parts) {
    const int h1 = down(h, 2), w1 = down(w, 2);
    parts.push_back({"backbone.stem", conv_macs(h1, w1, 7, 3, 64), conv_params(7, 3, 64)});
    const int h2 = down(h1, 2), w2 = down(w1, 2);
    parts.push_back(bottleneck_stage("backbone.res2", 3, 64, 64, 256, h2, w2));
    const int h3 = down(h2, 2), w3 = down(w2, 2);
    parts.push_back(bottleneck_stage("backbone.res3", 4, 256, 128, 512, h3, w3));
    const int h4 = down(h3, 2), w4 = down(w3, 2);
    parts.push_back(bottleneck_stage("backbone.res4", 23, 512, 256, 1024, h4, w4));
    return std::pair{h4, w4};
  };
  std::vector<ComponentCost> backbone;
  const auto [h4, w4] = stem_and_c4(qh, qw, backbone);
  std::vector<ComponentCost> support_parts;
  const auto [sh, sw] = stem_and_c4(support, support, support_parts);
  const ComponentCost res5_support = bottleneck_stage("support.res5", 3, 1024, 512, 2048, 7, 7);
  for (const auto& p : support_parts) common.support_backbone += p.macs;
  common.support_backbone += res5_support.macs;

  const double cells = static_cast<double>(h4) * w4;
  const double anchors = 15;
  ComponentCost rpn{"rpn", conv_macs(h4, w4, 3, d, d) + cells * d * 5 * anchors,
                    conv_params(3, d, d) + linear_params(d, 5 * anchors)};
  ComponentCost res5 = bottleneck_stage("roi.res5", 3, 1024, 512, 2048, 7, 7);
  res5.macs = common.rois * (res5.macs + 14.0 * 14 * 4 * d);
  ComponentCost head{"head", 0,
                     linear_params(wide, classes + 1) + linear_params(wide, 4 * classes) +
                         linear_params(wide, classes)};
  common.head_pair_macs = wide * (classes + 1) + wide * 4 * classes;
  common.shared = backbone;
  common.shared.push_back(rpn);
  common.shared.push_back(res5);
  common.shared.push_back(head);

  CostReport report;
  report.scale = "paper";
  report.dims.query_cells = static_cast<long long>(cells);
  report.dims.support_cells = static_cast<long long>(sh) * sw;
  report.dims.d = 1024;
  report.dims.d_prime = 1024;
  report.dims.classes = classes;
  report.dims.n = 5;
  report.dims.n_bg = 5;
  report.dims.key_width = 128;
  report.dims.value_width = 512;
  report.dims.dense_form = DenseForm::kEncoder;
  for (const char* v : {"baseline", "bcas", "bcas+nlf", "full", "dense-match"})
    report.variants.push_back(assemble(v, common, report.dims, classes));
  return report;
}

std::string report_to_json(const std::vector<CostReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j;
    j["scale"] = r.scale;
    j["dims"] = {{"query_cells", r.dims.query_cells}, {"support_cells", r.dims.support_cells},
                 {"d", r.dims.d},                     {"d_prime", r.dims.d_prime},
                 {"classes", r.dims.classes},         {"n", r.dims.n},
                 {"n_bg", r.dims.n_bg},               {"bank_rows", r.dims.bank_rows()},
                 {"dense_rows", r.dims.dense_rows()}};
    for (const auto& v : r.variants) {
      nlohmann::json vj;
      vj["macs"] = v.macs;
      vj["gmacs"] = v.macs / 1e9;
      vj["support_macs"] = v.support_macs;
      vj["params"] = v.params;
      vj["params_millions"] = v.params / 1e6;
      for (const auto& c : v.components) vj["components"][c.name] = {{"macs", c.macs}, {"params", c.params}};
      j["variants"][v.variant] = vj;
    }
    out.push_back(j);
  }
  return out.dump(2) + "\n";
}

}  // namespace fpd::profile
