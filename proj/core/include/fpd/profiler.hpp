#pragma once

#include "fpd/detector.hpp"

#include <string>
#include <vector>

/// Analytic multiply-accumulate and parameter counts. Nothing here runs a model; every
/// figure is operand arithmetic over layer shapes.
namespace fpd::profile {

/// How the dense cross-attention baseline builds keys and values.
enum class DenseForm {
  kProjection,  // linear key projections, raw cells as values (the implemented baseline)
  kEncoder,     // 3x3 key and value encoders on both branches (large-scale reference design)
};

struct AggregationDims {
  long long query_cells = 0;    // HW
  long long support_cells = 0;  // hw, per shot
  long long d = 0;
  long long d_prime = 0;
  long long classes = 0;  // c, classes per episode
  long long n = 0;
  long long n_bg = 0;
  long long key_width = 0;    // kEncoder only
  long long value_width = 0;  // kEncoder only
  DenseForm dense_form = DenseForm::kProjection;

  long long bank_rows() const { return n * classes + n_bg; }
  long long dense_rows() const { return classes * support_cells; }
};

/// Per query image, support-side encodings cached.
double ffa_assign_macs(const AggregationDims& a);
double dense_match_macs(const AggregationDims& a);
/// Once per class roster and shot: distillation of n prototypes per class.
double distill_macs(const AggregationDims& a);
double ffa_params(const AggregationDims& a, long long total_classes);
double dense_params(const AggregationDims& a);

struct ComponentCost {
  std::string name;
  double macs = 0;
  double params = 0;
};

struct VariantCost {
  std::string variant;
  double macs = 0;          // per query image
  double support_macs = 0;  // per class roster, amortized over query images
  double params = 0;
  std::vector<ComponentCost> components;
};

struct CostReport {
  std::string scale;
  AggregationDims dims;
  std::vector<VariantCost> variants;

  const VariantCost& get(const std::string& variant) const;
};

/// Desk-scale costs of the implemented detector for every variant.
CostReport desk_costs(const DetectorConfig& config, int episode_classes);

/// Symbolic full-scale costs: ResNet-101 C4 backbone on a 1333x800 query and 224x224
/// supports, d = 1024, 20 classes, 5 feature queries, 5 background prototypes, 300 RoIs.
CostReport paper_costs();

std::string report_to_json(const std::vector<CostReport>& reports);

}  // namespace fpd::profile
