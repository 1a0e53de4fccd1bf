#pragma once

// Deliberately naive reference implementations for tests. Nothing here includes or links
// the library under test; inputs and outputs are plain Eigen matrices and std containers.

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace oracle {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Axis { kOverColumns, kOverRows };

/// out = softmax(scale * Q K^T) V with explicit loops. kOverColumns normalizes every row of
/// the logit matrix, kOverRows every column.
Mat naive_attention(const Mat& queries, const Mat& keys, const Mat& values, double scale, Axis axis);

/// Plain softmax of the logit matrix along the axis, from explicit loops.
Mat naive_softmax(const Mat& logits, Axis axis);

/// Central differences of f with respect to every entry of x.
Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& x, double step);

/// Per row: full descending sort and the sum of the first k entries.
std::vector<double> brute_topk_weights(const Mat& scores, int k);

/// Indices of the n largest weights, ties to the lower index, from a full sort.
std::vector<int> brute_select(const std::vector<double>& weights, int n);

/// sum_s softmax_s(w[i, s]) * P_s[i, :] with explicit exponentials.
Mat explicit_integration(const std::vector<Mat>& prototypes_per_shot, const Mat& weights);

struct NlfWeights {
  Mat f1_w, f1_b, f2_w, f2_b, f3_w, f3_b, agg_w, agg_b;
};

/// Fusion of one RoI vector with one prototype via element loops.
std::vector<double> naive_nlf(const std::vector<double>& roi, const std::vector<double>& proto,
                              const NlfWeights& w);

/// All-points AP from a list of hit/miss flags in score order: at every recall step, the
/// best precision at that recall or beyond times the recall increment.
double pr_integral(const std::vector<int>& hits_sorted_by_score, int ground_truth);

}  // namespace oracle
