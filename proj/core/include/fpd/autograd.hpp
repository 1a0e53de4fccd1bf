#pragma once

#include "fpd/tensor.hpp"
#include "fpd/types.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

/// Reverse-mode automatic differentiation over dense row-major matrices.
///
/// Every operation produces a Var holding its value and, when any input requires a
/// gradient, a closure that pushes the output gradient back into its inputs. Calling
/// backward() on a 1x1 Var walks the recorded graph in reverse topological order.
/// Intermediate nodes are released once the last Var referencing them goes away;
/// leaf parameters keep accumulating gradients until zero_grad().
namespace fpd::ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  bool input_needs_grad(std::size_t i) const { return inputs[i]->requires_grad; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Accumulated gradient, or zeros of the value's shape if nothing flowed in.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Seeds d(self)/d(self) = 1 and propagates. Requires a 1x1 value.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no graph and results never require grad.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. If no input requires a gradient the closure is dropped and the
/// result is a plain constant.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// ---- elementwise / linear algebra ----
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
/// Adds a 1 x C row to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
/// Multiplies a by a learnable 1x1 scalar.
Var scale_by(const Var& a, const Var& s);
Var relu(const Var& a);
/// Softmax independently over each row.
Var softmax_rows(const Var& a);
Var sum(const Var& a);
Var sum_all(std::span<const Var> terms);
Var mean_rows(const Var& a);
/// Mean over consecutive blocks of `group` rows: (G*group x C) -> (G x C).
Var group_mean_rows(const Var& a, Index group);

// ---- reshaping ----
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Row-major reshape; the element count must not change.
Var reshape(const Var& a, Index rows, Index cols);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var gather_cols(const Var& a, std::span<const Index> cols);

// ---- vision ----
struct ConvShape {
  int batch = 1;
  int height = 0;
  int width = 0;
};

int conv_out_size(int in, int kernel, int stride, int pad);

/// 2-D convolution over a batch of maps stacked as (B*H*W x Cin). The weight is
/// (k*k*Cin x Cout) with rows ordered [ky][kx][cin]; bias is 1 x Cout.
Var conv2d(const Var& x, const ConvShape& shape, const Var& weight, const Var& bias, int kernel,
           int stride, int pad);

/// Bilinear RoI Align (pixel-center aligned). Boxes are in image coordinates and mapped to
/// the (height x width) map by spatial_scale. Output is (R*out*out x C).
Var roi_align(const Var& x, int height, int width, std::span<const Box> boxes,
              double spatial_scale, int out_size, int sampling_ratio);

// ---- losses (all return 1x1) ----
/// Mean softmax cross-entropy; labels index columns of logits. Empty input gives 0.
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean binary cross-entropy on logits against {0,1} targets of the same shape.
Var sigmoid_bce(const Var& logits, const Matrix& targets);
/// Sum of smooth-L1 over all entries divided by normalizer.
Var smooth_l1(const Var& pred, const Matrix& target, double beta, double normalizer);

}  // namespace fpd::ag
