#include "fpd/autograd.hpp"

#include "fpd/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fpd::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m), requires_grad);
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar " + shape_string(value()));
  return value()(0, 0);
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("backward() needs a scalar, got " + shape_string(value()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  const bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), op, a.value(), "lhs", b.value(),
                "rhs");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_shape(a.cols() == b.rows(), "matmul", a.value(), "lhs", b.value(), "rhs");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad * B.transpose());
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(A.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt", a.value(), "lhs", b.value(), "rhs");
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad * B);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad.transpose() * A);
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(-self.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad.cwiseProduct(B));
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad.cwiseProduct(A));
  });
}

Var add_row(const Var& a, const Var& row) {
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), "matrix",
                row.value(), "row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    self.inputs[0]->accumulate(self.grad * s);
  });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scale_by needs a 1x1 scale, got " + shape_string(s.value()));
  const double k = s.value()(0, 0);
  return make_result(a.value() * k, {a, s}, [k](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad * k);
    if (self.input_needs_grad(1)) {
      Matrix g(1, 1);
      g(0, 0) = self.grad.cwiseProduct(self.inputs[0]->value).sum();
      self.inputs[1]->accumulate(g);
    }
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    self.inputs[0]->accumulate((x.array() > 0.0).select(self.grad, 0.0));
  });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix dot = self.grad.cwiseProduct(y).rowwise().sum();
    self.inputs[0]->accumulate(y.cwiseProduct(self.grad - dot.replicate(1, y.cols())));
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a}, [r, c](Node& self) {
    self.inputs[0]->accumulate(Matrix::Constant(r, c, self.grad(0, 0)));
  });
}

Var sum_all(std::span<const Var> terms) {
  Matrix out = Matrix::Zero(1, 1);
  std::vector<Var> inputs;
  for (const auto& t : terms) {
    if (t.rows() != 1 || t.cols() != 1) throw ShapeError("sum_all expects scalars");
    out(0, 0) += t.value()(0, 0);
    inputs.push_back(t);
  }
  return make_result(std::move(out), std::move(inputs), [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.input_needs_grad(i)) self.inputs[i]->accumulate(self.grad);
  });
}

Var mean_rows(const Var& a) { return group_mean_rows(a, a.rows()); }

Var group_mean_rows(const Var& a, Index group) {
  if (group <= 0 || a.rows() % group != 0)
    throw ShapeError("group_mean_rows: " + std::to_string(a.rows()) + " rows not divisible by " +
                     std::to_string(group));
  const Index groups = a.rows() / group;
  Matrix out(groups, a.cols());
  for (Index g = 0; g < groups; ++g)
    out.row(g) = a.value().middleRows(g * group, group).colwise().sum() / static_cast<double>(group);
  return make_result(std::move(out), {a}, [group, groups](Node& self) {
    Matrix g(groups * group, self.grad.cols());
    for (Index i = 0; i < groups; ++i)
      g.middleRows(i * group, group) =
          (self.grad.row(i) / static_cast<double>(group)).replicate(group, 1);
    self.inputs[0]->accumulate(g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    require_shape(p.rows() == rows, "concat_cols", parts[0].value(), "first", p.value(), "part");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()}, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.input_needs_grad(i))
        self.inputs[i]->accumulate(self.grad.middleCols(offsets[i], self.inputs[i]->value.cols()));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    require_shape(p.cols() == cols, "concat_rows", parts[0].value(), "first", p.value(), "part");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return make_result(std::move(out), {parts.begin(), parts.end()}, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.input_needs_grad(i))
        self.inputs[i]->accumulate(self.grad.middleRows(offsets[i], self.inputs[i]->value.rows()));
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size())
    throw ShapeError("reshape " + shape_string(a.value()) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& in = self.inputs[0]->value;
    self.inputs[0]->accumulate(Eigen::Map<const Matrix>(self.grad.data(), in.rows(), in.cols()));
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ShapeError("slice_rows out of range on " + shape_string(a.value()));
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
    g.middleRows(start, count) = self.grad;
    self.inputs[0]->accumulate(g);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ShapeError("slice_cols out of range on " + shape_string(a.value()));
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
    g.middleCols(start, count) = self.grad;
    self.inputs[0]->accumulate(g);
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    self.inputs[0]->accumulate(g);
  });
}

Var gather_cols(const Var& a, std::span<const Index> cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || cols[i] >= a.cols()) throw ShapeError("gather_cols index out of range");
    out.col(static_cast<Index>(i)) = a.value().col(cols[i]);
  }
  std::vector<Index> idx(cols.begin(), cols.end());
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.col(idx[i]) += self.grad.col(static_cast<Index>(i));
    self.inputs[0]->accumulate(g);
  });
}

int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

Matrix im2col(const Matrix& x, const ConvShape& s, int k, int stride, int pad, int oh, int ow) {
  const Index cin = x.cols();
  Matrix col = Matrix::Zero(static_cast<Index>(s.batch) * oh * ow, k * k * cin);
  for (int b = 0; b < s.batch; ++b) {
    const Index base = static_cast<Index>(b) * s.height * s.width;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index r = (static_cast<Index>(b) * oh + oy) * ow + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= s.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= s.width) continue;
            col.row(r).segment((ky * k + kx) * cin, cin) = x.row(base + static_cast<Index>(iy) * s.width + ix);
          }
        }
      }
    }
  }
  return col;
}

Matrix col2im(const Matrix& col, const ConvShape& s, Index cin, int k, int stride, int pad, int oh,
              int ow) {
  Matrix x = Matrix::Zero(static_cast<Index>(s.batch) * s.height * s.width, cin);
  for (int b = 0; b < s.batch; ++b) {
    const Index base = static_cast<Index>(b) * s.height * s.width;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Index r = (static_cast<Index>(b) * oh + oy) * ow + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= s.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= s.width) continue;
            x.row(base + static_cast<Index>(iy) * s.width + ix) += col.row(r).segment((ky * k + kx) * cin, cin);
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

Var conv2d(const Var& x, const ConvShape& shape, const Var& weight, const Var& bias, int kernel,
           int stride, int pad) {
  const Index cin = x.cols();
  if (x.rows() != static_cast<Index>(shape.batch) * shape.height * shape.width)
    throw ShapeError("conv2d: input has " + std::to_string(x.rows()) + " rows, shape implies " +
                     std::to_string(shape.batch * shape.height * shape.width));
  require_shape(weight.rows() == kernel * kernel * cin, "conv2d", x.value(), "input", weight.value(),
                "weight");
  require_shape(bias.rows() == 1 && bias.cols() == weight.cols(), "conv2d", weight.value(), "weight",
                bias.value(), "bias");
  const int oh = conv_out_size(shape.height, kernel, stride, pad);
  const int ow = conv_out_size(shape.width, kernel, stride, pad);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");

  auto col = std::make_shared<Matrix>(im2col(x.value(), shape, kernel, stride, pad, oh, ow));
  Matrix out = (*col) * weight.value();
  out.rowwise() += bias.value().row(0);
  return make_result(std::move(out), {x, weight, bias},
                     [col, shape, cin, kernel, stride, pad, oh, ow](Node& self) {
                       const auto& W = self.inputs[1]->value;
                       if (self.input_needs_grad(0)) {
                         Matrix dcol = self.grad * W.transpose();
                         self.inputs[0]->accumulate(col2im(dcol, shape, cin, kernel, stride, pad, oh, ow));
                       }
                       if (self.input_needs_grad(1)) self.inputs[1]->accumulate(col->transpose() * self.grad);
                       if (self.input_needs_grad(2)) self.inputs[2]->accumulate(self.grad.colwise().sum());
                     });
}

Var roi_align(const Var& x, int height, int width, std::span<const Box> boxes, double spatial_scale,
              int out_size, int sampling_ratio) {
  if (x.rows() != static_cast<Index>(height) * width)
    throw ShapeError("roi_align: map rows do not match height*width");
  struct Tap {
    Index src;
    double w;
  };
  const Index bins = static_cast<Index>(out_size) * out_size;
  const Index n_out = static_cast<Index>(boxes.size()) * bins;
  auto taps = std::make_shared<std::vector<std::vector<Tap>>>(static_cast<std::size_t>(n_out));
  const double inv = 1.0 / (sampling_ratio * sampling_ratio);

  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const Box& b = boxes[r];
    const double x0 = b.x1 * spatial_scale - 0.5;
    const double y0 = b.y1 * spatial_scale - 0.5;
    const double bw = (b.x2 - b.x1) * spatial_scale / out_size;
    const double bh = (b.y2 - b.y1) * spatial_scale / out_size;
    for (int ph = 0; ph < out_size; ++ph) {
      for (int pw = 0; pw < out_size; ++pw) {
        auto& t = (*taps)[r * bins + static_cast<std::size_t>(ph * out_size + pw)];
        for (int iy = 0; iy < sampling_ratio; ++iy) {
          double y = y0 + (ph + (iy + 0.5) / sampling_ratio) * bh;
          for (int ix = 0; ix < sampling_ratio; ++ix) {
            double xx = x0 + (pw + (ix + 0.5) / sampling_ratio) * bw;
            if (y < -1.0 || y > height || xx < -1.0 || xx > width) continue;
            double yc = std::clamp(y, 0.0, static_cast<double>(height - 1));
            double xc = std::clamp(xx, 0.0, static_cast<double>(width - 1));
            const int ylo = static_cast<int>(std::floor(yc));
            const int xlo = static_cast<int>(std::floor(xc));
            const int yhi = std::min(ylo + 1, height - 1);
            const int xhi = std::min(xlo + 1, width - 1);
            const double ly = yc - ylo, lx = xc - xlo;
            const double hy = 1.0 - ly, hx = 1.0 - lx;
            t.push_back({static_cast<Index>(ylo) * width + xlo, hy * hx * inv});
            t.push_back({static_cast<Index>(ylo) * width + xhi, hy * lx * inv});
            t.push_back({static_cast<Index>(yhi) * width + xlo, ly * hx * inv});
            t.push_back({static_cast<Index>(yhi) * width + xhi, ly * lx * inv});
          }
        }
      }
    }
  }

  Matrix out = Matrix::Zero(n_out, x.cols());
  for (Index i = 0; i < n_out; ++i)
    for (const auto& tap : (*taps)[static_cast<std::size_t>(i)]) out.row(i) += tap.w * x.value().row(tap.src);

  return make_result(std::move(out), {x}, [taps](Node& self) {
    Matrix g = Matrix::Zero(self.inputs[0]->value.rows(), self.inputs[0]->value.cols());
    for (std::size_t i = 0; i < taps->size(); ++i)
      for (const auto& tap : (*taps)[i]) g.row(tap.src) += tap.w * self.grad.row(static_cast<Index>(i));
    self.inputs[0]->accumulate(g);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     shape_string(logits.value()));
  const Index n = logits.rows();
  if (n == 0) return Var::scalar(0.0);
  Matrix prob(n, logits.cols());
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols()) throw ValidationError("cross_entropy: label out of range");
    const double m = logits.value().row(r).maxCoeff();
    prob.row(r) = (logits.value().row(r).array() - m).exp().matrix();
    const double z = prob.row(r).sum();
    prob.row(r) /= z;
    loss += -(logits.value()(r, y) - m - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result(std::move(out), {logits}, [prob = std::move(prob), ys](Node& self) {
    Matrix g = prob;
    for (std::size_t r = 0; r < ys.size(); ++r) g(static_cast<Index>(r), ys[r]) -= 1.0;
    g *= self.grad(0, 0) / static_cast<double>(ys.size());
    self.inputs[0]->accumulate(g);
  });
}

Var sigmoid_bce(const Var& logits, const Matrix& targets) {
  require_shape(logits.rows() == targets.rows() && logits.cols() == targets.cols(), "sigmoid_bce",
                logits.value(), "logits", targets, "targets");
  const Index n = logits.value().size();
  if (n == 0) return Var::scalar(0.0);
  const auto& z = logits.value().array();
  // log(1 + exp(z)) - t*z, written to stay finite for large |z|.
  const double loss = ((z.max(0.0) - z * targets.array() + (-z.abs()).exp().log1p()).sum()) /
                      static_cast<double>(n);
  Matrix out(1, 1);
  out(0, 0) = loss;
  return make_result(std::move(out), {logits}, [targets, n](Node& self) {
    const auto& z = self.inputs[0]->value.array();
    Matrix sig = (1.0 / (1.0 + (-z).exp())).matrix();
    self.inputs[0]->accumulate((sig - targets) * (self.grad(0, 0) / static_cast<double>(n)));
  });
}

Var smooth_l1(const Var& pred, const Matrix& target, double beta, double normalizer) {
  require_shape(pred.rows() == target.rows() && pred.cols() == target.cols(), "smooth_l1",
                pred.value(), "pred", target, "target");
  if (pred.rows() == 0) return Var::scalar(0.0);
  Matrix diff = pred.value() - target;
  const auto a = diff.array().abs();
  const double loss = (a < beta).select(0.5 * a.square() / beta, a - 0.5 * beta).sum() / normalizer;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return make_result(std::move(out), {pred}, [diff = std::move(diff), beta, normalizer](Node& self) {
    Matrix g = diff.unaryExpr([beta](double d) {
      return std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
    });
    self.inputs[0]->accumulate(g * (self.grad(0, 0) / normalizer));
  });
}

}  // namespace fpd::ag
