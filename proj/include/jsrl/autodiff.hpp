#pragma once

// Tape-based reverse-mode differentiation over dense row-major-semantics
// matrices (rows are samples/nodes, columns are features).

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace jsrl::ad {

using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
  mutable Mat grad;  // accumulation buffer, written by Tape::backward

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With `record == false` no backward closures are stored (inference only).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var constant_scalar(double v);
  /// Leaf bound to `p`; backward() accumulates into p.grad.
  Var param(const Parameter& p);

  /// Reverse sweep from a 1x1 root with seed `seed`.
  void backward(Var root, double seed = 1.0);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  using Backward = std::function<void(Tape&, const Mat& upstream)>;
  Var push(Mat value, std::vector<int> inputs, Backward back);
  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Gradient accumulator of node `id`, zero-initialized on first use.
  Mat& grad(int id);

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    const Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }

// Linear algebra and elementwise arithmetic.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (R x C) * s (1 x 1 Var), broadcast.
Var mul_scalar(Var a, Var s);
/// a (R x C) + b (1 x C), broadcast over rows.
Var add_row(Var a, Var b);
/// Elementwise product with a constant matrix of the same shape.
Var mul_const(Var a, const Mat& c);
Var add_const(Var a, const Mat& c);
/// Value copy with no gradient path.
Var detach(Var a);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, double s);
Var operator-(Var a);

// Elementwise nonlinearities.
Var elu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var leaky_relu(Var a, double slope);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var minimum(Var a, Var b);
Var clamp(Var a, double lo, double hi);

// Shape and indexing.
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var a, const std::vector<int>& index);
/// out(i, 0) = a(rows[i], cols[i]).
Var pick(Var a, const std::vector<int>& rows, const std::vector<int>& cols);
Var sum(Var a);   // 1 x 1
Var mean(Var a);  // 1 x 1
Var row_sum(Var a);  // R x 1

// Segment (grouped-row) operations; `seg[r]` in [0, num_segments).
Var segment_sum(Var a, const std::vector<int>& seg, int num_segments);
Var segment_mean(Var a, const std::vector<int>& seg, int num_segments);
/// Column-wise softmax over the rows of each segment.
Var segment_softmax(Var a, const std::vector<int>& seg, int num_segments);
/// Column-wise log-softmax over the rows of each segment.
Var segment_log_softmax(Var a, const std::vector<int>& seg, int num_segments);

/// Per-row softmax / log-softmax across columns.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

// Multi-head helpers: columns of x are split into H contiguous blocks of width dh.
/// out(r, h) = sum_c x(r, h*dh + c) * a(h, c), with a of shape H x dh.
Var head_dot(Var x, Var a);
/// out(r, h*dh + c) = x(r, h*dh + c) * w(r, h), with w of shape R x H.
Var head_scale(Var x, Var w);

}  // namespace jsrl::ad
