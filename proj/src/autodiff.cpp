#include "jsrl/autodiff.hpp"

#include <cmath>
#include <limits>

#include "jsrl/errors.hpp"

namespace jsrl::ad {

Var Tape::push(Mat value, std::vector<int> inputs, Backward back) {
  bool needs = false;
  for (int in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs && record_;
  if (node.needs_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Mat value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant_scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

Var Tape::param(const Parameter& p) {
  Node node;
  node.value = p.value;
  node.param = &p;
  node.needs_grad = record_;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  if (!record_) throw ContractViolation("backward on a non-recording tape");
  if (root.rows() != 1 || root.cols() != 1) throw ContractViolation("backward root must be a scalar");
  const double v = root.scalar();
  if (!std::isfinite(v)) throw TrainingError("non-finite loss value " + std::to_string(v));
  grad(root.id()).setConstant(seed);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, {ia}, [ia, s](Tape& t, const Mat& g) { t.grad(ia) += g * s; });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value().array() + s, {ia}, [ia](Tape& t, const Mat& g) { t.grad(ia) += g; });
}

Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw ContractViolation("mul_scalar: s must be 1x1");
  const int ia = a.id(), is = s.id();
  return a.tape()->push(a.value() * s.scalar(), {ia, is}, [ia, is](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g * t.value(is)(0, 0);
    if (t.needs_grad(is)) t.grad(is)(0, 0) += g.cwiseProduct(t.value(ia)).sum();
  });
}

Var add_row(Var a, Var b) {
  if (b.rows() != 1 || b.cols() != a.cols()) throw ContractViolation("add_row: bias shape mismatch");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value();
  out.rowwise() += b.value().row(0);
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
  });
}

Var mul_const(Var a, const Mat& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ContractViolation("mul_const: shape mismatch");
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseProduct(c), {ia}, [ia, c](Tape& t, const Mat& g) { t.grad(ia) += g.cwiseProduct(c); });
}

Var add_const(Var a, const Mat& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ContractViolation("add_const: shape mismatch");
  const int ia = a.id();
  return a.tape()->push(a.value() + c, {ia}, [ia](Tape& t, const Mat& g) { t.grad(ia) += g; });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, double s) { return scale(a, s); }
Var operator-(Var a) { return scale(a, -1.0); }

Var elu(Var a) {
  const int ia = a.id();
  Mat out = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, const Mat& g) {
    t.grad(ia) += g.cwiseProduct(t.value(ia).unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); }));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Mat out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), {ia}, [ia, io](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    t.grad(ia) += g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

Var tanh(Var a) {
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(a.value().array().tanh().matrix(), {ia}, [ia, io](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    t.grad(ia) += g.cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

Var leaky_relu(Var a, double slope) {
  const int ia = a.id();
  Mat out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape()->push(std::move(out), {ia}, [ia, slope](Tape& t, const Mat& g) {
    t.grad(ia) += g.cwiseProduct(t.value(ia).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; }));
  });
}

Var exp(Var a) {
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(a.value().array().exp().matrix(), {ia}, [ia, io](Tape& t, const Mat& g) {
    t.grad(ia) += g.cwiseProduct(t.value(io));
  });
}

Var log(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().log().matrix(), {ia}, [ia](Tape& t, const Mat& g) {
    t.grad(ia) += g.cwiseQuotient(t.value(ia));
  });
}

Var square(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().square().matrix(), {ia}, [ia](Tape& t, const Mat& g) {
    t.grad(ia) += 2.0 * g.cwiseProduct(t.value(ia));
  });
}

Var minimum(Var a, Var b) {
  check_same_shape(a, b, "minimum");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseMin(b.value()), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
    const Mat& va = t.value(ia);
    const Mat& vb = t.value(ib);
    // Ties route the gradient to the first argument.
    if (t.needs_grad(ia)) t.grad(ia) += (va.array() <= vb.array()).select(g, 0.0).matrix();
    if (t.needs_grad(ib)) t.grad(ib) += (va.array() <= vb.array()).select(0.0, g).matrix();
  });
}

Var clamp(Var a, double lo, double hi) {
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseMax(lo).cwiseMin(hi), {ia}, [ia, lo, hi](Tape& t, const Mat& g) {
    const Mat& v = t.value(ia);
    t.grad(ia) += ((v.array() >= lo) && (v.array() <= hi)).select(g, 0.0).matrix();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractViolation("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts[0].tape()->push(std::move(out), ids, [ids, widths](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.needs_grad(ids[i])) t.grad(ids[i]) += g.middleCols(c, widths[i]);
      c += widths[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractViolation("concat_rows: column mismatch");
    rows += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts[0].tape()->push(std::move(out), ids, [ids, heights](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.needs_grad(ids[i])) t.grad(ids[i]) += g.middleRows(r, heights[i]);
      r += heights[i];
    }
  });
}

Var gather_rows(Var a, const std::vector<int>& index) {
  const Mat& v = a.value();
  Mat out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= v.rows()) throw ContractViolation("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = v.row(index[r]);
  }
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, index](Tape& t, const Mat& g) {
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < index.size(); ++r) ga.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var pick(Var a, const std::vector<int>& rows, const std::vector<int>& cols) {
  if (rows.size() != cols.size()) throw ContractViolation("pick: index length mismatch");
  const Mat& v = a.value();
  Mat out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = v(rows[i], cols[i]);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, rows, cols](Tape& t, const Mat& g) {
    Mat& ga = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) ga(rows[i], cols[i]) += g(static_cast<Eigen::Index>(i), 0);
  });
}

Var sum(Var a) {
  const int ia = a.id();
  return a.tape()->push(Mat::Constant(1, 1, a.value().sum()), {ia}, [ia](Tape& t, const Mat& g) {
    t.grad(ia).array() += g(0, 0);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractViolation("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().rowwise().sum(), {ia}, [ia](Tape& t, const Mat& g) {
    t.grad(ia).colwise() += g.col(0);
  });
}

Var segment_sum(Var a, const std::vector<int>& seg, int num_segments) {
  const Mat& v = a.value();
  if (static_cast<Eigen::Index>(seg.size()) != v.rows()) throw ContractViolation("segment_sum: segment length mismatch");
  Mat out = Mat::Zero(num_segments, v.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) out.row(seg[r]) += v.row(static_cast<Eigen::Index>(r));
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, seg](Tape& t, const Mat& g) {
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) ga.row(static_cast<Eigen::Index>(r)) += g.row(seg[r]);
  });
}

Var segment_mean(Var a, const std::vector<int>& seg, int num_segments) {
  std::vector<double> counts(static_cast<std::size_t>(num_segments), 0.0);
  for (int s : seg) counts[static_cast<std::size_t>(s)] += 1.0;
  Var total = segment_sum(a, seg, num_segments);
  Mat inv(num_segments, total.cols());
  for (int s = 0; s < num_segments; ++s) inv.row(s).setConstant(counts[static_cast<std::size_t>(s)] > 0 ? 1.0 / counts[static_cast<std::size_t>(s)] : 0.0);
  return mul_const(total, inv);
}

namespace {

// Column-wise max per segment.
Mat segment_max(const Mat& v, const std::vector<int>& seg, int num_segments) {
  Mat mx = Mat::Constant(num_segments, v.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < seg.size(); ++r) mx.row(seg[r]) = mx.row(seg[r]).cwiseMax(v.row(static_cast<Eigen::Index>(r)));
  return mx;
}

}  // namespace

Var segment_softmax(Var a, const std::vector<int>& seg, int num_segments) {
  const Mat& v = a.value();
  if (static_cast<Eigen::Index>(seg.size()) != v.rows()) throw ContractViolation("segment_softmax: segment length mismatch");
  const Mat mx = segment_max(v, seg, num_segments);
  Mat out(v.rows(), v.cols());
  Mat denom = Mat::Zero(num_segments, v.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) {
    const auto ir = static_cast<Eigen::Index>(r);
    out.row(ir) = (v.row(ir) - mx.row(seg[r])).array().exp().matrix();
    denom.row(seg[r]) += out.row(ir);
  }
  for (std::size_t r = 0; r < seg.size(); ++r) {
    const auto ir = static_cast<Eigen::Index>(r);
    out.row(ir) = out.row(ir).cwiseQuotient(denom.row(seg[r]));
  }
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), {ia}, [ia, io, seg, num_segments](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    Mat dot = Mat::Zero(num_segments, y.cols());
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto ir = static_cast<Eigen::Index>(r);
      dot.row(seg[r]) += g.row(ir).cwiseProduct(y.row(ir));
    }
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto ir = static_cast<Eigen::Index>(r);
      ga.row(ir) += y.row(ir).cwiseProduct(g.row(ir) - dot.row(seg[r]));
    }
  });
}

Var segment_log_softmax(Var a, const std::vector<int>& seg, int num_segments) {
  const Mat& v = a.value();
  if (static_cast<Eigen::Index>(seg.size()) != v.rows()) throw ContractViolation("segment_log_softmax: segment length mismatch");
  const Mat mx = segment_max(v, seg, num_segments);
  Mat denom = Mat::Zero(num_segments, v.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) {
    const auto ir = static_cast<Eigen::Index>(r);
    denom.row(seg[r]) += (v.row(ir) - mx.row(seg[r])).array().exp().matrix();
  }
  Mat out(v.rows(), v.cols());
  for (std::size_t r = 0; r < seg.size(); ++r) {
    const auto ir = static_cast<Eigen::Index>(r);
    out.row(ir) = v.row(ir) - mx.row(seg[r]) - denom.row(seg[r]).array().log().matrix();
  }
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), {ia}, [ia, io, seg, num_segments](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    Mat gsum = Mat::Zero(num_segments, y.cols());
    for (std::size_t r = 0; r < seg.size(); ++r) gsum.row(seg[r]) += g.row(static_cast<Eigen::Index>(r));
    Mat& ga = t.grad(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto ir = static_cast<Eigen::Index>(r);
      ga.row(ir) += g.row(ir) - y.row(ir).array().exp().matrix().cwiseProduct(gsum.row(seg[r]));
    }
  });
}

Var softmax_rows(Var a) {
  const Mat& v = a.value();
  Mat out = (v.colwise() - v.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), {ia}, [ia, io](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(ia) += y.cwiseProduct(g - dot.replicate(1, g.cols()));
  });
}

Var log_softmax_rows(Var a) {
  const Mat& v = a.value();
  const Eigen::VectorXd mx = v.rowwise().maxCoeff();
  Mat shifted = v.colwise() - mx;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Mat out = shifted.colwise() - lse;
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), {ia}, [ia, io](Tape& t, const Mat& g) {
    const Mat& y = t.value(io);
    const Eigen::VectorXd gs = g.rowwise().sum();
    t.grad(ia) += g - (y.array().exp().colwise() * gs.array()).matrix();
  });
}

Var head_dot(Var x, Var a) {
  const Mat& xv = x.value();
  const Mat& av = a.value();
  const Eigen::Index heads = av.rows(), dh = av.cols();
  if (xv.cols() != heads * dh) throw ContractViolation("head_dot: width mismatch");
  Mat out(xv.rows(), heads);
  for (Eigen::Index h = 0; h < heads; ++h) out.col(h) = xv.middleCols(h * dh, dh) * av.row(h).transpose();
  const int ix = x.id(), ia = a.id();
  return x.tape()->push(std::move(out), {ix, ia}, [ix, ia, heads, dh](Tape& t, const Mat& g) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      if (t.needs_grad(ix)) t.grad(ix).middleCols(h * dh, dh).noalias() += g.col(h) * t.value(ia).row(h);
      if (t.needs_grad(ia)) t.grad(ia).row(h).noalias() += g.col(h).transpose() * t.value(ix).middleCols(h * dh, dh);
    }
  });
}

Var head_scale(Var x, Var w) {
  const Mat& xv = x.value();
  const Mat& wv = w.value();
  const Eigen::Index heads = wv.cols();
  if (wv.rows() != xv.rows() || heads == 0 || xv.cols() % heads != 0) throw ContractViolation("head_scale: shape mismatch");
  const Eigen::Index dh = xv.cols() / heads;
  Mat out(xv.rows(), xv.cols());
  for (Eigen::Index h = 0; h < heads; ++h)
    out.middleCols(h * dh, dh) = xv.middleCols(h * dh, dh).array().colwise() * wv.col(h).array();
  const int ix = x.id(), iw = w.id();
  return x.tape()->push(std::move(out), {ix, iw}, [ix, iw, heads, dh](Tape& t, const Mat& g) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      if (t.needs_grad(ix))
        t.grad(ix).middleCols(h * dh, dh).array() += g.middleCols(h * dh, dh).array().colwise() * t.value(iw).col(h).array();
      if (t.needs_grad(iw))
        t.grad(iw).col(h) += g.middleCols(h * dh, dh).cwiseProduct(t.value(ix).middleCols(h * dh, dh)).rowwise().sum();
    }
  });
}

}  // namespace jsrl::ad
