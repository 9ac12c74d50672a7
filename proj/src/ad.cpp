#include "hiersoc/ad.hpp"

#include <cmath>
#include <utility>

#include "hiersoc/nn.hpp"

namespace hiersoc::ad {

const Mat& Var::value() const { return tape->node(id).value; }

double Var::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var::scalar: node is not 1x1");
  return v(0, 0);
}

Var Tape::constant(Mat value) { return make_node(std::move(value), false, {}); }

Var Tape::input(Mat value) { return make_node(std::move(value), true, {}); }

Var Tape::param(nn::Parameter& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end() && nodes_[it->second].requires_grad) return Var{this, it->second};
  Var v = make_node(p.value, true, {});
  param_leaves_.emplace_back(&p, v.id);
  leaf_cache_[&p] = v.id;
  return v;
}

Var Tape::frozen(const nn::Parameter& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end() && !nodes_[it->second].requires_grad) return Var{this, it->second};
  return make_node(p.value, false, {});
}

Var Tape::make_node(Mat value, bool requires_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = g;
    n.grad_ready = true;
  } else {
    n.grad += g;
  }
}

const Mat& Tape::grad(const Var& v) const {
  static const Mat empty;
  const Node& n = nodes_[v.id];
  return n.grad_ready ? n.grad : empty;
}

void Tape::backward(const Var& loss) {
  if (loss.tape != this) throw ShapeError("backward: loss lives on a different tape");
  const Node& ln = nodes_[loss.id];
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw ShapeError("backward: loss must be a 1x1 node");
  accumulate(loss.id, Mat::Ones(1, 1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad_ready && n.backprop) n.backprop();
  }
  for (auto& [p, id] : param_leaves_) {
    Node& n = nodes_[id];
    if (!n.grad_ready) continue;
    if (p->grad.size() == 0) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    p->grad += n.grad;
  }
}

namespace {

bool needs(const Var& v) { return v.tape->node(v.id).requires_grad; }

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw ShapeError("op: operands on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions mismatch");
  Tape& t = *a.tape;
  Mat v = a.value() * b.value();
  bool rg = needs(a) || needs(b);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, b, out]() {
    const Mat& g = t.node(out.id).grad;
    if (t.node(a.id).requires_grad) t.accumulate(a.id, g * b.value().transpose());
    if (t.node(b.id).requires_grad) t.accumulate(b.id, a.value().transpose() * g);
  };
  return out;
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
  Tape& t = *a.tape;
  Mat v = a.value() + b.value();
  bool rg = needs(a) || needs(b);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, b, out]() {
    const Mat& g = t.node(out.id).grad;
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  };
  return out;
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub: shape mismatch");
  Tape& t = *a.tape;
  Mat v = a.value() - b.value();
  bool rg = needs(a) || needs(b);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, b, out]() {
    const Mat& g = t.node(out.id).grad;
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  };
  return out;
}

Var cmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("cmul: shape mismatch");
  Tape& t = *a.tape;
  Mat v = a.value().cwiseProduct(b.value());
  bool rg = needs(a) || needs(b);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, b, out]() {
    const Mat& g = t.node(out.id).grad;
    if (t.node(a.id).requires_grad) t.accumulate(a.id, g.cwiseProduct(b.value()));
    if (t.node(b.id).requires_grad) t.accumulate(b.id, g.cwiseProduct(a.value()));
  };
  return out;
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Mat v = a.value() * s;
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, s]() { t.accumulate(a.id, t.node(out.id).grad * s); };
  return out;
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Mat v = a.value().array() + s;
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() { t.accumulate(a.id, t.node(out.id).grad); };
  return out;
}

Var add_rowvec(Var x, Var row) {
  check_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw ShapeError("add_rowvec: bias must be 1 x C");
  Tape& t = *x.tape;
  Mat v = x.value();
  v.rowwise() += Eigen::RowVectorXd(row.value().row(0));
  bool rg = needs(x) || needs(row);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, x, row, out]() {
    const Mat& g = t.node(out.id).grad;
    t.accumulate(x.id, g);
    if (t.node(row.id).requires_grad) t.accumulate(row.id, g.colwise().sum());
  };
  return out;
}

Var linear(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  if (x.cols() != w.rows()) throw ShapeError("linear: input/weight dimension mismatch");
  if (b.rows() != 1 || b.cols() != w.cols()) throw ShapeError("linear: bias must be 1 x out");
  Tape& t = *x.tape;
  Mat v = x.value() * w.value();
  v.rowwise() += Eigen::RowVectorXd(b.value().row(0));
  bool rg = needs(x) || needs(w) || needs(b);
  if (!rg) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, x, w, b, out]() {
    const Mat& g = t.node(out.id).grad;
    if (t.node(x.id).requires_grad) t.accumulate(x.id, g * w.value().transpose());
    if (t.node(w.id).requires_grad) t.accumulate(w.id, x.value().transpose() * g);
    if (t.node(b.id).requires_grad) t.accumulate(b.id, g.colwise().sum());
  };
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty list");
  Tape& t = *parts.front().tape;
  int rows = 0;
  const int cols = parts.front().cols();
  bool rg = false;
  for (const Var& p : parts) {
    check_same_tape(parts.front(), p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
    rg = rg || needs(p);
  }
  Mat v(rows, cols);
  int at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  if (!rg) return t.constant(std::move(v));
  std::vector<Var> saved = parts;
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, saved, out]() {
    const Mat& g = t.node(out.id).grad;
    int at = 0;
    for (const Var& p : saved) {
      t.accumulate(p.id, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  };
  return out;
}

Var slice_rows(Var a, int start, int count) {
  if (start < 0 || count <= 0 || start + count > a.rows())
    throw ShapeError("slice_rows: range out of bounds");
  Tape& t = *a.tape;
  Mat v = a.value().middleRows(start, count);
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, start, count]() {
    Mat g = Mat::Zero(a.rows(), a.cols());
    g.middleRows(start, count) = t.node(out.id).grad;
    t.accumulate(a.id, g);
  };
  return out;
}

Var slice_cols(Var a, int start, int count) {
  if (start < 0 || count <= 0 || start + count > a.cols())
    throw ShapeError("slice_cols: range out of bounds");
  Tape& t = *a.tape;
  Mat v = a.value().middleCols(start, count);
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, start, count]() {
    Mat g = Mat::Zero(a.rows(), a.cols());
    g.middleCols(start, count) = t.node(out.id).grad;
    t.accumulate(a.id, g);
  };
  return out;
}

Var gather_rows(Var a, std::vector<int> indices) {
  Tape& t = *a.tape;
  Mat v(static_cast<int>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    v.row(static_cast<int>(i)) = a.value().row(indices[i]);
  }
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, idx = std::move(indices)]() {
    const Mat& g = t.node(out.id).grad;
    Mat ga = Mat::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<int>(i));
    t.accumulate(a.id, ga);
  };
  return out;
}

Var mean_pool_rows(Var a, int block) {
  if (block <= 0 || a.rows() % block != 0)
    throw ShapeError("mean_pool_rows: block must divide row count");
  Tape& t = *a.tape;
  const int segs = a.rows() / block;
  Mat v(segs, a.cols());
  for (int s = 0; s < segs; ++s) v.row(s) = a.value().middleRows(s * block, block).colwise().mean();
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, block, segs]() {
    const Mat& g = t.node(out.id).grad;
    Mat ga(a.rows(), a.cols());
    for (int s = 0; s < segs; ++s)
      ga.middleRows(s * block, block) = (g.row(s) / block).replicate(block, 1);
    t.accumulate(a.id, ga);
  };
  return out;
}

Var cumsum_rows(Var a, int block) {
  if (block <= 0 || a.rows() % block != 0)
    throw ShapeError("cumsum_rows: block must divide row count");
  Tape& t = *a.tape;
  Mat v = a.value();
  for (int s = 0; s < a.rows(); s += block)
    for (int r = 1; r < block; ++r) v.row(s + r) += v.row(s + r - 1);
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out, block]() {
    Mat g = t.node(out.id).grad;
    for (int s = 0; s < g.rows(); s += block)
      for (int r = block - 2; r >= 0; --r) g.row(s + r) += g.row(s + r + 1);
    t.accumulate(a.id, g);
  };
  return out;
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  Mat v(1, 1);
  v(0, 0) = a.value().mean();
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const double g = t.node(out.id).grad(0, 0);
    t.accumulate(a.id, Mat::Constant(a.rows(), a.cols(), g / (a.rows() * a.cols())));
  };
  return out;
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const double g = t.node(out.id).grad(0, 0);
    t.accumulate(a.id, Mat::Constant(a.rows(), a.cols(), g));
  };
  return out;
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Mat v = a.value().cwiseMax(0.0);
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const Mat& g = t.node(out.id).grad;
    Mat mask = (a.value().array() > 0.0).cast<double>();
    t.accumulate(a.id, g.cwiseProduct(mask));
  };
  return out;
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Mat v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const Mat& g = t.node(out.id).grad;
    Mat d = a.value().unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return cdf + x * pdf;
    });
    t.accumulate(a.id, g.cwiseProduct(d));
  };
  return out;
}

Var logistic(Var a) {
  Tape& t = *a.tape;
  Mat v = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const Mat& g = t.node(out.id).grad;
    const Mat& y = t.node(out.id).value;
    t.accumulate(a.id, g.cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y)));
  };
  return out;
}

Var log_elem(Var a) {
  Tape& t = *a.tape;
  Mat v = a.value().array().log();
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() {
    const Mat& g = t.node(out.id).grad;
    t.accumulate(a.id, g.cwiseQuotient(a.value()));
  };
  return out;
}

Var one_minus(Var a) {
  Tape& t = *a.tape;
  Mat v = (1.0 - a.value().array()).matrix();
  if (!needs(a)) return t.constant(std::move(v));
  Var out = t.make_node(std::move(v), true, {});
  t.node(out.id).backprop = [&t, a, out]() { t.accumulate(a.id, -t.node(out.id).grad); };
  return out;
}

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var attention(Var q, Var k, Var v, int q_block, int kv_block, int heads) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  const int d = q.cols();
  if (k.cols() != d || v.cols() != d) throw ShapeError("attention: column dims must match");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: heads must divide model dim");
  if (q_block <= 0 || q.rows() % q_block != 0) throw ShapeError("attention: bad q_block");
  if (kv_block <= 0 || k.rows() % kv_block != 0) throw ShapeError("attention: bad kv_block");
  if (k.rows() != v.rows()) throw ShapeError("attention: k/v row mismatch");
  const int segs = q.rows() / q_block;
  if (k.rows() / kv_block != segs) throw ShapeError("attention: segment count mismatch");

  Tape& t = *q.tape;
  const int dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Per (segment, head) softmax weights saved for backward.
  auto weights = std::make_shared<std::vector<Mat>>();
  weights->reserve(static_cast<std::size_t>(segs) * heads);

  Mat out_v(q.rows(), d);
  for (int s = 0; s < segs; ++s) {
    for (int h = 0; h < heads; ++h) {
      auto Qh = q.value().block(s * q_block, h * dh, q_block, dh);
      auto Kh = k.value().block(s * kv_block, h * dh, kv_block, dh);
      auto Vh = v.value().block(s * kv_block, h * dh, kv_block, dh);
      Mat scores = (Qh * Kh.transpose()) * sc;
      for (int r = 0; r < scores.rows(); ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out_v.block(s * q_block, h * dh, q_block, dh) = scores * Vh;
      weights->push_back(std::move(scores));
    }
  }

  bool rg = needs(q) || needs(k) || needs(v);
  if (!rg) return t.constant(std::move(out_v));
  Var out = t.make_node(std::move(out_v), true, {});
  t.node(out.id).backprop = [&t, q, k, v, out, q_block, kv_block, heads, dh, sc, segs, weights]() {
    const Mat& g = t.node(out.id).grad;
    Mat gq = Mat::Zero(q.rows(), q.cols());
    Mat gk = Mat::Zero(k.rows(), k.cols());
    Mat gv = Mat::Zero(v.rows(), v.cols());
    for (int s = 0; s < segs; ++s) {
      for (int h = 0; h < heads; ++h) {
        const Mat& A = (*weights)[static_cast<std::size_t>(s) * heads + h];
        auto Qh = q.value().block(s * q_block, h * dh, q_block, dh);
        auto Kh = k.value().block(s * kv_block, h * dh, kv_block, dh);
        auto Vh = v.value().block(s * kv_block, h * dh, kv_block, dh);
        auto gO = g.block(s * q_block, h * dh, q_block, dh);
        gv.block(s * kv_block, h * dh, kv_block, dh) += A.transpose() * gO;
        Mat dA = gO * Vh.transpose();
        Eigen::VectorXd rowdot = (dA.cwiseProduct(A)).rowwise().sum();
        Mat dS = A.cwiseProduct(dA.colwise() - rowdot);
        gq.block(s * q_block, h * dh, q_block, dh) += dS * Kh * sc;
        gk.block(s * kv_block, h * dh, kv_block, dh) += dS.transpose() * Qh * sc;
      }
    }
    if (t.node(q.id).requires_grad) t.accumulate(q.id, gq);
    if (t.node(k.id).requires_grad) t.accumulate(k.id, gk);
    if (t.node(v.id).requires_grad) t.accumulate(v.id, gv);
  };
  return out;
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  const int c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
    throw ShapeError("layer_norm: gain/bias must be 1 x C");
  Tape& t = *x.tape;

  auto xhat = std::make_shared<Mat>(x.rows(), c);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  Mat out_v(x.rows(), c);
  for (int r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    Eigen::RowVectorXd centered = x.value().row(r).array() - mu;
    const double var = centered.squaredNorm() / c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = centered * is;
    out_v.row(r) =
        (xhat->row(r).cwiseProduct(gain.value().row(0))) + bias.value().row(0);
  }
  bool rg = needs(x) || needs(gain) || needs(bias);
  if (!rg) return t.constant(std::move(out_v));
  Var out = t.make_node(std::move(out_v), true, {});
  t.node(out.id).backprop = [&t, x, gain, bias, out, xhat, inv_std, c]() {
    const Mat& g = t.node(out.id).grad;
    if (t.node(gain.id).requires_grad) t.accumulate(gain.id, (g.cwiseProduct(*xhat)).colwise().sum());
    if (t.node(bias.id).requires_grad) t.accumulate(bias.id, g.colwise().sum());
    if (t.node(x.id).requires_grad) {
      Mat gx(x.rows(), c);
      for (int r = 0; r < x.rows(); ++r) {
        Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gain.value().row(0));
        const double m1 = gy.mean();
        const double m2 = gy.cwiseProduct(xhat->row(r)).mean();
        gx.row(r) = ((gy.array() - m1) - xhat->row(r).array() * m2) * (*inv_std)(r);
      }
      t.accumulate(x.id, gx);
    }
  };
  return out;
}

}  // namespace hiersoc::ad
