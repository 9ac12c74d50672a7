#pragma once

#include <Eigen/Dense>
#include <functional>
#include <unordered_map>
#include <vector>

#include "hiersoc/errors.hpp"

namespace hiersoc::nn {
struct Parameter;
}

namespace hiersoc::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double scalar() const;
};

// Reverse-mode tape over dense double matrices. Values are recorded in creation
// order; backward() sweeps the recorded ops in reverse and accumulates gradients
// into the tape nodes and, for param leaves, into Parameter::grad.
class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void()> backprop;  // empty for leaves / untracked nodes
  };

  Var constant(Mat value);
  // Leaf whose gradient is wanted but not tied to a Parameter (e.g. input probes).
  Var input(Mat value);
  // Tracked leaf: after backward(), accumulated gradient is added to p.grad.
  Var param(nn::Parameter& p);
  // Untracked view of a parameter's current value (frozen weights).
  Var frozen(const nn::Parameter& p);

  Var make_node(Mat value, bool requires_grad, std::function<void()> backprop);

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must be 1x1.
  void backward(const Var& loss);

  // Adds g into the gradient of node `id` if that node requires a gradient.
  void accumulate(int id, const Mat& g);

  const Mat& grad(const Var& v) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<nn::Parameter*, int>> param_leaves_;
  std::unordered_map<const void*, int> leaf_cache_;
};

// ---- primitive ops ----

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// x [N x C] + row vector [1 x C] broadcast over rows.
Var add_rowvec(Var x, Var row);
// x*w + b (b broadcast over rows).
Var linear(Var x, Var w, Var b);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);
// out.row(i) = a.row(indices[i]); backward scatter-adds.
Var gather_rows(Var a, std::vector<int> indices);
// [N x C] -> [N/block x C], mean over consecutive row blocks.
Var mean_pool_rows(Var a, int block);
// Cumulative row sums restarting every `block` rows (velocity -> displacement).
Var cumsum_rows(Var a, int block);
Var mean_all(Var a);
Var sum_all(Var a);
Var relu(Var a);
Var gelu(Var a);
Var logistic(Var a);
Var log_elem(Var a);
Var one_minus(Var a);
Var stop_gradient(Var a);

// Multi-head attention over uniform segments. q has N rows split into N/q_block
// segments; k/v have M rows split into M/kv_block segments (same segment count);
// segment i of q attends to segment i of k/v. Column dim d = heads * head_dim.
Var attention(Var q, Var k, Var v, int q_block, int kv_block, int heads);

// Row-wise layer norm with gain/bias row vectors [1 x C].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

}  // namespace hiersoc::ad
