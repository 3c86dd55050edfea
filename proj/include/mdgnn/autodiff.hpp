#pragma once

#include <functional>
#include <vector>

#include "mdgnn/tensor.hpp"

namespace mdgnn::ad {

/// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over Tensor-valued primitives. Nodes are recorded in
/// topological (creation) order; backward() walks them in reverse.
///
/// Only the primitives this model family needs are provided. Composite
/// expressions (aggregation over "others", Gaussian log-densities, SE
/// utilities) are built on top of these in the module code.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor v);      // differentiable input (parameter)
  Var constant(Tensor v);  // value tracked, no gradient
  Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& val(Var v) const;
  /// Gradient of the last backward() target w.r.t. v (zeros if untouched).
  Tensor grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// differentiable node. loss must be a scalar (size-1) node.
  void backward(Var loss);
  void clear_grads();

  std::size_t num_nodes() const { return nodes_.size(); }

  // ---- elementwise, same shape ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var add_scalar(Var a, double s);
  Var mul_scalar(Var a, double s);
  Var add_const(Var a, const Tensor& c);
  Var mul_const(Var a, const Tensor& c);

  // ---- elementwise nonlinear ----
  Var log(Var a);
  Var exp(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var softplus(Var a);
  Var sigmoid(Var a);
  Var leaky_relu(Var a, double slope);
  Var clamp(Var a, double lo, double hi);
  /// min(1, sqrt(pmax/x)) with the scaled-branch derivative when active.
  Var feasible_scale(Var rowpow, double pmax);

  // ---- reductions / broadcasts ----
  Var sum_all(Var a);
  Var sum_axis(Var a, int axis);
  Var broadcast_axis(Var a, int pos, int n);
  Var logsumexp_axis(Var a, int axis);
  Var softmax_axis(Var a, int axis);

  // ---- shape surgery ----
  Var reshape(Var a, std::vector<int> shape);
  Var slice_axis(Var a, int axis, int i0, int i1);
  Var index_axis(Var a, int axis, int i);  // removes the axis
  Var stack_axis(const std::vector<Var>& parts, int pos);
  Var transpose2(Var a);

  // ---- linear maps ----
  Var matmul2(Var a, Var b);  // [m,k] x [k,n] -> [m,n]
  /// W: [Cout, Cin], z: [Cin, rest...] -> [Cout, rest...]
  Var channel_map(Var w, Var z);
  /// Multiply along `axis` by vector s of length dim(axis).
  Var scale_axis(Var z, Var s, int axis);

  // ---- graph-structured primitives ----
  /// z: [C, d_0..d_{J-1}], axis indexes the d's (0-based, channel excluded).
  /// mask: [A, d, d, B] with A/B the products of dims before/after the axis.
  /// out[c,a,x,b] = sum_{y != x} mask[a,x,y,b] * z[c,a,y,b].
  Var masked_agg(Var z, Var mask, int axis);
  /// u, v: [1, d_0..d_{J-1}] -> scores [A, d, d, B]:
  /// s[a,x,y,b] = u[0,a,x,b] + v[0,a,y,b].
  Var pair_score(Var u, Var v, int axis);
  /// w: [2, M, K, N] real/imag precoder, h_const: [2, M, K, N] channel.
  /// Returns c[2, K, K] with c[:,k,i] = sum_{m,n} conj(h_mkn) w_min.
  Var coherent_gain(Var w, const Tensor& h_const);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily sized
    std::function<void(Tape&)> backward;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> bw);
  Tensor& grad_buf(int id);
  bool rg(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op);
  void split_at_axis(Var z, int axis, std::int64_t& A, int& d, std::int64_t& B) const;

  std::vector<Node> nodes_;
};

}  // namespace mdgnn::ad
