#include "mdgnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdgnn::ad {

namespace {
constexpr double kClampSlopeEps = 0.0;  // hard clamp: zero grad outside
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> bw) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor v) { return push(std::move(v), true, nullptr); }
Var Tape::constant(Tensor v) { return push(std::move(v), false, nullptr); }

const Tensor& Tape::val(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.size() == 0) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::clear_grads() {
  for (Node& n : nodes_) n.grad = Tensor();
}

void Tape::backward(Var loss) {
  if (val(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  clear_grads();
  grad_buf(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.size() == 0) continue;  // no incoming gradient
    n.backward(*this);
  }
}

void Tape::check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

// ---- elementwise binary ----

// Each op computes its output tensor, then pushes a node whose closure
// captures the id the node is about to receive (nodes_.size() at push time).
#define MDGNN_OUT_ID static_cast<int>(nodes_.size())

Var Tape::add(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  int ia = a.id, ib = b.id, io = MDGNN_OUT_ID;
  bool ra = rg(a), rb = rg(b);
  return push(std::move(out), ra || rb, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    if (ra) {
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (rb) {
      Tensor& gb = t.grad_buf(ib);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
  int ia = a.id, ib = b.id, io = MDGNN_OUT_ID;
  bool ra = rg(a), rb = rg(b);
  return push(std::move(out), ra || rb, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    if (ra) {
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (rb) {
      Tensor& gb = t.grad_buf(ib);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  int ia = a.id, ib = b.id, io = MDGNN_OUT_ID;
  bool ra = rg(a), rb = rg(b);
  return push(std::move(out), ra || rb, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    const Tensor& vb = t.nodes_[ib].value;
    if (ra) {
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (rb) {
      Tensor& gb = t.grad_buf(ib);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var Tape::div(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  check_same_shape(ta, tb, "div");
  Tensor out = ta;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= tb[i];
  int ia = a.id, ib = b.id, io = MDGNN_OUT_ID;
  bool ra = rg(a), rb = rg(b);
  return push(std::move(out), ra || rb, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    const Tensor& vb = t.nodes_[ib].value;
    if (ra) {
      Tensor& ga = t.grad_buf(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
    }
    if (rb) {
      Tensor& gb = t.grad_buf(ib);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
    }
  });
}

Var Tape::neg(Var a) { return mul_scalar(a, -1.0); }

Var Tape::add_scalar(Var a, double s) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += s;
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::mul_scalar(Var a, double s) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var Tape::add_const(Var a, const Tensor& c) {
  check_same_shape(val(a), c, "add_const");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c[i];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::mul_const(Var a, const Tensor& c) {
  check_same_shape(val(a), c, "mul_const");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  Tensor cc = c;
  return push(std::move(out), ra, [=, cc = std::move(cc)](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * cc[i];
  });
}

// ---- elementwise nonlinear ----

Var Tape::log(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
  });
}

Var Tape::exp(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vo = t.nodes_[io].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vo[i];
  });
}

Var Tape::sqrt(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vo = t.nodes_[io].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / vo[i];
  });
}

Var Tape::square(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 2.0 * va[i];
  });
}

Var Tape::softplus(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double x = out[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
  }
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] / (1.0 + std::exp(-va[i]));
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vo = t.nodes_[io].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vo[i] * (1.0 - vo[i]);
  });
}

Var Tape::leaky_relu(Var a, double slope) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = out[i] >= 0.0 ? out[i] : slope * out[i];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * (va[i] >= 0.0 ? 1.0 : slope);
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (va[i] > lo + kClampSlopeEps && va[i] < hi - kClampSlopeEps) ga[i] += g[i];
  });
}

Var Tape::feasible_scale(Var rowpow, double pmax) {
  Tensor out = val(rowpow);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = out[i] <= pmax ? 1.0 : std::sqrt(pmax / out[i]);
  int ia = rowpow.id, io = MDGNN_OUT_ID;
  bool ra = rg(rowpow);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (va[i] > pmax)
        ga[i] += g[i] * (-0.5) * std::sqrt(pmax) / (va[i] * std::sqrt(va[i]));
  });
}

// ---- reductions / broadcasts ----

Var Tape::sum_all(Var a) {
  double s = 0.0;
  const Tensor& ta = val(a);
  for (std::int64_t i = 0; i < ta.size(); ++i) s += ta[i];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(Tensor::scalar(s), ra, [=](Tape& t) {
    double g = t.nodes_[io].grad[0];
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var Tape::sum_axis(Var a, int axis) {
  const Tensor& ta = val(a);
  std::vector<int> shp = ta.shape();
  int d = shp.at(static_cast<std::size_t>(axis));
  std::int64_t A = ta.span(0, axis), B = ta.span(axis + 1, ta.rank());
  std::vector<int> oshp = shp;
  oshp.erase(oshp.begin() + axis);
  Tensor out(oshp);
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (int x = 0; x < d; ++x)
      for (std::int64_t b = 0; b < B; ++b)
        out[ai * B + b] += ta[(ai * d + x) * B + b];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (int x = 0; x < d; ++x)
        for (std::int64_t b = 0; b < B; ++b)
          ga[(ai * d + x) * B + b] += g[ai * B + b];
  });
}

Var Tape::broadcast_axis(Var a, int pos, int n) {
  const Tensor& ta = val(a);
  std::vector<int> oshp = ta.shape();
  oshp.insert(oshp.begin() + pos, n);
  std::int64_t A = ta.span(0, pos), B = ta.span(pos, ta.rank());
  Tensor out(oshp);
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (int x = 0; x < n; ++x)
      for (std::int64_t b = 0; b < B; ++b)
        out[(ai * n + x) * B + b] = ta[ai * B + b];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (int x = 0; x < n; ++x)
        for (std::int64_t b = 0; b < B; ++b)
          ga[ai * B + b] += g[(ai * n + x) * B + b];
  });
}

Var Tape::logsumexp_axis(Var a, int axis) {
  const Tensor& ta = val(a);
  int d = ta.dim(axis);
  std::int64_t A = ta.span(0, axis), B = ta.span(axis + 1, ta.rank());
  std::vector<int> oshp = ta.shape();
  oshp.erase(oshp.begin() + axis);
  Tensor out(oshp);
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (std::int64_t b = 0; b < B; ++b) {
      double mx = -1e300;
      for (int x = 0; x < d; ++x) mx = std::max(mx, ta[(ai * d + x) * B + b]);
      double s = 0.0;
      for (int x = 0; x < d; ++x) s += std::exp(ta[(ai * d + x) * B + b] - mx);
      out[ai * B + b] = mx + std::log(s);
    }
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vo = t.nodes_[io].value;
    const Tensor& va = t.nodes_[ia].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (std::int64_t b = 0; b < B; ++b) {
        double lse = vo[ai * B + b], gg = g[ai * B + b];
        for (int x = 0; x < d; ++x)
          ga[(ai * d + x) * B + b] += gg * std::exp(va[(ai * d + x) * B + b] - lse);
      }
  });
}

Var Tape::softmax_axis(Var a, int axis) {
  const Tensor& ta = val(a);
  int d = ta.dim(axis);
  std::int64_t A = ta.span(0, axis), B = ta.span(axis + 1, ta.rank());
  Tensor out = ta;
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (std::int64_t b = 0; b < B; ++b) {
      double mx = -1e300;
      for (int x = 0; x < d; ++x) mx = std::max(mx, ta[(ai * d + x) * B + b]);
      double s = 0.0;
      for (int x = 0; x < d; ++x) {
        double e = std::exp(ta[(ai * d + x) * B + b] - mx);
        out[(ai * d + x) * B + b] = e;
        s += e;
      }
      for (int x = 0; x < d; ++x) out[(ai * d + x) * B + b] /= s;
    }
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vo = t.nodes_[io].value;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (std::int64_t b = 0; b < B; ++b) {
        double dot = 0.0;
        for (int x = 0; x < d; ++x)
          dot += g[(ai * d + x) * B + b] * vo[(ai * d + x) * B + b];
        for (int x = 0; x < d; ++x) {
          std::int64_t idx = (ai * d + x) * B + b;
          ga[idx] += vo[idx] * (g[idx] - dot);
        }
      }
  });
}

// ---- shape surgery ----

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = val(a);
  if (Tensor::count(shape) != ta.size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(shape, ta.vec());
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::slice_axis(Var a, int axis, int i0, int i1) {
  const Tensor& ta = val(a);
  int d = ta.dim(axis);
  if (i0 < 0 || i1 > d || i0 >= i1) throw std::invalid_argument("slice_axis: bad range");
  std::int64_t A = ta.span(0, axis), B = ta.span(axis + 1, ta.rank());
  std::vector<int> oshp = ta.shape();
  oshp[static_cast<std::size_t>(axis)] = i1 - i0;
  Tensor out(oshp);
  int w = i1 - i0;
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (int x = 0; x < w; ++x)
      for (std::int64_t b = 0; b < B; ++b)
        out[(ai * w + x) * B + b] = ta[(ai * d + i0 + x) * B + b];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (int x = 0; x < w; ++x)
        for (std::int64_t b = 0; b < B; ++b)
          ga[(ai * d + i0 + x) * B + b] += g[(ai * w + x) * B + b];
  });
}

Var Tape::index_axis(Var a, int axis, int i) {
  Var s = slice_axis(a, axis, i, i + 1);
  std::vector<int> oshp = val(s).shape();
  oshp.erase(oshp.begin() + axis);
  return reshape(s, oshp);
}

Var Tape::stack_axis(const std::vector<Var>& parts, int pos) {
  if (parts.empty()) throw std::invalid_argument("stack_axis: empty");
  const Tensor& t0 = val(parts[0]);
  for (const Var& p : parts) check_same_shape(val(p), t0, "stack_axis");
  int n = static_cast<int>(parts.size());
  std::vector<int> oshp = t0.shape();
  oshp.insert(oshp.begin() + pos, n);
  std::int64_t A = t0.span(0, pos), B = t0.span(pos, t0.rank());
  Tensor out(oshp);
  for (int x = 0; x < n; ++x) {
    const Tensor& tp = val(parts[static_cast<std::size_t>(x)]);
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (std::int64_t b = 0; b < B; ++b)
        out[(ai * n + x) * B + b] = tp[ai * B + b];
  }
  std::vector<int> ids(parts.size());
  bool any_rg = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    ids[i] = parts[i].id;
    any_rg = any_rg || rg(parts[i]);
  }
  int io = MDGNN_OUT_ID;
  std::vector<bool> rgs(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) rgs[i] = rg(parts[i]);
  return push(std::move(out), any_rg, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    for (int x = 0; x < n; ++x) {
      if (!rgs[static_cast<std::size_t>(x)]) continue;
      Tensor& gp = t.grad_buf(ids[static_cast<std::size_t>(x)]);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (std::int64_t b = 0; b < B; ++b)
          gp[ai * B + b] += g[(ai * n + x) * B + b];
    }
  });
}

Var Tape::transpose2(Var a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw std::invalid_argument("transpose2: rank != 2");
  int m = ta.dim(0), n = ta.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j * m + i] = ta[i * n + j];
  int ia = a.id, io = MDGNN_OUT_ID;
  bool ra = rg(a);
  return push(std::move(out), ra, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& ga = t.grad_buf(ia);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---- linear maps ----

Var Tape::matmul2(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
    throw std::invalid_argument("matmul2: incompatible shapes");
  int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      double av = ta[i * k + kk];
      for (int j = 0; j < n; ++j) out[i * n + j] += av * tb[kk * n + j];
    }
  int ia = a.id, ib = b.id, io = MDGNN_OUT_ID;
  bool ra = rg(a), rb = rg(b);
  return push(std::move(out), ra || rb, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& va = t.nodes_[ia].value;
    const Tensor& vb = t.nodes_[ib].value;
    if (ra) {
      Tensor& ga = t.grad_buf(ia);
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += g[i * n + j] * vb[kk * n + j];
          ga[i * k + kk] += s;
        }
    }
    if (rb) {
      Tensor& gb = t.grad_buf(ib);
      for (int kk = 0; kk < k; ++kk)
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += va[i * k + kk] * g[i * n + j];
          gb[kk * n + j] += s;
        }
    }
  });
}

Var Tape::channel_map(Var w, Var z) {
  const Tensor &tw = val(w), &tz = val(z);
  if (tw.rank() != 2) throw std::invalid_argument("channel_map: W must be 2-D");
  int cout = tw.dim(0), cin = tw.dim(1);
  if (tz.dim(0) != cin)
    throw std::invalid_argument("channel_map: channel mismatch " + tw.shape_str() + " vs " +
                                tz.shape_str());
  std::int64_t E = tz.span(1, tz.rank());
  std::vector<int> oshp = tz.shape();
  oshp[0] = cout;
  Tensor out(oshp);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      double wv = tw[co * cin + ci];
      if (wv == 0.0) continue;
      for (std::int64_t e = 0; e < E; ++e) out[co * E + e] += wv * tz[ci * E + e];
    }
  int iw = w.id, iz = z.id, io = MDGNN_OUT_ID;
  bool rw = rg(w), rz = rg(z);
  return push(std::move(out), rw || rz, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vw = t.nodes_[iw].value;
    const Tensor& vz = t.nodes_[iz].value;
    if (rw) {
      Tensor& gw = t.grad_buf(iw);
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci) {
          double s = 0.0;
          for (std::int64_t e = 0; e < E; ++e) s += g[co * E + e] * vz[ci * E + e];
          gw[co * cin + ci] += s;
        }
    }
    if (rz) {
      Tensor& gz = t.grad_buf(iz);
      for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co) {
          double wv = vw[co * cin + ci];
          if (wv == 0.0) continue;
          for (std::int64_t e = 0; e < E; ++e) gz[ci * E + e] += wv * g[co * E + e];
        }
    }
  });
}

Var Tape::scale_axis(Var z, Var s, int axis) {
  const Tensor &tz = val(z), &ts = val(s);
  int d = tz.dim(axis);
  if (ts.size() != d) throw std::invalid_argument("scale_axis: vector length mismatch");
  std::int64_t A = tz.span(0, axis), B = tz.span(axis + 1, tz.rank());
  Tensor out = tz;
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (int x = 0; x < d; ++x)
      for (std::int64_t b = 0; b < B; ++b) out[(ai * d + x) * B + b] *= ts[x];
  int iz = z.id, is = s.id, io = MDGNN_OUT_ID;
  bool rz = rg(z), rs = rg(s);
  return push(std::move(out), rz || rs, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vz = t.nodes_[iz].value;
    const Tensor& vs = t.nodes_[is].value;
    if (rz) {
      Tensor& gz = t.grad_buf(iz);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (int x = 0; x < d; ++x)
          for (std::int64_t b = 0; b < B; ++b)
            gz[(ai * d + x) * B + b] += g[(ai * d + x) * B + b] * vs[x];
    }
    if (rs) {
      Tensor& gs = t.grad_buf(is);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (int x = 0; x < d; ++x)
          for (std::int64_t b = 0; b < B; ++b)
            gs[x] += g[(ai * d + x) * B + b] * vz[(ai * d + x) * B + b];
    }
  });
}

// ---- graph-structured primitives ----

void Tape::split_at_axis(Var z, int axis, std::int64_t& A, int& d, std::int64_t& B) const {
  const Tensor& tz = val(z);
  // axis is an edge-dimension index: channel axis 0 is excluded
  int real_axis = axis + 1;
  d = tz.dim(real_axis);
  A = tz.span(1, real_axis);
  B = tz.span(real_axis + 1, tz.rank());
}

Var Tape::masked_agg(Var z, Var mask, int axis) {
  const Tensor &tz = val(z), &tm = val(mask);
  std::int64_t A, B;
  int d;
  split_at_axis(z, axis, A, d, B);
  int C = tz.dim(0);
  if (tm.size() != A * d * d * B) throw std::invalid_argument("masked_agg: mask size mismatch");
  Tensor out(tz.shape());
  for (int c = 0; c < C; ++c)
    for (std::int64_t ai = 0; ai < A; ++ai)
      for (int x = 0; x < d; ++x)
        for (std::int64_t b = 0; b < B; ++b) {
          double s = 0.0;
          for (int y = 0; y < d; ++y) {
            if (y == x) continue;
            s += tm[((ai * d + x) * d + y) * B + b] * tz[((c * A + ai) * d + y) * B + b];
          }
          out[((c * A + ai) * d + x) * B + b] = s;
        }
  int iz = z.id, im = mask.id, io = MDGNN_OUT_ID;
  bool rz = rg(z), rm = rg(mask);
  return push(std::move(out), rz || rm, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    const Tensor& vz = t.nodes_[iz].value;
    const Tensor& vm = t.nodes_[im].value;
    if (rz) {
      Tensor& gz = t.grad_buf(iz);
      for (int c = 0; c < C; ++c)
        for (std::int64_t ai = 0; ai < A; ++ai)
          for (int y = 0; y < d; ++y)
            for (std::int64_t b = 0; b < B; ++b) {
              double s = 0.0;
              for (int x = 0; x < d; ++x) {
                if (x == y) continue;
                s += vm[((ai * d + x) * d + y) * B + b] * g[((c * A + ai) * d + x) * B + b];
              }
              gz[((c * A + ai) * d + y) * B + b] += s;
            }
    }
    if (rm) {
      Tensor& gm = t.grad_buf(im);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (int x = 0; x < d; ++x)
          for (int y = 0; y < d; ++y) {
            if (x == y) continue;
            for (std::int64_t b = 0; b < B; ++b) {
              double s = 0.0;
              for (int c = 0; c < C; ++c)
                s += g[((c * A + ai) * d + x) * B + b] * vz[((c * A + ai) * d + y) * B + b];
              gm[((ai * d + x) * d + y) * B + b] += s;
            }
          }
    }
  });
}

Var Tape::pair_score(Var u, Var v, int axis) {
  const Tensor &tu = val(u), &tv = val(v);
  check_same_shape(tu, tv, "pair_score");
  if (tu.dim(0) != 1) throw std::invalid_argument("pair_score: expects single channel");
  std::int64_t A, B;
  int d;
  split_at_axis(u, axis, A, d, B);
  Tensor out({static_cast<int>(A), d, d, static_cast<int>(B)});
  for (std::int64_t ai = 0; ai < A; ++ai)
    for (int x = 0; x < d; ++x)
      for (int y = 0; y < d; ++y)
        for (std::int64_t b = 0; b < B; ++b)
          out[((ai * d + x) * d + y) * B + b] =
              tu[(ai * d + x) * B + b] + tv[(ai * d + y) * B + b];
  int iu = u.id, iv = v.id, io = MDGNN_OUT_ID;
  bool ru = rg(u), rv = rg(v);
  return push(std::move(out), ru || rv, [=](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    if (ru) {
      Tensor& gu = t.grad_buf(iu);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (int x = 0; x < d; ++x)
          for (std::int64_t b = 0; b < B; ++b) {
            double s = 0.0;
            for (int y = 0; y < d; ++y) s += g[((ai * d + x) * d + y) * B + b];
            gu[(ai * d + x) * B + b] += s;
          }
    }
    if (rv) {
      Tensor& gv = t.grad_buf(iv);
      for (std::int64_t ai = 0; ai < A; ++ai)
        for (int y = 0; y < d; ++y)
          for (std::int64_t b = 0; b < B; ++b) {
            double s = 0.0;
            for (int x = 0; x < d; ++x) s += g[((ai * d + x) * d + y) * B + b];
            gv[(ai * d + y) * B + b] += s;
          }
    }
  });
}

Var Tape::coherent_gain(Var w, const Tensor& h_const) {
  const Tensor& tw = val(w);
  check_same_shape(tw, h_const, "coherent_gain");
  if (tw.rank() != 4 || tw.dim(0) != 2)
    throw std::invalid_argument("coherent_gain: expects [2,M,K,N]");
  int M = tw.dim(1), K = tw.dim(2), N = tw.dim(3);
  auto hidx = [=](int c, int m, int k, int n) {
    return ((static_cast<std::int64_t>(c) * M + m) * K + k) * N + n;
  };
  Tensor out({2, K, K});
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < K; ++i) {
      double re = 0.0, im = 0.0;
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          double hr = h_const[hidx(0, m, k, n)], hi = h_const[hidx(1, m, k, n)];
          double wr = tw[hidx(0, m, i, n)], wi = tw[hidx(1, m, i, n)];
          re += hr * wr + hi * wi;
          im += hr * wi - hi * wr;
        }
      out[(0 * K + k) * K + i] = re;
      out[(1 * K + k) * K + i] = im;
    }
  int iw = w.id, io = MDGNN_OUT_ID;
  bool rw = rg(w);
  Tensor h = h_const;
  return push(std::move(out), rw, [=, h = std::move(h)](Tape& t) {
    const Tensor& g = t.nodes_[io].grad;
    Tensor& gw = t.grad_buf(iw);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < K; ++i) {
        double g0 = g[(0 * K + k) * K + i], g1 = g[(1 * K + k) * K + i];
        if (g0 == 0.0 && g1 == 0.0) continue;
        for (int m = 0; m < M; ++m)
          for (int n = 0; n < N; ++n) {
            double hr = h[hidx(0, m, k, n)], hi = h[hidx(1, m, k, n)];
            gw[hidx(0, m, i, n)] += g0 * hr - g1 * hi;
            gw[hidx(1, m, i, n)] += g0 * hi + g1 * hr;
          }
      }
  });
}

}  // namespace mdgnn::ad
