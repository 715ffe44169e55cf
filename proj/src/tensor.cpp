#include "raflow/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

namespace raflow::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_sequence{0};

Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = ++g_sequence;
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->leaf = false;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void shape_check(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, msg);
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw Error(ErrorCode::InvalidAxis, "axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

enum class Broadcast { None, Left, Right };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.size() == 1) return Broadcast::Left;
  if (b.size() == 1) return Broadcast::Right;
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Adds g (length n, or reduced to one element) into a parent's gradient.
void accumulate(Node& p, const Buffer& g, double factor = 1.0) {
  if (!p.requires_grad) return;
  if (p.grad.empty() && g.size() == p.value.size()) {
    p.grad = g;
    if (factor != 1.0) {
      for (double& v : p.grad) v *= factor;
    }
    return;
  }
  p.ensure_grad();
  if (p.grad.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += factor * g[i];
  } else {
    double total = 0.0;
    for (double v : g) total += v;
    p.grad[0] += factor * total;
  }
}

// Prepares a parent's gradient buffer; true means it is fresh and should be
// overwritten rather than accumulated into.
bool claim_grad(Node& p) {
  if (!p.grad.empty()) return false;
  p.grad.resize(p.value.size());
  return true;
}

template <typename Fn, typename DFn>
Tensor unary(const Tensor& a, Fn f, DFn df) {
  Buffer out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    if (claim_grad(p)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] = self.grad[i] * df(p.value[i], self.value[i]);
    } else {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  shape_check(numel(shape) == values.size(), "constant: data length does not match " + shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  node->seq = ++g_sequence;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw Error(ErrorCode::ShapeMismatch, "only leaf tensors may be edited in place");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::NonScalarRoot, "item() on " + shape_string(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return std::vector<double>(node_->grad.begin(), node_->grad.end());
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (size() != 1) throw Error(ErrorCode::NonScalarRoot, "backward root has shape " + shape_string(shape()));
  if (node_->consumed) throw Error(ErrorCode::StaleTape, "graph already consumed by backward()");
  if (!node_->requires_grad) return;

  std::vector<Node*> order;
  std::vector<Node*> stack{node_.get()};
  std::vector<Node*> visited;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (std::find(visited.begin(), visited.end(), n) != visited.end()) continue;
    visited.push_back(n);
    if (n->consumed) throw Error(ErrorCode::StaleTape, "graph contains a node consumed by an earlier backward()");
    if (n->leaf) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (Node* n : order) {
    // Nothing reached this node: it contributes nothing upstream.
    if (!n->grad.empty()) n->backward_fn(*n);
    n->backward_fn = nullptr;
    n->consumed = true;
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const Shape shape = kind == Broadcast::Left ? b.shape() : a.shape();
  Buffer out(numel(shape));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[kind == Broadcast::Left ? 0 : i] + y[kind == Broadcast::Right ? 0 : i];
  }
  return make_result(shape, std::move(out), {a, b}, [](Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "sub");
  const Shape shape = kind == Broadcast::Left ? b.shape() : a.shape();
  Buffer out(numel(shape));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[kind == Broadcast::Left ? 0 : i] - y[kind == Broadcast::Right ? 0 : i];
  }
  return make_result(shape, std::move(out), {a, b}, [](Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad, -1.0);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const Shape shape = kind == Broadcast::Left ? b.shape() : a.shape();
  Buffer out(numel(shape));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[kind == Broadcast::Left ? 0 : i] * y[kind == Broadcast::Right ? 0 : i];
  }
  return make_result(shape, std::move(out), {a, b}, [kind](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const std::size_t n = self.grad.size();
    if (pa.requires_grad) {
      Buffer g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb.value[kind == Broadcast::Right ? 0 : i];
      accumulate(pa, g);
    }
    if (pb.requires_grad) {
      Buffer g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa.value[kind == Broadcast::Left ? 0 : i];
      accumulate(pb, g);
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  shape_check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
              "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const ConstMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      const bool fresh = claim_grad(pa);
      MutMap da(pa.grad.data(), m, k);
      if (fresh) da.noalias() = g * ConstMap(pb.value.data(), k, n).transpose();
      else da.noalias() += g * ConstMap(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      const bool fresh = claim_grad(pb);
      MutMap db(pb.grad.data(), k, n);
      if (fresh) db.noalias() = ConstMap(pa.value.data(), m, k).transpose() * g;
      else db.noalias() += ConstMap(pa.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  shape_check(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0) && b.shape() == Shape{1, w.dim(1)},
              "linear: " + shape_string(x.shape()) + " x " + shape_string(w.shape()) + " + " +
                  shape_string(b.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Buffer out(m * n);
  MutMap y(out.data(), m, n);
  y.noalias() = ConstMap(x.data().data(), m, k) * ConstMap(w.data().data(), k, n);
  y.rowwise() += ConstMap(b.data().data(), 1, n).row(0);
  return make_result({m, n}, std::move(out), {x, w, b}, [m, k, n](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    const ConstMap g(self.grad.data(), m, n);
    if (px.requires_grad) {
      const bool fresh = claim_grad(px);
      MutMap dx(px.grad.data(), m, k);
      if (fresh) dx.noalias() = g * ConstMap(pw.value.data(), k, n).transpose();
      else dx.noalias() += g * ConstMap(pw.value.data(), k, n).transpose();
    }
    if (pw.requires_grad) {
      const bool fresh = claim_grad(pw);
      MutMap dw(pw.grad.data(), k, n);
      if (fresh) dw.noalias() = ConstMap(px.value.data(), m, k).transpose() * g;
      else dw.noalias() += ConstMap(px.value.data(), m, k).transpose() * g;
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      MutMap(pb.grad.data(), 1, n) += g.colwise().sum();
    }
  });
}

Tensor transpose(const Tensor& a) {
  shape_check(a.rank() == 2, "transpose needs a matrix");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Buffer out(m * n);
  MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    MutMap(p.grad.data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  shape_check(numel(shape) == a.size(), "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Buffer out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](Node& self) { accumulate(parent(self, 0), self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw Error(ErrorCode::InvalidAxis, "concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& t : parts) {
    shape_check(t.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) shape_check(t.dim(d) == first[d], "concat: " + shape_string(t.shape()) + " vs " + shape_string(first));
    }
    shape[axis] += t.dim(axis);
  }
  const AxisSplit whole = split_axis(shape, axis);
  Buffer out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : parts) {
    offsets.push_back(offset);
    const AxisSplit s = split_axis(t.shape(), axis);
    const auto src = t.data();
    const std::size_t block = s.len * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + o * block, block, out.begin() + o * whole.len * whole.inner + offset * whole.inner);
    }
    offset += s.len;
  }
  return make_result(shape, std::move(out), parts, [axis, offsets, whole](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const AxisSplit s = split_axis(p.shape, axis);
      const std::size_t block = s.len * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* g = self.grad.data() + o * whole.len * whole.inner + offsets[k] * whole.inner;
        double* dst = p.grad.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor gather(const Tensor& a, const Index& indices) {
  if (a.rank() == 0) throw Error(ErrorCode::InvalidAxis, "gather needs at least one axis");
  const std::size_t rows = a.dim(0);
  const std::size_t width = rows == 0 ? 0 : a.size() / rows;
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw Error(ErrorCode::GatherOutOfBounds, "index " + std::to_string(idx) + " >= " + std::to_string(rows));
    }
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  Buffer out(indices.size() * width);
  const auto src = a.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(src.begin() + indices[r] * width, width, out.begin() + r * width);
  }
  return make_result(shape, std::move(out), {a}, [indices, width](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const double* g = self.grad.data() + r * width;
      double* dst = p.grad.data() + indices[r] * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += g[c];
    }
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Buffer out(s.outer * s.inner, 0.0);
  const auto src = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += src[(o * s.len + l) * s.inner + i];
  return make_result(drop_axis(a.shape(), axis), std::move(out), {a}, [s](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) p.grad[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor max(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.len == 0) throw Error(ErrorCode::ShapeMismatch, "max over an empty axis");
  Buffer out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto src = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_v = src[o * s.len * s.inner + i];
      for (std::size_t l = 1; l < s.len; ++l) {
        const double v = src[(o * s.len + l) * s.inner + i];
        if (v > best_v) {
          best_v = v;
          best = l;
        }
      }
      out[o * s.inner + i] = best_v;
      arg[o * s.inner + i] = (o * s.len + best) * s.inner + i;
    }
  }
  return make_result(drop_axis(a.shape(), axis), std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t k = 0; k < arg.size(); ++k) p.grad[arg[k]] += self.grad[k];
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Buffer out(a.size());
  const auto src = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) m = std::max(m, src[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) z += (out[at(l)] = std::exp(src[at(l)] - m));
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] /= z;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += self.grad[at(l)] * self.value[at(l)];
        for (std::size_t l = 0; l < s.len; ++l) p.grad[at(l)] += self.value[at(l)] * (self.grad[at(l)] - dot);
      }
    }
  });
}

Tensor squared_norm(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Buffer out(s.outer * s.inner, 0.0);
  const auto src = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double v = src[(o * s.len + l) * s.inner + i];
        out[o * s.inner + i] += v * v;
      }
  return make_result(drop_axis(a.shape(), axis), std::move(out), {a}, [s](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t k = (o * s.len + l) * s.inner + i;
          p.grad[k] += 2.0 * p.value[k] * self.grad[o * s.inner + i];
        }
  });
}

Tensor stop_gradient(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

Tensor kabsch_rotation(const Tensor& cov) {
  shape_check(cov.shape() == Shape{3, 3}, "kabsch_rotation needs a 3 x 3 covariance");
  using Mat3 = Eigen::Matrix3d;
  const Mat3 h = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(cov.data().data());
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Eigen::Vector3d lambda = svd.singularValues();
  if ((v * u.transpose()).determinant() < 0.0) {
    v.col(2) *= -1.0;
    lambda(2) = -lambda(2);
  }
  const Mat3 r = v * u.transpose();

  Buffer out(9);
  Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(out.data()) = r;

  // With M = Hᵀ = R·P (P = U·diag(λ)·Uᵀ), a perturbation dH gives dR = R·Ω where
  // Ω = U·Ω̃·Uᵀ and Ω̃_ij = [Uᵀ(Rᵀ dM − dMᵀ R)U]_ij / (λ_i + λ_j).
  return make_result({3, 3}, std::move(out), {cov}, [u, r, lambda](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad();
    const Mat3 g = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(self.grad.data());
    // Adjoint of dH -> dR, written out: <G, R U Ω̃(dH) Uᵀ> = <Ω̃(dH), Uᵀ Rᵀ G U> = <Ã(dH), K ∘ B>.
    Mat3 b = u.transpose() * r.transpose() * g * u;
    Mat3 kb = Mat3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        double denom = lambda(i) + lambda(j);
        if (std::abs(denom) < 1e-12) denom = denom < 0.0 ? -1e-12 : 1e-12;
        kb(i, j) = b(i, j) / denom;
      }
    // <Ã, C> with Ã = Uᵀ(Rᵀ dM − dMᵀ R)U equals <dM, R·(W − Wᵀ)> with W = U C Uᵀ.
    const Mat3 w = u * kb * u.transpose();
    const Mat3 dm = r * (w - w.transpose());
    const Mat3 dh = dm.transpose();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p.grad[i * 3 + j] += dh(i, j);
  });
}

}  // namespace raflow::ad
