#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "raflow/error.hpp"

// Minimal reverse-mode autodiff over dense double tensors.
//
// Every op records its output as a node holding parent references; a node's
// creation sequence number is a valid topological order, so backward() walks
// the reachable subgraph in decreasing sequence order. The graph reachable
// from a root is the tape; it is consumed by backward() and cannot be replayed.
// Leaf gradients accumulate across backward() calls until zero_grad().
namespace raflow::ad {

using Shape = std::vector<std::size_t>;
using Index = std::vector<std::size_t>;

/// Allocator that leaves doubles uninitialized on resize; every op writes its
/// full output, so zero-filling would be wasted work. Buffers are cache-line
/// aligned so vectorized loops split the same way on every run.
template <typename T>
struct UninitAllocator : std::allocator<T> {
  static constexpr std::align_val_t kAlign{64};
  template <typename U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <typename U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
using Buffer = std::vector<double, UninitAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// In-place edit of a leaf's values (optimizer updates, checkpoint loads).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat) const { return node_->value.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// dRoot/dThis after backward(); zeros when no gradient reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  /// Reverse sweep from a scalar root.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Elementwise. Both operands share a shape, or one of them holds one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);

/// (m x k) · (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// x·w + b with the (1 x n) bias added to every row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows of a along axis 0.
Tensor gather(const Tensor& a, const Index& indices);

/// Reductions drop the reduced axis.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
/// Ties route to the lowest index.
Tensor max(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor squared_norm(const Tensor& a, std::size_t axis);

/// Same value, no gradient path.
Tensor stop_gradient(const Tensor& a);

/// Rotation R maximizing tr(R·H) over SO(3) for a 3 x 3 cross-covariance
/// H = Σ (src_i − src̄)(dst_i − dst̄)ᵀ; differentiable.
Tensor kabsch_rotation(const Tensor& cov);

}  // namespace raflow::ad
