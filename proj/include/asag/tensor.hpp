#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asag/errors.hpp"

namespace asag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  void accumulate_grad(std::span<const double> g);
  std::span<double> grad_buffer();  // allocates zeroed storage on demand
};

// Dense row-major float64 array. Copies share storage; use detach()/clone()
// for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  std::vector<double> values() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  Tensor detach() const;  // value copy, no grad, off the graph
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Boolean mask; 1 marks a valid (unmasked) entry.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> values;

  static Mask all(Shape shape);
  static Mask from(Shape shape, std::vector<std::uint8_t> values);
  std::size_t numel() const { return values.size(); }
  Mask reshaped(Shape new_shape) const;
  // Numpy-style broadcast to `target`.
  Mask broadcast_to(const Shape& target) const;
  // 1.0 / 0.0 tensor of the same shape.
  Tensor as_tensor() const;
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

// One recorded operation. Backward reads out.data / out.grad and
// accumulates into whichever inputs require grad.
struct GraphNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

// Per-thread tape. Topological order is creation order.
class Graph {
 public:
  static Graph& current();

  void record(GraphNode node);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  // Runs every node in reverse creation order, then frees the tape.
  void run_backward(const std::shared_ptr<TensorImpl>& loss);

 private:
  std::vector<GraphNode> nodes_;
};

bool grad_enabled();

// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss)=1 and propagates through the current thread's graph.
// Gradients accumulate; callers zero them between steps.
void backward(const Tensor& loss);

namespace detail {
// Creates the output tensor of an op and records it when any input needs grad.
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn);
}  // namespace detail

}  // namespace asag
