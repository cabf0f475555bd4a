#include "asag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace asag {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

Mask Mask::all(Shape shape) {
  auto n = shape_numel(shape);
  return Mask{std::move(shape), std::vector<std::uint8_t>(n, 1)};
}

Mask Mask::from(Shape shape, std::vector<std::uint8_t> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("mask shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  return Mask{std::move(shape), std::move(values)};
}

Mask Mask::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != values.size()) {
    throw ShapeError("cannot reshape mask " + shape_str(shape) + " to " + shape_str(new_shape));
  }
  return Mask{std::move(new_shape), values};
}

Mask Mask::broadcast_to(const Shape& target) const {
  if (shape == target) return *this;
  if (shape.size() > target.size()) {
    throw ShapeError("mask " + shape_str(shape) + " not broadcastable to " + shape_str(target));
  }
  std::size_t offset = target.size() - shape.size();
  std::vector<std::size_t> strides(target.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    auto ax = i + offset;
    if (shape[i] == target[ax]) {
      strides[ax] = stride;
    } else if (shape[i] != 1) {
      throw ShapeError("mask " + shape_str(shape) + " not broadcastable to " + shape_str(target));
    }
    stride *= shape[i];
  }
  Mask out{target, std::vector<std::uint8_t>(shape_numel(target))};
  std::vector<std::size_t> idx(target.size(), 0);
  for (std::size_t flat = 0; flat < out.values.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t ax = 0; ax < target.size(); ++ax) src += idx[ax] * strides[ax];
    out.values[flat] = values[src];
    for (std::size_t ax = target.size(); ax-- > 0;) {
      if (++idx[ax] < target[ax]) break;
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor Mask::as_tensor() const {
  std::vector<double> v(values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = values[i] ? 1.0 : 0.0;
  return Tensor::from(shape, std::move(v));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

void Graph::record(GraphNode node) { nodes_.push_back(std::move(node)); }

void Graph::run_backward(const std::shared_ptr<TensorImpl>& loss) {
  if (loss->data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss->shape));
  }
  if (!loss->requires_grad) {
    throw Error("backward() on a tensor that is not connected to any parameter");
  }
  // This pass accumulates into fresh buffers that are added to any existing
  // gradient once at the end, so k passes give exactly k times one pass.
  std::vector<std::pair<TensorImpl*, std::vector<double>>> stash;
  std::unordered_set<TensorImpl*> seen;
  auto park = [&](TensorImpl* t) {
    if (seen.insert(t).second && !t->grad.empty()) stash.emplace_back(t, std::move(t->grad));
  };
  park(loss.get());
  for (const auto& node : nodes_)
    for (const auto& in : node.inputs) park(in.get());
  for (auto& [t, old] : stash) t->grad.clear();

  loss->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
  nodes_.clear();

  for (auto& [t, old] : stash) {
    if (!t->grad.empty())
      for (std::size_t i = 0; i < old.size(); ++i) old[i] += t->grad[i];
    t->grad = std::move(old);
  }
}

void backward(const Tensor& loss) { Graph::current().run_backward(loss.impl()); }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  GraphNode node;
  node.output = out.impl();
  for (auto& t : inputs) node.inputs.push_back(t.impl());
  node.backward = std::move(backward_fn);
  Graph::current().record(std::move(node));
  return out;
}

}  // namespace detail

}  // namespace asag
