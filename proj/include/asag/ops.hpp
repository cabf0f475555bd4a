#pragma once

#include <cstddef>
#include <vector>

#include "asag/tensor.hpp"

namespace asag {

// [..., m, k] x [k, n]            -> [..., m, n]  (leading axes flattened)
// [..., m, k] x [..., k, n]       -> [..., m, n]  (equal leading axes, batched)
Tensor matmul(const Tensor& a, const Tensor& b);

enum class BinaryOp { add, sub, mul };

// Numpy-style broadcasting: trailing axes aligned, an extent of 1 stretches.
// Gradients of stretched operands are summed over the stretched axes.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }

enum class UnaryOp { tanh, exp, relu, neg, scale };

Tensor unary(UnaryOp op, const Tensor& a, double factor = 1.0);
inline Tensor tanh(const Tensor& a) { return unary(UnaryOp::tanh, a); }
inline Tensor exp(const Tensor& a) { return unary(UnaryOp::exp, a); }
inline Tensor relu(const Tensor& a) { return unary(UnaryOp::relu, a); }
inline Tensor neg(const Tensor& a) { return unary(UnaryOp::neg, a); }
inline Tensor scale(const Tensor& a, double factor) { return unary(UnaryOp::scale, a, factor); }

// Smallest nonzero |input| seen by relu on this thread since the last reset.
// Finite-difference probes use it to stay clear of the kink.
double relu_kink_distance();
void reset_relu_kink_distance();

// log(max(a, floor)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& a, double floor);

// Additive masking value used before exponentiation.
inline constexpr double kMaskedScore = -1e30;

// Softmax over the last axis. `mask` broadcasts to scores.shape(); masked
// entries come out exactly 0. Throws MaskError on a row with no valid entry.
Tensor masked_softmax(const Tensor& scores, const Mask& mask);
Tensor softmax(const Tensor& scores);

enum class ReduceOp { sum, mean };

Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis);
inline Tensor sum(const Tensor& a, std::size_t axis) { return reduce(ReduceOp::sum, a, axis); }
inline Tensor mean(const Tensor& a, std::size_t axis) { return reduce(ReduceOp::mean, a, axis); }
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

// Shape manipulation. All of these copy; backward routes gradients back to
// the source positions.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& a);  // swaps the last two axes

// Row lookup: out[..., :] = table[ids[...], :]. Positions with mask 0 produce
// zero rows and send no gradient. Throws DataError for ids >= rows.
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, const Shape& ids_shape,
                 const Mask* mask = nullptr);

// Normalizes the last axis to zero mean / unit variance, then gain * x + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Shape resulting from broadcasting a against b; throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace asag
