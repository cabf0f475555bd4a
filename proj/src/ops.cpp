#include "asag/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace asag {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

// C (m x n) (+)= A (m x k) * B (k x n). i-k-j order: each C[i,j] sums its k
// terms in ascending order regardless of i, so row results do not depend on
// the row's position in A.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

[[noreturn]] void matmul_mismatch(const Shape& a, const Shape& b) {
  throw ShapeError("matmul shape mismatch: " + shape_str(a) + " x " + shape_str(b));
}

// Walks every index of `out_shape`, passing offsets into a and b computed from
// broadcast strides. The innermost axis is a tight loop.
template <typename F>
void for_each_broadcast(const Shape& out_shape, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = shape_numel(out_shape);
  if (rank == 0 || total == 0) return;
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t flat = 0;
  while (flat < total) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t ax = 0; ax + 1 < rank; ++ax) {
      oa += idx[ax] * sa[ax];
      ob += idx[ax] * sb[ax];
    }
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, oa + j * ia, ob + j * ib);
    flat += inner;
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) break;
      idx[ax] = 0;
    }
  }
}

std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t offset = out.size() - src.size();
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    if (src[i] != 1) strides[i + offset] = stride;
    stride *= src[i];
  }
  return strides;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) matmul_mismatch(as, bs);
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t n = bs[bs.size() - 1];
  if (bs[bs.size() - 2] != k) matmul_mismatch(as, bs);

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();

  if (bs.size() == 2) {
    // Flatten every leading axis of a into rows.
    const std::size_t rows = a.numel() / k;
    std::vector<double> out(rows * n);
    gemm(ai->data.data(), bi->data.data(), out.data(), rows, k, n, false);
    return detail::make_result(out_shape, std::move(out), {a, b},
                               [ai, bi, rows, k, n](const TensorImpl& o) {
      if (ai->requires_grad) {
        std::vector<double> bt(k * n);
        transpose_into(bi->data.data(), bt.data(), k, n);
        gemm(o.grad.data(), bt.data(), ai->grad_buffer().data(), rows, n, k, true);
      }
      if (bi->requires_grad) {
        std::vector<double> at(rows * k);
        transpose_into(ai->data.data(), at.data(), rows, k);
        gemm(at.data(), o.grad.data(), bi->grad_buffer().data(), k, rows, n, true);
      }
    });
  }

  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    matmul_mismatch(as, bs);
  }
  const std::size_t batch = a.numel() / (m * k);
  std::vector<double> out(batch * m * n);
  for (std::size_t p = 0; p < batch; ++p) {
    gemm(ai->data.data() + p * m * k, bi->data.data() + p * k * n, out.data() + p * m * n, m, k,
         n, false);
  }
  return detail::make_result(out_shape, std::move(out), {a, b},
                             [ai, bi, batch, m, k, n](const TensorImpl& o) {
    std::vector<double> scratch;
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      scratch.resize(k * n);
      for (std::size_t p = 0; p < batch; ++p) {
        transpose_into(bi->data.data() + p * k * n, scratch.data(), k, n);
        gemm(o.grad.data() + p * m * n, scratch.data(), ga.data() + p * m * k, m, n, k, true);
      }
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      scratch.resize(m * k);
      for (std::size_t p = 0; p < batch; ++p) {
        transpose_into(ai->data.data() + p * m * k, scratch.data(), m, k);
        gemm(scratch.data(), o.grad.data() + p * m * n, gb.data() + p * k * n, k, m, n, true);
      }
    }
  });
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  const double* ad = ai->data.data();
  const double* bd = bi->data.data();
  const bool same = a.shape() == b.shape();

  auto apply = [&](auto fn) {
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(ad[i], bd[i]);
    } else {
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = fn(ad[ia], bd[ib]);
      });
    }
  };
  switch (op) {
    case BinaryOp::add: apply([](double x, double y) { return x + y; }); break;
    case BinaryOp::sub: apply([](double x, double y) { return x - y; }); break;
    case BinaryOp::mul: apply([](double x, double y) { return x * y; }); break;
  }

  return detail::make_result(out_shape, std::move(out), {a, b},
                             [ai, bi, op, sa, sb, same, out_shape](const TensorImpl& o) {
    const double* g = o.grad.data();
    double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
    double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
    const double* ad = ai->data.data();
    const double* bd = bi->data.data();
    auto route = [&](std::size_t oi, std::size_t ia, std::size_t ib) {
      switch (op) {
        case BinaryOp::add:
          if (ga) ga[ia] += g[oi];
          if (gb) gb[ib] += g[oi];
          break;
        case BinaryOp::sub:
          if (ga) ga[ia] += g[oi];
          if (gb) gb[ib] -= g[oi];
          break;
        case BinaryOp::mul:
          if (ga) ga[ia] += g[oi] * bd[ib];
          if (gb) gb[ib] += g[oi] * ad[ia];
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) route(i, i, i);
    } else {
      for_each_broadcast(out_shape, sa, sb, route);
    }
  });
}

namespace {
thread_local double relu_distance = std::numeric_limits<double>::infinity();
}  // namespace

double relu_kink_distance() { return relu_distance; }
void reset_relu_kink_distance() { relu_distance = std::numeric_limits<double>::infinity(); }

Tensor unary(UnaryOp op, const Tensor& a, double factor) {
  ImplPtr ai = a.impl();
  const auto& x = ai->data;
  std::vector<double> out(x.size());
  switch (op) {
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
      break;
    case UnaryOp::relu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > 0.0 ? x[i] : 0.0;
        if (x[i] != 0.0) relu_distance = std::min(relu_distance, std::abs(x[i]));
      }
      break;
    case UnaryOp::neg:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
      break;
    case UnaryOp::scale:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
      break;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [ai, op, factor](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    const auto& g = o.grad;
    const auto& y = o.data;
    const auto& x = ai->data;
    switch (op) {
      case UnaryOp::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case UnaryOp::exp:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        break;
      case UnaryOp::relu:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      case UnaryOp::neg:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
        break;
      case UnaryOp::scale:
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
        break;
    }
  });
}

Tensor log_clamped(const Tensor& a, double floor) {
  ImplPtr ai = a.impl();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(ai->data[i], floor));
  return detail::make_result(a.shape(), std::move(out), {a}, [ai, floor](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (ai->data[i] > floor) ga[i] += o.grad[i] / ai->data[i];
    }
  });
}

Tensor masked_softmax(const Tensor& scores, const Mask& mask) {
  const Shape& shape = scores.shape();
  const Mask full = mask.broadcast_to(shape);
  const std::size_t n = shape.back();
  const std::size_t rows = scores.numel() / n;
  ImplPtr si = scores.impl();
  std::vector<double> out(scores.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = si->data.data() + r * n;
    const std::uint8_t* mk = full.values.data() + r * n;
    double* y = out.data() + r * n;
    double peak = kMaskedScore;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      double v = mk[j] ? s[j] : s[j] + kMaskedScore;
      if (mk[j]) any = true;
      if (j == 0 || v > peak) peak = v;
    }
    if (!any) {
      throw MaskError("softmax row " + std::to_string(r) + " of " + shape_str(shape) +
                      " has no unmasked entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double v = mk[j] ? s[j] : s[j] + kMaskedScore;
      y[j] = std::exp(v - peak);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] = mk[j] ? y[j] / total : 0.0;
  }
  return detail::make_result(shape, std::move(out), {scores}, [si, n, rows](const TensorImpl& o) {
    auto gs = si->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) gs[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor softmax(const Tensor& scores) { return masked_softmax(scores, Mask::all({1})); }

Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis) {
  const Shape& shape = a.shape();
  if (axis >= shape.size()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  const double factor = op == ReduceOp::mean ? 1.0 / static_cast<double>(extent) : 1.0;
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out_shape.push_back(shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  ImplPtr ai = a.impl();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += ai->data[(o * extent + e) * inner + i];
  if (factor != 1.0)
    for (auto& v : out) v *= factor;
  return detail::make_result(out_shape, std::move(out), {a},
                             [ai, outer, extent, inner, factor](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t p = 0; p < outer; ++p)
      for (std::size_t e = 0; e < extent; ++e)
        for (std::size_t i = 0; i < inner; ++i)
          ga[(p * extent + e) * inner + i] += factor * o.grad[p * inner + i];
  });
}

Tensor sum(const Tensor& a) { return reduce(ReduceOp::sum, reshape(a, {a.numel()}), 0); }
Tensor mean(const Tensor& a) { return reduce(ReduceOp::mean, reshape(a, {a.numel()}), 0); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  ImplPtr ai = a.impl();
  return detail::make_result(std::move(shape), ai->data, {a}, [ai](const TensorImpl& o) {
    ai->accumulate_grad(o.grad);
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    if (!ok) {
      throw ShapeError("concat extents inconsistent: " + shape_str(first) + " vs " + shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<ImplPtr> impls;
  std::vector<std::size_t> widths;
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * w, w, out.data() + o * out_row + offset);
    impls.push_back(p.impl());
    widths.push_back(w);
    offset += w;
  }
  return detail::make_result(out_shape, std::move(out), parts,
                             [impls, widths, outer, out_row](const TensorImpl& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < impls.size(); ++k) {
      const std::size_t w = widths[k];
      if (impls[k]->requires_grad) {
        auto g = impls[k]->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * out_row + off + j];
      }
      off += w;
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner;
  const std::size_t w = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  ImplPtr ai = a.impl();
  std::vector<double> out(outer * w);
  for (std::size_t r = 0; r < outer; ++r)
    std::copy_n(ai->data.data() + r * src_row + off, w, out.data() + r * w);
  return detail::make_result(out_shape, std::move(out), {a},
                             [ai, outer, src_row, w, off](const TensorImpl& o) {
    auto g = ai->grad_buffer();
    for (std::size_t r = 0; r < outer; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * src_row + off + j] += o.grad[r * w + j];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) throw ShapeError("permute rank mismatch for " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (auto ax : axes) {
    if (ax >= s.size() || seen[ax]) throw ShapeError("invalid permutation for " + shape_str(s));
    seen[ax] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  const auto src_strides = row_major_strides(s);
  // Source offset for each output flat index.
  std::vector<std::size_t> index_map(a.numel());
  {
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t flat = 0; flat < index_map.size(); ++flat) {
      std::size_t src = 0;
      for (std::size_t i = 0; i < s.size(); ++i) src += idx[i] * src_strides[axes[i]];
      index_map[flat] = src;
      for (std::size_t i = s.size(); i-- > 0;) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
  }
  ImplPtr ai = a.impl();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ai->data[index_map[i]];
  return detail::make_result(out_shape, std::move(out), {a},
                             [ai, index_map = std::move(index_map)](const TensorImpl& o) {
    auto g = ai->grad_buffer();
    for (std::size_t i = 0; i < index_map.size(); ++i) g[index_map[i]] += o.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, const Shape& ids_shape,
                 const Mask* mask) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(ids_shape) != ids.size()) {
    throw ShapeError("ids shape " + shape_str(ids_shape) + " does not hold " +
                     std::to_string(ids.size()) + " ids");
  }
  if (mask && mask->values.size() != ids.size()) {
    throw ShapeError("embedding mask " + shape_str(mask->shape) + " does not match ids " +
                     shape_str(ids_shape));
  }
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::uint8_t> use(ids.size(), 1);
  if (mask) use = mask->values;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (use[i] && ids[i] >= rows) {
      throw DataError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                      std::to_string(rows));
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  ImplPtr ti = table.impl();
  std::vector<double> out(ids.size() * d, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (use[i]) std::copy_n(ti->data.data() + ids[i] * d, d, out.data() + i * d);
  return detail::make_result(out_shape, std::move(out), {table},
                             [ti, ids, use, d](const TensorImpl& o) {
    auto g = ti->grad_buffer();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!use[i]) continue;
      for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += o.grad[i * d + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm affine params must have " + std::to_string(d) + " entries");
  }
  const std::size_t rows = x.numel() / d;
  ImplPtr xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xi->data.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv;
      out[r * d + j] = xhat[r * d + j] * gi->data[j] + bi->data[j];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x, gain, bias},
                             [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                              rows](const TensorImpl& o) {
    const auto& g = o.grad;
    if (gi->requires_grad || bi->requires_grad) {
      double* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
      double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += g[r * d + j] * xhat[r * d + j];
          if (gb) gb[j] += g[r * d + j];
        }
    }
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    const double dn = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = g[r * d + j] * gi->data[j];
        s1 += dxh;
        s2 += dxh * xhat[r * d + j];
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = g[r * d + j] * gi->data[j];
        gx[r * d + j] += inv_std[r] / dn * (dn * dxh - s1 - xhat[r * d + j] * s2);
      }
    }
  });
}

}  // namespace asag
