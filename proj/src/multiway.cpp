#include "asag/multiway.hpp"

#include <algorithm>
#include <cmath>

namespace asag::multiway {

std::string_view kind_name(CrossKind kind) {
  switch (kind) {
    case CrossKind::additive: return "additive";
    case CrossKind::subtractive: return "subtractive";
    case CrossKind::multiplicative: return "multiplicative";
    case CrossKind::dot: return "dot";
  }
  return "unknown";
}

MultiwayParams make_multiway(std::size_t d, Rng& rng) {
  MultiwayParams p;
  p.dim = d;
  p.additive_w1 = nn::glorot({d, d}, d, d, rng);
  p.additive_w2 = nn::glorot({d, d}, d, d, rng);
  p.additive_v = nn::glorot({d, 1}, d, 1, rng);
  p.subtractive_w = nn::glorot({d, d}, d, d, rng);
  p.subtractive_v = nn::glorot({d, 1}, d, 1, rng);
  p.multiplicative_w = nn::glorot({d, d}, d, d, rng);
  p.multiplicative_v = nn::glorot({d, 1}, d, 1, rng);
  return p;
}

void collect(const std::string& prefix, const MultiwayParams& params, nn::ParamList& out) {
  out.push_back({prefix + ".additive.w1", params.additive_w1});
  out.push_back({prefix + ".additive.w2", params.additive_w2});
  out.push_back({prefix + ".additive.v", params.additive_v});
  out.push_back({prefix + ".subtractive.w", params.subtractive_w});
  out.push_back({prefix + ".subtractive.v", params.subtractive_v});
  out.push_back({prefix + ".multiplicative.w", params.multiplicative_w});
  out.push_back({prefix + ".multiplicative.v", params.multiplicative_v});
}

namespace {

struct Batched {
  Tensor value;  // [B x L x d]
  bool squeezed;
};

Batched as_batched(const Tensor& t) {
  if (t.rank() == 2) return {reshape(t, {1, t.dim(0), t.dim(1)}), true};
  if (t.rank() != 3) throw ShapeError("expected [L x d] or [B x L x d], got " + shape_str(t.shape()));
  return {t, false};
}

Tensor restore(const Tensor& t, bool squeezed) {
  return squeezed ? reshape(t, {t.dim(1), t.dim(2)}) : t;
}

void require_unmasked(const Mask& mask, std::size_t batch, std::size_t length, const char* what) {
  if (mask.numel() != batch * length) {
    throw ShapeError(std::string(what) + " mask " + shape_str(mask.shape) +
                     " does not match sequence length " + std::to_string(length));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    auto first = mask.values.begin() + static_cast<std::ptrdiff_t>(b * length);
    if (std::none_of(first, first + static_cast<std::ptrdiff_t>(length), [](auto v) { return v; })) {
      throw MaskError(std::string(what) + " sequence is fully masked (batch row " +
                      std::to_string(b) + ")");
    }
  }
}

// v . tanh(x W) over the last axis of a [B x Lq x Lp x d] tensor -> [B x Lq x Lp].
Tensor projected_score(const Tensor& pairs, const Tensor& w, const Tensor& v) {
  Tensor e = matmul(tanh(matmul(pairs, w)), v);
  return reshape(e, {pairs.dim(0), pairs.dim(1), pairs.dim(2)});
}

}  // namespace

AttentionOutput self_attention_block(const Tensor& h, const Mask& mask) {
  auto [x, squeezed] = as_batched(h);
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  require_unmasked(mask, batch, len, "self-attention");
  Tensor scores = scale(matmul(x, transpose(x)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = masked_softmax(scores, mask.reshaped({batch, 1, len}));
  return {restore(matmul(weights, x), squeezed), weights};
}

AttentionOutput cross_attention(CrossKind kind, const MultiwayParams& params, const Tensor& h_q,
                                const Tensor& h_p, const Mask& p_mask) {
  auto [q, squeezed] = as_batched(h_q);
  Tensor p = as_batched(h_p).value;
  if (q.dim(0) != p.dim(0) || q.dim(2) != p.dim(2)) {
    throw ShapeError("cross attention inputs incompatible: " + shape_str(h_q.shape()) + " vs " +
                     shape_str(h_p.shape()));
  }
  const std::size_t batch = q.dim(0), lq = q.dim(1), lp = p.dim(1), d = q.dim(2);
  if (kind != CrossKind::dot && d != params.dim) {
    throw ShapeError("cross attention width " + std::to_string(d) + " does not match parameters (" +
                     std::to_string(params.dim) + ")");
  }
  require_unmasked(p_mask, batch, lp, "reference");

  Tensor scores;
  switch (kind) {
    case CrossKind::additive: {
      Tensor from_p = reshape(matmul(p, params.additive_w1), {batch, 1, lp, d});
      Tensor from_q = reshape(matmul(q, params.additive_w2), {batch, lq, 1, d});
      scores = reshape(matmul(tanh(add(from_p, from_q)), params.additive_v), {batch, lq, lp});
      break;
    }
    case CrossKind::subtractive: {
      Tensor diff = sub(reshape(p, {batch, 1, lp, d}), reshape(q, {batch, lq, 1, d}));
      scores = projected_score(diff, params.subtractive_w, params.subtractive_v);
      break;
    }
    case CrossKind::multiplicative: {
      Tensor prod = mul(reshape(p, {batch, 1, lp, d}), reshape(q, {batch, lq, 1, d}));
      scores = projected_score(prod, params.multiplicative_w, params.multiplicative_v);
      break;
    }
    case CrossKind::dot:
      scores = scale(matmul(q, transpose(p)), 1.0 / std::sqrt(static_cast<double>(d)));
      break;
  }
  Tensor weights = masked_softmax(scores, p_mask.reshaped({batch, 1, lp}));
  return {restore(matmul(weights, p), squeezed), weights};
}

MultiwayOutput multiway_forward(const MultiwayParams& params, const Tensor& h_q, const Tensor& h_p,
                                const Mask& q_mask, const Mask& p_mask) {
  if (h_q.shape().back() != h_p.shape().back()) {
    throw ShapeError("student and reference encodings differ in width: " +
                     shape_str(h_q.shape()) + " vs " + shape_str(h_p.shape()));
  }
  MultiwayOutput out;
  out.self_student = nn::zero_masked_rows(self_attention_block(h_q, q_mask).output, q_mask);
  out.self_reference = nn::zero_masked_rows(self_attention_block(h_p, p_mask).output, p_mask);
  for (std::size_t k = 0; k < kCrossKinds.size(); ++k) {
    out.cross[k] = nn::zero_masked_rows(
        cross_attention(kCrossKinds[k], params, h_q, h_p, p_mask).output, q_mask);
  }
  return out;
}

}  // namespace asag::multiway
