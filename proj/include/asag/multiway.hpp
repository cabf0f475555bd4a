#pragma once

#include <array>
#include <string>
#include <string_view>

#include "asag/nn.hpp"

namespace asag::multiway {

enum class CrossKind { additive, subtractive, multiplicative, dot };

inline constexpr std::array<CrossKind, 4> kCrossKinds = {
    CrossKind::additive, CrossKind::subtractive, CrossKind::multiplicative, CrossKind::dot};

std::string_view kind_name(CrossKind kind);

// Score functions for student position i over reference position j
// (row-vector convention, x W):
//   additive        v_a . tanh(p_j W1 + q_i W2)
//   subtractive     v_s . tanh((p_j - q_i) W_s)
//   multiplicative  v_m . tanh((p_j * q_i) W_m)
//   dot             (p_j . q_i) / sqrt(d)
// The dot mechanism has no parameters. Score vectors are stored as [d x 1].
struct MultiwayParams {
  std::size_t dim = 0;
  Tensor additive_w1;
  Tensor additive_w2;
  Tensor additive_v;
  Tensor subtractive_w;
  Tensor subtractive_v;
  Tensor multiplicative_w;
  Tensor multiplicative_v;
};

MultiwayParams make_multiway(std::size_t d, Rng& rng);
void collect(const std::string& prefix, const MultiwayParams& params, nn::ParamList& out);

struct AttentionOutput {
  Tensor output;   // [B x Lq x d] (or [Lq x d] for unbatched input)
  Tensor weights;  // [B x Lq x Lk]
};

// s_i = sum_j a_ij h_j with a_i = softmax_j(h_i . h_j / sqrt(d)) over unmasked j.
AttentionOutput self_attention_block(const Tensor& h, const Mask& mask);

// Student positions (h_q) attend over reference positions (h_p).
AttentionOutput cross_attention(CrossKind kind, const MultiwayParams& params, const Tensor& h_q,
                                const Tensor& h_p, const Mask& p_mask);

struct MultiwayOutput {
  Tensor self_student;
  Tensor self_reference;
  std::array<Tensor, 4> cross;  // indexed like kCrossKinds

  const Tensor& cross_of(CrossKind kind) const { return cross[static_cast<std::size_t>(kind)]; }
};

// Self-attention on each sequence plus all four cross mechanisms. Rows at
// masked positions (student rows for self_student and cross, reference rows
// for self_reference) are zero.
MultiwayOutput multiway_forward(const MultiwayParams& params, const Tensor& h_q, const Tensor& h_p,
                                const Mask& q_mask, const Mask& p_mask);

}  // namespace asag::multiway
