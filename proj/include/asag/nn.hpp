#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "asag/ops.hpp"
#include "asag/random.hpp"
#include "asag/tensor.hpp"

namespace asag::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(...)) with requires_grad set.
Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// y = x W + b with W [d_in x d_out]. A default-constructed bias means none.
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

Linear make_linear(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true);
Tensor linear_forward(const Linear& layer, const Tensor& x);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

inline constexpr double kLayerNormEps = 1e-5;

LayerNormParams make_layer_norm(std::size_t d);
Tensor layer_norm(const Tensor& x, const LayerNormParams& params);

// relu(x W1 + b1) W2 + b2, applied independently at every position.
struct FeedForward {
  Linear inner;
  Linear outer;
};

FeedForward make_ffn(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng);
Tensor positionwise_ffn(const FeedForward& params, const Tensor& x);

struct EmbeddedSequence {
  std::vector<std::size_t> tokens;
  Tensor vectors;  // [L x d_emb], zero rows where masked
  Mask valid;      // [L]
};

EmbeddedSequence embed(const std::vector<std::size_t>& tokens, const Tensor& table,
                       const Mask& valid);
// Batched lookup: ids/mask are [B x L] row-major, result [B x L x d_emb].
Tensor embed_batch(const std::vector<std::size_t>& ids, const Mask& valid, const Tensor& table);

// Sinusoidal table, [L x d]; d must be even.
Tensor positional_encoding(std::size_t length, std::size_t d);

// Inverted dropout. Inactive when rate == 0 or rng is null.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  Tensor apply(const Tensor& x) const;
};

struct AttentionParams {
  std::size_t heads = 1;
  Linear query;
  Linear key;  // no bias: it would shift whole score rows, which softmax ignores
  Linear value;
  Linear output;
};

struct AttentionResult {
  Tensor output;   // same leading layout as the queries
  Tensor weights;  // [B x heads x Lq x Lk]
};

AttentionParams make_attention(std::size_t d_model, std::size_t heads, Rng& rng);

// Scaled dot-product attention per head; heads are concatenated and passed
// through the output projection. Accepts [L x d] or [B x L x d] inputs with
// key_mask shaped [Lk] or [B x Lk].
AttentionResult multi_head_attention(const AttentionParams& params, const Tensor& queries,
                                     const Tensor& keys_values, const Mask& key_mask);

struct TransformerBlockParams {
  AttentionParams attention;
  LayerNormParams norm1;
  FeedForward ffn;
  LayerNormParams norm2;
};

TransformerBlockParams make_transformer_block(std::size_t d_model, std::size_t heads,
                                              std::size_t d_ffn, Rng& rng);

// Post-norm encoder block:
//   h = LN(x + MHA(x, x, x)),  y = LN(h + FFN(h)),  masked rows of y zeroed.
Tensor transformer_block(const TransformerBlockParams& params, const Tensor& x, const Mask& mask,
                         const Dropout* dropout = nullptr);

void collect(const std::string& prefix, const Linear& layer, ParamList& out);
void collect(const std::string& prefix, const LayerNormParams& norm, ParamList& out);
void collect(const std::string& prefix, const FeedForward& ffn, ParamList& out);
void collect(const std::string& prefix, const AttentionParams& attn, ParamList& out);
void collect(const std::string& prefix, const TransformerBlockParams& block, ParamList& out);

// Zeroes the rows of x ([B x L x d] or [L x d]) where mask ([B x L] / [L]) is 0.
Tensor zero_masked_rows(const Tensor& x, const Mask& mask);

}  // namespace asag::nn
