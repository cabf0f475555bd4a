#include "asag/nn.hpp"

#include <algorithm>
#include <cmath>

namespace asag::nn {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-limit, limit);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear make_linear(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias) {
  Linear layer;
  layer.weight = glorot({d_in, d_out}, d_in, d_out, rng);
  if (with_bias) layer.bias = Tensor::zeros({d_out}, true);
  return layer;
}

Tensor linear_forward(const Linear& layer, const Tensor& x) {
  if (x.shape().back() != layer.in_features()) {
    throw ShapeError("linear layer expects last extent " + std::to_string(layer.in_features()) +
                     ", got input " + shape_str(x.shape()));
  }
  Tensor y = matmul(x, layer.weight);
  return layer.bias.defined() ? add(y, layer.bias) : y;
}

LayerNormParams make_layer_norm(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params) {
  return asag::layer_norm(x, params.gain, params.bias, kLayerNormEps);
}

FeedForward make_ffn(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng) {
  FeedForward ffn;
  ffn.inner = make_linear(d_in, d_hidden, rng);
  ffn.outer = make_linear(d_hidden, d_out, rng);
  return ffn;
}

Tensor positionwise_ffn(const FeedForward& params, const Tensor& x) {
  return linear_forward(params.outer, relu(linear_forward(params.inner, x)));
}

EmbeddedSequence embed(const std::vector<std::size_t>& tokens, const Tensor& table,
                       const Mask& valid) {
  if (valid.numel() != tokens.size()) {
    throw ShapeError("embed: mask has " + std::to_string(valid.numel()) + " entries for " +
                     std::to_string(tokens.size()) + " tokens");
  }
  Mask flat = valid.reshaped({tokens.size()});
  return {tokens, embedding(table, tokens, {tokens.size()}, &flat), flat};
}

Tensor embed_batch(const std::vector<std::size_t>& ids, const Mask& valid, const Tensor& table) {
  return embedding(table, ids, valid.shape, &valid);
}

Tensor positional_encoding(std::size_t length, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ShapeError("positional encoding needs an even width, got " + std::to_string(d));
  }
  std::vector<double> pe(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, d}, std::move(pe));
}

Tensor Dropout::apply(const Tensor& x) const {
  if (rate <= 0.0 || rng == nullptr) return x;
  const double keep = 1.0 - rate;
  std::vector<double> m(x.numel());
  for (auto& v : m) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

AttentionParams make_attention(std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ShapeError("d_model " + std::to_string(d_model) + " is not divisible by " +
                     std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.query = make_linear(d_model, d_model, rng);
  p.key = make_linear(d_model, d_model, rng, /*with_bias=*/false);
  p.value = make_linear(d_model, d_model, rng);
  p.output = make_linear(d_model, d_model, rng);
  return p;
}

namespace {

// [B x L x d] -> [B x h x L x d/h]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {b, l, heads, d / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), l = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * dh});
}

}  // namespace

AttentionResult multi_head_attention(const AttentionParams& params, const Tensor& queries,
                                     const Tensor& keys_values, const Mask& key_mask) {
  const bool unbatched = queries.rank() == 2;
  Tensor q3 = unbatched ? reshape(queries, {1, queries.dim(0), queries.dim(1)}) : queries;
  Tensor kv3 = keys_values.rank() == 2
                   ? reshape(keys_values, {1, keys_values.dim(0), keys_values.dim(1)})
                   : keys_values;
  if (q3.rank() != 3 || kv3.rank() != 3 || q3.dim(0) != kv3.dim(0) || q3.dim(2) != kv3.dim(2)) {
    throw ShapeError("attention inputs incompatible: " + shape_str(queries.shape()) + " vs " +
                     shape_str(keys_values.shape()));
  }
  const std::size_t batch = q3.dim(0), lq = q3.dim(1), lk = kv3.dim(1), d = q3.dim(2);
  if (d % params.heads != 0) {
    throw ShapeError("d_model " + std::to_string(d) + " is not divisible by " +
                     std::to_string(params.heads) + " heads");
  }
  if (key_mask.numel() != batch * lk) {
    throw ShapeError("key mask " + shape_str(key_mask.shape) + " does not match keys " +
                     shape_str(kv3.shape()));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    auto first = key_mask.values.begin() + static_cast<std::ptrdiff_t>(b * lk);
    if (std::none_of(first, first + static_cast<std::ptrdiff_t>(lk), [](auto v) { return v; })) {
      throw MaskError("attention over a fully-masked key set (batch row " + std::to_string(b) +
                      ")");
    }
  }
  const std::size_t dh = d / params.heads;
  Tensor q = split_heads(linear_forward(params.query, q3), params.heads);
  Tensor k = split_heads(linear_forward(params.key, kv3), params.heads);
  Tensor v = split_heads(linear_forward(params.value, kv3), params.heads);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor weights = masked_softmax(scores, key_mask.reshaped({batch, 1, 1, lk}));
  Tensor context = merge_heads(matmul(weights, v));
  Tensor out = linear_forward(params.output, context);
  if (unbatched) out = reshape(out, {lq, d});
  return {out, weights};
}

TransformerBlockParams make_transformer_block(std::size_t d_model, std::size_t heads,
                                              std::size_t d_ffn, Rng& rng) {
  TransformerBlockParams p;
  p.attention = make_attention(d_model, heads, rng);
  p.norm1 = make_layer_norm(d_model);
  p.ffn = make_ffn(d_model, d_ffn, d_model, rng);
  p.norm2 = make_layer_norm(d_model);
  return p;
}

Tensor zero_masked_rows(const Tensor& x, const Mask& mask) {
  Shape ms = mask.shape;
  ms.push_back(1);
  return mul(x, mask.reshaped(ms).as_tensor());
}

Tensor transformer_block(const TransformerBlockParams& params, const Tensor& x, const Mask& mask,
                         const Dropout* dropout) {
  Tensor attended = multi_head_attention(params.attention, x, x, mask).output;
  if (dropout) attended = dropout->apply(attended);
  Tensor h = layer_norm(add(x, attended), params.norm1);
  Tensor f = positionwise_ffn(params.ffn, h);
  if (dropout) f = dropout->apply(f);
  Tensor y = layer_norm(add(h, f), params.norm2);
  return zero_masked_rows(y, mask);
}

void collect(const std::string& prefix, const Linear& layer, ParamList& out) {
  out.push_back({prefix + ".weight", layer.weight});
  if (layer.bias.defined()) out.push_back({prefix + ".bias", layer.bias});
}

void collect(const std::string& prefix, const LayerNormParams& norm, ParamList& out) {
  out.push_back({prefix + ".gain", norm.gain});
  out.push_back({prefix + ".bias", norm.bias});
}

void collect(const std::string& prefix, const FeedForward& ffn, ParamList& out) {
  collect(prefix + ".inner", ffn.inner, out);
  collect(prefix + ".outer", ffn.outer, out);
}

void collect(const std::string& prefix, const AttentionParams& attn, ParamList& out) {
  collect(prefix + ".query", attn.query, out);
  collect(prefix + ".key", attn.key, out);
  collect(prefix + ".value", attn.value, out);
  collect(prefix + ".output", attn.output, out);
}

void collect(const std::string& prefix, const TransformerBlockParams& block, ParamList& out) {
  collect(prefix + ".attention", block.attention, out);
  collect(prefix + ".norm1", block.norm1, out);
  collect(prefix + ".ffn", block.ffn, out);
  collect(prefix + ".norm2", block.norm2, out);
}

}  // namespace asag::nn
