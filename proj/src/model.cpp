#include "asag/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace asag::model {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("invalid value '" + value + "' for model key '" + key + "'");
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(d_emb, "d_emb");
  positive(d_model, "d_model");
  positive(head_count, "head_count");
  positive(d_ffn, "d_ffn");
  positive(max_len, "max_len");
  positive(encoder_layers, "encoder_layers");
  positive(aggregation_layers, "aggregation_layers");
  positive(pooling_dim, "pooling_dim");
  if (vocab_size < 2) throw ConfigError("vocab_size must cover PAD and UNK (>= 2)");
  if (d_model % head_count != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by head_count " +
                      std::to_string(head_count));
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for positional encoding");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "vocab_size=" << vocab_size << '\n'
     << "d_emb=" << d_emb << '\n'
     << "d_model=" << d_model << '\n'
     << "head_count=" << head_count << '\n'
     << "d_ffn=" << d_ffn << '\n'
     << "max_len=" << max_len << '\n'
     << "encoder_layers=" << encoder_layers << '\n'
     << "aggregation_layers=" << aggregation_layers << '\n'
     << "pooling_dim=" << pooling_dim << '\n'
     << "dropout_rate=" << format_double(dropout_rate) << '\n'
     << "share_encoders=" << (share_encoders ? "true" : "false") << '\n'
     << "positional_encoding=" << (positional_encoding ? "true" : "false") << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::map<std::string, std::string> seen;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config line without '=': " + line);
    seen[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (auto& [key, value] : seen) {
    if (key == "vocab_size") c.vocab_size = parse_number<std::size_t>(key, value);
    else if (key == "d_emb") c.d_emb = parse_number<std::size_t>(key, value);
    else if (key == "d_model") c.d_model = parse_number<std::size_t>(key, value);
    else if (key == "head_count") c.head_count = parse_number<std::size_t>(key, value);
    else if (key == "d_ffn") c.d_ffn = parse_number<std::size_t>(key, value);
    else if (key == "max_len") c.max_len = parse_number<std::size_t>(key, value);
    else if (key == "encoder_layers") c.encoder_layers = parse_number<std::size_t>(key, value);
    else if (key == "aggregation_layers") c.aggregation_layers = parse_number<std::size_t>(key, value);
    else if (key == "pooling_dim") c.pooling_dim = parse_number<std::size_t>(key, value);
    else if (key == "dropout_rate") c.dropout_rate = parse_number<double>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "share_encoders" || key == "positional_encoding") {
      if (value != "true" && value != "false") throw ConfigError(key + " must be true/false");
      (key == "share_encoders" ? c.share_encoders : c.positional_encoding) = value == "true";
    } else {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  return c;
}

nn::ParamList ModelParams::named() const {
  nn::ParamList out;
  out.push_back({"embedding", embedding});
  if (input_projection) nn::collect("input_projection", *input_projection, out);
  for (std::size_t i = 0; i < student_encoder.size(); ++i)
    nn::collect("encoder.student." + std::to_string(i), student_encoder[i], out);
  for (std::size_t i = 0; i < reference_encoder.size(); ++i)
    nn::collect("encoder.reference." + std::to_string(i), reference_encoder[i], out);
  multiway::collect("multiway", multiway, out);
  nn::collect("fuse_p", fuse_p, out);
  nn::collect("fuse_q", fuse_q, out);
  nn::collect("fuse_c", fuse_c, out);
  nn::collect("fusion_projection", fusion_projection, out);
  for (std::size_t i = 0; i < aggregation.size(); ++i)
    nn::collect("aggregation." + std::to_string(i), aggregation[i], out);
  out.push_back({"pooling.w1", pooling.w1});
  out.push_back({"pooling.w2", pooling.w2});
  nn::collect("head.hidden", head.hidden, out);
  nn::collect("head.logits", head.logits, out);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named()) n += p.tensor.numel();
  return n;
}

namespace {

template <typename F>
void visit_linear(nn::Linear& l, F& f) {
  f(l.weight);
  if (l.bias.defined()) f(l.bias);
}

template <typename F>
void visit_block(nn::TransformerBlockParams& b, F& f) {
  visit_linear(b.attention.query, f);
  visit_linear(b.attention.key, f);
  visit_linear(b.attention.value, f);
  visit_linear(b.attention.output, f);
  f(b.norm1.gain);
  f(b.norm1.bias);
  visit_linear(b.ffn.inner, f);
  visit_linear(b.ffn.outer, f);
  f(b.norm2.gain);
  f(b.norm2.bias);
}

// Visits every tensor slot in the same order as ModelParams::named().
template <typename F>
void for_each_slot(ModelParams& p, F f) {
  f(p.embedding);
  if (p.input_projection) visit_linear(*p.input_projection, f);
  for (auto& b : p.student_encoder) visit_block(b, f);
  for (auto& b : p.reference_encoder) visit_block(b, f);
  auto& m = p.multiway;
  for (Tensor* t : {&m.additive_w1, &m.additive_w2, &m.additive_v, &m.subtractive_w,
                    &m.subtractive_v, &m.multiplicative_w, &m.multiplicative_v})
    f(*t);
  for (nn::FeedForward* ffn : {&p.fuse_p, &p.fuse_q, &p.fuse_c}) {
    visit_linear(ffn->inner, f);
    visit_linear(ffn->outer, f);
  }
  visit_linear(p.fusion_projection, f);
  for (auto& b : p.aggregation) visit_block(b, f);
  f(p.pooling.w1);
  f(p.pooling.w2);
  visit_linear(p.head.hidden, f);
  visit_linear(p.head.logits, f);
}

}  // namespace

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  for_each_slot(copy, [](Tensor& t) {
    const bool grad = t.requires_grad();
    t = t.detach();
    t.set_requires_grad(grad);
  });
  return copy;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  ModelParams p;
  p.positional_encoding = config.positional_encoding;
  {
    std::vector<double> table(config.vocab_size * config.d_emb, 0.0);
    for (std::size_t i = config.d_emb; i < table.size(); ++i) table[i] = rng.uniform(-0.1, 0.1);
    p.embedding = Tensor::from({config.vocab_size, config.d_emb}, std::move(table), true);
  }
  if (config.d_emb != d) p.input_projection = nn::make_linear(config.d_emb, d, rng);
  for (std::size_t i = 0; i < config.encoder_layers; ++i)
    p.student_encoder.push_back(nn::make_transformer_block(d, config.head_count, config.d_ffn, rng));
  if (!config.share_encoders) {
    for (std::size_t i = 0; i < config.encoder_layers; ++i)
      p.reference_encoder.push_back(
          nn::make_transformer_block(d, config.head_count, config.d_ffn, rng));
  }
  p.multiway = multiway::make_multiway(d, rng);
  p.fuse_p = nn::make_ffn(2 * d, config.d_ffn, d, rng);
  p.fuse_q = nn::make_ffn(2 * d, config.d_ffn, d, rng);
  p.fuse_c = nn::make_ffn(4 * d, config.d_ffn, d, rng);
  p.fusion_projection = nn::make_linear(3 * d, d, rng);
  for (std::size_t i = 0; i < config.aggregation_layers; ++i)
    p.aggregation.push_back(nn::make_transformer_block(d, config.head_count, config.d_ffn, rng));
  p.pooling.w1 = nn::glorot({1, config.pooling_dim}, config.pooling_dim, 1, rng);
  p.pooling.w2 = nn::glorot({config.pooling_dim, d}, d, config.pooling_dim, rng);
  p.head.hidden = nn::make_linear(d, d, rng);
  p.head.logits = nn::make_linear(d, 2, rng);
  return p;
}

namespace {

Tensor encode_one(const ModelParams& params, const std::vector<nn::TransformerBlockParams>& blocks,
                  const Tensor& vectors, const Mask& mask, const nn::Dropout* dropout) {
  Tensor x = params.input_projection ? nn::linear_forward(*params.input_projection, vectors) : vectors;
  const std::size_t len = x.dim(x.rank() - 2);
  if (params.positional_encoding) x = add(x, nn::positional_encoding(len, x.shape().back()));
  x = nn::zero_masked_rows(x, mask);
  for (const auto& block : blocks) x = nn::transformer_block(block, x, mask, dropout);
  return x;
}

Mask union_mask(const Mask& a, const Mask& b) {
  if (a.shape != b.shape) {
    throw ShapeError("masks differ in shape: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  Mask out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] || b.values[i];
  return out;
}

}  // namespace

EncodedPair encode_answers(const ModelParams& params, const Tensor& student, const Mask& student_mask,
                           const Tensor& reference, const Mask& reference_mask,
                           const nn::Dropout* dropout) {
  const auto& ref_blocks = params.reference_encoder.empty() ? params.student_encoder
                                                            : params.reference_encoder;
  return {encode_one(params, params.student_encoder, student, student_mask, dropout),
          encode_one(params, ref_blocks, reference, reference_mask, dropout)};
}

EncodedPair encode_answers(const ModelParams& params, const nn::EmbeddedSequence& student,
                           const nn::EmbeddedSequence& reference) {
  if (student.vectors.dim(0) != reference.vectors.dim(0)) {
    throw ShapeError("student and reference must be padded to the same length");
  }
  return encode_answers(params, student.vectors, student.valid, reference.vectors, reference.valid);
}

AggregatedSequence inside_aggregation(const ModelParams& params, const multiway::MultiwayOutput& mw,
                                      const Tensor& h_q, const Tensor& h_p, const Mask& q_mask,
                                      const Mask& p_mask, const nn::Dropout* dropout) {
  const std::size_t last = h_q.rank() - 1;
  if (h_q.shape() != h_p.shape()) {
    throw ShapeError("inside aggregation needs equal-length encodings: " + shape_str(h_q.shape()) +
                     " vs " + shape_str(h_p.shape()));
  }
  FusedSequence fused;
  fused.g_q = nn::zero_masked_rows(
      nn::positionwise_ffn(params.fuse_q, concat({h_q, mw.self_student}, last)), q_mask);
  fused.g_p = nn::zero_masked_rows(
      nn::positionwise_ffn(params.fuse_p, concat({h_p, mw.self_reference}, last)), p_mask);
  fused.g_c = nn::zero_masked_rows(
      nn::positionwise_ffn(params.fuse_c,
                           concat({mw.cross[0], mw.cross[1], mw.cross[2], mw.cross[3]}, last)),
      q_mask);
  Mask mask = union_mask(q_mask, p_mask);
  Tensor z = nn::linear_forward(params.fusion_projection,
                                concat({fused.g_p, fused.g_q, fused.g_c}, last));
  z = nn::zero_masked_rows(z, mask);
  for (const auto& block : params.aggregation) z = nn::transformer_block(block, z, mask, dropout);
  return {z, mask, fused};
}

PoolingResult attention_pooling(const PoolingParams& pooling, const Tensor& z, const Mask& mask) {
  const bool unbatched = z.rank() == 2;
  Tensor z3 = unbatched ? reshape(z, {1, z.dim(0), z.dim(1)}) : z;
  const std::size_t batch = z3.dim(0), len = z3.dim(1), d = z3.dim(2);
  if (pooling.w2.dim(1) != d) {
    throw ShapeError("pooling expects width " + std::to_string(pooling.w2.dim(1)) + ", got " +
                     shape_str(z.shape()));
  }
  if (mask.numel() != batch * len) {
    throw ShapeError("pooling mask " + shape_str(mask.shape) + " does not match " +
                     shape_str(z.shape()));
  }
  Tensor hidden = tanh(matmul(z3, transpose(pooling.w2)));                     // [B x L x d_att]
  Tensor scores = reshape(matmul(hidden, transpose(pooling.w1)), {batch, 1, len});
  Tensor weights = masked_softmax(scores, mask.reshaped({batch, 1, len}));
  Tensor x = reshape(matmul(weights, z3), {batch, d});
  if (unbatched) x = reshape(x, {d});
  return {x, weights};
}

Tensor predict_logits(const OutputHead& head, const Tensor& x) {
  return nn::linear_forward(head.logits, relu(nn::linear_forward(head.hidden, x)));
}

Tensor predict(const OutputHead& head, const Tensor& x) { return softmax(predict_logits(head, x)); }

Tensor loss(const Tensor& probs, const std::vector<int>& labels) {
  Tensor p = probs.rank() == 1 ? reshape(probs, {1, probs.dim(0)}) : probs;
  if (p.rank() != 2 || p.dim(1) != 2 || p.dim(0) != labels.size()) {
    throw ShapeError("loss expects [" + std::to_string(labels.size()) + " x 2] probabilities, got " +
                     shape_str(probs.shape()));
  }
  std::vector<double> onehot(p.numel(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw DataError("label must be 0 or 1, got " + std::to_string(labels[i]));
    }
    onehot[i * 2 + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor picked = sum(mul(p, Tensor::from(p.shape(), std::move(onehot))), 1);
  return mean(neg(log_clamped(picked, kProbabilityFloor)));
}

Tensor model_forward(const ModelParams& params, const data::Batch& batch, const nn::Dropout* dropout) {
  if (batch.size == 0) throw DataError("empty batch");
  Tensor student = nn::embed_batch(batch.student_ids, batch.student_mask, params.embedding);
  Tensor reference = nn::embed_batch(batch.reference_ids, batch.reference_mask, params.embedding);
  auto enc = encode_answers(params, student, batch.student_mask, reference, batch.reference_mask,
                            dropout);
  auto mw = multiway::multiway_forward(params.multiway, enc.h_q, enc.h_p, batch.student_mask,
                                       batch.reference_mask);
  auto agg = inside_aggregation(params, mw, enc.h_q, enc.h_p, batch.student_mask,
                                batch.reference_mask, dropout);
  auto pooled = attention_pooling(params.pooling, agg.z, agg.mask);
  return predict(params.head, pooled.x);
}

}  // namespace asag::model
