#include "asag/diagnostics.hpp"

#include <functional>
#include <memory>

#include "asag/gradcheck.hpp"

namespace asag::diagnostics {

namespace {

constexpr std::size_t kBatch = 2;
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxDraws = 50;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-scale, scale);
  return Tensor::from(shape, std::move(values));
}

// Weighted sum with fixed random weights, so no output coordinate can hide
// behind a symmetric reduction.
Tensor readout(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

std::vector<Tensor> tensors_of(const nn::ParamList& list) {
  std::vector<Tensor> out;
  for (const auto& p : list) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> joined(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct Probe {
  std::function<Tensor()> f;
  std::vector<Tensor> params;
};

// True when no relu input lies within kKinkMargin of zero at the probe point.
bool smooth(const Probe& probe) {
  NoGradGuard no_grad;
  reset_relu_kink_distance();
  probe.f();
  return relu_kink_distance() >= kKinkMargin;
}

// The second example's student answer fills three of four positions, its
// reference answer two.
Mask student_mask() { return Mask::from({kBatch, 4}, {1, 1, 1, 1, 1, 1, 1, 0}); }
Mask reference_mask() { return Mask::from({kBatch, 4}, {1, 1, 1, 1, 1, 1, 0, 0}); }

}  // namespace

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.vocab_size = 12;
  c.d_emb = 8;
  c.d_model = 8;
  c.head_count = 2;
  c.d_ffn = 16;
  c.max_len = 4;
  c.encoder_layers = 1;
  c.aggregation_layers = 1;
  c.pooling_dim = 8;
  c.dropout_rate = 0.0;
  c.share_encoders = true;
  return c;
}

std::vector<GradCheckEntry> run_gradcheck_suite(const model::ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t L = config.max_len;
  const std::size_t d = config.d_model;
  if (L != 4) throw ConfigError("the gradient-check suite runs at max_len 4");
  const Shape seq{kBatch, L, d};
  const Mask q_mask = student_mask();
  const Mask p_mask = reference_mask();

  SeedStreams streams(seed);
  Rng rng = streams.stream("gradcheck");
  std::vector<GradCheckEntry> out;
  // Probes that land next to a relu kink are redrawn: a central difference
  // across the kink measures nothing about the backward rule.
  auto check = [&](std::string name, const std::function<Probe()>& draw, double tolerance) {
    Probe probe = draw();
    for (int attempt = 1; attempt < kMaxDraws && !smooth(probe); ++attempt) probe = draw();
    out.push_back({std::move(name), grad_check_params(probe.f, probe.params), tolerance});
  };

  check("linear", [&] {
    auto layer = nn::make_linear(d, d, rng);
    layer.bias = random_tensor({d}, rng);
    Tensor x = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    return Probe{[=] { return readout(nn::linear_forward(layer, x), r); }, {x, layer.weight, layer.bias}};
  }, kLayerTolerance);

  check("layer_norm", [&] {
    nn::LayerNormParams norm{random_tensor({d}, rng), random_tensor({d}, rng)};
    Tensor x = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    return Probe{[=] { return readout(nn::layer_norm(x, norm), r); }, {x, norm.gain, norm.bias}};
  }, kLayerTolerance);

  check("feed_forward", [&] {
    auto ffn = nn::make_ffn(d, config.d_ffn, d, rng);
    ffn.inner.bias = random_tensor({config.d_ffn}, rng, 0.1);
    Tensor x = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    nn::ParamList params;
    nn::collect("ffn", ffn, params);
    return Probe{[=] { return readout(nn::positionwise_ffn(ffn, x), r); }, joined({x}, tensors_of(params))};
  }, kLayerTolerance);

  check("embedding", [&] {
    Tensor table = random_tensor({config.vocab_size, d}, rng, 0.5);
    std::vector<std::size_t> ids(kBatch * L);
    for (auto& id : ids) id = rng.below(config.vocab_size);
    Tensor r = random_tensor(seq, rng);
    return Probe{[=] { return readout(nn::embed_batch(ids, q_mask, table), r); }, {table}};
  }, kLayerTolerance);

  check("multi_head_attention", [&] {
    auto attn = nn::make_attention(d, config.head_count, rng);
    Tensor q = random_tensor(seq, rng);
    Tensor kv = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    nn::ParamList params;
    nn::collect("attention", attn, params);
    return Probe{[=] { return readout(nn::multi_head_attention(attn, q, kv, p_mask).output, r); },
                 joined({q, kv}, tensors_of(params))};
  }, kLayerTolerance);

  check("transformer_block", [&] {
    auto block = nn::make_transformer_block(d, config.head_count, config.d_ffn, rng);
    Tensor x = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    nn::ParamList params;
    nn::collect("block", block, params);
    return Probe{[=] { return readout(nn::transformer_block(block, x, q_mask), r); },
                 joined({x}, tensors_of(params))};
  }, kLayerTolerance);

  check("self_attention", [&] {
    Tensor h = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    return Probe{[=] { return readout(multiway::self_attention_block(h, q_mask).output, r); }, {h}};
  }, kLayerTolerance);

  auto draw_multiway = [&] {
    auto mw = multiway::make_multiway(d, rng);
    nn::ParamList list;
    multiway::collect("multiway", mw, list);
    return std::make_pair(mw, tensors_of(list));
  };
  for (auto kind : multiway::kCrossKinds) {
    check("cross_attention." + std::string(multiway::kind_name(kind)), [&] {
      auto [mw, params] = draw_multiway();
      Tensor h_q = random_tensor(seq, rng);
      Tensor h_p = random_tensor(seq, rng);
      Tensor r = random_tensor(seq, rng);
      auto f = [=, mw = mw] {
        return readout(multiway::cross_attention(kind, mw, h_q, h_p, p_mask).output, r);
      };
      return Probe{f, joined({h_q, h_p}, params)};
    }, kLayerTolerance);
  }

  check("multiway", [&] {
    auto [mw, params] = draw_multiway();
    Tensor h_q = random_tensor(seq, rng);
    Tensor h_p = random_tensor(seq, rng);
    std::vector<Tensor> r;
    for (int i = 0; i < 6; ++i) r.push_back(random_tensor(seq, rng));
    auto f = [=, mw = mw] {
      auto o = multiway::multiway_forward(mw, h_q, h_p, q_mask, p_mask);
      Tensor total = add(readout(o.self_student, r[0]), readout(o.self_reference, r[1]));
      for (std::size_t k = 0; k < 4; ++k) total = add(total, readout(o.cross[k], r[2 + k]));
      return total;
    };
    return Probe{f, joined({h_q, h_p}, params)};
  }, kLayerTolerance);

  Rng init_rng = streams.stream("init");
  check("inside_aggregation", [&] {
    auto model = std::make_shared<model::ModelParams>(model::init_params(config, init_rng));
    Tensor h_q = random_tensor(seq, rng);
    Tensor h_p = random_tensor(seq, rng);
    Tensor r = random_tensor(seq, rng);
    nn::ParamList params;
    nn::collect("fuse_p", model->fuse_p, params);
    nn::collect("fuse_q", model->fuse_q, params);
    nn::collect("fuse_c", model->fuse_c, params);
    nn::collect("fusion_projection", model->fusion_projection, params);
    for (std::size_t i = 0; i < model->aggregation.size(); ++i)
      nn::collect("aggregation." + std::to_string(i), model->aggregation[i], params);
    auto f = [=] {
      auto o = multiway::multiway_forward(model->multiway, h_q, h_p, q_mask, p_mask);
      return readout(model::inside_aggregation(*model, o, h_q, h_p, q_mask, p_mask).z, r);
    };
    return Probe{f, joined({h_q, h_p}, tensors_of(params))};
  }, kLayerTolerance);

  check("attention_pooling", [&] {
    auto pooling = model::init_params(config, init_rng).pooling;
    Tensor z = random_tensor(seq, rng);
    Tensor r = random_tensor({kBatch, d}, rng);
    return Probe{[=] { return readout(model::attention_pooling(pooling, z, q_mask).x, r); },
                 {z, pooling.w1, pooling.w2}};
  }, kLayerTolerance);

  check("output_head_loss", [&] {
    auto head = model::init_params(config, init_rng).head;
    Tensor x = random_tensor({kBatch, d}, rng);
    nn::ParamList params;
    nn::collect("head.hidden", head.hidden, params);
    nn::collect("head.logits", head.logits, params);
    const std::vector<int> labels{1, 0};
    return Probe{[=] { return model::loss(model::predict(head, x), labels); }, joined({x}, tensors_of(params))};
  }, kLayerTolerance);

  check("full_model", [&] {
    auto model = std::make_shared<model::ModelParams>(model::init_params(config, init_rng));
    data::Batch batch;
    batch.size = kBatch;
    batch.max_len = L;
    for (std::size_t i = 0; i < kBatch * L; ++i) {
      batch.student_ids.push_back(q_mask.values[i] ? 2 + rng.below(config.vocab_size - 2) : 0);
      batch.reference_ids.push_back(p_mask.values[i] ? 2 + rng.below(config.vocab_size - 2) : 0);
    }
    batch.student_mask = q_mask;
    batch.reference_mask = p_mask;
    batch.labels = {1, 0};
    batch.indices = {0, 1};
    return Probe{[=] { return model::loss(model::model_forward(*model, batch), batch.labels); },
                 tensors_of(model->named())};
  }, kModelTolerance);

  Graph::current().clear();
  return out;
}

}  // namespace asag::diagnostics
