#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asag/data.hpp"
#include "asag/multiway.hpp"
#include "asag/nn.hpp"

namespace asag::model {

struct ModelConfig {
  std::size_t vocab_size = 2;
  std::size_t d_emb = 64;
  std::size_t d_model = 64;
  std::size_t head_count = 4;
  std::size_t d_ffn = 256;
  std::size_t max_len = 32;
  std::size_t encoder_layers = 1;
  std::size_t aggregation_layers = 1;
  std::size_t pooling_dim = 64;
  double dropout_rate = 0.0;
  bool share_encoders = true;
  bool positional_encoding = true;  // sinusoidal offsets added before the encoder
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  // key=value lines in a fixed key order; parse() accepts exactly these keys.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

struct PoolingParams {
  Tensor w1;  // [1 x d_att]
  Tensor w2;  // [d_att x d_model]
};

struct OutputHead {
  nn::Linear hidden;  // d_model -> d_model, relu
  nn::Linear logits;  // d_model -> 2
};

struct ModelParams {
  Tensor embedding;                          // [V x d_emb], PAD row starts at zero
  std::optional<nn::Linear> input_projection;  // only when d_emb != d_model
  std::vector<nn::TransformerBlockParams> student_encoder;
  std::vector<nn::TransformerBlockParams> reference_encoder;  // empty when shared
  multiway::MultiwayParams multiway;
  nn::FeedForward fuse_p;  // [h_p ; s_p] -> d_model
  nn::FeedForward fuse_q;  // [h_q ; s_q] -> d_model
  nn::FeedForward fuse_c;  // [h_a ; h_s ; h_m ; h_d] -> d_model
  nn::Linear fusion_projection;  // 3 d_model -> d_model
  std::vector<nn::TransformerBlockParams> aggregation;
  PoolingParams pooling;
  OutputHead head;
  bool positional_encoding = true;

  // Every learnable tensor under a unique, stable name (checkpoint order).
  nn::ParamList named() const;
  std::size_t parameter_count() const;
  // Deep copy (values only).
  ModelParams clone() const;
};

// Glorot-uniform weights, zero biases, unit layer-norm gains. Embedding rows
// are uniform(-0.1, 0.1) with a zero PAD row.
ModelParams init_params(const ModelConfig& config, Rng& rng);

struct EncodedPair {
  Tensor h_q;  // student
  Tensor h_p;  // reference
};

// vectors: [B x L x d_emb] (or [L x d_emb]), masks [B x L] (or [L]).
EncodedPair encode_answers(const ModelParams& params, const Tensor& student, const Mask& student_mask,
                           const Tensor& reference, const Mask& reference_mask,
                           const nn::Dropout* dropout = nullptr);
EncodedPair encode_answers(const ModelParams& params, const nn::EmbeddedSequence& student,
                           const nn::EmbeddedSequence& reference);

struct FusedSequence {
  Tensor g_p;
  Tensor g_q;
  Tensor g_c;
};

struct AggregatedSequence {
  Tensor z;   // [B x L x d_model]
  Mask mask;  // position valid in either answer
  FusedSequence fused;
};

AggregatedSequence inside_aggregation(const ModelParams& params, const multiway::MultiwayOutput& mw,
                                      const Tensor& h_q, const Tensor& h_p, const Mask& q_mask,
                                      const Mask& p_mask, const nn::Dropout* dropout = nullptr);

struct PoolingResult {
  Tensor x;        // [B x d_model] (or [d_model] for unbatched Z)
  Tensor weights;  // [B x 1 x L]
};

// a = softmax(w1 tanh(W2 Z^T)) over unmasked positions, x = a Z.
PoolingResult attention_pooling(const PoolingParams& pooling, const Tensor& z, const Mask& mask);

// Two-layer head with softmax; column 0 = P(wrong), column 1 = P(right).
Tensor predict_logits(const OutputHead& head, const Tensor& x);
Tensor predict(const OutputHead& head, const Tensor& x);

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over rows of -log(max(probs[row, label], 1e-12)). probs: [B x 2] or [2].
Tensor loss(const Tensor& probs, const std::vector<int>& labels);

// Full pipeline; returns probabilities [B x 2].
Tensor model_forward(const ModelParams& params, const data::Batch& batch,
                     const nn::Dropout* dropout = nullptr);

// Checkpoint container, all integers little-endian:
//   u32 version | u32 config_len | config text | u32 tensor_count |
//   per tensor: u32 name_len | name | u32 rank | u64 extents[rank] | f64 values |
//   u64 FNV-1a checksum of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path);

struct LoadedCheckpoint {
  ModelParams params;
  ModelConfig config;
};

// Validates checksum, version, and every tensor shape against the embedded
// config (or `expected` when given). Nothing is returned on failure.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace asag::model
