#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asag/data.hpp"
#include "asag/model.hpp"
#include "asag/random.hpp"

namespace asag::training {

// Root of all randomness for a run. Consumers draw from named streams:
// "init", "shuffle", "dropout", "embeddings", "generator", "split".
SeedStreams set_global_seed(std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;
};

AdamState make_adam(const nn::ParamList& params, AdamConfig config = {});

// Bias-corrected Adam update from the accumulated grads. Grads are left
// untouched. Throws NumericError naming the first non-finite gradient.
void adam_step(AdamState& state, const nn::ParamList& params);

void zero_grads(const nn::ParamList& params);
// Rescales grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const nn::ParamList& params, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_auc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_val_auc = 0.0;
  bool stopped_early = false;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t patience = 5;  // 0 disables early stopping
  double clip_norm = 5.0;    // 0 disables clipping
  AdamConfig adam;
  // Stop once validation accuracy reaches this value (disabled when > 1).
  double stop_at_val_accuracy = 2.0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TrainReport report;
  model::ModelParams best;  // parameters of the best validation-AUC epoch
};

// Trains `params` in place. Fully determined by (streams, config, data).
FitResult fit(const model::ModelConfig& model_config, model::ModelParams& params,
              const data::Vocabulary& vocab, std::span<const data::AnswerPair> train,
              std::span<const data::AnswerPair> validation, const TrainConfig& config,
              const SeedStreams& streams);

// Header line then one tab-separated line per epoch:
// epoch, train_loss, train_accuracy, val_loss, val_accuracy, val_auc.
// Wall time is left out so reruns compare byte-for-byte.
std::string format_metrics(const TrainReport& report);
void write_metrics(const TrainReport& report, const std::string& path);

}  // namespace asag::training
