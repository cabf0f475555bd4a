#include "asag/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "asag/eval.hpp"

namespace asag::training {

SeedStreams set_global_seed(std::uint64_t seed) { return SeedStreams(seed); }

AdamState make_adam(const nn::ParamList& params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first.emplace_back(p.tensor.numel(), 0.0);
    state.second.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

void adam_step(AdamState& state, const nn::ParamList& params) {
  if (params.size() != state.first.size()) {
    throw ShapeError("optimizer state tracks " + std::to_string(state.first.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor tensor = params[k].tensor;
    if (!tensor.has_grad()) continue;
    auto& m = state.first[k];
    auto& v = state.second[k];
    const auto& grad = tensor.impl()->grad;
    auto theta = tensor.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void zero_grads(const nn::ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

double clip_grad_norm(const nn::ParamList& params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.impl()->grad) total += g * g;
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto p : params)
      for (auto& g : p.tensor.impl()->grad) g *= factor;
  }
  return norm;
}

namespace {

eval::Metrics validate(const model::ModelParams& params, const data::Vocabulary& vocab,
                       std::span<const data::AnswerPair> pairs, std::size_t max_len, std::size_t batch_size,
                       std::size_t epoch) {
  try {
    return eval::evaluate_model(params, vocab, pairs, max_len, batch_size);
  } catch (const NumericError& e) {
    throw NumericError("validation after epoch " + std::to_string(epoch) + ": " + e.what());
  }
}

}  // namespace

FitResult fit(const model::ModelConfig& model_config, model::ModelParams& params,
              const data::Vocabulary& vocab, std::span<const data::AnswerPair> train,
              std::span<const data::AnswerPair> validation, const TrainConfig& config,
              const SeedStreams& streams) {
  if (train.empty()) throw DataError("training set is empty");
  if (validation.empty()) throw DataError("validation set is empty");
  model_config.validate();

  Rng shuffle_rng = streams.stream("shuffle");
  Rng dropout_rng = streams.stream("dropout");
  const nn::Dropout dropout{model_config.dropout_rate, &dropout_rng};
  const nn::Dropout* dropout_ptr = model_config.dropout_rate > 0.0 ? &dropout : nullptr;

  const auto named = params.named();
  AdamState adam = make_adam(named, config.adam);
  FitResult result{TrainReport{}, params.clone()};
  result.report.best_val_auc = validate(params, vocab, validation, model_config.max_len, config.batch_size, 0).auc;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    auto batches = data::make_batches(train, vocab, model_config.max_len, config.batch_size,
                                      &shuffle_rng);
    double loss_total = 0.0;
    std::size_t correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      zero_grads(named);
      Graph::current().clear();
      Tensor probs = model::model_forward(params, batch, dropout_ptr);
      Tensor loss = model::loss(probs, batch.labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        Graph::current().clear();
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi + 1));
      }
      backward(loss);
      if (config.clip_norm > 0.0) clip_grad_norm(named, config.clip_norm);
      adam_step(adam, named);
      loss_total += lv * static_cast<double>(batch.size);
      for (std::size_t i = 0; i < batch.size; ++i) {
        const int predicted = probs.data()[i * 2 + 1] >= 0.5 ? 1 : 0;
        correct += predicted == batch.labels[i];
      }
    }

    const auto metrics = validate(params, vocab, validation, model_config.max_len, config.batch_size, epoch);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_total / static_cast<double>(train.size());
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    record.val_loss = metrics.loss;
    record.val_accuracy = metrics.accuracy;
    record.val_auc = metrics.auc;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.epochs.push_back(record);
    if (config.on_epoch) config.on_epoch(record);

    if (metrics.auc > result.report.best_val_auc) {
      result.report.best_val_auc = metrics.auc;
      result.report.best_epoch = epoch;
      result.best = params.clone();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (metrics.accuracy >= config.stop_at_val_accuracy) {
      result.report.stopped_early = true;
      break;
    }
    if (config.patience > 0 && since_best >= config.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  zero_grads(named);
  return result;
}

std::string format_metrics(const TrainReport& report) {
  std::string out = "epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\tval_auc\n";
  char buf[256];
  for (const auto& r : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu\t%.8f\t%.8f\t%.8f\t%.8f\t%.8f\n", r.epoch, r.train_loss,
                  r.train_accuracy, r.val_loss, r.val_accuracy, r.val_auc);
    out += buf;
  }
  return out;
}

void write_metrics(const TrainReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics file " + path);
  out << format_metrics(report);
  if (!out) throw DataError("failed writing metrics file " + path);
}

}  // namespace asag::training
