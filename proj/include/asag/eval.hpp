#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "asag/data.hpp"
#include "asag/model.hpp"

namespace asag::eval {

struct ScoredExample {
  double score;  // P(right)
  int label;
};

// Share of examples with (score >= threshold) == label. Throws DataError on
// an empty list.
double accuracy(std::span<const ScoredExample> scored, double threshold = 0.5);

// Mann-Whitney AUC from average ranks; ties earn half credit. Throws
// DataError unless both classes are present.
double auc(std::span<const ScoredExample> scored);

// Surface-overlap logistic regression.
// Features: [jaccard overlap, length ratio, unigram precision, unigram recall, bias].
using LrFeatures = std::array<double, 5>;

struct LrBaselineModel {
  LrFeatures weights{};
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

LrFeatures lr_features(const data::AnswerPair& pair, const data::Vocabulary& vocab);

// Full-batch gradient descent on the mean logistic loss until the gradient
// norm drops below `tolerance` or `max_iterations` is reached.
LrBaselineModel lr_baseline_fit(std::span<const data::AnswerPair> train, const data::Vocabulary& vocab,
                                double learning_rate = 0.5, std::size_t max_iterations = 10000,
                                double tolerance = 1e-6);
double lr_baseline_predict(const LrBaselineModel& model, const data::AnswerPair& pair,
                           const data::Vocabulary& vocab);
std::vector<ScoredExample> lr_baseline_score(const LrBaselineModel& model,
                                             std::span<const data::AnswerPair> pairs,
                                             const data::Vocabulary& vocab);

struct Metrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  double loss = 0.0;
  double positive_rate = 0.0;
};

// Inference-mode scores (P(right)) for every pair, in input order.
std::vector<ScoredExample> score_pairs(const model::ModelParams& params, const data::Vocabulary& vocab,
                                       std::span<const data::AnswerPair> pairs, std::size_t max_len,
                                       std::size_t batch_size = 64);

Metrics evaluate_model(const model::ModelParams& params, const data::Vocabulary& vocab,
                       std::span<const data::AnswerPair> pairs, std::size_t max_len,
                       std::size_t batch_size = 64);

// Loads <checkpoint> plus vocab.txt from the checkpoint's directory.
Metrics evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_path,
                            std::size_t batch_size = 64);

// "dataset<TAB>n<TAB>accuracy<TAB>auc"
std::string metrics_line(const std::string& dataset, const Metrics& metrics);

}  // namespace asag::eval
