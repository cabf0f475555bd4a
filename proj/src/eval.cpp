#include "asag/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

namespace asag::eval {

double accuracy(std::span<const ScoredExample> scored, double threshold) {
  if (scored.empty()) throw DataError("accuracy of an empty example list");
  std::size_t hits = 0;
  for (const auto& s : scored) {
    if ((s.score >= threshold ? 1 : 0) == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scored.size());
}

double auc(std::span<const ScoredExample> scored) {
  for (const auto& e : scored) {
    if (!std::isfinite(e.score)) throw NumericError("AUC got a non-finite score");
  }
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && scored[order[j]].score == scored[order[i]].score) ++j;
    // Ranks i+1 .. j share their average.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (scored[order[t]].label == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw DataError("AUC needs at least one positive and one negative example");
  }
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

LrFeatures lr_features(const data::AnswerPair& pair, const data::Vocabulary& vocab) {
  auto to_ids = [&](const std::string& text) {
    std::vector<std::size_t> ids;
    for (const auto& t : data::tokenize(text)) ids.push_back(vocab.id(t));
    return ids;
  };
  const auto student = to_ids(pair.student_text);
  const auto reference = to_ids(pair.reference_text);

  // UNK never counts as a match.
  std::map<std::size_t, std::size_t> ref_counts, stu_counts;
  for (auto id : reference)
    if (id != data::Vocabulary::kUnk) ++ref_counts[id];
  for (auto id : student)
    if (id != data::Vocabulary::kUnk) ++stu_counts[id];

  std::size_t shared_types = 0;
  std::set<std::size_t> all_types;
  for (auto& [id, c] : stu_counts) {
    all_types.insert(id);
    if (ref_counts.count(id)) ++shared_types;
  }
  for (auto& [id, c] : ref_counts) all_types.insert(id);

  std::size_t clipped = 0;
  for (auto& [id, c] : stu_counts) {
    auto it = ref_counts.find(id);
    if (it != ref_counts.end()) clipped += std::min(c, it->second);
  }
  const double ns = static_cast<double>(student.size());
  const double nr = static_cast<double>(reference.size());
  LrFeatures f{};
  f[0] = all_types.empty() ? 0.0 : static_cast<double>(shared_types) / all_types.size();
  f[1] = nr > 0 ? ns / nr : 0.0;
  f[2] = ns > 0 ? clipped / ns : 0.0;
  f[3] = nr > 0 ? clipped / nr : 0.0;
  f[4] = 1.0;
  return f;
}

namespace {

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double dot(const LrFeatures& w, const LrFeatures& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

}  // namespace

LrBaselineModel lr_baseline_fit(std::span<const data::AnswerPair> train, const data::Vocabulary& vocab,
                                double learning_rate, std::size_t max_iterations, double tolerance) {
  if (train.empty()) throw DataError("logistic-regression baseline needs training data");
  std::vector<LrFeatures> xs;
  xs.reserve(train.size());
  for (const auto& p : train) xs.push_back(lr_features(p, vocab));
  const double n = static_cast<double>(train.size());

  LrBaselineModel model;
  for (model.iterations = 0; model.iterations < max_iterations; ++model.iterations) {
    LrFeatures grad{};
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double err = sigmoid(dot(model.weights, xs[i])) - train[i].label;
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += err * xs[i][j] / n;
    }
    model.gradient_norm = std::sqrt(dot(grad, grad));
    if (model.gradient_norm < tolerance) break;
    for (std::size_t j = 0; j < grad.size(); ++j) model.weights[j] -= learning_rate * grad[j];
  }
  return model;
}

double lr_baseline_predict(const LrBaselineModel& model, const data::AnswerPair& pair,
                           const data::Vocabulary& vocab) {
  return sigmoid(dot(model.weights, lr_features(pair, vocab)));
}

std::vector<ScoredExample> lr_baseline_score(const LrBaselineModel& model,
                                             std::span<const data::AnswerPair> pairs,
                                             const data::Vocabulary& vocab) {
  std::vector<ScoredExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({lr_baseline_predict(model, p, vocab), p.label});
  return out;
}

std::vector<ScoredExample> score_pairs(const model::ModelParams& params, const data::Vocabulary& vocab,
                                       std::span<const data::AnswerPair> pairs, std::size_t max_len,
                                       std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<ScoredExample> out(pairs.size());
  for (const auto& batch : data::make_batches(pairs, vocab, max_len, batch_size, nullptr)) {
    Tensor probs = model::model_forward(params, batch);
    for (std::size_t i = 0; i < batch.size; ++i)
      out[batch.indices[i]] = {probs.data()[i * 2 + 1], batch.labels[i]};
  }
  return out;
}

Metrics evaluate_model(const model::ModelParams& params, const data::Vocabulary& vocab,
                       std::span<const data::AnswerPair> pairs, std::size_t max_len,
                       std::size_t batch_size) {
  if (pairs.empty()) throw DataError("cannot evaluate on an empty dataset");
  auto scored = score_pairs(params, vocab, pairs, max_len, batch_size);
  Metrics m;
  m.n = scored.size();
  m.accuracy = accuracy(scored);
  m.auc = auc(scored);
  double total = 0.0;
  std::size_t positives = 0;
  for (const auto& s : scored) {
    const double p = s.label == 1 ? s.score : 1.0 - s.score;
    total += -std::log(std::max(p, model::kProbabilityFloor));
    positives += s.label == 1;
  }
  m.loss = total / static_cast<double>(m.n);
  m.positive_rate = static_cast<double>(positives) / static_cast<double>(m.n);
  return m;
}

Metrics evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_path,
                            std::size_t batch_size) {
  auto loaded = model::load_checkpoint(checkpoint_path);
  auto vocab_path = std::filesystem::path(checkpoint_path).parent_path() / "vocab.txt";
  auto vocab = data::Vocabulary::load(vocab_path.string());
  if (vocab.size() != loaded.config.vocab_size) {
    throw DataError("vocabulary " + vocab_path.string() + " has " + std::to_string(vocab.size()) +
                    " entries but the checkpoint expects " + std::to_string(loaded.config.vocab_size));
  }
  auto pairs = data::read_dataset(dataset_path);
  return evaluate_model(loaded.params, vocab, pairs, loaded.config.max_len, batch_size);
}

std::string metrics_line(const std::string& dataset, const Metrics& metrics) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s\t%zu\t%.8f\t%.8f", dataset.c_str(), metrics.n,
                metrics.accuracy, metrics.auc);
  return buf;
}

}  // namespace asag::eval
