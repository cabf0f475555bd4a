#include <doctest.h>

#include <cmath>

#include "asag/eval.hpp"
#include "support.hpp"

using namespace asag;
using eval::ScoredExample;

namespace {

std::vector<ScoredExample> scored(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<ScoredExample> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s[i], y[i]});
  return out;
}

// Exhaustive positive/negative pair count.
double auc_oracle(const std::vector<ScoredExample>& xs) {
  double wins = 0.0, pos = 0.0, neg = 0.0;
  for (const auto& a : xs) (a.label == 1 ? pos : neg) += 1.0;
  for (const auto& p : xs) {
    if (p.label != 1) continue;
    for (const auto& n : xs) {
      if (n.label != 0) continue;
      if (p.score > n.score) wins += 1.0;
      else if (p.score == n.score) wins += 0.5;
    }
  }
  return wins / (pos * neg);
}

std::vector<ScoredExample> random_instance(Rng& rng, bool ties) {
  const std::size_t n = 2 + rng.below(199);
  std::vector<ScoredExample> xs(n);
  for (auto& x : xs) {
    x.score = ties ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
    x.label = rng.bernoulli(0.5) ? 1 : 0;
  }
  xs[0].label = 1;
  xs[1].label = 0;
  return xs;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("accuracy examples") {
  auto xs = scored({0.7, 0.2, 0.6}, {1, 0, 0});
  CHECK(eval::accuracy(xs) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(eval::accuracy(scored({0.9, 0.1}, {1, 0})) == 1.0);
  auto mixed = scored({0.1, 0.2, 0.3, 0.9}, {1, 0, 1, 1});
  CHECK(eval::accuracy(mixed, 0.0) == 0.75);
  CHECK(eval::accuracy(mixed) + eval::accuracy(scored({0.1, 0.2, 0.3, 0.9}, {0, 1, 0, 0})) == 1.0);
  std::vector<ScoredExample> none;
  CHECK_THROWS_AS(eval::accuracy(none), DataError);
}

TEST_CASE("auc examples") {
  CHECK(eval::auc(scored({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0})) == 1.0);
  CHECK(eval::auc(scored({0.9, 0.7, 0.4, 0.1}, {1, 0, 1, 0})) == 0.75);
  CHECK(eval::auc(scored({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0})) == 0.5);
  CHECK(eval::auc(scored({0.1, 0.9}, {1, 0})) == 0.0);
  CHECK_THROWS_AS(eval::auc(scored({0.1, 0.9}, {1, 1})), DataError);
  CHECK_THROWS_AS(eval::auc(scored({NAN, 0.9}, {1, 0})), NumericError);
}

TEST_CASE("auc equals the pair-counting oracle exactly") {
  Rng rng(61);
  for (int i = 0; i < 100; ++i) {
    auto xs = random_instance(rng, i % 2 == 0);
    CHECK(eval::auc(xs) == auc_oracle(xs));
  }
}

TEST_CASE("auc is invariant under monotone transforms") {
  Rng rng(62);
  for (int i = 0; i < 50; ++i) {
    auto xs = random_instance(rng, i % 2 == 0);
    auto ys = xs;
    for (auto& y : ys) y.score = std::exp(3.0 * y.score) - 7.0;
    CHECK(eval::auc(ys) == eval::auc(xs));
  }
}

TEST_CASE("logistic baseline features") {
  std::vector<data::AnswerPair> corpus{{"1", "the cat sat", "the cat sat", 1}};
  auto vocab = data::build_vocab(corpus);
  auto f = eval::lr_features(corpus[0], vocab);
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 1.0);
  CHECK(f[2] == 1.0);
  CHECK(f[3] == 1.0);
  CHECK(f[4] == 1.0);

  data::AnswerPair half{"2", "the sat", "the cat", 0};
  auto g = eval::lr_features(half, vocab);
  CHECK(g[0] == doctest::Approx(1.0 / 3.0));
  data::AnswerPair unknown{"3", "the dog", "the cat", 0};
  CHECK(eval::lr_features(unknown, vocab)[0] == 0.5);  // UNK is never a shared type

  eval::LrBaselineModel zero;
  CHECK(eval::lr_baseline_predict(zero, half, vocab) == 0.5);
}

TEST_CASE("logistic baseline fits separable overlap data") {
  data::GeneratorConfig g;
  g.pairs = 400;
  g.filler_words = 40;
  Rng rng(63);
  auto pairs = data::generate_synthetic_dataset(g, rng);
  auto vocab = data::build_vocab(pairs);
  // Labels decided by overlap alone: copy the reference or use unrelated words.
  std::vector<data::AnswerPair> separable;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool right = i % 2 == 0;
    separable.push_back({std::to_string(i), right ? pairs[i].reference_text : "zzz yyy xxx",
                         pairs[i].reference_text, right ? 1 : 0});
  }
  auto model = eval::lr_baseline_fit(separable, vocab);
  auto xs = eval::lr_baseline_score(model, separable, vocab);
  CHECK(eval::accuracy(xs) >= 0.99);
  for (const auto& x : xs) {
    CHECK(x.score > 0.0);
    CHECK(x.score < 1.0);
  }
  std::vector<data::AnswerPair> none;
  CHECK_THROWS_AS(eval::lr_baseline_fit(none, vocab), DataError);
}

TEST_CASE("model evaluation is deterministic and checks its input") {
  data::GeneratorConfig g;
  g.pairs = 40;
  g.references = 4;
  Rng rng(64);
  auto pairs = data::generate_synthetic_dataset(g, rng);
  auto vocab = data::build_vocab(pairs);
  model::ModelConfig c;
  c.vocab_size = vocab.size();
  c.d_emb = c.d_model = c.pooling_dim = 8;
  c.head_count = 2;
  c.d_ffn = 16;
  c.max_len = 10;
  Rng init(65);
  auto params = model::init_params(c, init);
  auto a = eval::evaluate_model(params, vocab, pairs, c.max_len, 7);
  auto b = eval::evaluate_model(params, vocab, pairs, c.max_len, 64);
  CHECK(a.n == 40);
  CHECK(a.positive_rate == 0.5);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.auc == b.auc);

  auto xs = eval::score_pairs(params, vocab, pairs, c.max_len);
  CHECK(a.auc == eval::auc(xs));
  CHECK(a.accuracy == eval::accuracy(xs));

  std::vector<data::AnswerPair> none;
  CHECK_THROWS_AS(eval::evaluate_model(params, vocab, none, c.max_len), DataError);
  CHECK(eval::metrics_line("val", a).rfind("val\t40\t", 0) == 0);
}

}  // TEST_SUITE
