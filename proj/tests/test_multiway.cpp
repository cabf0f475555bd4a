#include <doctest.h>

#include <cmath>
#include <functional>

#include "asag/gradcheck.hpp"
#include "asag/multiway.hpp"
#include "support.hpp"

using namespace asag;
using multiway::CrossKind;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix rows_of(const Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  return m;
}

std::vector<double> times(const std::vector<double>& x, const Tensor& w) {
  std::vector<double> out(w.dim(1), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.dim(1); ++j) out[j] += x[i] * w.at({i, j});
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double v_tanh(const std::vector<double>& x, const Tensor& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += v.data()[i] * std::tanh(x[i]);
  return s;
}

double score_oracle(CrossKind kind, const multiway::MultiwayParams& mw, const std::vector<double>& q,
                    const std::vector<double>& p) {
  const std::size_t d = q.size();
  std::vector<double> tmp(d);
  switch (kind) {
    case CrossKind::additive: {
      auto a = times(p, mw.additive_w1), b = times(q, mw.additive_w2);
      for (std::size_t i = 0; i < d; ++i) tmp[i] = a[i] + b[i];
      return v_tanh(tmp, mw.additive_v);
    }
    case CrossKind::subtractive:
      for (std::size_t i = 0; i < d; ++i) tmp[i] = p[i] - q[i];
      return v_tanh(times(tmp, mw.subtractive_w), mw.subtractive_v);
    case CrossKind::multiplicative:
      for (std::size_t i = 0; i < d; ++i) tmp[i] = p[i] * q[i];
      return v_tanh(times(tmp, mw.multiplicative_w), mw.multiplicative_v);
    case CrossKind::dot:
      return dot(p, q) / std::sqrt(static_cast<double>(d));
  }
  return 0.0;
}

// Attention by explicit loops: weights [Lq x Lp] and outputs [Lq x d].
std::pair<Matrix, Matrix> attention_oracle(const Matrix& q, const Matrix& p, const std::vector<std::uint8_t>& mask,
                                           const std::function<double(std::size_t, std::size_t)>& score) {
  const std::size_t d = p[0].size();
  Matrix w(q.size(), std::vector<double>(p.size(), 0.0));
  Matrix out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double best = -INFINITY;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (mask[j]) best = std::max(best, score(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (mask[j]) z += (w[i][j] = std::exp(score(i, j) - best));
    for (std::size_t j = 0; j < p.size(); ++j) {
      w[i][j] /= z;
      for (std::size_t c = 0; c < d; ++c) out[i][c] += w[i][j] * p[j][c];
    }
  }
  return {w, out};
}

std::vector<double> flat(const Matrix& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.bernoulli(0.7);
  m[rng.below(n)] = 1;
  return m;
}

}  // namespace

TEST_SUITE("multiway") {

TEST_CASE("self-attention matches a loop oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1 + rng.below(6), d = 2 + rng.below(5);
    Tensor h = random_tensor({len, d}, rng, 2.0);
    auto mask = random_mask(len, rng);
    auto res = multiway::self_attention_block(h, Mask::from({len}, mask));
    auto hm = rows_of(h);
    auto [w, out] = attention_oracle(hm, hm, mask, [&](std::size_t i, std::size_t j) {
      return dot(hm[i], hm[j]) / std::sqrt(static_cast<double>(d));
    });
    CHECK(max_abs_diff(res.weights.data(), flat(w)) <= 1e-12);
    CHECK(max_abs_diff(res.output.data(), flat(out)) <= 1e-12);
  }
}

TEST_CASE("cross attention matches loop oracles for every score function") {
  Rng rng(22);
  for (auto kind : multiway::kCrossKinds) {
    INFO(std::string(multiway::kind_name(kind)));
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t lq = 1 + rng.below(5), lp = 1 + rng.below(5), d = 2 + rng.below(4);
      auto mw = multiway::make_multiway(d, rng);
      Tensor q = random_tensor({lq, d}, rng, 1.5);
      Tensor p = random_tensor({lp, d}, rng, 1.5);
      auto mask = random_mask(lp, rng);
      auto res = multiway::cross_attention(kind, mw, q, p, Mask::from({lp}, mask));
      CHECK(res.output.shape() == Shape{lq, d});
      auto qm = rows_of(q), pm = rows_of(p);
      auto [w, out] = attention_oracle(qm, pm, mask, [&](std::size_t i, std::size_t j) {
        return score_oracle(kind, mw, qm[i], pm[j]);
      });
      CHECK(max_abs_diff(res.weights.data(), flat(w)) <= 1e-12);
      CHECK(max_abs_diff(res.output.data(), flat(out)) <= 1e-12);
    }
  }
}

TEST_CASE("batched cross attention equals per-example calls") {
  Rng rng(23);
  auto mw = multiway::make_multiway(4, rng);
  Tensor q = random_tensor({3, 2, 4}, rng);
  Tensor p = random_tensor({3, 5, 4}, rng);
  const std::vector<std::uint8_t> mv{1, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1};
  for (auto kind : multiway::kCrossKinds) {
    auto batched = multiway::cross_attention(kind, mw, q, p, Mask::from({3, 5}, mv));
    for (std::size_t b = 0; b < 3; ++b) {
      auto one = multiway::cross_attention(
          kind, mw, reshape(slice(q, 0, b, b + 1), {2, 4}), reshape(slice(p, 0, b, b + 1), {5, 4}),
          Mask::from({5}, std::vector<std::uint8_t>(mv.begin() + b * 5, mv.begin() + b * 5 + 5)));
      CHECK(max_abs_diff(reshape(slice(batched.output, 0, b, b + 1), {2, 4}).data(), one.output.data()) <=
            1e-14);
    }
  }
}

TEST_CASE("subtractive attention is uniform when all references coincide") {
  Rng rng(24);
  auto mw = multiway::make_multiway(6, rng);
  Tensor row = random_tensor({1, 6}, rng);
  Tensor p = concat({row, row, row, row}, 0);
  auto res = multiway::cross_attention(CrossKind::subtractive, mw, random_tensor({3, 6}, rng), p, Mask::all({4}));
  for (double w : res.weights.data()) CHECK(std::abs(w - 0.25) <= 1e-15);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(max_abs_diff(slice(res.output, 0, i, i + 1).data(), row.data()) <= 1e-15);
}

TEST_CASE("dot attention with a dominant key selects it") {
  Tensor q = Tensor::from({1, 2}, {100.0, 0.0});
  Tensor p = Tensor::from({2, 2}, {1.0, 0.0, -1.0, 5.0});
  multiway::MultiwayParams none;
  auto res = multiway::cross_attention(CrossKind::dot, none, q, p, Mask::all({2}));
  CHECK(res.weights.at({0, 0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.output.at({0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross outputs stay inside the convex hull of reference rows") {
  Rng rng(25);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t lq = 1 + rng.below(6), lp = 1 + rng.below(6), d = 2 + rng.below(6);
    auto mw = multiway::make_multiway(d, rng);
    Tensor q = random_tensor({lq, d}, rng, 3.0);
    Tensor p = random_tensor({lp, d}, rng, 3.0);
    auto mask = random_mask(lp, rng);
    for (auto kind : multiway::kCrossKinds) {
      auto out = multiway::cross_attention(kind, mw, q, p, Mask::from({lp}, mask)).output;
      for (std::size_t c = 0; c < d; ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t j = 0; j < lp; ++j)
          if (mask[j]) lo = std::min(lo, p.at({j, c})), hi = std::max(hi, p.at({j, c}));
        for (std::size_t i = 0; i < lq; ++i) {
          CHECK(out.at({i, c}) >= lo - 1e-9);
          CHECK(out.at({i, c}) <= hi + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("masked reference positions do not influence outputs") {
  Rng rng(26);
  auto mw = multiway::make_multiway(4, rng);
  Tensor q = random_tensor({3, 4}, rng);
  Tensor p = random_tensor({5, 4}, rng);
  const Mask mask = Mask::from({5}, {1, 0, 1, 1, 0});
  Tensor p2 = p.detach();
  for (std::size_t c = 0; c < 4; ++c) {
    p2.mutable_data()[1 * 4 + c] = 50.0;
    p2.mutable_data()[4 * 4 + c] = -7.0;
  }
  for (auto kind : multiway::kCrossKinds) {
    auto a = multiway::cross_attention(kind, mw, q, p, mask);
    auto b = multiway::cross_attention(kind, mw, q, p2, mask);
    CHECK(a.output.values() == b.output.values());
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a.weights.at({0, i, 1}) == 0.0);
      CHECK(a.weights.at({0, i, 4}) == 0.0);
    }
  }
  CHECK_THROWS_AS(multiway::cross_attention(CrossKind::dot, mw, q, p, Mask::from({5}, {0, 0, 0, 0, 0})), MaskError);
  CHECK_THROWS_AS(multiway::cross_attention(CrossKind::additive, mw, q, random_tensor({5, 3}, rng), mask),
                  ShapeError);
}

TEST_CASE("multiway forward zeroes masked rows") {
  Rng rng(27);
  auto mw = multiway::make_multiway(4, rng);
  const Mask qm = Mask::from({2, 3}, {1, 1, 0, 1, 0, 0});
  const Mask pm = Mask::from({2, 4}, {1, 1, 1, 0, 1, 1, 0, 0});
  auto out = multiway::multiway_forward(mw, random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 4}, rng), qm, pm);
  auto zero_rows = [](const Tensor& t, const Mask& m) {
    for (std::size_t b = 0; b < t.dim(0); ++b)
      for (std::size_t l = 0; l < t.dim(1); ++l)
        if (!m.values[b * t.dim(1) + l])
          for (std::size_t c = 0; c < t.dim(2); ++c) CHECK(t.at({b, l, c}) == 0.0);
  };
  zero_rows(out.self_student, qm);
  zero_rows(out.self_reference, pm);
  for (const auto& c : out.cross) {
    CHECK(c.shape() == Shape{2, 3, 4});
    zero_rows(c, qm);
  }
}

TEST_CASE("cross attention gradients match finite differences") {
  Rng rng(28);
  auto mw = multiway::make_multiway(4, rng);
  nn::ParamList list;
  multiway::collect("m", mw, list);
  CHECK(list.size() == 7);
  Tensor q = random_tensor({2, 3, 4}, rng, 1.0, true);
  Tensor p = random_tensor({2, 4, 4}, rng, 1.0, true);
  Tensor r = random_tensor({2, 3, 4}, rng);
  const Mask pm = Mask::from({2, 4}, {1, 1, 1, 0, 1, 1, 0, 0});
  std::vector<Tensor> params{q, p};
  for (const auto& e : list) params.push_back(e.tensor);
  for (auto kind : multiway::kCrossKinds) {
    INFO(std::string(multiway::kind_name(kind)));
    CHECK(grad_check_params([&] { return sum(mul(multiway::cross_attention(kind, mw, q, p, pm).output, r)); },
                            params) <= 1e-6);
  }
}

}  // TEST_SUITE
