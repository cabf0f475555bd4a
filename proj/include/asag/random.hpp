#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace asag {

// Seeded generator with platform-independent draws (std distributions are
// implementation-defined, so they are not used).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Root seed from which independent named streams are derived. A stream's
// output depends only on (root seed, label), so new consumers never perturb
// existing ones.
class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t root) : root_(root) {}
  std::uint64_t root() const { return root_; }
  std::uint64_t derive(std::string_view label) const;
  Rng stream(std::string_view label) const { return Rng(derive(label)); }

 private:
  std::uint64_t root_;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace asag
