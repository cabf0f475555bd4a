#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "asag/random.hpp"
#include "asag/tensor.hpp"

namespace testing {

inline asag::Tensor random_tensor(const asag::Shape& shape, asag::Rng& rng, double scale = 1.0,
                                  bool requires_grad = false) {
  std::vector<double> v(asag::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return asag::Tensor::from(shape, std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("asag-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
