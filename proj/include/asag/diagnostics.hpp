#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asag/model.hpp"

namespace asag::diagnostics {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error <= tolerance; }
};

inline constexpr double kLayerTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

// The tiny configuration used for finite-difference verification:
// L=4, d_model=8, batch of 2.
model::ModelConfig tiny_config();

// Central-difference checks (eps 1e-4) of every layer and of the full model
// at `config`; entries appear in execution order, the full model last.
std::vector<GradCheckEntry> run_gradcheck_suite(const model::ModelConfig& config, std::uint64_t seed);

}  // namespace asag::diagnostics
