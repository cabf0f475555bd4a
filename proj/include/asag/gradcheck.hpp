#pragma once

#include <functional>
#include <string>
#include <vector>

#include "asag/tensor.hpp"

namespace asag {

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Central-difference check of d f / d x. Returns the largest per-coordinate
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-4);

// Same check over several leaf tensors read by `f`; their values are
// perturbed in place and restored. Gradients on `params` are overwritten.
double grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps = 1e-4);

}  // namespace asag
