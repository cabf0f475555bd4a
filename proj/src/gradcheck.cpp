#include "asag/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace asag {

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  return grad_check_params([&] { return f(probe); }, {probe}, eps);
}

double grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps) {
  for (auto p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Graph::current().clear();
  Tensor loss = f();
  if (loss.numel() != 1) throw ShapeError("grad_check needs a scalar-valued function");
  backward(loss);

  NoGradGuard no_grad;
  double worst = 0.0;
  for (auto p : params) {
    const auto analytic = p.grad();
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace asag
