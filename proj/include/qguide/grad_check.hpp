#pragma once

// Central finite differences used as an independent oracle for the analytic
// backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "qguide/nn.hpp"

namespace qguide {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

inline double max_relative_error(const Vector& analytic, const Vector& numeric) {
  if (analytic.size() != numeric.size()) throw ConfigError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, relative_error(analytic(i), numeric(i)));
  return worst;
}

/// d f / d x by central differences with step eps.
inline Vector central_difference(const std::function<double(const Vector&)>& f, Vector x,
                                 double eps) {
  Vector grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x(i);
    x(i) = saved + eps;
    const double up = f(x);
    x(i) = saved - eps;
    const double down = f(x);
    x(i) = saved;
    grad(i) = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// Fixed projection turning a network output into the scalar loss
/// sum_k w_k * y_k with w_k = (-1)^k / (k + 1).
inline Vector grad_check_projection(int outputs) {
  Vector w(outputs);
  for (int k = 0; k < outputs; ++k) w(k) = (k % 2 == 0 ? 1.0 : -1.0) / (k + 1.0);
  return w;
}

/// Largest relative error between the analytic gradient (parameters and
/// input) and central differences of the projected output. `tamper` lets a
/// caller corrupt the analytic gradient to exercise the checker itself.
inline double grad_check(const Mlp& net, const Vector& input, double eps,
                         const std::function<void(GradBundle&)>& tamper = {}) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  const Vector w = grad_check_projection(net.output_size());

  ForwardCache cache;
  net.forward(Matrix(input), &cache);
  GradBundle g = net.backward(cache, Matrix(w));
  if (tamper) tamper(g);

  Mlp probe = net;
  auto loss_of_params = [&](const Vector& p) {
    probe.set_parameters(p);
    return w.dot(probe.forward(input));
  };
  const Vector numeric_params = central_difference(loss_of_params, net.parameters(), eps);
  auto loss_of_input = [&](const Vector& x) { return w.dot(net.forward(x)); };
  const Vector numeric_input = central_difference(loss_of_input, input, eps);

  return std::max(max_relative_error(flatten(g), numeric_params),
                  max_relative_error(g.input_grad.col(0), numeric_input));
}

/// Smallest |pre-activation| over hidden units; values near zero mean a
/// finite-difference step may cross a ReLU kink.
inline double min_hidden_margin(const Mlp& net, const Vector& input) {
  ForwardCache cache;
  net.forward(Matrix(input), &cache);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    margin = std::min(margin, cache.pre[l].cwiseAbs().minCoeff());
  return margin;
}

}  // namespace qguide
