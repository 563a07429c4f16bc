#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qguide/nn.hpp"

namespace qguide {

struct AdamParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators shaped like the network they belong to.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const Mlp& net, AdamParams params) : params_(params) {
    if (!(params.learning_rate > 0.0)) throw ConfigError("Adam learning rate must be positive");
    for (const auto& l : net.layers()) {
      first_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
      second_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
  }

  const AdamParams& params() const { return params_; }
  std::int64_t step() const { return step_; }
  const std::vector<Layer>& first_moment() const { return first_; }
  const std::vector<Layer>& second_moment() const { return second_; }

  void reset() {
    for (auto& l : first_) { l.weight.setZero(); l.bias.setZero(); }
    for (auto& l : second_) { l.weight.setZero(); l.bias.setZero(); }
    step_ = 0;
  }

 private:
  friend void adam_step(Mlp&, const GradBundle&, AdamState&);
  AdamParams params_;
  std::vector<Layer> first_;
  std::vector<Layer> second_;
  std::int64_t step_ = 0;
};

/// One bias-corrected Adam update (descent on the loss whose gradient is `grads`).
inline void adam_step(Mlp& net, const GradBundle& grads, AdamState& state) {
  if (grads.layers.size() != net.layers().size() || state.first_.size() != net.layers().size())
    throw ConfigError("adam_step: layer count mismatch");
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    const auto& g = grads.layers[l];
    const auto& p = net.layers()[l];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size())
      throw ConfigError("adam_step: gradient shape mismatch");
    if (!g.weight.allFinite() || !g.bias.allFinite())
      throw NumericalError("adam_step: non-finite gradient in layer " + std::to_string(l));
  }

  const AdamParams& hp = state.params_;
  state.step_ += 1;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g.cwiseProduct(g);
    param.array() -= hp.learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + hp.epsilon);
  };

  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, state.first_[l].weight, state.second_[l].weight, grads.layers[l].weight);
    update(layers[l].bias, state.first_[l].bias, state.second_[l].bias, grads.layers[l].bias);
  }
  if (!net.all_finite()) throw NumericalError("adam_step produced non-finite parameters");
}

}  // namespace qguide
