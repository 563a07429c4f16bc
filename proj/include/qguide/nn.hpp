#pragma once

// Fully-connected networks with ReLU hidden layers and exact reverse-mode
// gradients. Samples are stored column-wise: an input batch is a
// (input_size x batch) matrix.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qguide/errors.hpp"

namespace qguide {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class OutputActivation : std::uint32_t {
  identity = 0,
  /// output = scale * tanh(pre-activation)
  scaled_tanh = 1,
};

struct Layer {
  Matrix weight;  // (fan_out x fan_in)
  Vector bias;    // fan_out
};

/// Everything the backward pass needs from a forward pass. `stamp` ties the
/// cache to the exact parameter state that produced it.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;  // pre-activations, one per layer
  std::vector<Matrix> act;  // post-activations, one per layer
  std::uint64_t stamp = 0;
};

/// Parameter gradients (same shapes as the network's layers), summed over the
/// batch, plus the gradient with respect to each input column.
struct GradBundle {
  std::vector<Layer> layers;
  Matrix input_grad;

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return input_grad.allFinite();
  }
};

namespace detail {
inline std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

class Mlp {
 public:
  Mlp() = default;

  /// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<int> layer_sizes, OutputActivation output_activation, double output_scale,
      std::uint64_t seed)
      : sizes_(std::move(layer_sizes)), output_activation_(output_activation),
        output_scale_(output_scale) {
    if (sizes_.size() < 2) throw ConfigError("Mlp needs at least an input and an output size");
    for (int s : sizes_)
      if (s <= 0) throw ConfigError("Mlp layer sizes must be positive");
    if (output_activation_ == OutputActivation::scaled_tanh && !(output_scale_ > 0.0))
      throw ConfigError("scaled tanh head needs a positive output scale");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(sizes_[l - 1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Layer layer{Matrix(sizes_[l], sizes_[l - 1]), Vector(sizes_[l])};
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = dist(rng);
      layers_.push_back(std::move(layer));
    }
    stamp_ = detail::next_stamp();
  }

  Mlp(const Mlp& other)
      : sizes_(other.sizes_), output_activation_(other.output_activation_),
        output_scale_(other.output_scale_), layers_(other.layers_),
        stamp_(detail::next_stamp()) {}
  Mlp& operator=(const Mlp& other) {
    sizes_ = other.sizes_;
    output_activation_ = other.output_activation_;
    output_scale_ = other.output_scale_;
    layers_ = other.layers_;
    stamp_ = detail::next_stamp();
    return *this;
  }
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  OutputActivation output_activation() const { return output_activation_; }
  double output_scale() const { return output_scale_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t stamp() const { return stamp_; }

  /// Mutable access invalidates every cache taken before the call.
  std::vector<Layer>& mutable_layers() {
    stamp_ = detail::next_stamp();
    return layers_;
  }

  bool same_architecture(const Mlp& other) const {
    return sizes_ == other.sizes_ && output_activation_ == other.output_activation_ &&
           output_scale_ == other.output_scale_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  Matrix forward(const Matrix& input, ForwardCache* cache = nullptr) const {
    if (input.rows() != input_size())
      throw ConfigError("Mlp input has " + std::to_string(input.rows()) + " rows, expected " +
                        std::to_string(input_size()));
    if (cache) {
      cache->input = input;
      cache->pre.resize(layers_.size());
      cache->act.resize(layers_.size());
      cache->stamp = stamp_;
    }
    Matrix x = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = layers_[l].weight * x;
      z.colwise() += layers_[l].bias;
      const bool last = l + 1 == layers_.size();
      Matrix a;
      if (!last) {
        a = z.cwiseMax(0.0);
      } else if (output_activation_ == OutputActivation::scaled_tanh) {
        a = output_scale_ * z.array().tanh();
      } else {
        a = z;
      }
      if (cache) {
        cache->pre[l] = std::move(z);
        cache->act[l] = a;
      }
      x = std::move(a);
    }
    return x;
  }

  Vector forward(const Vector& input) const {
    const Matrix out = forward(Matrix(input));
    return out.col(0);
  }

  /// Reverse pass for loss L given dL/d(output). `output_preact_grad`, when
  /// given, is added directly to dL/d(pre-activation of the output layer);
  /// used for penalties on the output pre-activations.
  GradBundle backward(const ForwardCache& cache, const Matrix& output_grad,
                      const Matrix* output_preact_grad = nullptr) const {
    if (cache.stamp != stamp_ || cache.pre.size() != layers_.size())
      throw ConfigError("Mlp backward called with a stale or foreign forward cache");
    const Eigen::Index batch = cache.input.cols();
    if (output_grad.rows() != output_size() || output_grad.cols() != batch)
      throw ConfigError("Mlp backward: output gradient shape mismatch");

    GradBundle g;
    g.layers.resize(layers_.size());
    Matrix dz;
    const Matrix& z_out = cache.pre.back();
    if (output_activation_ == OutputActivation::scaled_tanh) {
      const Matrix t = z_out.array().tanh().matrix();
      dz = (output_grad.array() * (output_scale_ * (1.0 - t.array().square()))).matrix();
    } else {
      dz = output_grad;
    }
    if (output_preact_grad) {
      if (output_preact_grad->rows() != dz.rows() || output_preact_grad->cols() != dz.cols())
        throw ConfigError("Mlp backward: pre-activation gradient shape mismatch");
      dz += *output_preact_grad;
    }
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Matrix& below = l == 0 ? cache.input : cache.act[l - 1];
      g.layers[l].weight = dz * below.transpose();
      g.layers[l].bias = dz.rowwise().sum();
      Matrix d_below = layers_[l].weight.transpose() * dz;
      if (l == 0) {
        g.input_grad = std::move(d_below);
      } else {
        dz = (d_below.array() * (cache.pre[l - 1].array() > 0.0).cast<double>()).matrix();
      }
    }
    return g;
  }

  /// Flattened parameters: per layer, weight row-major then bias.
  Vector parameters() const {
    Vector flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat(k++) = l.weight(r, c);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat(k++) = l.bias(r);
    }
    return flat;
  }

  void set_parameters(const Vector& flat) {
    if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
      throw ConfigError("Mlp::set_parameters: wrong parameter count");
    Eigen::Index k = 0;
    for (auto& l : mutable_layers()) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(k++);
    }
  }

  void copy_parameters_from(const Mlp& other) {
    if (!same_architecture(other))
      throw ConfigError("cannot copy parameters between networks of different architecture");
    layers_ = other.layers_;
    stamp_ = detail::next_stamp();
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

 private:
  std::vector<int> sizes_;
  OutputActivation output_activation_ = OutputActivation::identity;
  double output_scale_ = 1.0;
  std::vector<Layer> layers_;
  std::uint64_t stamp_ = 0;
};

/// target <- polyak * online + (1 - polyak) * target, elementwise.
inline void polyak_blend(Mlp& target, const Mlp& online, double polyak) {
  if (!target.same_architecture(online))
    throw ConfigError("polyak_blend: architecture mismatch");
  const auto& src = online.layers();
  auto& dst = target.mutable_layers();
  for (std::size_t l = 0; l < dst.size(); ++l) {
    dst[l].weight = polyak * src[l].weight + (1.0 - polyak) * dst[l].weight;
    dst[l].bias = polyak * src[l].bias + (1.0 - polyak) * dst[l].bias;
  }
}

/// Flatten a gradient bundle in the same order as Mlp::parameters().
inline Vector flatten(const GradBundle& g) {
  Eigen::Index n = 0;
  for (const auto& l : g.layers) n += l.weight.size() + l.bias.size();
  Vector flat(n);
  Eigen::Index k = 0;
  for (const auto& l : g.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat(k++) = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat(k++) = l.bias(r);
  }
  return flat;
}

}  // namespace qguide
