#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cgpo/autodiff.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// Fully connected network. Hidden layers share one activation; the output
/// layer is always linear. Weights are stored `{fan_in, fan_out}` so a batch
/// `{B, fan_in}` multiplies on the left.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<std::size_t> layer_dims, Activation hidden, Rng& rng)
      : dims_(std::move(layer_dims)), activation_(hidden) {
    if (dims_.size() < 2) throw ConfigError("an Mlp needs at least input and output widths");
    for (auto d : dims_) {
      if (d == 0) throw ConfigError("Mlp layer widths must be positive");
    }
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      Tensor w = Tensor::matrix(dims_[l], dims_[l + 1]);
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
      Tensor b = Tensor::vector(std::vector<double>(dims_[l + 1]));
      for (double& v : b.values()) v = rng.uniform(-bound, bound);
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
    }
  }

  /// Rebuilds a network from explicit parameters (checkpoints, tests).
  static Mlp from_parameters(Activation hidden, std::vector<Tensor> weights, std::vector<Tensor> biases) {
    if (weights.empty() || weights.size() != biases.size()) {
      throw DimensionError("Mlp needs one bias per weight matrix");
    }
    Mlp net;
    net.activation_ = hidden;
    net.dims_.push_back(weights.front().rows());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rank() != 2 || weights[l].rows() != net.dims_.back() ||
          biases[l].size() != weights[l].cols()) {
        throw DimensionError("incompatible layer " + std::to_string(l) + " in Mlp parameters");
      }
      net.dims_.push_back(weights[l].cols());
    }
    net.weights_ = std::move(weights);
    net.biases_ = std::move(biases);
    return net;
  }

  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  Activation activation() const { return activation_; }

  Tensor& weight(std::size_t l) { return weights_[l]; }
  const Tensor& weight(std::size_t l) const { return weights_[l]; }
  Tensor& bias(std::size_t l) { return biases_[l]; }
  const Tensor& bias(std::size_t l) const { return biases_[l]; }

  /// Parameters in a fixed order: w0, b0, w1, b1, ...
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  /// Untaped evaluation on a batch `{B, input_dim}`.
  Tensor forward(const Tensor& input) const {
    check_input(input);
    RowMatrix h = input.mat();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      RowMatrix z = h * weights_[l].mat();
      z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(biases_[l].data(), biases_[l].size());
      if (l + 1 < weights_.size() && activation_ != Activation::identity) {
        detail::activate_inplace(activation_, z.data(), static_cast<std::size_t>(z.size()));
      }
      h = std::move(z);
    }
    Tensor out = Tensor::matrix(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
    out.mat() = h;
    return out;
  }

  /// Records the parameters on `tape`. Trainable parameters receive gradients;
  /// frozen ones are constants, so only input gradients are propagated.
  std::vector<Var> bind(Tape& tape, bool trainable) const {
    std::vector<Var> out;
    out.reserve(2 * weights_.size());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(trainable ? tape.variable(weights_[l]) : tape.constant(weights_[l]));
      out.push_back(trainable ? tape.variable(biases_[l]) : tape.constant(biases_[l]));
    }
    return out;
  }

  /// Taped evaluation using parameters previously returned by `bind`.
  Var forward(std::span<const Var> params, Var input) const {
    if (params.size() != 2 * weights_.size()) throw ContractError("parameter binding does not match Mlp");
    check_input(input.tape->value(input));
    Var h = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = ad::add_bias(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
      if (l + 1 < weights_.size()) h = ad::activate(h, activation_);
    }
    return h;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.dims_ == b.dims_ && a.activation_ == b.activation_ && a.weights_ == b.weights_ &&
           a.biases_ == b.biases_;
  }

 private:
  void check_input(const Tensor& input) const {
    if (input.cols() != dims_.front()) {
      throw DimensionError("Mlp expects input width " + std::to_string(dims_.front()) + ", got " +
                           shape_string(input.shape()));
    }
  }

  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::mish;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace cgpo
