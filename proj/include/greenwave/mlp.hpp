#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "greenwave/simcore.hpp"  // Rng

namespace greenwave {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out

  bool operator==(const DenseLayer&) const = default;
};

/// Activations of one batched forward pass, kept for backprop.
struct MlpCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> activations;  // [0] = input, then one per layer
};

/// Fully connected network with tanh hidden layers and a linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output);

  /// Orthogonal rows/columns scaled by `hidden_gain` for hidden layers and
  /// `output_gain` for the output layer; zero biases.
  void init_orthogonal(Rng& rng, double hidden_gain, double output_gain);

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }

  std::vector<double> forward(std::span<const double> x) const;
  /// Forward on a row-major batch; returns the output block (batch x out).
  std::span<const double> forward_batch(std::span<const double> x, std::size_t batch, MlpCache& cache) const;
  /// Accumulates parameter gradients into `grad` given dL/d(output).
  void backward(const MlpCache& cache, std::span<const double> d_output, Mlp& grad) const;

  void zero();
  std::size_t num_params() const;
  /// Parameter tensors in a fixed order (per layer: weight, bias).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// Fills `w` (rows x cols) with a random orthogonal matrix scaled by `gain`.
void orthogonal_fill(std::span<double> w, std::size_t rows, std::size_t cols, double gain, Rng& rng);

}  // namespace greenwave
