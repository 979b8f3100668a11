#include "greenwave/mlp.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "greenwave/kernels.hpp"

namespace greenwave {

Mlp::Mlp(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output) {
  std::size_t prev = input;
  auto add = [&](std::size_t n) {
    layers_.push_back({prev, n, std::vector<double>(prev * n, 0.0), std::vector<double>(n, 0.0)});
    prev = n;
  };
  for (std::size_t h : hidden) add(h);
  add(output);
}

void orthogonal_fill(std::span<double> w, std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  // Orthonormalize along the shorter dimension with modified Gram-Schmidt.
  const bool by_rows = rows <= cols;
  const std::size_t count = by_rows ? rows : cols;
  const std::size_t len = by_rows ? cols : rows;
  std::vector<std::vector<double>> basis(count, std::vector<double>(len));
  for (auto& v : basis) {
    for (double& e : v) e = normal(rng);
  }
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      double d = 0.0;
      for (std::size_t i = 0; i < len; ++i) d += basis[k][i] * basis[j][i];
      for (std::size_t i = 0; i < len; ++i) basis[k][i] -= d * basis[j][i];
    }
    double norm = 0.0;
    for (double e : basis[k]) norm += e * e;
    norm = std::sqrt(norm);
    for (double& e : basis[k]) e /= norm;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      w[r * cols + c] = gain * (by_rows ? basis[r][c] : basis[c][r]);
    }
  }
}

void Mlp::init_orthogonal(Rng& rng, double hidden_gain, double output_gain) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    const double gain = l + 1 == layers_.size() ? output_gain : hidden_gain;
    orthogonal_fill(layer.weight, layer.out, layer.in, gain, rng);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw std::invalid_argument("observation dimension " + std::to_string(x.size()) +
                                " does not match network input " + std::to_string(input_dim()));
  }
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    next.assign(layer.out, 0.0);
    kernels::serial::dense_forward(cur, layer.weight, layer.bias, next, 1, layer.in, layer.out);
    if (l + 1 < layers_.size()) kernels::tanh_inplace(next);
    cur.swap(next);
  }
  return cur;
}

std::span<const double> Mlp::forward_batch(std::span<const double> x, std::size_t batch, MlpCache& cache) const {
  if (x.size() != batch * input_dim()) throw std::invalid_argument("batch input has the wrong size");
  cache.batch = batch;
  cache.activations.resize(layers_.size() + 1);
  cache.activations[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    auto& y = cache.activations[l + 1];
    y.assign(batch * layer.out, 0.0);
    kernels::dense_forward(cache.activations[l], layer.weight, layer.bias, y, batch, layer.in, layer.out);
    if (l + 1 < layers_.size()) kernels::tanh_inplace(y);
  }
  return cache.activations.back();
}

void Mlp::backward(const MlpCache& cache, std::span<const double> d_output, Mlp& grad) const {
  const std::size_t batch = cache.batch;
  std::vector<double> delta(d_output.begin(), d_output.end());
  std::vector<double> d_input;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    auto& g = grad.layers_[l];
    kernels::dense_backward_params(delta, cache.activations[l], g.weight, g.bias, batch, layer.in, layer.out);
    if (l == 0) break;
    d_input.assign(batch * layer.in, 0.0);
    kernels::dense_backward_input(delta, layer.weight, d_input, batch, layer.in, layer.out);
    kernels::tanh_backward(cache.activations[l], d_input);
    delta.swap(d_input);
  }
}

void Mlp::zero() {
  for (auto& layer : layers_) {
    std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::vector<std::span<double>> Mlp::tensors() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  return out;
}

std::vector<std::span<const double>> Mlp::tensors() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  return out;
}

}  // namespace greenwave
