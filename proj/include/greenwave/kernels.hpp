#pragma once

#include <cstddef>
#include <span>

// Dense-layer kernels over row-major matrices. The default versions are
// OpenMP-parallel over independent output rows; `serial::` holds the plain
// reference loops. Both use the same per-element summation order, so their
// results are bitwise identical for any thread count.
namespace greenwave::kernels {

/// y[b, o] = bias[o] + sum_i x[b, i] * w[o, i]
void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> y, std::size_t batch, std::size_t in, std::size_t out);

/// dx[b, i] = sum_o dy[b, o] * w[o, i]
void dense_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          std::size_t batch, std::size_t in, std::size_t out);

/// dw[o, i] += sum_b dy[b, o] * x[b, i];  dbias[o] += sum_b dy[b, o]
void dense_backward_params(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                           std::span<double> dbias, std::size_t batch, std::size_t in, std::size_t out);

/// y = tanh(y) in place; dy *= 1 - y^2 for the backward pass.
void tanh_inplace(std::span<double> y);
void tanh_backward(std::span<const double> y, std::span<double> dy);

namespace serial {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> y, std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          std::size_t batch, std::size_t in, std::size_t out);
void dense_backward_params(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                           std::span<double> dbias, std::size_t batch, std::size_t in, std::size_t out);

}  // namespace serial

/// Work (multiply-adds) below which the parallel kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace greenwave::kernels
