#include "greenwave/kernels.hpp"

#include <cmath>

namespace greenwave::kernels {

namespace {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> y, std::size_t batch, std::size_t in, std::size_t out) {
  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = bias.data();
  double* yp = y.data();
  const auto rows = static_cast<long>(batch);
#pragma omp parallel for schedule(static) if (batch * in * out >= kParallelThreshold)
  for (long b = 0; b < rows; ++b) {
    const double* xr = xp + b * in;
    double* yr = yp + b * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = bp[o] + dot(xr, wp + o * in, in);
  }
}

void dense_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          std::size_t batch, std::size_t in, std::size_t out) {
  const double* dyp = dy.data();
  const double* wp = w.data();
  double* dxp = dx.data();
  const auto rows = static_cast<long>(batch);
#pragma omp parallel for schedule(static) if (batch * in * out >= kParallelThreshold)
  for (long b = 0; b < rows; ++b) {
    double* dxr = dxp + b * in;
    const double* dyr = dyp + b * out;
    for (std::size_t i = 0; i < in; ++i) dxr[i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      const double* wr = wp + o * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
    }
  }
}

void dense_backward_params(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                           std::span<double> dbias, std::size_t batch, std::size_t in, std::size_t out) {
  const double* dyp = dy.data();
  const double* xp = x.data();
  double* dwp = dw.data();
  double* dbp = dbias.data();
  const auto cols = static_cast<long>(out);
#pragma omp parallel for schedule(static) if (batch * in * out >= kParallelThreshold)
  for (long o = 0; o < cols; ++o) {
    double* dwr = dwp + o * in;
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = dyp[b * out + o];
      if (g == 0.0) continue;
      const double* xr = xp + b * in;
      for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
      dbp[o] += g;
    }
  }
}

void tanh_inplace(std::span<double> y) {
  for (double& v : y) v = std::tanh(v);
}

void tanh_backward(std::span<const double> y, std::span<double> dy) {
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] *= 1.0 - y[i] * y[i];
}

namespace serial {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                   std::span<double> y, std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[b * in + i] * w[o * in + i];
      y[b * out + o] = bias[o] + s;
    }
  }
}

void dense_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                          std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < in; ++i) dx[b * in + i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) dx[b * in + i] += dy[b * out + o] * w[o * in + i];
    }
  }
}

void dense_backward_params(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                           std::span<double> dbias, std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = dy[b * out + o];
      if (g == 0.0) continue;
      for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += g * x[b * in + i];
      dbias[o] += g;
    }
  }
}

}  // namespace serial

}  // namespace greenwave::kernels
