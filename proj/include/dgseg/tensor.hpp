#pragma once

#include <cstdint>
#include <vector>

#include "dgseg/geometry.hpp"

namespace dgseg {

// Channel-major dense tensor of doubles: index = ((c*D + z)*H + y)*W + x.
// Double precision keeps the finite-difference gradient checks and the EMA
// replay contracts honest; patches are small enough that it costs little.
struct Tensor {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int d_, int h_, int w_)
      : c(c_), d(d_), h(h_), w(w_), v(std::size_t(c_) * d_ * h_ * w_, 0.0) {}

  std::size_t spatial() const { return std::size_t(d) * h * w; }
  std::size_t size() const { return v.size(); }
  double* channel(int ci) { return v.data() + std::size_t(ci) * spatial(); }
  const double* channel(int ci) const { return v.data() + std::size_t(ci) * spatial(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  bool same_shape(const Tensor& o) const {
    return c == o.c && d == o.d && h == o.h && w == o.w;
  }
};

// Trainable parameter buffer with its gradient accumulator.
struct ParamTensor {
  std::vector<double> w;
  std::vector<double> g;

  void resize(std::size_t n) {
    w.assign(n, 0.0);
    g.assign(n, 0.0);
  }
  void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

// 3x3x3 convolution, zero padding 1, stride 1.
void conv3_forward(const Tensor& in, const ParamTensor& weight, const ParamTensor& bias,
                   int cout, Tensor& out);
void conv3_backward(const Tensor& in, const ParamTensor& weight, int cout, const Tensor& gout,
                    Tensor& gin, ParamTensor& weight_acc, ParamTensor& bias_acc);

// 1x1x1 convolution (linear per voxel).
void conv1_forward(const Tensor& in, const ParamTensor& weight, const ParamTensor& bias,
                   int cout, Tensor& out);
void conv1_backward(const Tensor& in, const ParamTensor& weight, int cout, const Tensor& gout,
                    Tensor& gin, ParamTensor& weight_acc, ParamTensor& bias_acc);

// SiLU x*sigmoid(x): smooth, so finite-difference probes behave everywhere.
void silu_forward(const Tensor& pre, Tensor& out);
void silu_backward(const Tensor& pre, const Tensor& gout, Tensor& gpre);

// 2x average pooling / nearest-neighbour upsampling (even dims required).
void avgpool2_forward(const Tensor& in, Tensor& out);
void avgpool2_backward(const Tensor& gout, Tensor& gin);
void upsample2_forward(const Tensor& in, Tensor& out);
void upsample2_backward(const Tensor& gout, Tensor& gin);

void concat_channels(const Tensor& a, const Tensor& b, Tensor& out);
void split_channels(const Tensor& gout, Tensor& ga, Tensor& gb);

double sigmoid(double x);

}  // namespace dgseg
