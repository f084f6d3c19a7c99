#include "dgseg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace dgseg {

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

inline void check_conv_shapes(const Tensor& in, const ParamTensor& weight, std::size_t taps,
                              int cout, const Tensor& out) {
  if (weight.w.size() != std::size_t(cout) * std::size_t(in.c) * taps)
    throw std::invalid_argument("conv: weight size mismatch");
  if (out.c != cout || out.d != in.d || out.h != in.h || out.w != in.w)
    throw std::invalid_argument("conv: output shape mismatch");
}

}  // namespace

void conv3_forward(const Tensor& in, const ParamTensor& weight, const ParamTensor& bias,
                   int cout, Tensor& out) {
  check_conv_shapes(in, weight, 27, cout, out);
  const int D = in.d, H = in.h, W = in.w;
  const std::size_t plane = std::size_t(H) * W;

  for (int co = 0; co < cout; ++co) {
    double* o = out.channel(co);
    const double b = bias.w[std::size_t(co)];
    for (std::size_t i = 0; i < out.spatial(); ++i) o[i] = b;
    for (int ci = 0; ci < in.c; ++ci) {
      const double* x = in.channel(ci);
      const double* wk = weight.w.data() + (std::size_t(co) * in.c + ci) * 27;
      for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wk[(kz * 3 + ky) * 3 + kx];
            if (wv == 0.0) continue;
            const int dz = kz - 1, dy = ky - 1, dx = kx - 1;
            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            for (int z = z0; z < z1; ++z)
              for (int y = y0; y < y1; ++y) {
                double* orow = o + std::size_t(z) * plane + std::size_t(y) * W;
                const double* xrow =
                    x + std::size_t(z + dz) * plane + std::size_t(y + dy) * W + dx;
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
              }
          }
    }
  }
}

void conv3_backward(const Tensor& in, const ParamTensor& weight, int cout, const Tensor& gout,
                    Tensor& gin, ParamTensor& weight_acc, ParamTensor& bias_acc) {
  const int D = in.d, H = in.h, W = in.w;
  const std::size_t plane = std::size_t(H) * W;

  // bias grads
  for (int co = 0; co < cout; ++co) {
    const double* g = gout.channel(co);
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t n = gout.spatial();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      s0 += g[i];
      s1 += g[i + 1];
      s2 += g[i + 2];
      s3 += g[i + 3];
    }
    for (; i < n; ++i) s0 += g[i];
    bias_acc.g[std::size_t(co)] += (s0 + s1) + (s2 + s3);
  }

  // input grads: correlate gout with the flipped kernel
  for (int ci = 0; ci < gin.c; ++ci) {
    double* gi = gin.channel(ci);
    for (int co = 0; co < cout; ++co) {
      const double* g = gout.channel(co);
      const double* wk = weight.w.data() + (std::size_t(co) * in.c + ci) * 27;
      for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wk[(kz * 3 + ky) * 3 + kx];
            if (wv == 0.0) continue;
            // out[p] consumed in[p + k - 1]; so gin[q] += w * gout[q - k + 1]
            const int dz = 1 - kz, dy = 1 - ky, dx = 1 - kx;
            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            for (int z = z0; z < z1; ++z)
              for (int y = y0; y < y1; ++y) {
                double* girow = gi + std::size_t(z) * plane + std::size_t(y) * W;
                const double* grow =
                    g + std::size_t(z + dz) * plane + std::size_t(y + dy) * W + dx;
                for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
              }
          }
    }
  }

  // weight grads: shifted dot products, unrolled into independent chains
  for (int co = 0; co < cout; ++co) {
    const double* g = gout.channel(co);
    for (int ci = 0; ci < in.c; ++ci) {
      const double* x = in.channel(ci);
      double* gw = weight_acc.g.data() + (std::size_t(co) * in.c + ci) * 27;
      for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int dz = kz - 1, dy = ky - 1, dx = kx - 1;
            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int z = z0; z < z1; ++z)
              for (int y = y0; y < y1; ++y) {
                const double* grow = g + std::size_t(z) * plane + std::size_t(y) * W;
                const double* xrow =
                    x + std::size_t(z + dz) * plane + std::size_t(y + dy) * W + dx;
                int xx = x0;
                for (; xx + 4 <= x1; xx += 4) {
                  s0 += grow[xx] * xrow[xx];
                  s1 += grow[xx + 1] * xrow[xx + 1];
                  s2 += grow[xx + 2] * xrow[xx + 2];
                  s3 += grow[xx + 3] * xrow[xx + 3];
                }
                for (; xx < x1; ++xx) s0 += grow[xx] * xrow[xx];
              }
            gw[(kz * 3 + ky) * 3 + kx] += (s0 + s1) + (s2 + s3);
          }
    }
  }
}

void conv1_forward(const Tensor& in, const ParamTensor& weight, const ParamTensor& bias,
                   int cout, Tensor& out) {
  check_conv_shapes(in, weight, 1, cout, out);
  const std::size_t n = in.spatial();
  for (int co = 0; co < cout; ++co) {
    double* o = out.channel(co);
    const double b = bias.w[std::size_t(co)];
    for (std::size_t i = 0; i < n; ++i) o[i] = b;
    for (int ci = 0; ci < in.c; ++ci) {
      const double wv = weight.w[std::size_t(co) * in.c + ci];
      const double* x = in.channel(ci);
      for (std::size_t i = 0; i < n; ++i) o[i] += wv * x[i];
    }
  }
}

void conv1_backward(const Tensor& in, const ParamTensor& weight, int cout, const Tensor& gout,
                    Tensor& gin, ParamTensor& weight_acc, ParamTensor& bias_acc) {
  const std::size_t n = in.spatial();
  for (int co = 0; co < cout; ++co) {
    const double* g = gout.channel(co);
    double bs = 0;
    for (std::size_t i = 0; i < n; ++i) bs += g[i];
    bias_acc.g[std::size_t(co)] += bs;
    for (int ci = 0; ci < in.c; ++ci) {
      const double wv = weight.w[std::size_t(co) * in.c + ci];
      const double* x = in.channel(ci);
      double* gi = gin.channel(ci);
      double ws = 0;
      for (std::size_t i = 0; i < n; ++i) {
        gi[i] += wv * g[i];
        ws += x[i] * g[i];
      }
      weight_acc.g[std::size_t(co) * in.c + ci] += ws;
    }
  }
}

void silu_forward(const Tensor& pre, Tensor& out) {
  for (std::size_t i = 0; i < pre.v.size(); ++i) {
    const double s = sigmoid(pre.v[i]);
    out.v[i] = pre.v[i] * s;
  }
}

void silu_backward(const Tensor& pre, const Tensor& gout, Tensor& gpre) {
  for (std::size_t i = 0; i < pre.v.size(); ++i) {
    const double s = sigmoid(pre.v[i]);
    gpre.v[i] = gout.v[i] * (s * (1.0 + pre.v[i] * (1.0 - s)));
  }
}

void avgpool2_forward(const Tensor& in, Tensor& out) {
  if (in.d % 2 || in.h % 2 || in.w % 2)
    throw std::invalid_argument("avgpool2: dims must be even");
  const int D = out.d, H = out.h, W = out.w;
  const std::size_t iplane = std::size_t(in.h) * in.w;
  for (int c = 0; c < in.c; ++c) {
    const double* x = in.channel(c);
    double* o = out.channel(c);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double s = 0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e)
                s += x[std::size_t(2 * z + a) * iplane + std::size_t(2 * y + b) * in.w +
                       (2 * xx + e)];
          o[std::size_t(z) * H * W + std::size_t(y) * W + xx] = s * 0.125;
        }
  }
}

void avgpool2_backward(const Tensor& gout, Tensor& gin) {
  const int D = gout.d, H = gout.h, W = gout.w;
  const std::size_t iplane = std::size_t(gin.h) * gin.w;
  for (int c = 0; c < gout.c; ++c) {
    const double* g = gout.channel(c);
    double* gi = gin.channel(c);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double v = g[std::size_t(z) * H * W + std::size_t(y) * W + xx] * 0.125;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e)
                gi[std::size_t(2 * z + a) * iplane + std::size_t(2 * y + b) * gin.w +
                   (2 * xx + e)] += v;
        }
  }
}

void upsample2_forward(const Tensor& in, Tensor& out) {
  const int D = in.d, H = in.h, W = in.w;
  const std::size_t oplane = std::size_t(out.h) * out.w;
  for (int c = 0; c < in.c; ++c) {
    const double* x = in.channel(c);
    double* o = out.channel(c);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double v = x[std::size_t(z) * H * W + std::size_t(y) * W + xx];
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e)
                o[std::size_t(2 * z + a) * oplane + std::size_t(2 * y + b) * out.w +
                  (2 * xx + e)] = v;
        }
  }
}

void upsample2_backward(const Tensor& gout, Tensor& gin) {
  const int D = gin.d, H = gin.h, W = gin.w;
  const std::size_t oplane = std::size_t(gout.h) * gout.w;
  for (int c = 0; c < gin.c; ++c) {
    const double* g = gout.channel(c);
    double* gi = gin.channel(c);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double s = 0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e)
                s += g[std::size_t(2 * z + a) * oplane + std::size_t(2 * y + b) * gout.w +
                       (2 * xx + e)];
          gi[std::size_t(z) * H * W + std::size_t(y) * W + xx] += s;
        }
  }
}

void concat_channels(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.d != b.d || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat: spatial mismatch");
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + std::ptrdiff_t(a.v.size()));
}

void split_channels(const Tensor& gout, Tensor& ga, Tensor& gb) {
  std::copy(gout.v.begin(), gout.v.begin() + std::ptrdiff_t(ga.v.size()), ga.v.begin());
  std::copy(gout.v.begin() + std::ptrdiff_t(ga.v.size()), gout.v.end(), gb.v.begin());
}

}  // namespace dgseg
