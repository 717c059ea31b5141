#pragma once

#include <random>

#include "pnet/data.hpp"
#include "pnet/tensor.hpp"

namespace pnet::test {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(const Shape4& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(u(rng));
  return t;
}

inline Mask random_mask(Index h, Index w, int n_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  Mask m(h, w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = cls(rng);
  return m;
}

/// Direct six-loop cross-correlation with zero padding.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, Index stride, Index pad,
                                 Index dil) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const Index oh = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
  const Index ow = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
  Tensor<double> out({xs.n, ws.n, oh, ow});
  for (Index n = 0; n < xs.n; ++n)
    for (Index o = 0; o < ws.n; ++o)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (Index c = 0; c < ws.c; ++c)
            for (Index ky = 0; ky < ws.h; ++ky)
              for (Index kx = 0; kx < ws.w; ++kx) {
                const Index iy = y * stride - pad + ky * dil, ix = xx * stride - pad + kx * dil;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += x(n, c, iy, ix) * w(o, c, ky, kx);
              }
          out(n, o, y, xx) = acc;
        }
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace pnet::test
