#include "pnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace pnet {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  Index in_c, in_h, in_w;
  Index k_h, k_w;
  Index out_h, out_w;
  ConvOptions opt;

  Index patch() const { return in_c * k_h * k_w; }
  Index pixels() const { return out_h * out_w; }
  bool is_pointwise() const {
    return k_h == 1 && k_w == 1 && opt.stride == 1 && opt.padding == 0;
  }
};

ConvGeometry make_geometry(const Shape4& in, const Shape4& wt, const ConvOptions& opt) {
  Shape4 out = conv2d_output_shape(in, wt, opt);
  return {in.c, in.h, in.w, wt.h, wt.w, out.h, out.w, opt};
}

// Unfolds sample `x` (c, h*w) into (c*kh*kw, out_h*out_w) columns.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.patch(), g.pixels());
  const Index s = g.opt.stride, p = g.opt.padding, d = g.opt.dilation;
  for (Index ic = 0; ic < g.in_c; ++ic) {
    const Scalar* plane = x + ic * g.in_h * g.in_w;
    for (Index ky = 0; ky < g.k_h; ++ky) {
      for (Index kx = 0; kx < g.k_w; ++kx) {
        Scalar* row = cols.data() + ((ic * g.k_h + ky) * g.k_w + kx) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * s - p + ky * d;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * g.in_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * s - p + kx * d;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

// Scatter-adds columns back onto sample gradient `dx` (c, h*w).
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  const Index s = g.opt.stride, p = g.opt.padding, d = g.opt.dilation;
  for (Index ic = 0; ic < g.in_c; ++ic) {
    Scalar* plane = dx + ic * g.in_h * g.in_w;
    for (Index ky = 0; ky < g.k_h; ++ky) {
      for (Index kx = 0; kx < g.k_w; ++kx) {
        const Scalar* row = cols.data() + ((ic * g.k_h + ky) * g.k_w + kx) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= g.in_h) continue;
          const Scalar* src = row + oy * g.out_w;
          Scalar* dst = plane + iy * g.in_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * s - p + kx * d;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const ConvGeometry& g,
                  Tensor<Scalar>& y) {
  using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
  const Index out_c = w.shape().n;
  ConstMap wm(w.data(), out_c, g.patch());
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < x.shape().n; ++n) {
    auto yn = y.sample(n);
    if (g.is_pointwise()) {
      yn.noalias() = wm * x.sample(n);
    } else {
      im2col(x.data() + x.offset(n, 0, 0, 0), g, cols);
      yn.noalias() = wm * cols;
    }
  }
}

struct PoolGeometry {
  Index window, stride, out_h, out_w;
};

PoolGeometry pool_geometry(const Shape4& in, Index window, Index stride) {
  if (window < 1 || stride < 1) throw std::invalid_argument("pooling window and stride must be >= 1");
  if (in.h % stride != 0 || in.w % stride != 0 || in.h < window || in.w < window)
    throw ShapeError("pooling: spatial extent " + in.str() + " not divisible by stride " +
                     std::to_string(stride));
  return {window, stride, (in.h - window) / stride + 1, (in.w - window) / stride + 1};
}

// Window maxima (with flat argmax offsets) and means in one sweep.
template <typename Scalar>
void pool_sweep(const Tensor<Scalar>& x, const PoolGeometry& g, Tensor<Scalar>* max_out,
                std::vector<Index>* argmax, Tensor<Scalar>* avg_out) {
  const auto& s = x.shape();
  const Scalar inv_area = Scalar(1) / Scalar(g.window * g.window);
  if (argmax) argmax->resize(static_cast<std::size_t>(s.n * s.c * g.out_h * g.out_w));
  Index o = 0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox, ++o) {
          Index best = x.offset(n, c, oy * g.stride, ox * g.stride);
          Scalar best_v = x[best];
          Scalar acc = 0;
          for (Index ky = 0; ky < g.window; ++ky) {
            for (Index kx = 0; kx < g.window; ++kx) {
              const Index i = x.offset(n, c, oy * g.stride + ky, ox * g.stride + kx);
              acc += x[i];
              if (x[i] > best_v) {
                best_v = x[i];
                best = i;
              }
            }
          }
          if (max_out) (*max_out)[o] = best_v;
          if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
          if (avg_out) (*avg_out)[o] = acc * inv_area;
        }
      }
    }
  }
}

template <typename Scalar>
void pool_backward(const Tensor<Scalar>& out_grad, const Shape4& in_shape, const PoolGeometry& g,
                   Scalar max_weight, const std::vector<Index>* argmax, Scalar avg_weight,
                   Tensor<Scalar>& dx) {
  const Scalar avg_share = avg_weight / Scalar(g.window * g.window);
  Index o = 0;
  for (Index n = 0; n < in_shape.n; ++n) {
    for (Index c = 0; c < in_shape.c; ++c) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox, ++o) {
          const Scalar go = out_grad[o];
          if (argmax && max_weight != Scalar(0)) dx[(*argmax)[static_cast<std::size_t>(o)]] += max_weight * go;
          if (avg_share != Scalar(0)) {
            for (Index ky = 0; ky < g.window; ++ky)
              for (Index kx = 0; kx < g.window; ++kx)
                dx[dx.offset(n, c, oy * g.stride + ky, ox * g.stride + kx)] += avg_share * go;
          }
        }
      }
    }
  }
}

}  // namespace

Shape4 conv2d_output_shape(const Shape4& in, const Shape4& wt, const ConvOptions& opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0)
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
  if (in.c != wt.c)
    throw ShapeError("conv2d: input " + in.str() + " has " + std::to_string(in.c) +
                     " channels but weights " + wt.str() + " expect " + std::to_string(wt.c));
  const Index span_h = opt.dilation * (wt.h - 1) + 1;
  const Index span_w = opt.dilation * (wt.w - 1) + 1;
  if (in.h + 2 * opt.padding < span_h || in.w + 2 * opt.padding < span_w)
    throw ShapeError("conv2d: weights " + wt.str() + " larger than padded input " + in.str());
  return {in.n, wt.n, (in.h + 2 * opt.padding - span_h) / opt.stride + 1,
          (in.w + 2 * opt.padding - span_w) / opt.stride + 1};
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const ConvOptions& opt) {
  const auto g = make_geometry(input.shape(), weights.shape(), opt);
  Tensor<Scalar> out(conv2d_output_shape(input.shape(), weights.shape(), opt));
  conv_forward(input, weights, g, out);
  return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window, Index stride) {
  const auto g = pool_geometry(input.shape(), window, stride);
  Tensor<Scalar> out({input.shape().n, input.shape().c, g.out_h, g.out_w});
  pool_sweep<Scalar>(input, g, &out, nullptr, nullptr);
  return out;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& input, Index window, Index stride) {
  const auto g = pool_geometry(input.shape(), window, stride);
  Tensor<Scalar> out({input.shape().n, input.shape().c, g.out_h, g.out_w});
  pool_sweep<Scalar>(input, g, nullptr, nullptr, &out);
  return out;
}

template <typename Scalar>
Tensor<Scalar> mix_pool2d(const Tensor<Scalar>& input, Scalar alpha, Index window, Index stride) {
  if (!(alpha >= Scalar(0) && alpha <= Scalar(1)))
    throw DomainError("mix_pool2d: alpha must lie in [0, 1]");
  const auto g = pool_geometry(input.shape(), window, stride);
  const Shape4 os{input.shape().n, input.shape().c, g.out_h, g.out_w};
  Tensor<Scalar> mx(os), av(os);
  pool_sweep<Scalar>(input, g, &mx, nullptr, &av);
  mx.array() = alpha * mx.array() + (Scalar(1) - alpha) * av.array();
  return mx;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& input) {
  const auto& s = input.shape();
  Tensor<Scalar> out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < 2 * s.h; ++y)
        for (Index x = 0; x < 2 * s.w; ++x) out(n, c, y, x) = input(n, c, y / 2, x / 2);
  return out;
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> weights, const ConvOptions& opt) {
  auto& graph = input.graph();
  const auto g = make_geometry(input.shape(), weights.shape(), opt);
  Tensor<Scalar> out(conv2d_output_shape(input.shape(), weights.shape(), opt));
  conv_forward(input.value(), weights.value(), g, out);
  const int xi = input.id(), wi = weights.id();
  return graph.record(std::move(out), {input, weights}, [xi, wi, g](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    const auto& x = gr.value(xi);
    const auto& w = gr.value(wi);
    const Index out_c = w.shape().n;
    const bool want_x = gr.requires_grad(xi), want_w = gr.requires_grad(wi);
    Eigen::Map<const RowMatrix<Scalar>> wm(w.data(), out_c, g.patch());
    RowMatrix<Scalar> cols, dcols;
    RowMatrix<Scalar> dw = RowMatrix<Scalar>::Zero(out_c, g.patch());
    Tensor<Scalar>* dx = want_x ? &gr.grad(xi) : nullptr;
    for (Index n = 0; n < x.shape().n; ++n) {
      auto dyn = dy.sample(n);
      if (g.is_pointwise()) {
        if (want_w) dw.noalias() += dyn * x.sample(n).transpose();
        if (want_x) dx->sample(n).noalias() += wm.transpose() * dyn;
        continue;
      }
      if (want_w) {
        im2col(x.data() + x.offset(n, 0, 0, 0), g, cols);
        dw.noalias() += dyn * cols.transpose();
      }
      if (want_x) {
        dcols.noalias() = wm.transpose() * dyn;
        col2im(dcols, g, dx->data() + dx->offset(n, 0, 0, 0));
      }
    }
    if (want_w) {
      auto& gw = gr.grad(wi);
      Eigen::Map<RowMatrix<Scalar>>(gw.data(), out_c, g.patch()) += dw;
    }
  });
}

template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> input, Var<Scalar> bias) {
  const auto& s = input.shape();
  if (!(bias.shape() == Shape4{1, s.c, 1, 1}))
    throw ShapeError("add_bias: bias " + bias.shape().str() + " does not match input " + s.str());
  Tensor<Scalar> out = input.value();
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) out.plane(n, c).array() += bias.value()[c];
  const int xi = input.id(), bi = bias.id();
  return input.graph().record(std::move(out), {input, bias}, [xi, bi](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const auto& s = dy.shape();
    if (g.requires_grad(xi)) g.grad(xi).array() += dy.array();
    if (g.requires_grad(bi)) {
      auto& db = g.grad(bi);
      for (Index n = 0; n < s.n; ++n)
        for (Index c = 0; c < s.c; ++c) db[c] += dy.plane(n, c).sum();
    }
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), (a.value().array() + b.value().array()).eval());
  const int ai = a.id(), bi = b.id();
  return a.graph().record(std::move(out), {a, b}, [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    if (g.requires_grad(ai)) g.grad(ai).array() += dy.array();
    if (g.requires_grad(bi)) g.grad(bi).array() += dy.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), (a.value().array() * b.value().array()).eval());
  const int ai = a.id(), bi = b.id();
  return a.graph().record(std::move(out), {a, b}, [ai, bi](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    if (g.requires_grad(ai)) g.grad(ai).array() += dy.array() * g.value(bi).array();
    if (g.requires_grad(bi)) g.grad(bi).array() += dy.array() * g.value(ai).array();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), (a.value().array() * factor).eval());
  const int ai = a.id();
  return a.graph().record(std::move(out), {a}, [ai, factor](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.grad(ai).array() += factor * dy.array();
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Scalar total = 0;
  for (Index i = 0; i < a.value().size(); ++i) total += a.value()[i];
  const int ai = a.id();
  return a.graph().record(Tensor<Scalar>::scalar(total), {a}, [ai](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.grad(ai).array() += dy[0];
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Tensor<Scalar> out(a.shape(), a.value().array().max(Scalar(0)).eval());
  const int ai = a.id();
  return a.graph().record(std::move(out), {a}, [ai](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    g.grad(ai).array() += (g.value(ai).array() > Scalar(0)).select(dy.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> mean_of(std::span<const Var<Scalar>> inputs) {
  if (inputs.empty()) throw std::invalid_argument("mean_of: no inputs");
  for (const auto& v : inputs) require_same_shape(inputs.front().shape(), v.shape(), "mean_of");
  Tensor<Scalar> out = inputs.front().value();
  for (std::size_t k = 1; k < inputs.size(); ++k)
    out.array() += (inputs[k].value().array() - out.array()) / Scalar(k + 1);
  std::vector<Var<Scalar>> ins(inputs.begin(), inputs.end());
  std::vector<int> ids;
  for (const auto& v : ins) ids.push_back(v.id());
  return inputs.front().graph().record(std::move(out), ins, [ids](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const Scalar share = Scalar(1) / Scalar(ids.size());
    for (int id : ids)
      if (g.requires_grad(id)) g.grad(id).array() += share * dy.array();
  });
}

template <typename Scalar>
Var<Scalar> max_pool2d(Var<Scalar> input, Index window, Index stride) {
  const auto g = pool_geometry(input.shape(), window, stride);
  const auto& s = input.shape();
  Tensor<Scalar> out({s.n, s.c, g.out_h, g.out_w});
  std::vector<Index> argmax;
  pool_sweep<Scalar>(input.value(), g, &out, &argmax, nullptr);
  const int xi = input.id();
  return input.graph().record(std::move(out), {input},
                              [xi, g, s, argmax = std::move(argmax)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
                                pool_backward<Scalar>(dy, s, g, Scalar(1), &argmax, Scalar(0), gr.grad(xi));
                              });
}

template <typename Scalar>
Var<Scalar> avg_pool2d(Var<Scalar> input, Index window, Index stride) {
  const auto g = pool_geometry(input.shape(), window, stride);
  const auto& s = input.shape();
  Tensor<Scalar> out({s.n, s.c, g.out_h, g.out_w});
  pool_sweep<Scalar>(input.value(), g, nullptr, nullptr, &out);
  const int xi = input.id();
  return input.graph().record(std::move(out), {input}, [xi, g, s](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
    pool_backward<Scalar>(dy, s, g, Scalar(0), nullptr, Scalar(1), gr.grad(xi));
  });
}

template <typename Scalar>
Var<Scalar> mix_pool2d(Var<Scalar> input, Scalar alpha, Index window, Index stride) {
  if (!(alpha >= Scalar(0) && alpha <= Scalar(1)))
    throw DomainError("mix_pool2d: alpha must lie in [0, 1]");
  const auto g = pool_geometry(input.shape(), window, stride);
  const auto& s = input.shape();
  const Shape4 os{s.n, s.c, g.out_h, g.out_w};
  Tensor<Scalar> mx(os), av(os);
  std::vector<Index> argmax;
  pool_sweep<Scalar>(input.value(), g, &mx, &argmax, &av);
  mx.array() = alpha * mx.array() + (Scalar(1) - alpha) * av.array();
  const int xi = input.id();
  return input.graph().record(
      std::move(mx), {input}, [xi, g, s, alpha, argmax = std::move(argmax)](Graph<Scalar>& gr, const Tensor<Scalar>& dy) {
        pool_backward<Scalar>(dy, s, g, alpha, &argmax, Scalar(1) - alpha, gr.grad(xi));
      });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2x(Var<Scalar> input) {
  const int xi = input.id();
  return input.graph().record(upsample_nearest2x(input.value()), {input},
                              [xi](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
                                auto& dx = g.grad(xi);
                                const auto& s = dx.shape();
                                for (Index n = 0; n < s.n; ++n)
                                  for (Index c = 0; c < s.c; ++c)
                                    for (Index y = 0; y < 2 * s.h; ++y)
                                      for (Index x = 0; x < 2 * s.w; ++x) dx(n, c, y / 2, x / 2) += dy(n, c, y, x);
                              });
}

template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b) {
  const auto &sa = a.shape(), &sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: incompatible shapes " + sa.str() + " and " + sb.str());
  Tensor<Scalar> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const Index pa = sa.c * sa.h * sa.w, pb = sb.c * sb.h * sb.w;
  for (Index n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().data() + n * pa, pa, out.data() + n * (pa + pb));
    std::copy_n(b.value().data() + n * pb, pb, out.data() + n * (pa + pb) + pa);
  }
  const int ai = a.id(), bi = b.id();
  return a.graph().record(std::move(out), {a, b}, [ai, bi, pa, pb](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
    const Index batch = dy.shape().n;
    using Seg = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    for (Index n = 0; n < batch; ++n) {
      if (g.requires_grad(ai)) g.grad(ai).array().segment(n * pa, pa) += Seg(dy.data() + n * (pa + pb), pa);
      if (g.requires_grad(bi)) g.grad(bi).array().segment(n * pb, pb) += Seg(dy.data() + n * (pa + pb) + pa, pb);
    }
  });
}

template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> input, Var<Scalar> gamma, Var<Scalar> beta,
                       const BatchNormState<Scalar>& state, bool training) {
  const auto& s = input.shape();
  if (!(gamma.shape() == Shape4{1, s.c, 1, 1}) || !(beta.shape() == Shape4{1, s.c, 1, 1}))
    throw ShapeError("batch_norm: affine parameters must be (1," + std::to_string(s.c) + ",1,1), input " + s.str());
  const Index count = s.n * s.h * s.w;
  const auto& x = input.value();

  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean(s.c), inv_std(s.c);
  if (training) {
    if (count < 2) throw ShapeError("batch_norm: training needs more than one value per channel, input " + s.str());
    for (Index c = 0; c < s.c; ++c) {
      Scalar acc = 0;
      for (Index n = 0; n < s.n; ++n) acc += x.plane(n, c).sum();
      const Scalar mu = acc / Scalar(count);
      Scalar sq = 0;
      for (Index n = 0; n < s.n; ++n) sq += (x.plane(n, c).array() - mu).square().sum();
      const Scalar var = sq / Scalar(count);
      mean[c] = mu;
      inv_std[c] = Scalar(1) / std::sqrt(var + state.eps);
      if (state.running_mean && state.running_var) {
        auto& rm = state.running_mean->value[c];
        auto& rv = state.running_var->value[c];
        rm = (Scalar(1) - state.momentum) * rm + state.momentum * mu;
        rv = (Scalar(1) - state.momentum) * rv + state.momentum * var * Scalar(count) / Scalar(count - 1);
      }
    }
  } else {
    if (!state.running_mean || !state.running_var)
      throw std::logic_error("batch_norm: inference mode requires running statistics");
    for (Index c = 0; c < s.c; ++c) {
      mean[c] = state.running_mean->value[c];
      inv_std[c] = Scalar(1) / std::sqrt(state.running_var->value[c] + state.eps);
    }
  }

  Tensor<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      out.plane(n, c).array() =
          (x.plane(n, c).array() - mean[c]) * (inv_std[c] * gamma.value()[c]) + beta.value()[c];

  const int xi = input.id(), gi = gamma.id(), bi = beta.id();
  return input.graph().record(
      std::move(out), {input, gamma, beta},
      [xi, gi, bi, mean, inv_std, training, count](Graph<Scalar>& g, const Tensor<Scalar>& dy) {
        const auto& x = g.value(xi);
        const auto& gam = g.value(gi);
        const auto& s = x.shape();
        const bool want_x = g.requires_grad(xi), want_g = g.requires_grad(gi), want_b = g.requires_grad(bi);
        for (Index c = 0; c < s.c; ++c) {
          Scalar sum_dy = 0, sum_dy_xhat = 0;
          for (Index n = 0; n < s.n; ++n) {
            auto xhat = (x.plane(n, c).array() - mean[c]) * inv_std[c];
            sum_dy += dy.plane(n, c).sum();
            sum_dy_xhat += (dy.plane(n, c).array() * xhat).sum();
          }
          if (want_g) g.grad(gi)[c] += sum_dy_xhat;
          if (want_b) g.grad(bi)[c] += sum_dy;
          if (!want_x) continue;
          auto& dx = g.grad(xi);
          const Scalar k = gam[c] * inv_std[c];
          for (Index n = 0; n < s.n; ++n) {
            if (training) {
              auto xhat = (x.plane(n, c).array() - mean[c]) * inv_std[c];
              dx.plane(n, c).array() +=
                  k * (dy.plane(n, c).array() - sum_dy / Scalar(count) - xhat * (sum_dy_xhat / Scalar(count)));
            } else {
              dx.plane(n, c).array() += k * dy.plane(n, c).array();
            }
          }
        }
      });
}

#define PNET_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const ConvOptions&);             \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> avg_pool2d(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> mix_pool2d(const Tensor<S>&, S, Index, Index);                              \
  template Tensor<S> upsample_nearest2x(const Tensor<S>&);                                       \
  template Var<S> conv2d(Var<S>, Var<S>, const ConvOptions&);                                    \
  template Var<S> add_bias(Var<S>, Var<S>);                                                      \
  template Var<S> add(Var<S>, Var<S>);                                                           \
  template Var<S> mul(Var<S>, Var<S>);                                                           \
  template Var<S> scale(Var<S>, S);                                                              \
  template Var<S> sum(Var<S>);                                                                   \
  template Var<S> relu(Var<S>);                                                                  \
  template Var<S> mean_of(std::span<const Var<S>>);                                              \
  template Var<S> max_pool2d(Var<S>, Index, Index);                                              \
  template Var<S> avg_pool2d(Var<S>, Index, Index);                                              \
  template Var<S> mix_pool2d(Var<S>, S, Index, Index);                                           \
  template Var<S> upsample_nearest2x(Var<S>);                                                    \
  template Var<S> concat_channels(Var<S>, Var<S>);                                               \
  template Var<S> batch_norm(Var<S>, Var<S>, Var<S>, const BatchNormState<S>&, bool);

PNET_INSTANTIATE_OPS(float)
PNET_INSTANTIATE_OPS(double)

}  // namespace pnet
