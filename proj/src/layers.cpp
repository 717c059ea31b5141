#include "pnet/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pnet {

namespace {

template <typename Scalar>
Tensor<Scalar> he_normal(Shape4 shape, std::mt19937_64& rng) {
  const double fan_in = double(shape.c * shape.h * shape.w);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar, std::size_t N>
std::vector<Var<Scalar>> as_vector(std::span<const Var<Scalar>, N> vars) {
  return std::vector<Var<Scalar>>(vars.begin(), vars.end());
}

}  // namespace

void MixPoolSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("mix-pool alpha must lie in [0, 1]");
  if (window < 1 || stride < 1) throw std::invalid_argument("mix-pool window and stride must be >= 1");
}

void DilatedSpec::validate() const {
  if (rates.size() < 2) throw std::invalid_argument("dilated spec needs the base rate and at least one more");
  if (rates.front() != 1) throw std::invalid_argument("first dilation rate must be 1");
  for (std::size_t i = 1; i < rates.size(); ++i)
    if (rates[i] <= rates[i - 1]) throw std::invalid_argument("dilation rates must be strictly increasing");
}

template <typename Scalar>
Tensor<Scalar> mix_pool(const Tensor<Scalar>& input, const MixPoolSpec& spec) {
  spec.validate();
  return mix_pool2d(input, static_cast<Scalar>(spec.alpha), spec.window, spec.stride);
}

template <typename Scalar>
Var<Scalar> mix_pool(Var<Scalar> input, const MixPoolSpec& spec) {
  spec.validate();
  return mix_pool2d(input, static_cast<Scalar>(spec.alpha), spec.window, spec.stride);
}

template <typename Scalar>
Var<Scalar> average_dilated(Var<Scalar> base, std::span<const Var<Scalar>> dilated) {
  if (dilated.empty()) throw std::invalid_argument("average_dilated: needs at least one dilated map");
  for (const auto& h : dilated)
    if (!(h.shape() == base.shape()))
      throw ShapeError("average_dilated: branch " + h.shape().str() + " vs base " + base.shape().str());
  return add(base, mean_of(dilated));
}

template <typename Scalar>
Var<Scalar> log_gabor_weights(std::span<const Var<Scalar>, kLogGaborLearnables> params, int kernel_size,
                              Scalar delta) {
  const Shape4 ps = params[0].shape();
  for (const auto& p : params)
    if (!(p.shape() == ps) || ps.h != 1 || ps.w != 1)
      throw ShapeError("log_gabor_weights: parameter tensors must all be (out,in,1,1), got " + p.shape().str());
  const Index entries = ps.n * ps.c;
  Tensor<Scalar> weights({ps.n, ps.c, kernel_size, kernel_size});
  std::vector<std::array<Kernel2D<Scalar>, kLogGaborLearnables>> partials(static_cast<std::size_t>(entries));
  const Index area = Index(kernel_size) * kernel_size;
  for (Index e = 0; e < entries; ++e) {
    LogGaborParams<Scalar> p;
    p.f = params[int(LogGaborParam::F)].value()[e];
    p.f0 = params[int(LogGaborParam::F0)].value()[e];
    p.theta = params[int(LogGaborParam::Theta)].value()[e];
    p.theta0 = params[int(LogGaborParam::Theta0)].value()[e];
    p.sigma = params[int(LogGaborParam::Sigma)].value()[e];
    p.psi = params[int(LogGaborParam::Psi)].value()[e];
    p.delta = delta;
    auto kp = log_gabor_kernel_with_partials(p, kernel_size);
    std::copy_n(kp.value.data(), area, weights.data() + e * area);
    partials[static_cast<std::size_t>(e)] = std::move(kp.partials);
  }
  std::array<int, kLogGaborLearnables> ids{};
  for (int j = 0; j < kLogGaborLearnables; ++j) ids[j] = params[j].id();
  return params[0].graph().record(
      std::move(weights), as_vector(params),
      [ids, area, partials = std::move(partials)](Graph<Scalar>& g, const Tensor<Scalar>& dw) {
        using Seg = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
        for (std::size_t e = 0; e < partials.size(); ++e) {
          Seg upstream(dw.data() + Index(e) * area, area);
          for (int j = 0; j < kLogGaborLearnables; ++j) {
            if (!g.requires_grad(ids[j])) continue;
            Seg d(partials[e][j].data(), area);
            g.grad(ids[j])[Index(e)] += (upstream * d).sum();
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> gabor_weights(std::span<const Var<Scalar>, kGaborLearnables> params, int kernel_size) {
  const Shape4 ps = params[0].shape();
  for (const auto& p : params)
    if (!(p.shape() == ps) || ps.h != 1 || ps.w != 1)
      throw ShapeError("gabor_weights: parameter tensors must all be (out,in,1,1), got " + p.shape().str());
  const Index entries = ps.n * ps.c;
  const Index area = Index(kernel_size) * kernel_size;
  Tensor<Scalar> weights({ps.n, ps.c, kernel_size, kernel_size});
  std::vector<std::array<Kernel2D<Scalar>, kGaborLearnables>> partials(static_cast<std::size_t>(entries));
  for (Index e = 0; e < entries; ++e) {
    GaborParams<Scalar> p;
    p.omega = params[int(GaborParam::Omega)].value()[e];
    p.theta = params[int(GaborParam::Theta)].value()[e];
    p.psi = params[int(GaborParam::Psi)].value()[e];
    p.sigma = params[int(GaborParam::Sigma)].value()[e];
    p.gamma = params[int(GaborParam::Gamma)].value()[e];
    auto kp = gabor_kernel_with_partials(p, kernel_size);
    std::copy_n(kp.value.data(), area, weights.data() + e * area);
    partials[static_cast<std::size_t>(e)] = std::move(kp.partials);
  }
  std::array<int, kGaborLearnables> ids{};
  for (int j = 0; j < kGaborLearnables; ++j) ids[j] = params[j].id();
  return params[0].graph().record(
      std::move(weights), as_vector(params),
      [ids, area, partials = std::move(partials)](Graph<Scalar>& g, const Tensor<Scalar>& dw) {
        using Seg = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
        for (std::size_t e = 0; e < partials.size(); ++e) {
          Seg upstream(dw.data() + Index(e) * area, area);
          for (int j = 0; j < kGaborLearnables; ++j) {
            if (!g.requires_grad(ids[j])) continue;
            Seg d(partials[e][j].data(), area);
            g.grad(ids[j])[Index(e)] += (upstream * d).sum();
          }
        }
      });
}

// ---- Conv2dLayer ----

template <typename Scalar>
Conv2dLayer<Scalar>::Conv2dLayer(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c,
                                 Index kernel, ConvOptions opt, bool bias, std::mt19937_64& rng)
    : opt_(opt) {
  weight_ = &store.add(name + ".weight", he_normal<Scalar>({out_c, in_c, kernel, kernel}, rng));
  if (bias) bias_ = &store.add(name + ".bias", Tensor<Scalar>({1, out_c, 1, 1}));
}

template <typename Scalar>
Var<Scalar> Conv2dLayer<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x) const {
  auto y = conv2d(x, g.param(*weight_), opt_);
  if (bias_) y = add_bias(y, g.param(*bias_));
  return y;
}

// ---- BatchNorm2dLayer ----

template <typename Scalar>
BatchNorm2dLayer<Scalar>::BatchNorm2dLayer(ParameterStore<Scalar>& store, const std::string& name, Index channels) {
  gamma_ = &store.add(name + ".gamma", Tensor<Scalar>({1, channels, 1, 1}, Scalar(1)));
  beta_ = &store.add(name + ".beta", Tensor<Scalar>({1, channels, 1, 1}));
  state_.running_mean = &store.add(name + ".running_mean", Tensor<Scalar>({1, channels, 1, 1}), false);
  state_.running_var = &store.add(name + ".running_var", Tensor<Scalar>({1, channels, 1, 1}, Scalar(1)), false);
}

template <typename Scalar>
Var<Scalar> BatchNorm2dLayer<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x, bool training) const {
  return batch_norm(x, g.param(*gamma_), g.param(*beta_), state_, training);
}

// ---- LogGaborConv2d ----

template <typename Scalar>
LogGaborConv2d<Scalar>::LogGaborConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c,
                                       Index out_c, int kernel_size, std::uint64_t seed)
    : in_c_(in_c), out_c_(out_c), kernel_size_(kernel_size) {
  for (int j = 0; j < kLogGaborLearnables; ++j)
    params_[j] = &store.add(name + "." + kLogGaborNames[j], Tensor<Scalar>({out_c, in_c, 1, 1}));
  auto bank = init_log_gabor_bank<Scalar>(int(out_c), int(in_c), kernel_size, seed);
  set_bank(bank);
}

template <typename Scalar>
std::vector<LogGaborParams<Scalar>> LogGaborConv2d<Scalar>::bank() const {
  std::vector<LogGaborParams<Scalar>> out(static_cast<std::size_t>(out_c_ * in_c_));
  for (Index e = 0; e < out_c_ * in_c_; ++e) {
    auto& p = out[static_cast<std::size_t>(e)];
    p.f = params_[int(LogGaborParam::F)]->value[e];
    p.f0 = params_[int(LogGaborParam::F0)]->value[e];
    p.theta = params_[int(LogGaborParam::Theta)]->value[e];
    p.theta0 = params_[int(LogGaborParam::Theta0)]->value[e];
    p.sigma = params_[int(LogGaborParam::Sigma)]->value[e];
    p.psi = params_[int(LogGaborParam::Psi)]->value[e];
    p.delta = delta_;
  }
  return out;
}

template <typename Scalar>
void LogGaborConv2d<Scalar>::set_bank(std::span<const LogGaborParams<Scalar>> bank) {
  if (Index(bank.size()) != out_c_ * in_c_)
    throw ShapeError("log-Gabor bank of " + std::to_string(bank.size()) + " entries, layer needs " +
                     std::to_string(out_c_ * in_c_));
  for (Index e = 0; e < out_c_ * in_c_; ++e) {
    const auto& p = bank[static_cast<std::size_t>(e)];
    params_[int(LogGaborParam::F)]->value[e] = p.f;
    params_[int(LogGaborParam::F0)]->value[e] = p.f0;
    params_[int(LogGaborParam::Theta)]->value[e] = p.theta;
    params_[int(LogGaborParam::Theta0)]->value[e] = p.theta0;
    params_[int(LogGaborParam::Sigma)]->value[e] = p.sigma;
    params_[int(LogGaborParam::Psi)]->value[e] = p.psi;
  }
  delta_ = bank.empty() ? delta_ : bank.front().delta;
}

template <typename Scalar>
Tensor<Scalar> LogGaborConv2d<Scalar>::materialise() const {
  const Index area = Index(kernel_size_) * kernel_size_;
  Tensor<Scalar> w({out_c_, in_c_, kernel_size_, kernel_size_});
  const auto b = bank();
  for (std::size_t e = 0; e < b.size(); ++e) {
    const auto k = log_gabor_kernel(b[e], kernel_size_);
    std::copy_n(k.data(), area, w.data() + Index(e) * area);
  }
  return w;
}

template <typename Scalar>
Var<Scalar> LogGaborConv2d<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x) const {
  std::array<Var<Scalar>, kLogGaborLearnables> vars;
  for (int j = 0; j < kLogGaborLearnables; ++j) vars[j] = g.param(*params_[j]);
  auto w = log_gabor_weights<Scalar>(std::span<const Var<Scalar>, kLogGaborLearnables>(vars), kernel_size_, delta_);
  return conv2d(x, w, ConvOptions{1, (kernel_size_ - 1) / 2, 1});
}

// ---- GaborConv2d ----

template <typename Scalar>
GaborConv2d<Scalar>::GaborConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c,
                                 int kernel_size, std::uint64_t seed)
    : in_c_(in_c), out_c_(out_c), kernel_size_(kernel_size) {
  for (int j = 0; j < kGaborLearnables; ++j)
    params_[j] = &store.add(name + "." + kGaborNames[j], Tensor<Scalar>({out_c, in_c, 1, 1}));
  const auto bank = init_gabor_bank<Scalar>(int(out_c), int(in_c), kernel_size, seed);
  for (Index e = 0; e < out_c * in_c; ++e) {
    const auto& p = bank[static_cast<std::size_t>(e)];
    params_[int(GaborParam::Omega)]->value[e] = p.omega;
    params_[int(GaborParam::Theta)]->value[e] = p.theta;
    params_[int(GaborParam::Psi)]->value[e] = p.psi;
    params_[int(GaborParam::Sigma)]->value[e] = p.sigma;
    params_[int(GaborParam::Gamma)]->value[e] = p.gamma;
  }
}

template <typename Scalar>
std::vector<GaborParams<Scalar>> GaborConv2d<Scalar>::bank() const {
  std::vector<GaborParams<Scalar>> out(static_cast<std::size_t>(out_c_ * in_c_));
  for (Index e = 0; e < out_c_ * in_c_; ++e) {
    auto& p = out[static_cast<std::size_t>(e)];
    p.omega = params_[int(GaborParam::Omega)]->value[e];
    p.theta = params_[int(GaborParam::Theta)]->value[e];
    p.psi = params_[int(GaborParam::Psi)]->value[e];
    p.sigma = params_[int(GaborParam::Sigma)]->value[e];
    p.gamma = params_[int(GaborParam::Gamma)]->value[e];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> GaborConv2d<Scalar>::materialise() const {
  const Index area = Index(kernel_size_) * kernel_size_;
  Tensor<Scalar> w({out_c_, in_c_, kernel_size_, kernel_size_});
  const auto b = bank();
  for (std::size_t e = 0; e < b.size(); ++e) {
    const auto k = gabor_kernel(b[e], kernel_size_, GaborPart::Real);
    std::copy_n(k.data(), area, w.data() + Index(e) * area);
  }
  return w;
}

template <typename Scalar>
Var<Scalar> GaborConv2d<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x) const {
  std::array<Var<Scalar>, kGaborLearnables> vars;
  for (int j = 0; j < kGaborLearnables; ++j) vars[j] = g.param(*params_[j]);
  auto w = gabor_weights<Scalar>(std::span<const Var<Scalar>, kGaborLearnables>(vars), kernel_size_);
  return conv2d(x, w, ConvOptions{1, (kernel_size_ - 1) / 2, 1});
}

// ---- AvgDilatedConv2d ----

template <typename Scalar>
AvgDilatedConv2d<Scalar>::AvgDilatedConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c,
                                           Index out_c, const DilatedSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  for (int rate : spec.rates)
    branches_.emplace_back(store, name + ".d" + std::to_string(rate), in_c, out_c, 3, ConvOptions{1, rate, rate},
                           false, rng);
}

template <typename Scalar>
Var<Scalar> AvgDilatedConv2d<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x) const {
  auto base = branches_.front().forward(g, x);
  std::vector<Var<Scalar>> rest;
  for (std::size_t i = 1; i < branches_.size(); ++i) rest.push_back(branches_[i].forward(g, x));
  return average_dilated<Scalar>(base, rest);
}

// ---- EncoderResBlock ----

template <typename Scalar>
EncoderResBlock<Scalar>::EncoderResBlock(ParameterStore<Scalar>& store, const std::string& name, Index in_c,
                                         Index out_c, const EncoderBlockOptions& opt, std::mt19937_64& rng)
    : opt_(opt) {
  opt_.pool.validate();
  const Index stride = opt.downsample == Downsample::Strided ? 2 : 1;
  bn_a_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_a", in_c);
  conv_a_ = Conv2dLayer<Scalar>(store, name + ".conv_a", in_c, out_c, 3, ConvOptions{stride, 1, 1}, false, rng);
  bn_b_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_b", out_c);
  conv_b_ = Conv2dLayer<Scalar>(store, name + ".conv_b", out_c, out_c, 3, ConvOptions{1, 1, 1}, false, rng);
  if (opt.dilated) {
    bn_c_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_c", out_c);
    dilated_.emplace(store, name + ".dilated", out_c, out_c, *opt.dilated, rng);
  }
  conv_skip_ = Conv2dLayer<Scalar>(store, name + ".skip", in_c, out_c, 1, ConvOptions{stride, 0, 1}, false, rng);
  bn_skip_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_skip", out_c);
}

template <typename Scalar>
Var<Scalar> EncoderResBlock<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x, bool training) const {
  const auto& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("encoder block needs even spatial extents, got " + s.str());
  const bool pooled = opt_.downsample == Downsample::MixPool;
  auto h = conv_a_.forward(g, relu(bn_a_.forward(g, x, training)));
  if (pooled) h = mix_pool(h, opt_.pool);
  h = conv_b_.forward(g, relu(bn_b_.forward(g, h, training)));
  if (dilated_) h = dilated_->forward(g, relu(bn_c_.forward(g, h, training)));
  auto skip = bn_skip_.forward(g, conv_skip_.forward(g, x), training);
  if (pooled) skip = mix_pool(skip, opt_.pool);
  return add(h, skip);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> EncoderResBlock<Scalar>::residual_output_weights() const {
  if (!dilated_) return {&conv_b_.weight()};
  std::vector<Parameter<Scalar>*> out;
  for (const auto& b : dilated_->branches()) out.push_back(&b.weight());
  return out;
}

template <typename Scalar>
std::string EncoderResBlock<Scalar>::describe() const {
  std::string d = opt_.downsample == Downsample::MixPool ? "mixpool" : "strided";
  if (dilated_) d += "+dilated";
  return d;
}

// ---- DecoderResBlock ----

template <typename Scalar>
DecoderResBlock<Scalar>::DecoderResBlock(ParameterStore<Scalar>& store, const std::string& name, Index in_c,
                                         Index skip_c, Index out_c, const std::optional<DilatedSpec>& dilated,
                                         std::mt19937_64& rng) {
  const Index cat_c = in_c + skip_c;
  bn_a_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_a", cat_c);
  conv_a_ = Conv2dLayer<Scalar>(store, name + ".conv_a", cat_c, out_c, 3, ConvOptions{1, 1, 1}, false, rng);
  bn_b_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_b", out_c);
  conv_b_ = Conv2dLayer<Scalar>(store, name + ".conv_b", out_c, out_c, 3, ConvOptions{1, 1, 1}, false, rng);
  if (dilated) {
    bn_c_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_c", out_c);
    dilated_.emplace(store, name + ".dilated", out_c, out_c, *dilated, rng);
  }
  conv_skip_ = Conv2dLayer<Scalar>(store, name + ".skip", cat_c, out_c, 1, ConvOptions{1, 0, 1}, false, rng);
  bn_skip_ = BatchNorm2dLayer<Scalar>(store, name + ".bn_skip", out_c);
}

template <typename Scalar>
Var<Scalar> DecoderResBlock<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> x, Var<Scalar> skip, bool training) const {
  const auto &xs = x.shape(), &ss = skip.shape();
  if (ss.h != 2 * xs.h || ss.w != 2 * xs.w || ss.n != xs.n)
    throw ShapeError("decoder block: skip " + ss.str() + " must be twice the spatial extent of input " + xs.str());
  auto cat = concat_channels(upsample_nearest2x(x), skip);
  auto h = conv_a_.forward(g, relu(bn_a_.forward(g, cat, training)));
  h = conv_b_.forward(g, relu(bn_b_.forward(g, h, training)));
  if (dilated_) h = dilated_->forward(g, relu(bn_c_.forward(g, h, training)));
  auto shortcut = bn_skip_.forward(g, conv_skip_.forward(g, cat), training);
  return add(h, shortcut);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> DecoderResBlock<Scalar>::residual_output_weights() const {
  if (!dilated_) return {&conv_b_.weight()};
  std::vector<Parameter<Scalar>*> out;
  for (const auto& b : dilated_->branches()) out.push_back(&b.weight());
  return out;
}

template <typename Scalar>
std::string DecoderResBlock<Scalar>::describe() const {
  return dilated_ ? "plain+dilated" : "plain";
}

#define PNET_INSTANTIATE_LAYERS(S)                                                                      \
  template Tensor<S> mix_pool(const Tensor<S>&, const MixPoolSpec&);                                    \
  template Var<S> mix_pool(Var<S>, const MixPoolSpec&);                                                 \
  template Var<S> average_dilated(Var<S>, std::span<const Var<S>>);                                     \
  template Var<S> log_gabor_weights(std::span<const Var<S>, kLogGaborLearnables>, int, S);              \
  template Var<S> gabor_weights(std::span<const Var<S>, kGaborLearnables>, int);                        \
  template class Conv2dLayer<S>;                                                                        \
  template class BatchNorm2dLayer<S>;                                                                   \
  template class LogGaborConv2d<S>;                                                                     \
  template class GaborConv2d<S>;                                                                        \
  template class AvgDilatedConv2d<S>;                                                                   \
  template class EncoderResBlock<S>;                                                                    \
  template class DecoderResBlock<S>;

PNET_INSTANTIATE_LAYERS(float)
PNET_INSTANTIATE_LAYERS(double)

}  // namespace pnet
