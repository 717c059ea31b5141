#include "pnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "pnet/layers.hpp"
#include "pnet/training.hpp"

namespace pnet {

double relative_error(const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: size mismatch");
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(analytic.abs().maxCoeff(), numeric.abs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).abs().maxCoeff() / scale;
}

LogGaborParams<double> random_log_gabor_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LogGaborParams<double> p;
  p.f0 = 0.15 + 0.7 * u(rng);
  p.f = 0.1 + 0.9 * u(rng);
  p.sigma = p.f0 * (0.3 + 0.5 * u(rng));
  p.theta = std::numbers::pi * u(rng);
  p.theta0 = std::numbers::pi * u(rng);
  p.psi = 2.0 * std::numbers::pi * u(rng);
  return p;
}

namespace {

double& field(LogGaborParams<double>& p, int i) {
  switch (static_cast<LogGaborParam>(i)) {
    case LogGaborParam::F: return p.f;
    case LogGaborParam::F0: return p.f0;
    case LogGaborParam::Theta: return p.theta;
    case LogGaborParam::Theta0: return p.theta0;
    case LogGaborParam::Sigma: return p.sigma;
    case LogGaborParam::Psi: return p.psi;
  }
  throw std::logic_error("bad log-Gabor parameter index");
}

double& field(GaborParams<double>& p, int i) {
  switch (static_cast<GaborParam>(i)) {
    case GaborParam::Omega: return p.omega;
    case GaborParam::Theta: return p.theta;
    case GaborParam::Psi: return p.psi;
    case GaborParam::Sigma: return p.sigma;
    case GaborParam::Gamma: return p.gamma;
  }
  throw std::logic_error("bad Gabor parameter index");
}

Eigen::ArrayXd flat(const Kernel2D<double>& k) { return Eigen::Map<const Eigen::ArrayXd>(k.data(), k.size()); }

template <int N, typename Params, typename KernelFn, typename PartialsFn>
std::vector<GradcheckEntry> check_partials(const std::array<const char*, N>& names, int draws, Params (*draw)(std::mt19937_64&),
                                           std::uint64_t seed, double step, KernelFn kernel, PartialsFn partials) {
  std::vector<GradcheckEntry> out;
  for (const char* n : names) out.push_back({n, 0.0, 0});
  std::mt19937_64 rng(seed);
  for (int d = 0; d < draws; ++d) {
    const Params p = draw(rng);
    const auto analytic = partials(p);
    for (int i = 0; i < N; ++i) {
      Params hi = p, lo = p;
      field(hi, i) += step;
      field(lo, i) -= step;
      const Eigen::ArrayXd numeric = (flat(kernel(hi)) - flat(kernel(lo))) / (2.0 * step);
      auto& e = out[std::size_t(i)];
      e.max_rel_error = std::max(e.max_rel_error, relative_error(flat(analytic.partials[std::size_t(i)]), numeric));
      e.checked += numeric.size();
    }
  }
  return out;
}

GaborParams<double> random_gabor_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GaborParams<double> p;
  p.omega = 0.3 + 1.5 * u(rng);
  p.theta = std::numbers::pi * u(rng);
  p.psi = 2.0 * std::numbers::pi * u(rng);
  p.sigma = 1.0 + 2.5 * u(rng);
  p.gamma = 0.5 + u(rng);
  return p;
}

Tensor<double> random_tensor(const Shape4& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

/// Scalar probe <out, R> with a fixed random R.
Var<double> project(Var<double> out, const Tensor<double>& r) {
  return sum(mul(out, out.graph().constant(r)));
}

}  // namespace

std::vector<GradcheckEntry> check_log_gabor_partials(int draws, std::uint64_t seed, int kernel_size, double step) {
  return check_partials<kLogGaborLearnables>(
      kLogGaborNames, draws, &random_log_gabor_params, seed, step,
      [kernel_size](const LogGaborParams<double>& p) { return log_gabor_kernel(p, kernel_size); },
      [kernel_size](const LogGaborParams<double>& p) { return log_gabor_kernel_with_partials(p, kernel_size); });
}

std::vector<GradcheckEntry> check_gabor_partials(int draws, std::uint64_t seed, int kernel_size, double step) {
  return check_partials<kGaborLearnables>(
      kGaborNames, draws, &random_gabor_params, seed, step,
      [kernel_size](const GaborParams<double>& p) { return gabor_kernel(p, kernel_size); },
      [kernel_size](const GaborParams<double>& p) { return gabor_kernel_with_partials(p, kernel_size); });
}

GradcheckEntry check_graph_gradients(const std::string& name, ParameterStore<double>& store,
                                     const std::function<Var<double>(Graph<double>&)>& loss, double step,
                                     Index max_per_leaf, std::uint64_t seed) {
  store.zero_grad();
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  const auto eval = [&] {
    Graph<double> g(false);
    return loss(g).value()[0];
  };
  std::mt19937_64 rng(seed);
  GradcheckEntry e{name, 0.0, 0};
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    std::vector<Index> coords(static_cast<std::size_t>(p.value.size()));
    std::iota(coords.begin(), coords.end(), Index(0));
    std::shuffle(coords.begin(), coords.end(), rng);
    if (Index(coords.size()) > max_per_leaf) coords.resize(std::size_t(max_per_leaf));
    Eigen::ArrayXd analytic(Index(coords.size())), numeric(Index(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const Index c = coords[k];
      const double saved = p.value[c];
      p.value[c] = saved + step;
      const double up = eval();
      p.value[c] = saved - step;
      const double down = eval();
      p.value[c] = saved;
      numeric[Index(k)] = (up - down) / (2.0 * step);
      analytic[Index(k)] = p.grad[c];
    }
    e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, numeric));
    e.checked += Index(coords.size());
  }
  return e;
}

std::vector<GradcheckEntry> check_layer_gradients(int draws, std::uint64_t seed, double step) {
  constexpr Index kProbe = 48;
  std::vector<GradcheckEntry> out;
  std::mt19937_64 rng(seed);
  const auto merge = [&out](GradcheckEntry e) {
    for (auto& o : out)
      if (o.name == e.name) {
        o.max_rel_error = std::max(o.max_rel_error, e.max_rel_error);
        o.checked += e.checked;
        return;
      }
    out.push_back(std::move(e));
  };

  for (int d = 0; d < draws; ++d) {
    const std::uint64_t s = rng();
    std::mt19937_64 r(s);
    {
      ParameterStore<double> store;
      LogGaborConv2d<double> layer(store, "lg", 2, 3, 7, s);
      std::vector<LogGaborParams<double>> bank;
      for (int k = 0; k < 6; ++k) bank.push_back(random_log_gabor_params(r));
      layer.set_bank(bank);
      auto& x = store.add("x", random_tensor({2, 2, 9, 9}, r));
      const auto proj = random_tensor({2, 3, 9, 9}, r);
      merge(check_graph_gradients("log_gabor_conv", store,
                                  [&](Graph<double>& g) { return project(layer.forward(g, g.param(x)), proj); },
                                  step, kProbe, s));
    }
    {
      ParameterStore<double> store;
      auto& x = store.add("x", random_tensor({2, 3, 8, 8}, r));
      MixPoolSpec spec;
      spec.alpha = std::uniform_real_distribution<double>(0.0, 1.0)(r);
      const auto proj = random_tensor({2, 3, 4, 4}, r);
      merge(check_graph_gradients("mix_pool", store,
                                  [&](Graph<double>& g) { return project(mix_pool(g.param(x), spec), proj); },
                                  step, kProbe, s));
    }
    {
      ParameterStore<double> store;
      AvgDilatedConv2d<double> layer(store, "dil", 2, 3, DilatedSpec{}, r);
      auto& x = store.add("x", random_tensor({1, 2, 12, 12}, r));
      const auto proj = random_tensor({1, 3, 12, 12}, r);
      merge(check_graph_gradients("avg_dilated_conv", store,
                                  [&](Graph<double>& g) { return project(layer.forward(g, g.param(x)), proj); },
                                  step, kProbe, s));
    }
    for (auto mode : {Downsample::MixPool, Downsample::Strided}) {
      ParameterStore<double> store;
      EncoderBlockOptions opt;
      opt.downsample = mode;
      EncoderResBlock<double> block(store, "enc", 3, 4, opt, r);
      auto& x = store.add("x", random_tensor({2, 3, 8, 8}, r));
      const auto proj = random_tensor({2, 4, 4, 4}, r);
      merge(check_graph_gradients("encoder_block", store,
                                  [&](Graph<double>& g) { return project(block.forward(g, g.param(x), true), proj); },
                                  step, kProbe, s));
    }
    {
      ParameterStore<double> store;
      DecoderResBlock<double> block(store, "dec", 4, 3, 3, DilatedSpec{}, r);
      auto& x = store.add("x", random_tensor({2, 4, 4, 4}, r));
      auto& skip = store.add("skip", random_tensor({2, 3, 8, 8}, r));
      const auto proj = random_tensor({2, 3, 8, 8}, r);
      merge(check_graph_gradients(
          "decoder_block", store,
          [&](Graph<double>& g) { return project(block.forward(g, g.param(x), g.param(skip), true), proj); }, step,
          kProbe, s));
    }
    {
      ParameterStore<double> store;
      auto& logits = store.add("logits", random_tensor({2, 3, 4, 4}, r));
      std::vector<Mask> masks;
      std::uniform_int_distribution<int> cls(0, 2);
      for (int n = 0; n < 2; ++n) {
        Mask m(4, 4);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = cls(r);
        masks.push_back(m);
      }
      merge(check_graph_gradients("cross_entropy", store,
                                  [&](Graph<double>& g) { return cross_entropy(g.param(logits), masks); }, step,
                                  kProbe, s));
    }
  }
  return out;
}

}  // namespace pnet
