#include "pnet/filterbank.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace pnet {

namespace {

void require_odd(int size) {
  if (size < 1 || size % 2 == 0)
    throw DomainError("kernel size must be a positive odd integer, got " + std::to_string(size));
}

template <typename Scalar>
Scalar normalised(int i, int size) {
  const Scalar half = Scalar(size - 1) / Scalar(2);
  return half > Scalar(0) ? (Scalar(i) - half) / half : Scalar(0);
}

// Factorises n filters into an orientation x scale grid.
struct BankLayout {
  int orientations;
  int scales;
};

BankLayout bank_layout(int n_filters) {
  int orient = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_filters))));
  int scales = (n_filters + orient - 1) / orient;
  return {orient, scales};
}

template <typename Scalar>
Scalar log_spaced(Scalar lo, Scalar hi, int i, int count) {
  if (count <= 1) return std::sqrt(lo * hi);
  return lo * std::pow(hi / lo, Scalar(i) / Scalar(count - 1));
}

}  // namespace

template <typename Scalar>
void validate(const GaborParams<Scalar>& p) {
  if (!(p.sigma > Scalar(0))) throw DomainError("Gabor sigma must be positive");
  if (!(p.gamma > Scalar(0))) throw DomainError("Gabor gamma must be positive");
  if (!std::isfinite(p.omega) || !std::isfinite(p.theta) || !std::isfinite(p.psi))
    throw DomainError("Gabor parameters must be finite");
}

template <typename Scalar>
void validate(const LogGaborParams<Scalar>& p) {
  if (!(p.f0 > Scalar(0))) throw DomainError("log-Gabor f0 must be positive");
  if (!(p.sigma > Scalar(0))) throw DomainError("log-Gabor sigma must be positive");
  if (p.sigma == p.f0) throw DomainError("log-Gabor sigma must differ from f0 (log(sigma/f0) = 0)");
  if (!(p.delta > Scalar(0))) throw DomainError("log-Gabor delta must be positive");
  if (!std::isfinite(p.f) || !std::isfinite(p.theta) || !std::isfinite(p.theta0) || !std::isfinite(p.psi))
    throw DomainError("log-Gabor parameters must be finite");
}

template <typename Scalar>
Kernel2D<Scalar> gabor_kernel(const GaborParams<Scalar>& p, int size, GaborPart part) {
  require_odd(size);
  validate(p);
  const int half = (size - 1) / 2;
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  Kernel2D<Scalar> k(size, size);
  for (int yi = 0; yi < size; ++yi) {
    for (int xi = 0; xi < size; ++xi) {
      const Scalar x = Scalar(xi - half), y = Scalar(yi - half);
      const Scalar xr = x * c + y * s;
      const Scalar yr = -x * s + y * c;
      const Scalar env = std::exp(-(xr * xr + p.gamma * p.gamma * yr * yr) / (Scalar(2) * p.sigma * p.sigma));
      const Scalar arg = p.omega * xr + p.psi;
      k(yi, xi) = env * (part == GaborPart::Real ? std::cos(arg) : std::sin(arg));
    }
  }
  return k;
}

template <typename Scalar>
KernelWithPartials<Scalar, kGaborLearnables> gabor_kernel_with_partials(const GaborParams<Scalar>& p, int size) {
  require_odd(size);
  validate(p);
  const int half = (size - 1) / 2;
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  const Scalar two_s2 = Scalar(2) * p.sigma * p.sigma;
  KernelWithPartials<Scalar, kGaborLearnables> out;
  out.value.resize(size, size);
  for (auto& d : out.partials) d.resize(size, size);
  for (int yi = 0; yi < size; ++yi) {
    for (int xi = 0; xi < size; ++xi) {
      const Scalar x = Scalar(xi - half), y = Scalar(yi - half);
      const Scalar xr = x * c + y * s;
      const Scalar yr = -x * s + y * c;
      const Scalar quad = xr * xr + p.gamma * p.gamma * yr * yr;
      const Scalar env = std::exp(-quad / two_s2);
      const Scalar arg = p.omega * xr + p.psi;
      const Scalar cs = std::cos(arg), sn = std::sin(arg);
      const Scalar v = env * cs;
      // d xr / d theta = yr, d yr / d theta = -xr
      const Scalar dquad_dtheta = Scalar(2) * xr * yr * (Scalar(1) - p.gamma * p.gamma);
      out.value(yi, xi) = v;
      out.partials[int(GaborParam::Omega)](yi, xi) = -env * sn * xr;
      out.partials[int(GaborParam::Theta)](yi, xi) = -v * dquad_dtheta / two_s2 - env * sn * p.omega * yr;
      out.partials[int(GaborParam::Psi)](yi, xi) = -env * sn;
      out.partials[int(GaborParam::Sigma)](yi, xi) = v * quad / (p.sigma * p.sigma * p.sigma);
      out.partials[int(GaborParam::Gamma)](yi, xi) = -v * p.gamma * yr * yr / (p.sigma * p.sigma);
    }
  }
  return out;
}

template <typename Scalar>
Scalar log_gabor_radial(Scalar r, Scalar f0, Scalar sigma) {
  if (!(r > Scalar(0)) || !(f0 > Scalar(0)) || !(sigma > Scalar(0)) || sigma == f0)
    throw DomainError("log_gabor_radial: requires r > 0, f0 > 0, sigma > 0, sigma != f0");
  const Scalar num = std::log(r / f0);
  const Scalar den = std::log(sigma / f0);
  return std::exp(-(num * num) / (Scalar(2) * den * den));
}

template <typename Scalar>
Scalar log_gabor_angular(Scalar phi, Scalar theta0, Scalar sigma) {
  if (!(sigma > Scalar(0))) throw DomainError("log_gabor_angular: sigma must be positive");
  const Scalar d = phi - theta0;
  return std::exp(-(d * d) / (Scalar(2) * sigma * sigma));
}

template <typename Scalar>
Scalar log_gabor_freq_response(Scalar f, Scalar f0, Scalar sigma) {
  if (!(f > Scalar(0)) || !(f0 > Scalar(0)) || !(sigma > Scalar(0)) || sigma == f0)
    throw DomainError("log_gabor_freq_response: requires f > 0, f0 > 0, sigma > 0, sigma != f0");
  const Scalar num = std::log(f / f0);
  const Scalar den = std::log(sigma / f0);
  return std::exp(-(num * num) / (Scalar(2) * den * den));
}

template <typename Scalar>
KernelWithPartials<Scalar, kLogGaborLearnables> log_gabor_kernel_with_partials(const LogGaborParams<Scalar>& p,
                                                                               int size) {
  require_odd(size);
  validate(p);
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  const Scalar log_bw = std::log(p.sigma / p.f0);
  const Scalar log_bw2 = log_bw * log_bw;
  const Scalar sigma2 = p.sigma * p.sigma;
  const Scalar gain = Scalar(1) / (two_pi * p.sigma * p.sigma);

  KernelWithPartials<Scalar, kLogGaborLearnables> out;
  out.value.resize(size, size);
  for (auto& d : out.partials) d.resize(size, size);

  for (int yi = 0; yi < size; ++yi) {
    for (int xi = 0; xi < size; ++xi) {
      const Scalar x = normalised<Scalar>(xi, size), y = normalised<Scalar>(yi, size);
      const Scalar xr = x * c + y * s;
      const Scalar yr = -x * s + y * c;
      const Scalar rho2 = xr * xr + yr * yr;
      const Scalar r = std::sqrt(rho2 + p.delta);
      const Scalar phi = std::atan2(yr, xr);

      const Scalar log_r = std::log(r / p.f0);
      const Scalar dphi = phi - p.theta0;
      // Same evaluation order as log_gabor_kernel so both produce identical values.
      const Scalar radial = log_gabor_radial(r, p.f0, p.sigma);
      const Scalar angular = log_gabor_angular(phi, p.theta0, p.sigma);
      const Scalar arg = two_pi * p.f * r + p.psi;
      const Scalar cs = std::cos(arg), sn = std::sin(arg);
      const Scalar env = radial * angular * gain;
      const Scalar v = radial * angular * cs * gain;

      // Exponent derivatives. phi = atan2(y, x) - theta, so d phi / d theta = -1 (0 at the origin,
      // where atan2 is pinned to 0).
      const Scalar dphi_dtheta = rho2 > Scalar(0) ? Scalar(-1) : Scalar(0);
      const Scalar de_df0 = log_r / (p.f0 * log_bw2) - (log_r * log_r) / (p.f0 * log_bw2 * log_bw);
      const Scalar de_dsigma_radial = (log_r * log_r) / (p.sigma * log_bw2 * log_bw);
      const Scalar de_dsigma_angular = (dphi * dphi) / (sigma2 * p.sigma);

      out.value(yi, xi) = v;
      out.partials[int(LogGaborParam::F)](yi, xi) = -env * sn * two_pi * r;
      out.partials[int(LogGaborParam::F0)](yi, xi) = v * de_df0;
      out.partials[int(LogGaborParam::Theta)](yi, xi) = -v * dphi / sigma2 * dphi_dtheta;
      out.partials[int(LogGaborParam::Theta0)](yi, xi) = v * dphi / sigma2;
      out.partials[int(LogGaborParam::Sigma)](yi, xi) =
          v * (de_dsigma_radial + de_dsigma_angular - Scalar(2) / p.sigma);
      out.partials[int(LogGaborParam::Psi)](yi, xi) = -env * sn;
    }
  }
  return out;
}

template <typename Scalar>
Kernel2D<Scalar> log_gabor_kernel(const LogGaborParams<Scalar>& p, int size) {
  require_odd(size);
  validate(p);
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  const Scalar gain = Scalar(1) / (two_pi * p.sigma * p.sigma);
  Kernel2D<Scalar> k(size, size);
  for (int yi = 0; yi < size; ++yi) {
    for (int xi = 0; xi < size; ++xi) {
      const Scalar x = normalised<Scalar>(xi, size), y = normalised<Scalar>(yi, size);
      const Scalar xr = x * c + y * s;
      const Scalar yr = -x * s + y * c;
      const Scalar r = std::sqrt(xr * xr + yr * yr + p.delta);
      const Scalar phi = std::atan2(yr, xr);
      k(yi, xi) = log_gabor_radial(r, p.f0, p.sigma) * log_gabor_angular(phi, p.theta0, p.sigma) *
                  std::cos(two_pi * p.f * r + p.psi) * gain;
    }
  }
  return k;
}

template <typename Scalar>
std::array<Kernel2D<Scalar>, kLogGaborLearnables> kernel_param_gradients(const LogGaborParams<Scalar>& p, int size) {
  return log_gabor_kernel_with_partials(p, size).partials;
}

template <typename Scalar>
std::vector<LogGaborParams<Scalar>> init_log_gabor_bank(int n_filters, int in_channels, int kernel_size,
                                                        std::uint64_t seed) {
  if (n_filters < 1 || in_channels < 1) throw std::invalid_argument("init_log_gabor_bank: counts must be >= 1");
  require_odd(kernel_size);
  const auto layout = bank_layout(n_filters);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  std::vector<LogGaborParams<Scalar>> bank;
  bank.reserve(static_cast<std::size_t>(n_filters) * in_channels);
  for (int o = 0; o < n_filters; ++o) {
    const int orient = o % layout.orientations;
    const int scale = o / layout.orientations;
    const Scalar f0 = log_spaced(Scalar(0.15), Scalar(0.85), scale, layout.scales);
    const Scalar theta = std::numbers::pi_v<Scalar> * Scalar(orient) / Scalar(layout.orientations);
    for (int i = 0; i < in_channels; ++i) {
      LogGaborParams<Scalar> p;
      p.f0 = f0;
      p.f = f0;
      p.sigma = Scalar(0.55) * f0;
      p.theta = theta;
      p.theta0 = theta;
      p.psi = static_cast<Scalar>(phase(rng));
      bank.push_back(p);
    }
  }
  return bank;
}

template <typename Scalar>
std::vector<GaborParams<Scalar>> init_gabor_bank(int n_filters, int in_channels, int kernel_size, std::uint64_t seed) {
  if (n_filters < 1 || in_channels < 1) throw std::invalid_argument("init_gabor_bank: counts must be >= 1");
  require_odd(kernel_size);
  const auto layout = bank_layout(n_filters);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  std::vector<GaborParams<Scalar>> bank;
  bank.reserve(static_cast<std::size_t>(n_filters) * in_channels);
  for (int o = 0; o < n_filters; ++o) {
    const int orient = o % layout.orientations;
    const int scale = o / layout.orientations;
    const Scalar omega = log_spaced(pi / Scalar(8), pi / Scalar(2), scale, layout.scales);
    const Scalar theta = pi * Scalar(orient) / Scalar(layout.orientations);
    for (int i = 0; i < in_channels; ++i) {
      GaborParams<Scalar> p;
      p.omega = omega;
      p.theta = theta;
      p.sigma = Scalar(2);
      p.gamma = Scalar(1);
      p.psi = static_cast<Scalar>(phase(rng));
      bank.push_back(p);
    }
  }
  return bank;
}

template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> kernel_to_gray(const Kernel2D<Scalar>& k) {
  const Scalar lo = k.minCoeff(), hi = k.maxCoeff();
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g(k.rows(), k.cols());
  for (Index y = 0; y < k.rows(); ++y)
    for (Index x = 0; x < k.cols(); ++x)
      g(y, x) = hi > lo ? static_cast<std::uint8_t>(std::lround(double(k(y, x) - lo) / double(hi - lo) * 255.0)) : 0;
  return g;
}

#define PNET_INSTANTIATE_FILTERBANK(S)                                                                    \
  template void validate(const GaborParams<S>&);                                                          \
  template void validate(const LogGaborParams<S>&);                                                       \
  template Kernel2D<S> gabor_kernel(const GaborParams<S>&, int, GaborPart);                               \
  template KernelWithPartials<S, kGaborLearnables> gabor_kernel_with_partials(const GaborParams<S>&, int); \
  template S log_gabor_radial(S, S, S);                                                                   \
  template S log_gabor_angular(S, S, S);                                                                  \
  template S log_gabor_freq_response(S, S, S);                                                            \
  template Kernel2D<S> log_gabor_kernel(const LogGaborParams<S>&, int);                                   \
  template KernelWithPartials<S, kLogGaborLearnables> log_gabor_kernel_with_partials(                     \
      const LogGaborParams<S>&, int);                                                                     \
  template std::array<Kernel2D<S>, kLogGaborLearnables> kernel_param_gradients(const LogGaborParams<S>&,  \
                                                                               int);                      \
  template std::vector<LogGaborParams<S>> init_log_gabor_bank(int, int, int, std::uint64_t);              \
  template std::vector<GaborParams<S>> init_gabor_bank(int, int, int, std::uint64_t);                     \
  template Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> kernel_to_gray(   \
      const Kernel2D<S>&);

PNET_INSTANTIATE_FILTERBANK(float)
PNET_INSTANTIATE_FILTERBANK(double)

}  // namespace pnet
