#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "pnet/tensor.hpp"

namespace pnet {

/// Square kernel on the integer grid x, y in [-(size-1)/2, (size-1)/2]; row index is y, column x.
template <typename Scalar>
using Kernel2D = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Gabor filter: Gaussian envelope times a sinusoid along the rotated x axis.
/// omega in radians per pixel, sigma in pixels.
template <typename Scalar>
struct GaborParams {
  Scalar omega = Scalar(0.5);
  Scalar theta = Scalar(0);
  Scalar psi = Scalar(0);
  Scalar sigma = Scalar(2);
  Scalar gamma = Scalar(1);

  bool operator==(const GaborParams&) const = default;
};

/// Log-Gabor filter. The grid is normalised to [-1, 1] before computing the radius, so f0 and f
/// are expressed against that unit. sigma is shared by the radial log-bandwidth, the angular
/// spread and the 1/(2 pi sigma^2) gain.
template <typename Scalar>
struct LogGaborParams {
  Scalar f = Scalar(0.5);       // carrier frequency
  Scalar f0 = Scalar(0.5);      // radial envelope centre
  Scalar theta = Scalar(0);     // grid rotation
  Scalar theta0 = Scalar(0);    // angular envelope centre
  Scalar sigma = Scalar(0.275); // bandwidth
  Scalar psi = Scalar(0);       // phase
  Scalar delta = Scalar(1e-3);  // keeps r > 0 at the origin

  bool operator==(const LogGaborParams&) const = default;
};

enum class GaborPart { Real, Imaginary };

/// Order of the learnable Log-Gabor parameters throughout the library.
enum class LogGaborParam { F = 0, F0, Theta, Theta0, Sigma, Psi };
inline constexpr int kLogGaborLearnables = 6;
inline constexpr std::array<const char*, kLogGaborLearnables> kLogGaborNames{"f", "f0", "theta", "theta0", "sigma", "psi"};

enum class GaborParam { Omega = 0, Theta, Psi, Sigma, Gamma };
inline constexpr int kGaborLearnables = 5;
inline constexpr std::array<const char*, kGaborLearnables> kGaborNames{"omega", "theta", "psi", "sigma", "gamma"};

template <typename Scalar>
void validate(const GaborParams<Scalar>& p);
template <typename Scalar>
void validate(const LogGaborParams<Scalar>& p);

template <typename Scalar>
Kernel2D<Scalar> gabor_kernel(const GaborParams<Scalar>& p, int size, GaborPart part = GaborPart::Real);

/// Radial envelope exp(-(log(r/f0))^2 / (2 (log(sigma/f0))^2)).
template <typename Scalar>
Scalar log_gabor_radial(Scalar r, Scalar f0, Scalar sigma);

/// Angular envelope exp(-(phi - theta0)^2 / (2 sigma^2)).
template <typename Scalar>
Scalar log_gabor_angular(Scalar phi, Scalar theta0, Scalar sigma);

/// Frequency response of a log-Gabor filter: Gaussian on a log-frequency axis, zero at DC.
template <typename Scalar>
Scalar log_gabor_freq_response(Scalar f, Scalar f0, Scalar sigma);

template <typename Scalar>
Kernel2D<Scalar> log_gabor_kernel(const LogGaborParams<Scalar>& p, int size);

/// Kernel together with its partial derivatives, indexed by LogGaborParam / GaborParam.
template <typename Scalar, int N>
struct KernelWithPartials {
  Kernel2D<Scalar> value;
  std::array<Kernel2D<Scalar>, N> partials;
};

template <typename Scalar>
KernelWithPartials<Scalar, kLogGaborLearnables> log_gabor_kernel_with_partials(const LogGaborParams<Scalar>& p,
                                                                               int size);

/// d kernel / d(f, f0, theta, theta0, sigma, psi).
template <typename Scalar>
std::array<Kernel2D<Scalar>, kLogGaborLearnables> kernel_param_gradients(const LogGaborParams<Scalar>& p, int size);

/// Real-part Gabor kernel and d/d(omega, theta, psi, sigma, gamma).
template <typename Scalar>
KernelWithPartials<Scalar, kGaborLearnables> gabor_kernel_with_partials(const GaborParams<Scalar>& p, int size);

/// One parameter set per (out, in) connection, ordered out-major.
/// psi ~ U[0, pi); f0 log-spaced over [0.15, 0.85] and theta = theta0 evenly spaced over [0, pi)
/// across output filters; sigma = 0.55 f0; f = f0.
template <typename Scalar>
std::vector<LogGaborParams<Scalar>> init_log_gabor_bank(int n_filters, int in_channels, int kernel_size,
                                                        std::uint64_t seed);

/// omega log-spaced over [pi/8, pi/2], theta evenly spaced over [0, pi), sigma = 2 px,
/// gamma = 1, psi ~ U[0, pi).
template <typename Scalar>
std::vector<GaborParams<Scalar>> init_gabor_bank(int n_filters, int in_channels, int kernel_size,
                                                 std::uint64_t seed);

/// Kernel rescaled to 8-bit grey levels by per-kernel min-max (constant kernels map to 0).
template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> kernel_to_gray(const Kernel2D<Scalar>& k);

}  // namespace pnet
