#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pnet/autograd.hpp"
#include "pnet/filterbank.hpp"
#include "pnet/ops.hpp"

namespace pnet {

/// Mixed max/average pooling: alpha * max + (1 - alpha) * mean.
struct MixPoolSpec {
  double alpha = 0.8;
  Index window = 2;
  Index stride = 2;

  void validate() const;
};

/// Dilation rates of an averaged dilated convolution; the first rate is the base map.
struct DilatedSpec {
  std::vector<int> rates{1, 3, 6, 9};

  int n_d() const { return static_cast<int>(rates.size()) - 1; }
  void validate() const;
};

template <typename Scalar>
Tensor<Scalar> mix_pool(const Tensor<Scalar>& input, const MixPoolSpec& spec);
template <typename Scalar>
Var<Scalar> mix_pool(Var<Scalar> input, const MixPoolSpec& spec);

/// base + (1/n_d) * sum(dilated); every map must share the base's shape.
template <typename Scalar>
Var<Scalar> average_dilated(Var<Scalar> base, std::span<const Var<Scalar>> dilated);

/// Materialises one log-Gabor kernel per (out, in) connection from six (out, in, 1, 1) parameter
/// tensors into (out, in, k, k) weights; backward routes through the analytic partials.
template <typename Scalar>
Var<Scalar> log_gabor_weights(std::span<const Var<Scalar>, kLogGaborLearnables> params, int kernel_size,
                              Scalar delta);

/// Gabor (real part) counterpart of log_gabor_weights.
template <typename Scalar>
Var<Scalar> gabor_weights(std::span<const Var<Scalar>, kGaborLearnables> params, int kernel_size);

/// Standard convolution; weights He-normal initialised.
template <typename Scalar>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c, Index kernel,
              ConvOptions opt, bool bias, std::mt19937_64& rng);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x) const;

  Parameter<Scalar>& weight() const { return *weight_; }
  Parameter<Scalar>* bias() const { return bias_; }
  const ConvOptions& options() const { return opt_; }

 private:
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
  ConvOptions opt_{};
};

template <typename Scalar>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(ParameterStore<Scalar>& store, const std::string& name, Index channels);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x, bool training) const;

 private:
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
  BatchNormState<Scalar> state_{};
};

/// Convolution whose kernels are log-Gabor functions of six learnable scalars per
/// (out, in) connection. Stride 1, same padding.
template <typename Scalar>
class LogGaborConv2d {
 public:
  LogGaborConv2d() = default;
  LogGaborConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c, int kernel_size,
                 std::uint64_t seed);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x) const;

  /// Current bank, ordered out-major.
  std::vector<LogGaborParams<Scalar>> bank() const;
  void set_bank(std::span<const LogGaborParams<Scalar>> bank);
  /// (out, in, k, k) kernels built from the current bank.
  Tensor<Scalar> materialise() const;

  Parameter<Scalar>& param(LogGaborParam which) const { return *params_[static_cast<int>(which)]; }
  int kernel_size() const { return kernel_size_; }
  Index in_channels() const { return in_c_; }
  Index out_channels() const { return out_c_; }

 private:
  std::array<Parameter<Scalar>*, kLogGaborLearnables> params_{};
  Index in_c_ = 0, out_c_ = 0;
  int kernel_size_ = 7;
  Scalar delta_ = Scalar(1e-3);
};

/// Gabor-parameterised convolution (real part), five learnables per connection.
template <typename Scalar>
class GaborConv2d {
 public:
  GaborConv2d() = default;
  GaborConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c, int kernel_size,
              std::uint64_t seed);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x) const;

  Index in_channels() const { return in_c_; }
  Index out_channels() const { return out_c_; }
  std::vector<GaborParams<Scalar>> bank() const;
  Tensor<Scalar> materialise() const;
  Parameter<Scalar>& param(GaborParam which) const { return *params_[static_cast<int>(which)]; }
  int kernel_size() const { return kernel_size_; }

 private:
  std::array<Parameter<Scalar>*, kGaborLearnables> params_{};
  Index in_c_ = 0, out_c_ = 0;
  int kernel_size_ = 7;
};

/// One 3x3 convolution per dilation rate (independent weights, padding = rate), combined as
/// H_0 + mean(H_1..H_nd).
template <typename Scalar>
class AvgDilatedConv2d {
 public:
  AvgDilatedConv2d() = default;
  AvgDilatedConv2d(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c,
                   const DilatedSpec& spec, std::mt19937_64& rng);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x) const;
  const std::vector<Conv2dLayer<Scalar>>& branches() const { return branches_; }

 private:
  std::vector<Conv2dLayer<Scalar>> branches_;
};

enum class Downsample { MixPool, Strided };

struct EncoderBlockOptions {
  Downsample downsample = Downsample::MixPool;
  MixPoolSpec pool{};
  std::optional<DilatedSpec> dilated = DilatedSpec{};
};

/// Encoder/bridge residual unit (pre-activation BN -> ReLU -> conv):
///   residual: conv(stride 1) -> mix-pool -> conv [-> averaged dilated conv]
///   shortcut: 1x1 conv -> BN -> mix-pool
/// With Downsample::Strided the first conv and the shortcut use stride 2 instead of pooling.
/// Output spatial extent is exactly half the input's.
template <typename Scalar>
class EncoderResBlock {
 public:
  EncoderResBlock() = default;
  EncoderResBlock(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index out_c,
                  const EncoderBlockOptions& opt, std::mt19937_64& rng);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x, bool training) const;

  /// Final conv of the residual branch (the dilated unit's branches when present).
  std::vector<Parameter<Scalar>*> residual_output_weights() const;
  std::string describe() const;

 private:
  EncoderBlockOptions opt_{};
  BatchNorm2dLayer<Scalar> bn_a_, bn_b_, bn_c_, bn_skip_;
  Conv2dLayer<Scalar> conv_a_, conv_b_, conv_skip_;
  std::optional<AvgDilatedConv2d<Scalar>> dilated_;
};

/// Decoder residual unit: upsample x2 -> concat skip -> conv -> conv [-> averaged dilated conv],
/// plus a 1x1 projection of the concatenation as shortcut.
template <typename Scalar>
class DecoderResBlock {
 public:
  DecoderResBlock() = default;
  DecoderResBlock(ParameterStore<Scalar>& store, const std::string& name, Index in_c, Index skip_c, Index out_c,
                  const std::optional<DilatedSpec>& dilated, std::mt19937_64& rng);

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x, Var<Scalar> skip, bool training) const;

  std::vector<Parameter<Scalar>*> residual_output_weights() const;
  std::string describe() const;

 private:
  BatchNorm2dLayer<Scalar> bn_a_, bn_b_, bn_c_, bn_skip_;
  Conv2dLayer<Scalar> conv_a_, conv_b_, conv_skip_;
  std::optional<AvgDilatedConv2d<Scalar>> dilated_;
};

}  // namespace pnet
