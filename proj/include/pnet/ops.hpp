#pragma once

#include <span>
#include <vector>

#include "pnet/autograd.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

struct ConvOptions {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

/// Output extents of a cross-correlation; throws ShapeError naming both shapes on mismatch.
Shape4 conv2d_output_shape(const Shape4& input, const Shape4& weights, const ConvOptions& opt);

// ---- Plain tensor kernels (no recording) ----------------------------------------------------

/// Cross-correlation of an NCHW input with OIHW weights.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const ConvOptions& opt);

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window, Index stride);

template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& input, Index window, Index stride);

/// alpha * max + (1 - alpha) * mean over each window.
template <typename Scalar>
Tensor<Scalar> mix_pool2d(const Tensor<Scalar>& input, Scalar alpha, Index window, Index stride);

/// Nearest-neighbour x2 spatial upsampling.
template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& input);

// ---- Recorded ops ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> weights, const ConvOptions& opt);

/// Adds a per-channel bias of shape (1, C, 1, 1).
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> input, Var<Scalar> bias);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor);

/// Sum of all elements as a (1,1,1,1) tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a);

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a);

/// Elementwise mean of equally shaped inputs, accumulated incrementally so that
/// the mean of identical maps reproduces the map exactly.
template <typename Scalar>
Var<Scalar> mean_of(std::span<const Var<Scalar>> inputs);

template <typename Scalar>
Var<Scalar> max_pool2d(Var<Scalar> input, Index window, Index stride);

template <typename Scalar>
Var<Scalar> avg_pool2d(Var<Scalar> input, Index window, Index stride);

template <typename Scalar>
Var<Scalar> mix_pool2d(Var<Scalar> input, Scalar alpha, Index window, Index stride);

template <typename Scalar>
Var<Scalar> upsample_nearest2x(Var<Scalar> input);

/// Concatenates along the channel axis.
template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b);

/// Running statistics owned by a batch-normalisation layer.
template <typename Scalar>
struct BatchNormState {
  Parameter<Scalar>* running_mean = nullptr;
  Parameter<Scalar>* running_var = nullptr;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
};

/// Per-channel normalisation. Training mode uses (and updates from) batch statistics;
/// inference mode uses the running statistics.
template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> input, Var<Scalar> gamma, Var<Scalar> beta,
                       const BatchNormState<Scalar>& state, bool training);

}  // namespace pnet
