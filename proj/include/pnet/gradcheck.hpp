#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pnet/autograd.hpp"
#include "pnet/filterbank.hpp"

namespace pnet {

/// Worst normwise relative error seen for one parameter or layer.
struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  Index checked = 0;  // number of compared scalars

  bool passed(double tolerance) const { return checked > 0 && max_rel_error <= tolerance; }
};

/// max|a - b| / max(max|a|, max|b|); zero when both are identically zero.
double relative_error(const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric);

/// A log-Gabor parameter set drawn from the ranges used by the gradient suites.
LogGaborParams<double> random_log_gabor_params(std::mt19937_64& rng);

/// Analytic kernel partials against central differences, one entry per learnable parameter.
std::vector<GradcheckEntry> check_log_gabor_partials(int draws, std::uint64_t seed, int kernel_size = 7,
                                                     double step = 1e-5);
std::vector<GradcheckEntry> check_gabor_partials(int draws, std::uint64_t seed, int kernel_size = 7,
                                                 double step = 1e-5);

/// Compares the gradient of a scalar loss w.r.t. every trainable leaf in `store` with central
/// differences. At most `max_per_leaf` randomly chosen coordinates of each leaf are probed.
GradcheckEntry check_graph_gradients(const std::string& name, ParameterStore<double>& store,
                                     const std::function<Var<double>(Graph<double>&)>& loss, double step,
                                     Index max_per_leaf, std::uint64_t seed);

/// Layer suite: log-Gabor conv (one entry per draw batch), mix pool, averaged dilated conv,
/// encoder and decoder residual blocks, cross entropy.
std::vector<GradcheckEntry> check_layer_gradients(int draws, std::uint64_t seed, double step = 1e-6);

}  // namespace pnet
