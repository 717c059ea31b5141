#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pnet/data.hpp"
#include "pnet/metrics.hpp"
#include "pnet/model.hpp"

namespace pnet {

/// Mean over all pixels of -log softmax(logits) at the true class. targets holds one mask per sample.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<Mask>& targets);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over the trainable parameters of a store.
template <typename Scalar>
class Adam {
 public:
  Adam(ParameterStore<Scalar>& store, const AdamConfig& config);

  /// Applies one update from the accumulated Parameter::grad values.
  void step();
  std::int64_t steps() const { return t_; }

 private:
  ParameterStore<Scalar>* store_;
  AdamConfig config_;
  std::vector<Tensor<Scalar>> m_, v_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  int epochs = 130;
  int batch_size = 16;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  bool augment = true;
  int eval_every = 1;  // validation cadence in epochs; the last epoch is always evaluated
  std::optional<std::filesystem::path> checkpoint;  // best-mIoU checkpoint

  /// lr = 0 is accepted here (frozen weights); run configurations require lr > 0.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  bool evaluated = false;
  double val_loss = 0.0;
  double val_pixel_acc = 0.0;
  double val_miou = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no evaluation happened
  double best_miou = 0.0;

  bool operator==(const TrainHistory&) const = default;
};

struct EvalResult {
  double pixel_acc = 0.0;
  double miou = 0.0;
  double loss = 0.0;
  std::vector<std::optional<double>> class_iou;
  ConfusionMatrix confusion{2};
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, double loss);
  int epoch;
  int batch;
};

/// (n, 3, H, W) batch and masks for the given sample indices.
template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<SegSample>& samples, std::span<const std::size_t> indices);

/// Per-pixel argmax over channels (first maximum wins), one mask per sample.
template <typename Scalar>
std::vector<Mask> argmax_masks(const Tensor<Scalar>& logits);

template <typename Scalar>
std::vector<Mask> predict_masks(const SegModel<Scalar>& model, const std::vector<SegSample>& samples,
                                int batch_size = 16);

/// Inference-mode evaluation; never touches parameters or running statistics.
template <typename Scalar>
EvalResult evaluate(const SegModel<Scalar>& model, const std::vector<SegSample>& samples, int batch_size = 16);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded epoch loop over data.train with validation on data.val.
template <typename Scalar>
TrainHistory train(SegModel<Scalar>& model, const DataSplit& data, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

/// Order-sensitive checksum over every parameter and buffer value.
template <typename Scalar>
std::uint64_t parameter_checksum(const ParameterStore<Scalar>& store);

}  // namespace pnet
