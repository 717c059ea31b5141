#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pnet/data.hpp"
#include "pnet/image_io.hpp"
#include "pnet/model.hpp"

namespace pnet {

/// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit ConfusionMatrix(int n_classes);

  void update(const Mask& pred, const Mask& truth);
  /// Elementwise addition; the matrices must describe the same class count.
  void merge(const ConfusionMatrix& other);

  int n_classes() const { return int(counts_.rows()); }
  std::int64_t total() const { return counts_.sum(); }
  const Counts& counts() const { return counts_; }

 private:
  Counts counts_;
};

double pixel_accuracy(const ConfusionMatrix& cm);

/// IoU per class; nullopt where the class has zero union.
std::vector<std::optional<double>> class_iou(const ConfusionMatrix& cm);

/// Mean over classes with nonzero union.
double mean_iou(const ConfusionMatrix& cm);

using Heatmap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Class activation map of a single (1, 3, H, W) image: the class's head weights applied to the
/// final decoder features, rectified and min-max scaled to [0, 1].
template <typename Scalar>
Heatmap compute_cam(const SegModel<Scalar>& model, const Tensor<Scalar>& image, int class_id);

/// Nearest-neighbour resampling.
Heatmap resize_nearest(const Heatmap& map, Index height, Index width);

Image8 heatmap_to_gray(const Heatmap& map);
/// Blue (0) through green to red (1).
std::array<std::uint8_t, 3> heat_colour(double v);
/// 0.5 * image + 0.5 * colour where heat > 0, the image elsewhere.
Image8 overlay_heatmap(const Image8& rgb, const Heatmap& map);

/// Class-ID mask as an 8-bit gray image.
Image8 mask_to_image(const Mask& mask);
/// (1, 3, H, W) tensor in [0, 1] to RGB.
Image8 tensor_to_rgb(const Tensor<float>& image);

}  // namespace pnet
