#include "pnet/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace pnet {

ConfusionMatrix::ConfusionMatrix(int n_classes) {
  if (n_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_ = Counts::Zero(n_classes, n_classes);
}

void ConfusionMatrix::update(const Mask& pred, const Mask& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ShapeError("prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " and truth " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) +
                     " differ in shape");
  const int k = n_classes();
  const auto bad = [k](const Mask& m) { return m.size() > 0 && (m.minCoeff() < 0 || m.maxCoeff() >= k); };
  if (bad(pred) || bad(truth)) throw DomainError("class id outside [0, " + std::to_string(k) + ")");
  for (Index i = 0; i < pred.size(); ++i) ++counts_(truth.data()[i], pred.data()[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_classes() != n_classes()) throw ShapeError("cannot merge confusion matrices of different class counts");
  counts_ += other.counts_;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw DomainError("pixel accuracy of an empty confusion matrix");
  return double(cm.counts().matrix().trace()) / double(total);
}

std::vector<std::optional<double>> class_iou(const ConfusionMatrix& cm) {
  const auto& c = cm.counts();
  std::vector<std::optional<double>> out(std::size_t(cm.n_classes()));
  for (int k = 0; k < cm.n_classes(); ++k) {
    const std::int64_t inter = c(k, k);
    const std::int64_t uni = c.row(k).sum() + c.col(k).sum() - inter;
    if (uni > 0) out[std::size_t(k)] = double(inter) / double(uni);
  }
  return out;
}

double mean_iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DomainError("mean IoU of an empty confusion matrix");
  double sum = 0.0;
  int present = 0;
  for (const auto& v : class_iou(cm)) {
    if (!v) continue;
    sum += *v;
    ++present;
  }
  if (present == 0) throw DomainError("mean IoU undefined: every class has zero union");
  return sum / present;
}

template <typename Scalar>
Heatmap compute_cam(const SegModel<Scalar>& model, const Tensor<Scalar>& image, int class_id) {
  if (class_id < 0 || class_id >= model.config().n_classes)
    throw DomainError("CAM class " + std::to_string(class_id) + " outside [0, " +
                      std::to_string(model.config().n_classes) + ")");
  if (image.shape().n != 1) throw ShapeError("CAM expects a single image, got " + image.shape().str());
  Graph<Scalar> g(false);
  const auto out = model.forward(g, g.constant(image), false);
  const auto& f = out.features.value();
  const auto& w = model.head().weight().value;  // (n_classes, C, 1, 1)
  Heatmap cam = Heatmap::Zero(f.shape().h, f.shape().w);
  for (Index c = 0; c < f.shape().c; ++c)
    cam += double(w(class_id, c, 0, 0)) * f.plane(0, c).template cast<double>().array();
  cam = cam.max(0.0);
  const double lo = cam.minCoeff(), hi = cam.maxCoeff();
  if (hi > lo)
    cam = (cam - lo) / (hi - lo);
  else
    cam.setZero();
  return resize_nearest(cam, image.shape().h, image.shape().w);
}

Heatmap resize_nearest(const Heatmap& map, Index height, Index width) {
  if (map.rows() == height && map.cols() == width) return map;
  Heatmap out(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out(y, x) = map(y * map.rows() / height, x * map.cols() / width);
  return out;
}

Image8 heatmap_to_gray(const Heatmap& map) {
  Image8 img{int(map.cols()), int(map.rows()), 1, std::vector<std::uint8_t>(std::size_t(map.size()))};
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x)
      img.at(int(y), int(x)) = std::uint8_t(std::lround(std::clamp(map(y, x), 0.0, 1.0) * 255.0));
  return img;
}

std::array<std::uint8_t, 3> heat_colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const auto ch = [](double t) { return std::uint8_t(std::lround(255.0 * std::clamp(t, 0.0, 1.0))); };
  return {ch(2.0 * v - 0.5), ch(1.5 - std::abs(4.0 * v - 2.0)), ch(1.5 - 2.0 * v)};
}

Image8 overlay_heatmap(const Image8& rgb, const Heatmap& map) {
  if (rgb.channels != 3) throw ShapeError("overlay needs an RGB image");
  if (rgb.height != map.rows() || rgb.width != map.cols()) throw ShapeError("overlay image and heatmap differ in extent");
  Image8 out = rgb;
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      if (!(map(y, x) > 0.0)) continue;
      const auto col = heat_colour(map(y, x));
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::uint8_t(std::lround(0.5 * rgb.at(y, x, c) + 0.5 * col[std::size_t(c)]));
    }
  }
  return out;
}

Image8 mask_to_image(const Mask& mask) {
  Image8 img{int(mask.cols()), int(mask.rows()), 1, std::vector<std::uint8_t>(std::size_t(mask.size()))};
  for (Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] < 0 || mask.data()[i] > 255) throw DomainError("mask id does not fit an 8-bit PNG");
    img.pixels[std::size_t(i)] = std::uint8_t(mask.data()[i]);
  }
  return img;
}

Image8 tensor_to_rgb(const Tensor<float>& image) {
  const auto& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("expected a (1,3,H,W) image, got " + s.str());
  Image8 img{int(s.w), int(s.h), 3, std::vector<std::uint8_t>(std::size_t(s.h * s.w * 3))};
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = std::uint8_t(std::lround(std::clamp(image(0, c, y, x), 0.0f, 1.0f) * 255.0f));
  return img;
}

template Heatmap compute_cam(const SegModel<float>&, const Tensor<float>&, int);
template Heatmap compute_cam(const SegModel<double>&, const Tensor<double>&, int);

}  // namespace pnet
