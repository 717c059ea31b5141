#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pnet/tensor.hpp"

namespace pnet {

/// Per-pixel class IDs, row-major (height x width).
using Mask = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SegSample {
  Tensor<float> image;  // (1, 3, H, W), values in [0, 1]
  Mask mask;

  Index height() const { return mask.rows(); }
  Index width() const { return mask.cols(); }
  /// Throws unless image/mask extents agree, pixels lie in [0, 1] and IDs lie in [0, n_classes).
  void validate(int n_classes) const;
};

/// Textured elliptical "crowns" over a textured background, with optional shadow bands.
struct SynthSpec {
  int n_samples = 200;
  int image_size = 64;
  int n_classes = 3;  // including background (class 0)
  int blobs_min = 3;
  int blobs_max = 7;
  double radius_min = 6.0;
  double radius_max = 14.0;
  double noise = 0.04;         // additive Gaussian texture noise (std)
  double shadow_prob = 0.3;    // probability of a shadow band per image
  bool allow_overlap = true;

  /// Throws std::invalid_argument naming the offending field.
  void validate(int divisibility = 1) const;
};

/// Sample `index` of the set; its generator is seeded with seed XOR index.
SegSample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::uint64_t index);
std::vector<SegSample> generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Base RGB signature of a class (background is class 0).
std::array<float, 3> class_colour(int class_id);

/// <root>/images/<stem>.png (RGB) and <root>/masks/<stem>.png (8-bit class IDs); meta.txt when given.
void save_dataset(const std::filesystem::path& root, const std::vector<SegSample>& samples,
                  const std::optional<SynthSpec>& meta = std::nullopt);

/// Pairs images with masks by filename stem (sorted by stem).
std::vector<SegSample> load_dataset(const std::filesystem::path& root, int n_classes);

std::string sample_stem(std::size_t index);

/// One draw of the geometric augmentation: rotation by quarter_turns * 90 degrees
/// (counter-clockwise), then horizontal flip, then vertical flip.
struct AugmentDraw {
  bool rotate = false;
  int quarter_turns = 0;  // 1..3 when rotate
  bool hflip = false;
  bool vflip = false;
};

inline constexpr double kRotateProbability = 0.9;
inline constexpr double kHorizontalFlipProbability = 0.5;
inline constexpr double kVerticalFlipProbability = 0.1;

AugmentDraw draw_augmentation(std::mt19937_64& rng);
SegSample apply_augmentation(const SegSample& sample, const AugmentDraw& draw);
SegSample augment(const SegSample& sample, std::mt19937_64& rng);

/// Applies a draw to a single (h x w) plane; image channels and masks share this path.
template <typename Plane>
Plane transform_plane(const Plane& plane, const AugmentDraw& draw) {
  Plane out = plane;
  if (draw.rotate) {
    if (plane.rows() != plane.cols())
      throw ShapeError("rotation augmentation needs a square sample, got " + std::to_string(plane.rows()) + "x" +
                       std::to_string(plane.cols()));
    const Index n = plane.rows();
    for (int t = 0; t < draw.quarter_turns; ++t) {
      Plane turned(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) turned(i, j) = out(j, n - 1 - i);
      out = std::move(turned);
    }
  }
  if (draw.hflip) out = out.rowwise().reverse().eval();
  if (draw.vflip) out = out.colwise().reverse().eval();
  return out;
}

struct DataSplit {
  std::vector<SegSample> train;
  std::vector<SegSample> val;
  std::vector<SegSample> test;
};

/// Seeded shuffle, then 20% test and 16% validation (rounded to nearest); train takes the rest.
DataSplit split(std::vector<SegSample> samples, std::uint64_t seed);

}  // namespace pnet
