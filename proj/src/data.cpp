#include "pnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include "pnet/image_io.hpp"

namespace pnet {

namespace fs = std::filesystem;

namespace {

// Every pair differs by at least 0.11 in some channel.
constexpr std::array<std::array<float, 3>, 16> kPalette{{
    {0.42f, 0.34f, 0.22f},  // background: bare ground / understory
    {0.16f, 0.46f, 0.14f},
    {0.20f, 0.58f, 0.18f},
    {0.12f, 0.32f, 0.30f},
    {0.52f, 0.58f, 0.18f},
    {0.22f, 0.50f, 0.44f},
    {0.60f, 0.44f, 0.30f},
    {0.08f, 0.22f, 0.10f},
    {0.40f, 0.74f, 0.40f},
    {0.66f, 0.66f, 0.40f},
    {0.30f, 0.36f, 0.02f},
    {0.74f, 0.30f, 0.16f},
    {0.14f, 0.60f, 0.62f},
    {0.50f, 0.20f, 0.36f},
    {0.84f, 0.80f, 0.62f},
    {0.32f, 0.18f, 0.50f},
}};

// Texture signature of a class: grating frequency (cycles/px) and orientation.
struct TextureSignature {
  double frequency;
  double orientation;
  double amplitude;
};

TextureSignature texture_of(int class_id) {
  if (class_id == 0) return {0.05, 0.0, 0.10};
  const double freqs[] = {0.22, 0.10, 0.32, 0.16};
  const int k = class_id - 1;
  return {freqs[k % 4], std::numbers::pi * double((k * 3) % 8) / 8.0, 0.18};
}

struct Ellipse {
  double cx, cy, rx, ry, angle;
  int class_id;

  // Squared normalised distance; <= 1 inside.
  double distance2(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    return (u * u) / (rx * rx) + (v * v) / (ry * ry);
  }
};

}  // namespace

std::array<float, 3> class_colour(int class_id) {
  if (class_id < 0) throw std::invalid_argument("negative class id");
  if (class_id < int(kPalette.size())) return kPalette[std::size_t(class_id)];
  // Beyond the table: deterministic but without a separation guarantee.
  const float t = float(class_id);
  return {0.2f + 0.6f * std::fmod(t * 0.618f, 1.0f), 0.2f + 0.6f * std::fmod(t * 0.382f, 1.0f),
          0.2f + 0.6f * std::fmod(t * 0.271f, 1.0f)};
}

void SegSample::validate(int n_classes) const {
  const auto& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("sample image must be (1,3,H,W), got " + s.str());
  if (s.h != mask.rows() || s.w != mask.cols())
    throw ShapeError("sample image " + s.str() + " and mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " differ in extent");
  if (!((image.array() >= 0.0f) && (image.array() <= 1.0f)).all())
    throw DomainError("sample image values must lie in [0, 1]");
  if (mask.size() > 0 && (mask.minCoeff() < 0 || mask.maxCoeff() >= n_classes))
    throw DomainError("mask class id outside [0, " + std::to_string(n_classes) + ")");
}

void SynthSpec::validate(int divisibility) const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid synth spec: " + m); };
  if (n_samples < 1) fail("n_samples must be >= 1");
  if (image_size < 8) fail("image_size must be >= 8");
  if (divisibility > 1 && image_size % divisibility != 0)
    fail("image_size " + std::to_string(image_size) + " not divisible by " + std::to_string(divisibility));
  if (n_classes < 2 || n_classes > 256) fail("n_classes must lie in 2..256");
  if (blobs_min < 0 || blobs_max < blobs_min) fail("need 0 <= blobs_min <= blobs_max");
  if (!(radius_min > 0.0) || radius_max < radius_min) fail("need 0 < radius_min <= radius_max");
  if (!(noise >= 0.0)) fail("noise must be >= 0");
  if (!(shadow_prob >= 0.0 && shadow_prob <= 1.0)) fail("shadow_prob must lie in [0, 1]");
}

SegSample generate_sample(const SynthSpec& spec, std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 rng(seed ^ index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = spec.image_size;

  std::vector<Ellipse> blobs;
  const int count = spec.blobs_min + int(unit(rng) * double(spec.blobs_max - spec.blobs_min + 1));
  Mask mask = Mask::Zero(n, n);
  Eigen::ArrayXXd dome = Eigen::ArrayXXd::Zero(n, n);  // normalised distance to the owning blob's centre
  Eigen::ArrayXXd phase(n, n);
  for (int b = 0; b < std::min(count, spec.blobs_max); ++b) {
    Ellipse e{};
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      e.cx = unit(rng) * n;
      e.cy = unit(rng) * n;
      e.rx = spec.radius_min + unit(rng) * (spec.radius_max - spec.radius_min);
      e.ry = spec.radius_min + unit(rng) * (spec.radius_max - spec.radius_min);
      e.angle = unit(rng) * std::numbers::pi;
      e.class_id = 1 + int(unit(rng) * double(spec.n_classes - 1)) % (spec.n_classes - 1);
      placed = spec.allow_overlap;
      if (!placed) {
        placed = true;
        for (int y = 0; y < n && placed; ++y)
          for (int x = 0; x < n && placed; ++x)
            if (mask(y, x) != 0 && e.distance2(x + 0.5, y + 0.5) <= 1.0) placed = false;
      }
    }
    if (!placed) continue;
    blobs.push_back(e);
  }

  // Later blobs occlude earlier ones.
  Eigen::ArrayXXi owner = Eigen::ArrayXXi::Constant(n, n, -1);
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double d2 = blobs[b].distance2(x + 0.5, y + 0.5);
        if (d2 <= 1.0) {
          mask(y, x) = blobs[b].class_id;
          owner(y, x) = int(b);
          dome(y, x) = d2;
        }
      }
    }
  }

  std::vector<double> blob_phase(blobs.size());
  for (auto& p : blob_phase) p = unit(rng) * 2.0 * std::numbers::pi;
  const double bg_phase = unit(rng) * 2.0 * std::numbers::pi;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) phase(y, x) = owner(y, x) < 0 ? bg_phase : blob_phase[std::size_t(owner(y, x))];

  // Shadow band: multiplicative darkening across a random oriented strip.
  const bool shadow = unit(rng) < spec.shadow_prob;
  const double sh_angle = unit(rng) * std::numbers::pi;
  const double sh_offset = (unit(rng) - 0.5) * n;
  const double sh_width = 0.15 * n + unit(rng) * 0.25 * n;
  const double sh_gain = 0.45 + unit(rng) * 0.2;

  SegSample s;
  s.image = Tensor<float>({1, 3, n, n});
  s.mask = mask;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int cls = mask(y, x);
      const auto colour = class_colour(cls);
      const auto tex = texture_of(cls);
      const double along = x * std::cos(tex.orientation) + y * std::sin(tex.orientation);
      const double grating = std::sin(2.0 * std::numbers::pi * tex.frequency * along + phase(y, x));
      const double shading = cls == 0 ? 1.0 : 1.1 - 0.2 * dome(y, x);
      double gain = shading * (1.0 + tex.amplitude * grating);
      if (shadow) {
        const double t = (x - n / 2.0) * std::cos(sh_angle) + (y - n / 2.0) * std::sin(sh_angle) - sh_offset;
        if (std::abs(t) < sh_width / 2) gain *= sh_gain;
      }
      for (int c = 0; c < 3; ++c) {
        const double noise = spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0;
        s.image(0, c, y, x) = static_cast<float>(std::clamp(colour[std::size_t(c)] * gain + noise, 0.0, 1.0));
      }
    }
  }
  return s;
}

std::vector<SegSample> generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<SegSample> out;
  out.reserve(std::size_t(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) out.push_back(generate_sample(spec, seed, std::uint64_t(i)));
  return out;
}

std::string sample_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

void save_dataset(const fs::path& root, const std::vector<SegSample>& samples, const std::optional<SynthSpec>& meta) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const int h = int(s.height()), w = int(s.width());
    Image8 rgb{w, h, 3, std::vector<std::uint8_t>(std::size_t(w) * h * 3)};
    Image8 ids{w, h, 1, std::vector<std::uint8_t>(std::size_t(w) * h)};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c)
          rgb.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(s.image(0, c, y, x), 0.0f, 1.0f) * 255.0f));
        if (s.mask(y, x) < 0 || s.mask(y, x) > 255) throw DomainError("mask id does not fit an 8-bit PNG");
        ids.at(y, x) = static_cast<std::uint8_t>(s.mask(y, x));
      }
    }
    write_png(root / "images" / (sample_stem(i) + ".png"), rgb);
    write_png(root / "masks" / (sample_stem(i) + ".png"), ids);
  }
  if (meta) {
    std::ofstream os(root / "meta.txt", std::ios::trunc);
    os << "n_samples = " << meta->n_samples << "\n"
       << "image_size = " << meta->image_size << "\n"
       << "n_classes = " << meta->n_classes << "\n"
       << "blobs_min = " << meta->blobs_min << "\n"
       << "blobs_max = " << meta->blobs_max << "\n"
       << "radius_min = " << meta->radius_min << "\n"
       << "radius_max = " << meta->radius_max << "\n"
       << "noise = " << meta->noise << "\n"
       << "shadow_prob = " << meta->shadow_prob << "\n"
       << "allow_overlap = " << (meta->allow_overlap ? "true" : "false") << "\n";
  }
}

std::vector<SegSample> load_dataset(const fs::path& root, int n_classes) {
  const fs::path images = root / "images", masks = root / "masks";
  if (!fs::is_directory(images)) throw std::runtime_error("dataset has no images/ directory: " + root.string());
  if (!fs::is_directory(masks)) throw std::runtime_error("dataset has no masks/ directory: " + root.string());
  std::map<std::string, fs::path> stems;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems[entry.path().stem().string()] = entry.path();

  std::vector<SegSample> out;
  for (const auto& [stem, image_path] : stems) {
    const fs::path mask_path = masks / (stem + ".png");
    if (!fs::exists(mask_path)) throw std::runtime_error("no mask for image stem '" + stem + "'");
    const Image8 rgb = read_png(image_path, 3);
    const Image8 ids = read_png(mask_path, 1);
    if (rgb.width != ids.width || rgb.height != ids.height)
      throw ShapeError("image and mask for '" + stem + "' differ in extent");
    SegSample s;
    s.image = Tensor<float>({1, 3, rgb.height, rgb.width});
    s.mask = Mask(rgb.height, rgb.width);
    for (int y = 0; y < rgb.height; ++y) {
      for (int x = 0; x < rgb.width; ++x) {
        for (int c = 0; c < 3; ++c) s.image(0, c, y, x) = float(rgb.at(y, x, c)) / 255.0f;
        const int id = ids.at(y, x);
        if (id >= n_classes)
          throw DomainError("mask '" + stem + "' contains unknown class id " + std::to_string(id));
        s.mask(y, x) = id;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

AugmentDraw draw_augmentation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Every draw consumes the same four variates so streams stay aligned.
  const double r = unit(rng), k = unit(rng), h = unit(rng), v = unit(rng);
  AugmentDraw d;
  d.rotate = r < kRotateProbability;
  d.quarter_turns = d.rotate ? 1 + std::min(2, int(k * 3.0)) : 0;
  d.hflip = h < kHorizontalFlipProbability;
  d.vflip = v < kVerticalFlipProbability;
  return d;
}

SegSample apply_augmentation(const SegSample& sample, const AugmentDraw& draw) {
  using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  SegSample out;
  out.mask = transform_plane(sample.mask, draw);
  const auto& s = sample.image.shape();
  out.image = Tensor<float>({1, s.c, out.mask.rows(), out.mask.cols()});
  for (Index c = 0; c < s.c; ++c) {
    Plane p = sample.image.plane(0, c).array();
    out.image.plane(0, c) = transform_plane(p, draw).matrix();
  }
  return out;
}

SegSample augment(const SegSample& sample, std::mt19937_64& rng) {
  return apply_augmentation(sample, draw_augmentation(rng));
}

DataSplit split(std::vector<SegSample> samples, std::uint64_t seed) {
  const std::size_t n = samples.size();
  if (n < 5) throw std::invalid_argument("split needs at least 5 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = std::size_t(std::llround(0.20 * double(n)));
  const auto n_val = std::size_t(std::llround(0.16 * double(n)));
  DataSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = samples[order[i]];
    if (i < n - n_test - n_val)
      out.train.push_back(std::move(s));
    else if (i < n - n_test)
      out.val.push_back(std::move(s));
    else
      out.test.push_back(std::move(s));
  }
  return out;
}

}  // namespace pnet
