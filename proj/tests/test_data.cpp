#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "pnet/data.hpp"
#include "pnet/image_io.hpp"
#include "support.hpp"

using namespace pnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pnet_test_data" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec small_spec(int n = 12) {
  SynthSpec s;
  s.n_samples = n;
  s.image_size = 32;
  s.radius_min = 4;
  s.radius_max = 8;
  return s;
}

Mask rotate_ccw(const Mask& m) {
  Mask out(m.cols(), m.rows());
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = m(j, m.cols() - 1 - i);
  return out;
}

}  // namespace

TEST_CASE("generator emits valid, deterministic samples") {
  const auto spec = small_spec();
  const auto a = generate_synthetic(spec, 4), b = generate_synthetic(spec, 4), c = generate_synthetic(spec, 5);
  REQUIRE(a.size() == 12);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK_NOTHROW(a[i].validate(spec.n_classes));
    CHECK(a[i].image == b[i].image);
    CHECK((a[i].mask == b[i].mask).all());
    differs = differs || !(a[i].image == c[i].image);
  }
  CHECK(differs);
  CHECK(generate_sample(spec, 4, 3).image == a[3].image);
}

TEST_CASE("every emitted mask id is below n_classes") {
  for (int k : {2, 3, 6}) {
    auto spec = small_spec(20);
    spec.n_classes = k;
    std::map<int, int> seen;
    for (const auto& s : generate_synthetic(spec, 1)) {
      CHECK(s.mask.minCoeff() >= 0);
      CHECK(s.mask.maxCoeff() < k);
      for (Index i = 0; i < s.mask.size(); ++i) ++seen[s.mask.data()[i]];
    }
    CHECK(int(seen.size()) == k);
  }
}

TEST_CASE("without shadows and noise per-class mean colours separate by at least 0.1") {
  for (int k : {3, 5, 8}) {
    auto spec = small_spec(40);
    spec.n_classes = k;
    spec.shadow_prob = 0.0;
    spec.noise = 0.0;
    std::vector<std::array<double, 3>> sum(std::size_t(k), {0, 0, 0});
    std::vector<double> count(std::size_t(k), 0);
    for (const auto& s : generate_synthetic(spec, 2))
      for (Index y = 0; y < s.height(); ++y)
        for (Index x = 0; x < s.width(); ++x) {
          const auto c = std::size_t(s.mask(y, x));
          for (int ch = 0; ch < 3; ++ch) sum[c][std::size_t(ch)] += s.image(0, ch, y, x);
          count[c] += 1;
        }
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        REQUIRE(count[std::size_t(i)] > 0);
        double gap = 0;
        for (std::size_t ch = 0; ch < 3; ++ch)
          gap = std::max(gap, std::abs(sum[std::size_t(i)][ch] / count[std::size_t(i)] -
                                       sum[std::size_t(j)][ch] / count[std::size_t(j)]));
        INFO("classes ", i, " and ", j);
        CHECK(gap >= 0.1);
      }
  }
}

TEST_CASE("overlap control keeps crowns apart") {
  auto spec = small_spec(10);
  spec.allow_overlap = false;
  spec.n_classes = 2;
  for (const auto& s : generate_synthetic(spec, 3)) CHECK(s.mask.maxCoeff() <= 1);
}

TEST_CASE("synth spec validation") {
  auto spec = small_spec();
  CHECK_NOTHROW(spec.validate(8));
  CHECK_THROWS_AS(spec.validate(64), std::invalid_argument);
  spec.n_classes = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.shadow_prob = 1.5;
  CHECK_THROWS_AS(generate_synthetic(spec, 0), std::invalid_argument);
}

TEST_CASE("dataset round-trip keeps masks bit-exact") {
  const auto dir = fresh_dir("roundtrip");
  const auto spec = small_spec(10);
  const auto samples = generate_synthetic(spec, 6);
  save_dataset(dir, samples, spec);
  CHECK(fs::exists(dir / "meta.txt"));
  const auto loaded = load_dataset(dir, spec.n_classes);
  REQUIRE(loaded.size() == 10);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK((loaded[i].mask == samples[i].mask).all());
    CHECK((loaded[i].image.array() - samples[i].image.array()).abs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
    CHECK_NOTHROW(loaded[i].validate(spec.n_classes));
  }
}

TEST_CASE("dataset loading errors") {
  const auto spec = small_spec(3);
  const auto samples = generate_synthetic(spec, 7);
  SUBCASE("missing mask names the stem") {
    const auto dir = fresh_dir("missing");
    save_dataset(dir, samples);
    fs::remove(dir / "masks" / (sample_stem(1) + ".png"));
    try {
      load_dataset(dir, 3);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(sample_stem(1)) != std::string::npos);
    }
  }
  SUBCASE("unknown class id") {
    const auto dir = fresh_dir("unknown");
    save_dataset(dir, samples);
    CHECK_THROWS_AS(load_dataset(dir, 2), DomainError);
  }
  SUBCASE("mismatched dimensions") {
    const auto dir = fresh_dir("dims");
    save_dataset(dir, samples);
    write_png(dir / "masks" / (sample_stem(0) + ".png"), Image8{16, 16, 1, std::vector<std::uint8_t>(256, 0)});
    CHECK_THROWS_AS(load_dataset(dir, 3), ShapeError);
  }
  SUBCASE("missing directory") { CHECK_THROWS(load_dataset(fresh_dir("empty") / "nope", 3)); }
}

TEST_CASE("augmentation with every event and k = 2 rotates 180 degrees then flips both ways") {
  std::mt19937_64 rng(8);
  SegSample s = generate_sample(small_spec(), 1, 0);
  const AugmentDraw all{true, 2, true, true};
  const auto out = apply_augmentation(s, all);
  // A half turn followed by both flips is the identity.
  CHECK((out.mask == s.mask).all());
  CHECK(out.image == s.image);
  const AugmentDraw half{true, 2, false, false};
  const auto r = apply_augmentation(s, half);
  for (Index y = 0; y < s.height(); ++y)
    for (Index x = 0; x < s.width(); ++x) {
      CHECK(r.mask(y, x) == s.mask(s.height() - 1 - y, s.width() - 1 - x));
      CHECK(r.image(0, 1, y, x) == s.image(0, 1, s.height() - 1 - y, s.width() - 1 - x));
    }
}

TEST_CASE("augmentation with no events leaves the sample unchanged") {
  SegSample s = generate_sample(small_spec(), 1, 1);
  const auto out = apply_augmentation(s, AugmentDraw{});
  CHECK((out.mask == s.mask).all());
  CHECK(out.image == s.image);
}

TEST_CASE("single transforms") {
  std::mt19937_64 rng(9);
  const Mask m = test::random_mask(5, 5, 4, rng);
  CHECK((transform_plane(m, AugmentDraw{true, 1, false, false}) == rotate_ccw(m)).all());
  CHECK((transform_plane(m, AugmentDraw{true, 3, false, false}) == rotate_ccw(rotate_ccw(rotate_ccw(m)))).all());
  const Mask h = transform_plane(m, AugmentDraw{false, 0, true, false});
  const Mask v = transform_plane(m, AugmentDraw{false, 0, false, true});
  for (Index y = 0; y < 5; ++y)
    for (Index x = 0; x < 5; ++x) {
      CHECK(h(y, x) == m(y, 4 - x));
      CHECK(v(y, x) == m(4 - y, x));
    }
  const Mask wide = Mask::Zero(4, 6);
  CHECK_THROWS_AS(transform_plane(wide, AugmentDraw{true, 1, false, false}), ShapeError);
  CHECK_NOTHROW(transform_plane(wide, AugmentDraw{false, 0, true, true}));
}

TEST_CASE("augmentation event rates over 10000 draws") {
  std::mt19937_64 rng(10);
  int rot = 0, hf = 0, vf = 0;
  std::array<int, 4> turns{};
  for (int i = 0; i < 10000; ++i) {
    const auto d = draw_augmentation(rng);
    rot += d.rotate;
    hf += d.hflip;
    vf += d.vflip;
    ++turns[std::size_t(d.quarter_turns)];
    CHECK(d.rotate == (d.quarter_turns > 0));
  }
  CHECK(std::abs(rot / 10000.0 - 0.9) <= 0.02);
  CHECK(std::abs(hf / 10000.0 - 0.5) <= 0.02);
  CHECK(std::abs(vf / 10000.0 - 0.1) <= 0.02);
  for (int k = 1; k <= 3; ++k) CHECK(std::abs(turns[std::size_t(k)] / double(rot) - 1.0 / 3.0) <= 0.02);
}

TEST_CASE("augmentation is mask-consistent through one-hot encoding") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = draw_augmentation(rng);
    const Mask m = test::random_mask(6, 6, 4, rng);
    const Mask direct = transform_plane(m, d);
    std::vector<Mask> planes;
    for (int c = 0; c < 4; ++c) planes.push_back(transform_plane(Mask((m == c).cast<std::int32_t>()), d));
    for (Index i = 0; i < direct.size(); ++i) {
      int best = 0;
      for (int c = 1; c < 4; ++c)
        if (planes[std::size_t(c)].data()[i] > planes[std::size_t(best)].data()[i]) best = c;
      CHECK(best == direct.data()[i]);
    }
  }
}

TEST_CASE("split proportions, coverage and determinism") {
  auto spec = small_spec(100);
  spec.image_size = 16;
  spec.radius_min = 2;
  spec.radius_max = 4;
  const auto samples = generate_synthetic(spec, 12);
  const auto a = split(samples, 3), b = split(samples, 3), c = split(samples, 4);
  CHECK(a.train.size() == 64);
  CHECK(a.val.size() == 16);
  CHECK(a.test.size() == 20);
  std::vector<std::uint64_t> ids;
  const auto key = [](const SegSample& s) {
    std::uint64_t h = 0;
    for (Index i = 0; i < s.image.size(); ++i) h = h * 31 + std::uint64_t(s.image[i] * 1e6f);
    return h;
  };
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& s : *part) ids.push_back(key(s));
  std::vector<std::uint64_t> want;
  for (const auto& s : samples) want.push_back(key(s));
  std::sort(ids.begin(), ids.end());
  std::sort(want.begin(), want.end());
  CHECK(ids == want);
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].image == b.test[i].image);
  bool differs = false;
  for (std::size_t i = 0; i < a.test.size(); ++i) differs = differs || !(a.test[i].image == c.test[i].image);
  CHECK(differs);
  CHECK_THROWS_AS(split(std::vector<SegSample>(4), 0), std::invalid_argument);
  const auto seven = split(std::vector<SegSample>(7), 0);
  CHECK(seven.test.size() == 1);
  CHECK(seven.val.size() == 1);
  CHECK(seven.train.size() == 5);
}
