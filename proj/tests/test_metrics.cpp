#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "pnet/metrics.hpp"
#include "support.hpp"

using namespace pnet;

namespace {

Mask from(std::initializer_list<std::initializer_list<int>> rows) {
  Mask m(Index(rows.size()), Index(rows.begin()->size()));
  Index y = 0;
  for (const auto& r : rows) {
    Index x = 0;
    for (int v : r) m(y, x++) = v;
    ++y;
  }
  return m;
}

/// IoU from pixel index sets, independent of the confusion matrix.
double oracle_miou(const Mask& pred, const Mask& truth, int k) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::set<Index> p, t, u;
    for (Index i = 0; i < pred.size(); ++i) {
      if (pred.data()[i] == c) p.insert(i);
      if (truth.data()[i] == c) t.insert(i);
    }
    u = p;
    u.insert(t.begin(), t.end());
    if (u.empty()) continue;
    Index inter = 0;
    for (Index i : p) inter += t.count(i);
    sum += double(inter) / double(u.size());
    ++present;
  }
  return sum / present;
}

double oracle_accuracy(const Mask& pred, const Mask& truth) { return double((pred == truth).count()) / double(pred.size()); }

}  // namespace

TEST_CASE("diagonal counts for a perfect 2x2 prediction") {
  ConfusionMatrix cm(2);
  const Mask m = from({{0, 1}, {1, 0}});
  cm.update(m, m);
  CHECK(cm.counts()(0, 0) == 2);
  CHECK(cm.counts()(1, 1) == 2);
  CHECK(cm.total() == 4);
  CHECK(pixel_accuracy(cm) == 1.0);
  CHECK(mean_iou(cm) == 1.0);
}

TEST_CASE("closed-form mIoU: half/half truth, all-zero prediction") {
  ConfusionMatrix cm(2);
  cm.update(from({{0, 0}, {0, 0}}), from({{0, 0}, {1, 1}}));
  const auto iou = class_iou(cm);
  CHECK(*iou[0] == 0.5);
  CHECK(*iou[1] == 0.0);
  CHECK(mean_iou(cm) == 0.25);
  CHECK(pixel_accuracy(cm) == 0.5);
}

TEST_CASE("all-wrong prediction has zero accuracy") {
  ConfusionMatrix cm(2);
  cm.update(from({{1, 1}}), from({{0, 0}}));
  CHECK(pixel_accuracy(cm) == 0.0);
  CHECK(mean_iou(cm) == 0.0);
}

TEST_CASE("zero-union classes are excluded") {
  ConfusionMatrix cm(4);
  const Mask m = from({{0, 1}, {1, 0}});
  cm.update(m, m);
  CHECK(mean_iou(cm) == 1.0);
  CHECK_FALSE(class_iou(cm)[3].has_value());
}

TEST_CASE("errors") {
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(pixel_accuracy(cm), DomainError);
  CHECK_THROWS_AS(mean_iou(cm), DomainError);
  CHECK_THROWS_AS(cm.update(from({{0, 1}}), from({{0}, {1}})), ShapeError);
  CHECK_THROWS_AS(cm.update(from({{0, 2}}), from({{0, 1}})), DomainError);
  CHECK_THROWS_AS(cm.update(from({{0, 1}}), from({{-1, 1}})), DomainError);
  ConfusionMatrix other(3);
  CHECK_THROWS_AS(cm.merge(other), ShapeError);
}

TEST_CASE("exhaustive agreement on every 2-class 2x2 mask pair") {
  int cases = 0;
  for (int p = 0; p < 16; ++p)
    for (int t = 0; t < 16; ++t) {
      Mask pred(2, 2), truth(2, 2);
      for (int i = 0; i < 4; ++i) {
        pred.data()[i] = (p >> i) & 1;
        truth.data()[i] = (t >> i) & 1;
      }
      ConfusionMatrix cm(2);
      cm.update(pred, truth);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          std::int64_t n = 0;
          for (int i = 0; i < 4; ++i) n += truth.data()[i] == a && pred.data()[i] == b;
          CHECK(cm.counts()(a, b) == n);
        }
      CHECK(std::abs(pixel_accuracy(cm) - oracle_accuracy(pred, truth)) <= 1e-12);
      CHECK(std::abs(mean_iou(cm) - oracle_miou(pred, truth, 2)) <= 1e-12);
      ++cases;
    }
  CHECK(cases == 256);
}

TEST_CASE("random 3-class 8x8 pairs agree with the set-based oracle") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask pred = test::random_mask(8, 8, 3, rng), truth = test::random_mask(8, 8, 3, rng);
    ConfusionMatrix cm(3);
    cm.update(pred, truth);
    CHECK(std::abs(mean_iou(cm) - oracle_miou(pred, truth, 3)) <= 1e-12);
    CHECK(std::abs(pixel_accuracy(cm) - oracle_accuracy(pred, truth)) <= 1e-12);
    const double acc = pixel_accuracy(cm), miou = mean_iou(cm);
    CHECK((acc >= 0.0 && acc <= 1.0));
    CHECK((miou >= 0.0 && miou <= 1.0));
  }
}

TEST_CASE("accumulation is additive and merge is order-independent") {
  std::mt19937_64 rng(41);
  const Mask p1 = test::random_mask(4, 6, 3, rng), t1 = test::random_mask(4, 6, 3, rng);
  const Mask p2 = test::random_mask(4, 6, 3, rng), t2 = test::random_mask(4, 6, 3, rng);
  ConfusionMatrix two(3), one(3), a(3), b(3);
  two.update(p1, t1);
  two.update(p2, t2);
  Mask pc(8, 6), tc(8, 6);
  pc << p1, p2;
  tc << t1, t2;
  one.update(pc, tc);
  CHECK((two.counts() == one.counts()).all());
  a.update(p1, t1);
  b.update(p2, t2);
  ConfusionMatrix ab = a, ba = b;
  ab.merge(b);
  ba.merge(a);
  CHECK((ab.counts() == one.counts()).all());
  CHECK((ba.counts() == one.counts()).all());
}

TEST_CASE("mIoU is invariant under consistent relabeling") {
  std::mt19937_64 rng(42);
  const std::array<int, 4> perm{2, 0, 3, 1};
  for (int trial = 0; trial < 50; ++trial) {
    const Mask pred = test::random_mask(6, 6, 4, rng), truth = test::random_mask(6, 6, 4, rng);
    Mask pp = pred, tt = truth;
    for (Index i = 0; i < pp.size(); ++i) {
      pp.data()[i] = perm[std::size_t(pred.data()[i])];
      tt.data()[i] = perm[std::size_t(truth.data()[i])];
    }
    ConfusionMatrix a(4), b(4);
    a.update(pred, truth);
    b.update(pp, tt);
    CHECK(mean_iou(a) == doctest::Approx(mean_iou(b)).epsilon(1e-15));
    CHECK(pixel_accuracy(a) == pixel_accuracy(b));
  }
}

TEST_CASE("CAM shape, range and degenerate cases") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.n_classes = 3;
  SegModel<double> model(cfg, 3);
  std::mt19937_64 rng(43);
  const auto x = test::random_tensor<double>({1, 3, 32, 32}, rng, 0.0, 1.0);
  const auto cam = compute_cam(model, x, 1);
  CHECK(cam.rows() == 32);
  CHECK(cam.cols() == 32);
  CHECK(cam.minCoeff() >= 0.0);
  CHECK(cam.maxCoeff() == 1.0);
  CHECK_THROWS_AS(compute_cam(model, x, 3), DomainError);
  CHECK_THROWS_AS(compute_cam(model, x, -1), DomainError);

  // Zero projection weights for class 2 give the all-zero fallback.
  auto& w = model.parameters().at("head.weight").value;
  for (Index c = 0; c < w.shape().c; ++c) w(2, c, 0, 0) = 0.0;
  CHECK(compute_cam(model, x, 2).isZero());

  // Oracle: weighted sum of the final features, rectified and min-max scaled.
  Graph<double> g(false);
  const auto f = model.forward(g, g.constant(x), false).features.value();
  Heatmap want = Heatmap::Zero(32, 32);
  for (Index c = 0; c < f.shape().c; ++c) want += w(0, c, 0, 0) * f.plane(0, c).array();
  want = want.max(0.0);
  want = (want - want.minCoeff()) / (want.maxCoeff() - want.minCoeff());
  CHECK((compute_cam(model, x, 0) - want).abs().maxCoeff() < 1e-12);
}

TEST_CASE("overlay equals the base image where the heatmap is zero") {
  std::mt19937_64 rng(44);
  Image8 rgb{8, 4, 3, std::vector<std::uint8_t>(96)};
  for (auto& v : rgb.pixels) v = std::uint8_t(rng() & 0xff);
  Heatmap heat = Heatmap::Zero(4, 8);
  heat(1, 2) = 1.0;
  heat(3, 7) = 0.25;
  const auto out = overlay_heatmap(rgb, heat);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) {
        if (heat(y, x) > 0) {
          const auto col = heat_colour(heat(y, x));
          CHECK(out.at(y, x, c) == std::lround(0.5 * rgb.at(y, x, c) + 0.5 * col[std::size_t(c)]));
        } else {
          CHECK(out.at(y, x, c) == rgb.at(y, x, c));
        }
      }
  CHECK_THROWS_AS(overlay_heatmap(rgb, Heatmap::Zero(3, 8)), ShapeError);
  CHECK(heatmap_to_gray(heat).at(1, 2) == 255);
  CHECK(resize_nearest(heat, 8, 16)(3, 5) == 1.0);
}
