#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pnet/gradcheck.hpp"
#include "pnet/training.hpp"
#include "support.hpp"

using namespace pnet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(Variant v = Variant::PerceptiveNet) {
  ModelConfig c;
  c.variant = v;
  c.base_channels = 4;
  c.depth = 2;
  c.n_classes = 3;
  return c;
}

DataSplit tiny_data(int n, int size, std::uint64_t seed) {
  SynthSpec s;
  s.n_samples = n;
  s.image_size = size;
  s.radius_min = size / 8.0;
  s.radius_max = size / 4.0;
  return split(generate_synthetic(s, seed), seed);
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
  Graph<double> g(false);
  std::vector<Mask> masks{Mask::Zero(2, 3)};
  masks[0](1, 2) = 3;
  const auto uniform = g.constant(Tensor<double>({1, 4, 2, 3}, 0.7));
  CHECK(cross_entropy(uniform, masks).value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  Tensor<double> margin({1, 4, 2, 3});
  for (Index y = 0; y < 2; ++y)
    for (Index x = 0; x < 3; ++x) margin(0, masks[0](y, x), y, x) = 50.0;
  CHECK(cross_entropy(g.constant(margin), masks).value()[0] < 1e-8);

  masks[0](0, 0) = 4;
  CHECK_THROWS_AS(cross_entropy(uniform, masks), DomainError);
  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<Mask>{Mask::Zero(3, 2)}), ShapeError);
  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<Mask>{}), ShapeError);
}

TEST_CASE("cross entropy gradient on a 2x2x2 toy matches central differences") {
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore<double> store;
    auto& logits = store.add("logits", test::random_tensor({1, 2, 2, 2}, rng, -3.0, 3.0));
    const std::vector<Mask> masks{test::random_mask(2, 2, 2, rng)};
    const auto e = check_graph_gradients(
        "ce", store, [&](Graph<double>& g) { return cross_entropy(g.param(logits), masks); }, 1e-6, 8, rng());
    CHECK(e.max_rel_error <= 1e-4);
  }
}

TEST_CASE("cross entropy is invariant to batch order") {
  std::mt19937_64 rng(51);
  const auto a = test::random_tensor({1, 3, 4, 4}, rng), b = test::random_tensor({1, 3, 4, 4}, rng);
  const Mask ma = test::random_mask(4, 4, 3, rng), mb = test::random_mask(4, 4, 3, rng);
  Tensor<double> ab({2, 3, 4, 4}), ba({2, 3, 4, 4});
  ab.array() << a.array(), b.array();
  ba.array() << b.array(), a.array();
  Graph<double> g(false);
  const double l1 = cross_entropy(g.constant(ab), {ma, mb}).value()[0];
  const double l2 = cross_entropy(g.constant(ba), {mb, ma}).value()[0];
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-15));
}

TEST_CASE("Adam first step moves by lr * sign(g)") {
  ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>({1, 1, 1, 4}));
  auto& frozen = store.add("frozen", Tensor<double>({1, 1, 1, 1}, 5.0), false);
  p.grad.array() << 0.3, -2.0, 1e-3, 0.0;
  frozen.grad[0] = 1.0;
  Adam<double> adam(store, AdamConfig{0.01});
  adam.step();
  CHECK(p.value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p.value[2] == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(p.value[3] == 0.0);
  CHECK(frozen.value[0] == 5.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("Adam converges on (w - 3)^2") {
  ParameterStore<double> store;
  auto& w = store.add("w", Tensor<double>({1, 1, 1, 1}, 0.0));
  Adam<double> adam(store, AdamConfig{0.1});
  for (int i = 0; i < 200; ++i) {
    w.grad[0] = 2.0 * (w.value[0] - 3.0);
    adam.step();
  }
  CHECK(std::abs(w.value[0] - 3.0) < 0.05);
}

TEST_CASE("argmax picks the first maximum") {
  Tensor<double> logits({1, 3, 1, 3});
  logits.array() << 1, 0, 2, 1, 5, 2, 0, 5, 2;
  const auto m = argmax_masks(logits)[0];
  CHECK(m(0, 0) == 0);
  CHECK(m(0, 1) == 1);
  CHECK(m(0, 2) == 0);
}

TEST_CASE("one-hot logits of the truth give perfect metrics") {
  std::mt19937_64 rng(52);
  ConfusionMatrix cm(3);
  for (int b = 0; b < 4; ++b) {
    const Mask truth = test::random_mask(8, 8, 3, rng);
    Tensor<double> logits({1, 3, 8, 8});
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) logits(0, truth(y, x), y, x) = 1.0;
    cm.update(argmax_masks(logits)[0], truth);
  }
  CHECK(pixel_accuracy(cm) == 1.0);
  CHECK(mean_iou(cm) == 1.0);
}

TEST_CASE("constant-class model on a balanced two-class set") {
  ModelConfig cfg = tiny_model(Variant::ResUNet);
  cfg.n_classes = 2;
  SegModel<double> model(cfg, 1);
  model.parameters().at("head.weight").value.set_zero();
  model.parameters().at("head.bias").value.array() << 1.0, 0.0;
  std::vector<SegSample> samples(4);
  for (auto& s : samples) {
    s.image = Tensor<float>({1, 3, 8, 8}, 0.5f);
    s.mask = Mask::Zero(8, 8);
    s.mask.bottomRows(4).setOnes();
  }
  const auto r = evaluate(model, samples, 3);
  CHECK(r.pixel_acc == 0.5);
  CHECK(r.miou == 0.25);
  CHECK_THROWS_AS(evaluate(model, std::vector<SegSample>{}), std::invalid_argument);
}

TEST_CASE("evaluate agrees with a per-pixel oracle and never mutates parameters") {
  auto data = tiny_data(30, 16, 53);
  SegModel<double> model(tiny_model(), 2);
  const auto before = parameter_checksum(model.parameters());
  for (int b = 0; b < 10; ++b) {
    std::vector<SegSample> batch(data.train.begin() + b, data.train.begin() + b + 3);
    const auto r = evaluate(model, batch, 2);
    const auto pred = predict_masks(model, batch, 3);
    std::int64_t hit = 0, total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      hit += (pred[i] == batch[i].mask).count();
      total += batch[i].mask.size();
    }
    CHECK(r.pixel_acc == doctest::Approx(double(hit) / double(total)).epsilon(1e-15));
    ConfusionMatrix cm(3);
    for (std::size_t i = 0; i < batch.size(); ++i) cm.update(pred[i], batch[i].mask);
    CHECK(std::abs(r.miou - mean_iou(cm)) <= 1e-12);
  }
  CHECK(parameter_checksum(model.parameters()) == before);
}

TEST_CASE("training is deterministic in double precision") {
  const auto data = tiny_data(20, 16, 54);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 9;
  SegModel<double> a(tiny_model(), 1), b(tiny_model(), 1);
  const auto ha = train(a, data, tc), hb = train(b, data, tc);
  CHECK(ha == hb);
  CHECK(ha.epochs.size() == 2);
  CHECK(parameter_checksum(a.parameters()) == parameter_checksum(b.parameters()));
}

TEST_CASE("with lr = 0 and no augmentation the training loss is constant") {
  const auto data = tiny_data(20, 16, 55);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = int(data.train.size());
  tc.adam.lr = 0.0;
  tc.augment = false;
  SegModel<double> model(tiny_model(), 1);
  const auto before = parameter_checksum(model.parameters());
  const auto h = train(model, data, tc);
  for (const auto& r : h.epochs) CHECK(r.train_loss == doctest::Approx(h.epochs[0].train_loss).epsilon(1e-12));
  // Running statistics still move; every trainable value is untouched.
  const auto& store = model.parameters();
  SegModel<double> fresh(tiny_model(), 1);
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].trainable) CHECK(store[i].value == fresh.parameters()[i].value);
  CHECK(parameter_checksum(model.parameters()) != before);
}

TEST_CASE("best checkpoint reproduces validation mIoU exactly") {
  const auto data = tiny_data(20, 16, 56);
  const auto path = fs::temp_directory_path() / "pnet_test_training_best.pnet";
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.checkpoint = path;
  SegModel<double> model(tiny_model(), 3);
  const auto h = train(model, data, tc);
  REQUIRE(h.best_epoch > 0);
  const auto loaded = load_checkpoint<double>(path);
  CHECK(evaluate(loaded, data.val, tc.batch_size).miou == h.best_miou);
}

TEST_CASE("evaluation cadence") {
  const auto data = tiny_data(20, 16, 57);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.eval_every = 2;
  SegModel<float> model(tiny_model(), 1);
  int calls = 0;
  const auto h = train(model, data, tc, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == 3);
  CHECK_FALSE(h.epochs[0].evaluated);
  CHECK(h.epochs[1].evaluated);
  CHECK(h.epochs[2].evaluated);
  tc.epochs = 0;
  CHECK_THROWS_AS(train(model, data, tc), std::invalid_argument);
}

TEST_CASE("non-finite loss aborts with the epoch and batch") {
  const auto data = tiny_data(20, 16, 58);
  SegModel<float> model(tiny_model(), 1);
  model.parameters().at("head.bias").value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 2;
  try {
    train(model, data, tc);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch == 1);
    CHECK(e.batch == 0);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("training loss falls between epoch 1 and epoch 5 (median over 3 seeds)") {
  std::vector<double> drop;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto data = tiny_data(60, 32, seed);
    TrainConfig tc;
    tc.epochs = 5;
    tc.seed = seed;
    SegModel<float> model(tiny_model(), seed);
    const auto h = train(model, data, tc);
    drop.push_back(h.epochs[0].train_loss - h.epochs[4].train_loss);
  }
  std::sort(drop.begin(), drop.end());
  CHECK(drop[1] > 0.0);
}
