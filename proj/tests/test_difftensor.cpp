#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pnet/gradcheck.hpp"
#include "pnet/ops.hpp"
#include "support.hpp"

using namespace pnet;
using pnet::test::random_tensor;

TEST_CASE("tensor indexing is row-major NCHW") {
  Tensor<double> t({2, 3, 4, 5});
  t(1, 2, 3, 4) = 7.0;
  CHECK(t[t.size() - 1] == 7.0);
  CHECK(t.offset(0, 1, 0, 0) == 20);
  CHECK(t.plane(1, 2)(3, 4) == 7.0);
  CHECK_THROWS_AS(Tensor<double>({1, 1, 2, 2}, Tensor<double>::Storage::Zero(3)), ShapeError);
}

TEST_CASE("conv2d matches a direct loop for every stride, padding and dilation") {
  std::mt19937_64 rng(1);
  for (Index stride : {1, 2})
    for (Index pad : {0, 1, 3})
      for (Index dil : {1, 2, 3}) {
        const auto x = random_tensor({2, 3, 11, 10}, rng);
        const auto w = random_tensor({4, 3, 3, 3}, rng);
        const auto got = conv2d(x, w, ConvOptions{stride, pad, dil});
        const auto want = test::naive_conv(x, w, stride, pad, dil);
        REQUIRE(got.shape() == want.shape());
        CHECK(test::max_abs_diff(got, want) < 1e-12);
      }
  const auto x = random_tensor({1, 5, 6, 6}, rng);
  const auto w = random_tensor({3, 5, 1, 1}, rng);
  CHECK(test::max_abs_diff(conv2d(x, w, {}), test::naive_conv(x, w, 1, 0, 1)) < 1e-12);
}

TEST_CASE("dilated conv output extent") {
  // 8x8 input, 3x3 kernel, dilation 3, padding 3.
  const auto s = conv2d_output_shape({1, 1, 8, 8}, {1, 1, 3, 3}, ConvOptions{1, 3, 3});
  CHECK(s.h == 8);
  CHECK(s.w == 8);
}

TEST_CASE("conv2d shape errors name both shapes") {
  try {
    conv2d_output_shape({1, 3, 8, 8}, {4, 2, 3, 3}, {});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,3,8,8)") != std::string::npos);
    CHECK(msg.find("(4,2,3,3)") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d_output_shape({1, 1, 2, 2}, {1, 1, 5, 5}, {}), ShapeError);
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_tensor({1, 2, 7, 7}, rng), b = random_tensor({1, 2, 7, 7}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    Tensor<double> ab(a.shape(), a.array() + 2.5 * b.array());
    const auto lhs = conv2d(ab, w, ConvOptions{1, 1, 1});
    Tensor<double> rhs(lhs.shape(), conv2d(a, w, ConvOptions{1, 1, 1}).array() +
                                        2.5 * conv2d(b, w, ConvOptions{1, 1, 1}).array());
    CHECK(test::max_abs_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("pooling kernels") {
  Tensor<double> x({1, 1, 2, 4});
  x.array() << 1, 2, 5, 6, 3, 4, 7, 9;
  const auto mx = max_pool2d(x, 2, 2), av = avg_pool2d(x, 2, 2);
  CHECK(mx[0] == 4.0);
  CHECK(mx[1] == 9.0);
  CHECK(av[0] == 2.5);
  CHECK(av[1] == 6.75);
  CHECK_THROWS_AS(max_pool2d(Tensor<double>({1, 1, 3, 4}), 2, 2), ShapeError);
  const auto up = upsample_nearest2x(x);
  CHECK(up.shape() == Shape4{1, 1, 4, 8});
  CHECK(up(0, 0, 3, 7) == 9.0);
  CHECK(up(0, 0, 1, 1) == 1.0);
}

TEST_CASE("backward contract") {
  ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>({1, 1, 2, 2}, 1.0));
  SUBCASE("non-scalar loss is rejected") {
    Graph<double> g;
    CHECK_THROWS_AS(g.backward(g.param(p)), ShapeError);
  }
  SUBCASE("second backward is rejected") {
    Graph<double> g;
    auto l = sum(g.param(p));
    g.backward(l);
    CHECK(p.grad.array().isApproxToConstant(1.0));
    CHECK_THROWS_AS(g.backward(l), std::logic_error);
  }
  SUBCASE("gradients accumulate across graphs") {
    for (int i = 0; i < 2; ++i) {
      Graph<double> g;
      g.backward(sum(scale(g.param(p), 3.0)));
    }
    CHECK(p.grad.array().isApproxToConstant(6.0));
  }
  SUBCASE("inference graphs treat parameters as constants") {
    Graph<double> g(false);
    auto l = sum(g.param(p));
    CHECK_FALSE(g.requires_grad(l.id()));
  }
  SUBCASE("buffers receive no gradient") {
    auto& b = store.add("b", Tensor<double>({1, 1, 2, 2}, 2.0), false);
    Graph<double> g;
    g.backward(sum(mul(g.param(p), g.param(b))));
    CHECK(b.grad.array().isZero());
    CHECK(p.grad.array().isApproxToConstant(2.0));
  }
  CHECK_THROWS_AS(store.add("p", Tensor<double>({1, 1, 1, 1})), std::invalid_argument);
}

TEST_CASE("op gradients match central differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterStore<double> store;
    auto& x = store.add("x", random_tensor({2, 3, 6, 6}, rng));
    auto& w = store.add("w", random_tensor({4, 3, 3, 3}, rng));
    auto& b = store.add("b", random_tensor({1, 4, 1, 1}, rng));
    auto& gamma = store.add("gamma", random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5));
    auto& beta = store.add("beta", random_tensor({1, 4, 1, 1}, rng));
    auto& rm = store.add("rm", Tensor<double>({1, 4, 1, 1}), false);
    auto& rv = store.add("rv", Tensor<double>({1, 4, 1, 1}, 1.0), false);
    auto& y = store.add("y", random_tensor({2, 3, 12, 12}, rng));
    const auto r1 = random_tensor({2, 7, 12, 12}, rng);
    const auto loss = [&](Graph<double>& g) {
      auto h = conv2d(g.param(x), g.param(w), ConvOptions{2, 2, 2});
      h = relu(batch_norm(h, g.param(gamma), g.param(beta), BatchNormState<double>{&rm, &rv}, true));
      h = add_bias(h, g.param(b));
      h = upsample_nearest2x(upsample_nearest2x(h));
      h = concat_channels(h, g.param(y));
      h = add(h, scale(avg_pool2d(upsample_nearest2x(h), 2, 2), 0.5));
      return sum(mul(h, g.constant(r1)));
    };
    const auto e = check_graph_gradients("ops", store, loss, 1e-6, 64, rng());
    CHECK(e.max_rel_error <= 1e-6);
  }
}

TEST_CASE("batch norm normalises per channel in training mode and updates running stats") {
  std::mt19937_64 rng(4);
  ParameterStore<double> store;
  auto& gamma = store.add("g", Tensor<double>({1, 2, 1, 1}, 1.0));
  auto& beta = store.add("b", Tensor<double>({1, 2, 1, 1}, 0.0));
  auto& rm = store.add("rm", Tensor<double>({1, 2, 1, 1}), false);
  auto& rv = store.add("rv", Tensor<double>({1, 2, 1, 1}, 1.0), false);
  const auto x = random_tensor({3, 2, 4, 4}, rng, 2.0, 4.0);
  Graph<double> g;
  const auto y = batch_norm(g.constant(x), g.param(gamma), g.param(beta), BatchNormState<double>{&rm, &rv}, true);
  for (Index c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (Index n = 0; n < 3; ++n) {
      mean += y.value().plane(n, c).sum();
      sq += y.value().plane(n, c).squaredNorm();
    }
    CHECK(mean / 48 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sq / 48 == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(rm.value[c] > 0.2);
  }
  Graph<double> gi(false);
  const auto z = batch_norm(gi.constant(x), gi.param(gamma), gi.param(beta), BatchNormState<double>{&rm, &rv}, false);
  CHECK(z.value().shape() == x.shape());
}

TEST_CASE("float and double kernels agree") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({1, 2, 8, 8}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto d = conv2d(x, w, ConvOptions{1, 1, 1});
  const auto f = conv2d(x.cast<float>(), w.cast<float>(), ConvOptions{1, 1, 1});
  CHECK((d.array() - f.cast<double>().array()).abs().maxCoeff() < 1e-5);
}
