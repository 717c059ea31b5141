#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "pnet/filterbank.hpp"
#include "pnet/gradcheck.hpp"

using namespace pnet;

namespace {

// Reference values from tests/oracles/log_gabor_oracle.py (f = f0 = 0.25, theta = theta0 = 0,
// sigma = 0.55, psi = 0, delta = 1e-3). Rows y = -3..3, columns x = -3..3; rows 4..6 mirror 2..0.
constexpr double kReference[4][7] = {
    {-2.94624579629244443e-06, -1.02053181436005411e-05, -2.28435394961708559e-05, -1.48970291062262118e-06,
     -6.45603982556363330e-04, -4.58052547366202389e-03, -1.02725400612897616e-02},
    {-4.71353111655561683e-07, 1.17145927373240979e-06, 8.35180813279189907e-05, 2.04723567604679028e-03,
     1.03035426292060559e-02, 4.08447330997603868e-03, -1.27666031714840280e-02},
    {-1.66707178520463301e-08, 5.55873924831761586e-07, 2.89635458281002510e-05, 7.19472449271673069e-03,
     1.00985866559596779e-01, 5.47757047983541204e-02, -7.17082679391850813e-03},
    {-7.23579684096640024e-12, 9.94384942918707739e-09, 3.49462731023765098e-08, 1.68786746940909650e-02,
     4.24833349917274838e-01, 1.20884961085800116e-01, -8.79638238464846146e-05},
};

LogGaborParams<double> reference_params() {
  LogGaborParams<double> p;
  p.f = 0.25;
  p.f0 = 0.25;
  p.theta = 0.0;
  p.theta0 = 0.0;
  p.sigma = 0.55;
  p.psi = 0.0;
  p.delta = 1e-3;
  return p;
}

}  // namespace

TEST_CASE("log-Gabor kernel matches the scalar reference") {
  const auto k = log_gabor_kernel(reference_params(), 7);
  REQUIRE(k.rows() == 7);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      const double want = kReference[y < 4 ? y : 6 - y][x];
      CHECK(k(y, x) == doctest::Approx(want).epsilon(1e-12).scale(1e-15));
    }
}

TEST_CASE("radial, angular and frequency profiles") {
  CHECK(log_gabor_radial(4.0, 2.0, 1.0) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
  CHECK(log_gabor_angular(1.0, 0.0, 1.0) == doctest::Approx(0.6065306597126334).epsilon(1e-15));
  CHECK(std::abs(log_gabor_freq_response(0.25 / 8, 0.25, 0.125) - std::exp(-4.5)) <= 1e-12);
  CHECK(std::abs(log_gabor_freq_response(0.25 / 8, 0.25, 0.125) - 0.011109) <= 1e-6);
  CHECK_THROWS_AS(log_gabor_radial(0.0, 1.0, 0.5), DomainError);
  CHECK_THROWS_AS(log_gabor_radial(1.0, 0.5, 0.5), DomainError);
  CHECK_THROWS_AS(log_gabor_freq_response(-1.0, 1.0, 0.5), DomainError);
  CHECK_THROWS_AS(log_gabor_angular(0.0, 0.0, 0.0), DomainError);
}

TEST_CASE("frequency response peaks at f0 and decays in |log(f/f0)|") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double f0 = 0.05 + u(rng), sigma = f0 * (0.2 + 0.7 * u(rng));
    CHECK(log_gabor_freq_response(f0, f0, sigma) == 1.0);
    double prev = 1.0;
    for (int step = 1; step <= 40; ++step) {
      const double d = 0.1 * step;
      const double up = log_gabor_freq_response(f0 * std::exp(d), f0, sigma);
      const double down = log_gabor_freq_response(f0 * std::exp(-d), f0, sigma);
      CHECK(up == doctest::Approx(down).epsilon(1e-12));
      CHECK(up <= prev);
      if (up > 0.0) CHECK(up < prev);
      prev = up;
    }
  }
}

TEST_CASE("kernel and kernel-with-partials share bit-identical values") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_log_gabor_params(rng);
    CHECK(log_gabor_kernel(p, 7) == log_gabor_kernel_with_partials(p, 7).value);
  }
}

TEST_CASE("log-Gabor analytic partials match central differences over 50 draws") {
  for (const auto& e : check_log_gabor_partials(50, 12)) {
    INFO(e.name);
    CHECK(e.checked == 50 * 49);
    CHECK(e.max_rel_error <= 1e-4);
  }
}

TEST_CASE("Gabor analytic partials match central differences over 50 draws") {
  for (const auto& e : check_gabor_partials(50, 13)) {
    INFO(e.name);
    CHECK(e.max_rel_error <= 1e-4);
  }
}

TEST_CASE("Gabor kernel closed form") {
  GaborParams<double> p;
  p.omega = 0.7;
  p.theta = 0.0;
  p.psi = 0.0;
  p.sigma = 2.0;
  p.gamma = 1.0;
  const auto k = gabor_kernel(p, 5);
  CHECK(k(2, 2) == 1.0);
  CHECK(k(2, 3) == doctest::Approx(std::exp(-1.0 / 8.0) * std::cos(0.7)));
  CHECK(k(3, 2) == doctest::Approx(std::exp(-1.0 / 8.0)));
  const auto im = gabor_kernel(p, 5, GaborPart::Imaginary);
  CHECK(im(2, 2) == 0.0);
  CHECK_THROWS_AS(gabor_kernel(p, 4), DomainError);
  p.sigma = 0.0;
  CHECK_THROWS_AS(gabor_kernel(p, 5), DomainError);
}

TEST_CASE("invalid log-Gabor parameters are rejected") {
  auto p = reference_params();
  p.sigma = p.f0;
  CHECK_THROWS_AS(log_gabor_kernel(p, 7), DomainError);
  p = reference_params();
  p.f0 = -1.0;
  CHECK_THROWS_AS(log_gabor_kernel(p, 7), DomainError);
  p = reference_params();
  p.delta = 0.0;
  CHECK_THROWS_AS(log_gabor_kernel(p, 7), DomainError);
  CHECK_THROWS_AS(log_gabor_kernel(reference_params(), 6), DomainError);
}

TEST_CASE("log-Gabor bank initialisation") {
  const auto bank = init_log_gabor_bank<double>(8, 3, 7, 5);
  REQUIRE(bank.size() == 24);
  CHECK(bank == init_log_gabor_bank<double>(8, 3, 7, 5));
  std::set<double> f0s, thetas;
  for (const auto& p : bank) {
    CHECK(p.psi >= 0.0);
    CHECK(p.psi < std::numbers::pi);
    CHECK(p.f == p.f0);
    CHECK(p.sigma == doctest::Approx(0.55 * p.f0));
    CHECK(p.theta == p.theta0);
    CHECK(p.f0 >= 0.15 - 1e-12);
    CHECK(p.f0 <= 0.85 + 1e-12);
    f0s.insert(p.f0);
    thetas.insert(p.theta);
  }
  CHECK(f0s.size() == 3);
  CHECK(thetas.size() == 3);
  CHECK(*f0s.begin() == doctest::Approx(0.15));
  CHECK(*f0s.rbegin() == doctest::Approx(0.85));
  // Connections of one output filter share everything but the phase.
  CHECK(bank[0].f0 == bank[2].f0);
  CHECK(bank[0].psi != bank[1].psi);
  const auto other = init_log_gabor_bank<double>(8, 3, 7, 6);
  CHECK(other[0].psi != bank[0].psi);
}

TEST_CASE("Gabor bank initialisation") {
  const auto bank = init_gabor_bank<double>(4, 2, 7, 1);
  REQUIRE(bank.size() == 8);
  for (const auto& p : bank) {
    CHECK(p.sigma == 2.0);
    CHECK(p.gamma == 1.0);
    CHECK(p.omega >= std::numbers::pi / 8 - 1e-12);
    CHECK(p.omega <= std::numbers::pi / 2 + 1e-12);
  }
}

TEST_CASE("kernel_to_gray spans the full range") {
  const auto g = kernel_to_gray(log_gabor_kernel(reference_params(), 7));
  CHECK(g.minCoeff() == 0);
  CHECK(g.maxCoeff() == 255);
  Kernel2D<double> flat = Kernel2D<double>::Constant(3, 3, 0.4);
  CHECK(kernel_to_gray(flat).maxCoeff() == 0);
}
