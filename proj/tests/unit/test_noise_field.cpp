#include <cmath>
#include <cstring>

#include "doctest.h"

#include "shellsde/noise_field.hpp"
#include "shellsde/presets.hpp"

using namespace shellsde;

TEST_CASE("philox known answer") {
  // Reference vector of the Random123 distribution, counter 0 and key 0.
  const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(out[0] == 0x6627e8d5u);
  CHECK(out[1] == 0xe169c58du);
  CHECK(out[2] == 0xbc57ac4cu);
  CHECK(out[3] == 0x9b00dbd8u);
  const auto ff = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                             {0xffffffffu, 0xffffffffu});
  CHECK(ff[0] == 0x408f276du);
  CHECK(ff[1] == 0x41c83b0eu);
  CHECK(ff[2] == 0xa20bc7c6u);
  CHECK(ff[3] == 0x6d5451fdu);
}

TEST_CASE("uniforms stay in (0, 1]") {
  CHECK(unit_uniform(0, 0) > 0.0);
  CHECK(unit_uniform(0xffffffffu, 0xffffffffu) <= 1.0);
}

TEST_CASE("paired interactions read the same increments") {
  const auto spec = build_goy(1.0, -1.5, 0.5, 2.0, 1.0);
  const auto slab = sample_slab(spec, 10, 1e-3, {3, 4, 5});
  for (int i = 0; i < spec.size(); ++i) {
    const int p = spec.pairing[static_cast<std::size_t>(i)];
    for (int m = slab.window_lo(); m <= slab.window_hi(); ++m) {
      const auto a = slab.lookup(i, m);
      const auto b = slab.lookup(p, m);
      CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    }
  }
  CHECK_THROWS_AS(slab.lookup(0, slab.window_hi() + 1), std::out_of_range);
}

TEST_CASE("slabs are deterministic in their key") {
  const auto spec = build_sabra(1.0, -1.25, 0.25, 2.0, 1.0, 0.125);
  const auto a = sample_slab(spec, 12, 1e-4, {99, 7, 123}, 3);
  const auto b = sample_slab(spec, 12, 1e-4, {99, 7, 123}, 3);
  const auto c = sample_slab(spec, 12, 1e-4, {99, 7, 124}, 3);
  bool same = true, differs = false;
  for (int i = 0; i < spec.size(); ++i)
    for (int m = a.window_lo(); m <= a.window_hi(); ++m)
      for (int lane = 0; lane < 3; ++lane) {
        const auto x = a.standard(i, m, lane), y = b.standard(i, m, lane), z = c.standard(i, m, lane);
        for (std::size_t k = 0; k < x.size(); ++k) {
          same = same && x[k] == y[k];
          differs = differs || x[k] != z[k];
        }
      }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("increment moments") {
  const auto spec = build_novikov(2.0, 1.0);
  const double dt = 1e-2;
  NoiseSlab slab(spec, 4, dt);
  const int draws = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < draws; ++k) {
    slab.fill({11, 0, static_cast<std::uint32_t>(k)});
    const double v = slab.lookup(1, 2)[0];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  CHECK(std::abs(mean) < 4.0 * std::sqrt(dt) * std::pow(10.0, -2.5));
  const double var = sum2 / draws - mean * mean;
  // Var of the sample variance is 2 dt^2 / draws.
  CHECK(std::abs(var - dt) < 4.0 * dt * std::sqrt(2.0 / draws));
}

TEST_CASE("goy complex noise") {
  const GoyNoiseParams p{1.0, 0.5, 2.0};
  const auto spec = build_goy(1.0, -1.5, 0.5, 2.0, 1.0);
  const double dt = 1e-2;
  NoiseSlab slab(spec, 8, dt);

  SUBCASE("variance of each real part is dt") {
    const int draws = 50000;
    double re2 = 0.0, im2 = 0.0;
    for (int k = 0; k < draws; ++k) {
      slab.fill({5, 1, static_cast<std::uint32_t>(k)});
      const auto w = goy_noise_bridge(slab, p, 3);
      re2 += w.real() * w.real();
      im2 += w.imag() * w.imag();
    }
    CHECK(std::abs(re2 / draws - dt) < 4.0 * dt * std::sqrt(2.0 / draws));
    CHECK(std::abs(im2 / draws - dt) < 4.0 * dt * std::sqrt(2.0 / draws));
  }
  SUBCASE("c = 0 reads only the first family") {
    slab.fill({5, 2, 0});
    const GoyNoiseParams p0{1.0, 0.0, 2.0};
    const auto w = goy_noise_bridge(slab, p0, 3);
    const auto w1 = slab.lookup(0, 5);
    CHECK(w.real() == w1[0]);
    CHECK(w.imag() == -w1[1]);
  }
  SUBCASE("bridge round trip") {
    slab.fill({5, 3, 0});
    for (int n = 2; n <= 6; ++n) {
      const auto w = goy_noise_bridge(slab, p, n);
      const auto wt = goy_noise_complement(slab, p, n);
      const auto [w1, w2] = goy_noise_unbridge(w, wt, p);
      const auto e1 = slab.lookup(0, n + 2), e2 = slab.lookup(1, n - 1);
      for (int j = 0; j < 2; ++j) {
        CHECK(w1[static_cast<std::size_t>(j)] == doctest::Approx(e1[static_cast<std::size_t>(j)]).epsilon(1e-14));
        CHECK(w2[static_cast<std::size_t>(j)] == doctest::Approx(e2[static_cast<std::size_t>(j)]).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("counter rng streams") {
  CounterRng a(1, RngStream::Chain, 4), b(1, RngStream::Chain, 4), c(1, RngStream::Noise, 4);
  bool differs = false;
  for (int k = 0; k < 10; ++k) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    differs = differs || x != c.uniform();
  }
  CHECK(differs);
  // Exponential mean.
  CounterRng e(2, RngStream::Chain, 0);
  double s = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) s += e.exponential(4.0);
  CHECK(std::abs(s / draws - 0.25) < 4.0 * 0.25 / std::sqrt(draws));
}

TEST_CASE("normal quantile reference values") {
  CHECK(standard_normal_quantile(0.5) == 0.0);
  CHECK(std::abs(standard_normal_quantile(0.975) - 1.959963984540054) < 1e-15);
  CHECK(std::abs(standard_normal_quantile(1e-10) + 6.361340902404056) < 1e-13);
  CHECK(standard_normal_quantile(0.3) == doctest::Approx(-standard_normal_quantile(0.7)).epsilon(1e-15));
}
