#include <cmath>
#include <numbers>

#include "doctest.h"
#include "vito/error.hpp"
#include "vito/random_fields.hpp"
#include "vito/solvers.hpp"

using namespace vito;

namespace {

constexpr double kPi = std::numbers::pi;

double standing_wave_error(int n) {
  const Mesh2D m(n, n, kPi, kPi);
  Field2D u0(m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) u0(i, j) = std::sin(m.x(i)) * std::sin(m.y(j));
  const Field2D c(m, 1500.0);
  WaveSpec spec;
  const auto u = solve_wave(u0, c, spec);
  // Separation of variables: u = sin x sin y cos(sqrt(2) c t).
  const double factor = std::cos(std::sqrt(2.0) * 1500.0 * spec.T);
  double err = 0.0, peak = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double exact = factor * u0(i, j);
      err = std::max(err, std::abs(u(i, j) - exact));
      peak = std::max(peak, std::abs(exact));
    }
  return err / peak;
}

double darcy_manufactured_error(int n) {
  const Mesh2D m = Mesh2D::unit_square(n);
  Field2D f(m), exact(m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      exact(i, j) = std::sin(kPi * m.x(i)) * std::sin(kPi * m.y(j));
      f(i, j) = 2.0 * kPi * kPi * exact(i, j);
    }
  const auto h = solve_darcy(Field2D(m, 1.0), f);
  double err = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) err = std::max(err, std::abs(h(i, j) - exact(i, j)));
  return err;
}

}  // namespace

TEST_CASE("wave: zero initial state stays at rest") {
  const Mesh2D m(32, 32, kPi, kPi);
  const auto u = solve_wave(Field2D(m), wave_speed(m, 1500.0), WaveSpec{});
  for (double v : u.values()) CHECK(v == 0.0);
}

TEST_CASE("wave: step count for the reference configuration") {
  const Mesh2D m(128, 128, kPi, kPi);
  // dt_max = 0.5 dx / (sqrt 2 * 1600) -> about 180 steps for T = 1e-3.
  const int steps = wave_steps(m, 1600.0, WaveSpec{});
  CHECK(steps >= 170);
  CHECK(steps <= 190);
}

TEST_CASE("wave: standing mode matches the analytic solution") {
  CHECK(std::cos(std::sqrt(2.0) * 1.5) == doctest::Approx(-0.5225).epsilon(1e-3));
  const double e128 = standing_wave_error(128);
  CHECK(e128 <= 1e-3);
  const double e255 = standing_wave_error(255);
  const double ratio = e128 / e255;
  MESSAGE("wave error 128: " << e128 << "  255: " << e255 << "  ratio " << ratio);
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("wave: linearity and bounded energy") {
  const Mesh2D m(48, 48, kPi, kPi);
  Rng rng(3);
  auto u0 = gaussian_bumps(m, BumpSpec{2, -1.0, 1.0, 0.05 * kPi}, rng);
  const auto c = wave_speed(m, 1450.0);
  WaveSpec spec;
  spec.T = 5e-3;
  const auto u = solve_wave(u0, c, spec);
  Field2D scaled = u0;
  for (auto& v : scaled.storage()) v *= -2.5;
  const auto us = solve_wave(scaled, c, spec);
  for (std::size_t k = 0; k < u.size(); ++k) CHECK(us.values()[k] == doctest::Approx(-2.5 * u.values()[k]).epsilon(1e-12));

  // Leapfrog invariant for u_tt = c^2 Lap u, weighted by 1/c^2 in the kinetic part.
  double e_first = -1.0, e_max = 0.0, e_min = 1e300;
  const double rdx2 = 1.0 / (m.dx() * m.dx());
  solve_wave(u0, c, spec, [&](int step, const Field2D& prev, const Field2D& cur, double dt) {
    if (step < 2) return;
    double kin = 0.0, pot = 0.0;
    for (int i = 1; i < m.nx() - 1; ++i)
      for (int j = 1; j < m.ny() - 1; ++j) {
        const double v = (cur(i, j) - prev(i, j)) / dt;
        kin += 0.5 * v * v / (c(i, j) * c(i, j));
      }
    for (int i = 0; i < m.nx() - 1; ++i)
      for (int j = 0; j < m.ny() - 1; ++j) {
        pot += 0.5 * rdx2 * (cur(i + 1, j) - cur(i, j)) * (prev(i + 1, j) - prev(i, j));
        pot += 0.5 * rdx2 * (cur(i, j + 1) - cur(i, j)) * (prev(i, j + 1) - prev(i, j));
      }
    const double e = kin + pot;
    if (e_first < 0.0) e_first = e;
    e_max = std::max(e_max, e);
    e_min = std::min(e_min, e);
  });
  CHECK(e_first > 0.0);
  CHECK(e_max <= 1.01 * e_first);
  CHECK(e_min >= 0.99 * e_first);
}

TEST_CASE("wave: mismatched meshes are rejected") {
  CHECK_THROWS_AS(solve_wave(Field2D(Mesh2D(8, 8, 1.0, 1.0)), Field2D(Mesh2D(9, 9, 1.0, 1.0)), WaveSpec{}),
                  InvalidArgument);
}

TEST_CASE("ns: rest state stays at rest without forcing") {
  const Mesh2D m(32, 32, 1.0, 1.0, true);
  NsSpec spec;
  spec.forcing = false;
  spec.T = 0.1;
  const auto w = solve_navier_stokes(Field2D(m), spec);
  for (double v : w.values()) CHECK(v == 0.0);
}

TEST_CASE("ns: shear mode decays at the exact viscous rate") {
  const Mesh2D m(64, 64, 1.0, 1.0, true);
  Field2D w0(m);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) w0(i, j) = std::sin(2.0 * kPi * m.x(i));
  NsSpec spec;
  spec.forcing = false;
  const auto w = solve_navier_stokes(w0, spec);
  const double decay = std::exp(-4.0 * kPi * kPi * 1e-3);
  CHECK(decay == doctest::Approx(0.9613).epsilon(1e-4));
  double err = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) err = std::max(err, std::abs(w.values()[k] - decay * w0.values()[k]));
  CHECK(err / decay <= 1e-4);
}

TEST_CASE("ns: velocity divergence and mean vorticity") {
  const Mesh2D m(64, 64, 1.0, 1.0, true);
  Rng rng(21);
  auto w0 = sample_grf(m, GrfSpec::navier_stokes(), rng);
  for (auto& v : w0.storage()) v += 0.37;
  const auto [u, v] = ns_velocity(w0);
  CHECK(spectral_divergence(u, v) <= 1e-10);

  const auto mean = [](const Field2D& f) {
    double s = 0.0;
    for (double x : f.values()) s += x;
    return s / f.size();
  };
  NsSpec spec;
  spec.T = 1.0;
  const auto w = solve_navier_stokes(w0, spec);
  CHECK(std::abs(mean(w) - mean(w0)) <= 1e-10);
  CHECK(w.all_finite());
  const auto [u1, v1] = ns_velocity(w);
  CHECK(spectral_divergence(u1, v1) <= 1e-10);
}

TEST_CASE("ns: bounded or non-square meshes are rejected") {
  CHECK_THROWS_AS(solve_navier_stokes(Field2D(Mesh2D(16, 16, 1.0, 1.0)), NsSpec{}), InvalidArgument);
  CHECK_THROWS_AS(solve_navier_stokes(Field2D(Mesh2D(16, 8, 1.0, 1.0, true)), NsSpec{}), InvalidArgument);
}

TEST_CASE("darcy: zero forcing gives zero pressure") {
  const Mesh2D m = Mesh2D::unit_square(32);
  const auto h = solve_darcy(Field2D(m, 3.0), Field2D(m, 0.0));
  for (double v : h.values()) CHECK(v == 0.0);
}

TEST_CASE("darcy: manufactured solution converges at second order") {
  const double e128 = darcy_manufactured_error(128);
  CHECK(e128 <= 5e-4);
  const double e255 = darcy_manufactured_error(255);
  MESSAGE("darcy error 128: " << e128 << "  255: " << e255);
  CHECK(e128 / e255 >= 3.5);
  CHECK(e128 / e255 <= 4.5);
}

TEST_CASE("darcy: constant K scales the solution by 1/K") {
  const Mesh2D m = Mesh2D::unit_square(40);
  const auto h1 = solve_darcy(Field2D(m, 1.0), DarcySpec{40, 1.0});
  const auto h4 = solve_darcy(Field2D(m, 4.0), DarcySpec{40, 1.0});
  for (std::size_t k = 0; k < h1.size(); ++k) CHECK(h4.values()[k] == doctest::Approx(h1.values()[k] / 4.0).epsilon(1e-10));
}

TEST_CASE("darcy: maximum principle over binarized coefficients") {
  const Mesh2D m = Mesh2D::unit_square(64);
  for (int s = 0; s < 20; ++s) {
    auto rng = derive_stream(13, s, stream::kSample);
    const auto K = binarize(sample_grf(m, GrfSpec::darcy(), rng), 12.0, 3.0);
    const auto h = solve_darcy(K, DarcySpec{64, 1.0});
    CHECK(h.min() >= 0.0);
  }
}

TEST_CASE("darcy: invalid coefficients") {
  const Mesh2D m = Mesh2D::unit_square(16);
  Field2D K(m, 1.0);
  K(3, 3) = 0.0;
  CHECK_THROWS_AS(solve_darcy(K, DarcySpec{16, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(solve_darcy(Field2D(m, 1.0), DarcySpec{32, 1.0}), InvalidArgument);
}
