#include <cmath>
#include <random>

#include "doctest.h"
#include "vito/error.hpp"
#include "vito/mesh.hpp"

using namespace vito;

namespace {

Field2D random_field(const Mesh2D& m, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 7.0);
  Field2D f(m);
  for (auto& v : f.values()) v = u(rng);
  return f;
}

}  // namespace

TEST_CASE("mesh invariants") {
  CHECK_THROWS_AS(Mesh2D(2, 1, 1.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(Mesh2D(3, 3, 0.0, 1.0), InvalidArgument);
  const Mesh2D m(5, 3, 2.0, 1.0);
  CHECK(m.dx() == doctest::Approx(0.5));
  CHECK(m.dy() == doctest::Approx(0.5));
  CHECK(m.x(4) == doctest::Approx(2.0));
  const Mesh2D p(4, 4, 1.0, 1.0, true);
  CHECK(p.dx() == doctest::Approx(0.25));
  CHECK_THROWS_AS(Field2D(m, std::vector<double>(3)), InvalidArgument);
}

TEST_CASE("grid encoding on the unit square") {
  const auto g = grid_encoding(Mesh2D(3, 3, 1.0, 1.0));
  const double rows[3] = {0.0, 0.5, 1.0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(g.xmat(i, j) == rows[i]);
      CHECK(g.ymat(i, j) == g.xmat(j, i));
    }
}

TEST_CASE("grid encoding on a 2x3 rectangle") {
  const auto g = grid_encoding(Mesh2D(2, 3, 2.0, 1.0));
  for (int j = 0; j < 3; ++j) {
    CHECK(g.xmat(0, j) == 0.0);
    CHECK(g.xmat(1, j) == 2.0);
  }
  for (int i = 0; i < 2; ++i) {
    CHECK(g.ymat(i, 0) == 0.0);
    CHECK(g.ymat(i, 1) == 0.5);
    CHECK(g.ymat(i, 2) == 1.0);
  }
}

TEST_CASE("grid encoding matches i*dx and j*dy") {
  const Mesh2D m(7, 11, 3.0, 5.0);
  const auto g = grid_encoding(m);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 11; ++j) {
      CHECK(g.xmat(i, j) == i * m.dx());
      CHECK(g.ymat(i, j) == j * m.dy());
    }
}

TEST_CASE("bilinear resize basics") {
  const Mesh2D m(6, 9, 1.0, 2.0);
  const auto f = random_field(m, 1);
  CHECK(bilinear_resize(f, 6, 9) == f);
  CHECK_THROWS_AS(bilinear_resize(f, 1, 4), InvalidArgument);

  const Field2D c(m, 5.0);
  for (auto [a, b] : {std::pair{2, 2}, {17, 3}, {40, 41}}) {
    const auto r = bilinear_resize(c, a, b);
    for (double v : r.values()) CHECK(v == doctest::Approx(5.0).epsilon(1e-15));
  }
}

TEST_CASE("bilinear resize of a 3-point ramp to 5 points") {
  const Mesh2D m(3, 2, 1.0, 1.0);
  Field2D f(m);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) f(i, j) = m.x(i);
  const auto r = bilinear_resize(f, 5, 2);
  const double expect[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (int i = 0; i < 5; ++i) CHECK(r(i, 0) == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("bilinear resize property: bounds, corners, affine exactness") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> side(2, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const Mesh2D m(side(rng), side(rng), 1.0 + trial * 0.1, 2.0);
    const auto f = random_field(m, trial);
    const int tx = side(rng), ty = side(rng);
    const auto r = bilinear_resize(f, tx, ty);
    CHECK(r.min() >= f.min());
    CHECK(r.max() <= f.max());
    CHECK(r(0, 0) == f(0, 0));
    CHECK(r(tx - 1, ty - 1) == f(m.nx() - 1, m.ny() - 1));
    CHECK(r(tx - 1, 0) == f(m.nx() - 1, 0));

    Field2D a(m);
    for (int i = 0; i < m.nx(); ++i)
      for (int j = 0; j < m.ny(); ++j) a(i, j) = 1.5 - 2.0 * m.x(i) + 0.75 * m.y(j);
    const auto ra = bilinear_resize(a, tx, ty);
    for (int i = 0; i < tx; ++i)
      for (int j = 0; j < ty; ++j) {
        const double exact = 1.5 - 2.0 * ra.mesh().x(i) + 0.75 * ra.mesh().y(j);
        CHECK(std::abs(ra(i, j) - exact) <= 1e-12 * (1.0 + std::abs(exact)));
      }
  }
}

TEST_CASE("periodic resize wraps and preserves constants") {
  const Mesh2D m(8, 8, 1.0, 1.0, true);
  const auto f = random_field(m, 3);
  const auto up = bilinear_resize(f, 16, 16);
  CHECK(up.mesh().periodic());
  // Even indices of the 2x grid coincide with the source points.
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) CHECK(up(2 * i, 2 * j) == f(i, j));
  // Last odd index interpolates between the last point and the wrapped first one.
  CHECK(up(15, 0) == doctest::Approx(0.5 * (f(7, 0) + f(0, 0))));
}

TEST_CASE("subsample") {
  const Mesh2D m(5, 5, 1.0, 1.0);
  const auto f = random_field(m, 5);
  CHECK(subsample(f, 1) == f);
  const auto s = subsample(f, 2);
  REQUIRE(s.nx() == 3);
  REQUIRE(s.ny() == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(s(i, j) == f(2 * i, 2 * j));
  CHECK(s.mesh().lx() == doctest::Approx(1.0));
  CHECK_THROWS_AS(subsample(f, 5), InvalidArgument);
  CHECK_THROWS_AS(subsample(f, 0), InvalidArgument);
  CHECK(subsample(random_field(Mesh2D(10, 10, 1.0, 1.0), 1), 3).nx() == 4);
}

TEST_CASE("subsample composition and coordinate subset") {
  for (int n : {9, 13, 17, 33}) {
    const Mesh2D m(n, n, 2.0, 3.0);
    const auto f = random_field(m, n);
    const auto a = subsample(subsample(f, 2), 2);
    const auto b = subsample(f, 4);
    CHECK(a.values().size() == b.values().size());
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    CHECK(a.mesh().dx() == doctest::Approx(b.mesh().dx()));

    const auto gs = grid_encoding(b.mesh());
    const auto g = grid_encoding(m);
    for (int i = 0; i < b.nx(); ++i)
      for (int j = 0; j < b.ny(); ++j) {
        CHECK(gs.xmat(i, j) == doctest::Approx(g.xmat(4 * i, 4 * j)));
        CHECK(gs.ymat(i, j) == doctest::Approx(g.ymat(4 * i, 4 * j)));
      }
  }
}

TEST_CASE("periodic subsample keeps the period when divisible") {
  const Mesh2D m(16, 16, 1.0, 1.0, true);
  const auto s = subsample(Field2D(m, 1.0), 4);
  CHECK(s.mesh().periodic());
  CHECK(s.nx() == 4);
  CHECK(s.mesh().dx() == doctest::Approx(0.25));
}

TEST_CASE("pad_to_multiple and rounded sides") {
  CHECK(pad_to_multiple(128, 16) == 128);
  CHECK(pad_to_multiple(100, 16) == 112);
  CHECK(pad_to_multiple(17, 16) == 32);
  CHECK(pad_to_multiple(1, 16) == 16);
  CHECK_THROWS_AS(pad_to_multiple(0, 16), InvalidArgument);

  const int expected[9] = {512, 256, 171, 128, 102, 85, 73, 64, 57};
  for (int r = 1; r <= 9; ++r) CHECK(rounded_side(512, r) == expected[r - 1]);

  const Mesh2D m(512, 512, 1.0, 1.0);
  const Field2D f(m, 2.0);
  for (int r = 1; r <= 9; ++r) {
    const auto s = subsample_rounded(f, r);
    CHECK(s.nx() == expected[r - 1]);
    CHECK(s.mesh().dx() == doctest::Approx(r * m.dx()));
  }
}
