#include "vito/random_fields.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "fftw_plan.hpp"
#include "vito/error.hpp"

namespace vito {

void GrfSpec::validate() const {
  if (!(tau > 0.0)) throw InvalidArgument("GRF tau must be positive");
  if (!(alpha > 0.0)) throw InvalidArgument("GRF alpha must be positive");
  if (!(scale >= 0.0)) throw InvalidArgument("GRF scale must be nonnegative");
}

void BumpSpec::validate() const {
  if (count < 0) throw InvalidArgument("bump count must be nonnegative");
  if (!(amp_low <= amp_high)) throw InvalidArgument("bump amplitude range is empty");
  if (!(width > 0.0)) throw InvalidArgument("bump width must be positive");
}

double grf_mode_variance(const Mesh2D& mesh, const GrfSpec& spec, int k1, int k2) {
  constexpr double pi = std::numbers::pi;
  // Periodic: exp(2*pi*i*k.x/L); bounded: cos(pi*k1*x/L) cos(pi*k2*y/L).
  const double base = spec.periodic ? 2.0 * pi : pi;
  const double wx = base * k1 / mesh.lx();
  const double wy = base * k2 / mesh.ly();
  const double lambda = wx * wx + wy * wy;
  return spec.scale * std::pow(lambda + spec.tau * spec.tau, -spec.alpha);
}

namespace {

Field2D sample_periodic(const Mesh2D& mesh, const GrfSpec& spec, Rng& rng) {
  const int nx = mesh.nx();
  const int ny = mesh.ny();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::complex<double>> coef(mesh.size());
  for (int p = 0; p < nx; ++p) {
    const int k1 = detail::wavenumber(p, nx);
    for (int q = 0; q < ny; ++q) {
      const int k2 = detail::wavenumber(q, ny);
      const double sd = std::sqrt(grf_mode_variance(mesh, spec, k1, k2));
      const double re = normal(rng);
      const double im = normal(rng);
      coef[static_cast<std::size_t>(p) * ny + q] = sd * std::complex<double>(re, im);
    }
  }
  // Real part of the unnormalized inverse DFT: every real orthonormal
  // (cos/sin) mode then carries exactly the prescribed variance.
  std::vector<std::complex<double>> phys(mesh.size());
  const auto plan = detail::plan_dft_2d(nx, ny, coef.data(), phys.data(), FFTW_BACKWARD);
  plan.execute();
  Field2D out(mesh);
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = phys[i].real();
  return out;
}

Field2D sample_cosine(const Mesh2D& mesh, const GrfSpec& spec, Rng& rng) {
  const int nx = mesh.nx();
  const int ny = mesh.ny();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> coef(mesh.size());
  for (int p = 0; p < nx; ++p) {
    // REDFT00 counts interior inputs twice; halve them so the transform
    // evaluates sum_k c_k cos(pi k i / (n-1)) exactly.
    const double wx = (p == 0 || p == nx - 1) ? 1.0 : 0.5;
    for (int q = 0; q < ny; ++q) {
      const double wy = (q == 0 || q == ny - 1) ? 1.0 : 0.5;
      const double sd = std::sqrt(grf_mode_variance(mesh, spec, p, q));
      coef[static_cast<std::size_t>(p) * ny + q] = wx * wy * sd * normal(rng);
    }
  }
  Field2D out(mesh);
  const auto plan = detail::plan_dct1_2d(nx, ny, coef.data(), out.storage().data());
  plan.execute();
  return out;
}

}  // namespace

Field2D sample_grf(const Mesh2D& mesh, const GrfSpec& spec, Rng& rng) {
  spec.validate();
  if (!mesh.square()) throw InvalidArgument("GRF sampling needs a square mesh");
  if (spec.periodic != mesh.periodic())
    throw InvalidArgument("GRF eigenbasis (periodic=" + std::to_string(spec.periodic) +
                          ") does not match the mesh kind");
  return spec.periodic ? sample_periodic(mesh, spec, rng) : sample_cosine(mesh, spec, rng);
}

Field2D binarize(const Field2D& field, double hi, double lo) {
  Field2D out(field.mesh());
  auto src = field.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < 0.0 ? lo : hi;
  return out;
}

Field2D gaussian_bumps(const Mesh2D& mesh, const BumpSpec& spec, Rng& rng) {
  spec.validate();
  Field2D out(mesh);
  std::uniform_int_distribution<int> ix(0, mesh.nx() - 1);
  std::uniform_int_distribution<int> iy(0, mesh.ny() - 1);
  std::uniform_real_distribution<double> amp(spec.amp_low, spec.amp_high);
  const double inv2w2 = 1.0 / (2.0 * spec.width * spec.width);
  for (int b = 0; b < spec.count; ++b) {
    const double x0 = mesh.x(ix(rng));
    const double y0 = mesh.y(iy(rng));
    const double a = spec.amp_low == spec.amp_high ? spec.amp_low : amp(rng);
    for (int i = 0; i < mesh.nx(); ++i) {
      const double ddx = mesh.x(i) - x0;
      for (int j = 0; j < mesh.ny(); ++j) {
        const double ddy = mesh.y(j) - y0;
        out(i, j) += a * std::exp(-(ddx * ddx + ddy * ddy) * inv2w2);
      }
    }
  }
  return out;
}

}  // namespace vito
