#pragma once

#include <functional>
#include <numbers>
#include <utility>

#include "vito/mesh.hpp"

namespace vito {

// ---------------------------------------------------------------------------
// Acoustic wave equation u_tt = c^2 (u_xx + u_yy) on (0,L)^2, u = 0 on walls.

struct WaveSpec {
  double L = std::numbers::pi;
  double T = 1e-3;
  double c0_low = 1300.0;
  double c0_high = 1600.0;
  double cfl_safety = 0.5;

  void validate() const;

  friend bool operator==(const WaveSpec&, const WaveSpec&) = default;
};

/// Called after every leapfrog step with (step, u^{n-1}, u^n, dt).
using WaveObserver = std::function<void(int, const Field2D&, const Field2D&, double)>;

/// Wave speed c0 * sin(x) * sin(y) on the mesh.
Field2D wave_speed(const Mesh2D& mesh, double c0);

/// Number of leapfrog steps used for a given speed field.
int wave_steps(const Mesh2D& mesh, double max_speed, const WaveSpec& spec);

/// u(T) from the second-order leapfrog scheme with v0 = 0, f = 0. Boundary
/// values of u0 are overwritten with the homogeneous Dirichlet condition.
Field2D solve_wave(const Field2D& u0, const Field2D& c, const WaveSpec& spec, const WaveObserver& observer = {});

// ---------------------------------------------------------------------------
// Incompressible Navier-Stokes in vorticity form on the periodic unit square.

struct NsSpec {
  double nu = 1e-3;
  double T = 1.0;
  double dt = 1e-3;
  bool forcing = true;

  void validate() const;

  friend bool operator==(const NsSpec&, const NsSpec&) = default;
};

/// 0.1 * (sin(2 pi (x+y)) + cos(2 pi (x+y))).
Field2D ns_forcing(const Mesh2D& mesh);

/// omega(T): pseudo-spectral, Crank-Nicolson diffusion, explicit advection and
/// forcing, 2/3-rule dealiasing of the advection term.
Field2D solve_navier_stokes(const Field2D& omega0, const NsSpec& spec);

/// Velocity (u, v) = (d psi/dy, -d psi/dx) with Laplacian(psi) = -omega.
std::pair<Field2D, Field2D> ns_velocity(const Field2D& omega);

/// Max-norm of the spectrally differentiated divergence du/dx + dv/dy.
double spectral_divergence(const Field2D& u, const Field2D& v);

// ---------------------------------------------------------------------------
// Steady Darcy flow -div(K grad h) = f, h = 0 on the boundary.

struct DarcySpec {
  int n = 128;
  double forcing = 1.0;

  void validate() const;

  friend bool operator==(const DarcySpec&, const DarcySpec&) = default;
};

/// Five-point flux scheme with harmonic face averaging of K; the linear
/// system is solved to relative residual <= 1e-10.
Field2D solve_darcy(const Field2D& K, const Field2D& f);
Field2D solve_darcy(const Field2D& K, const DarcySpec& spec);

}  // namespace vito
