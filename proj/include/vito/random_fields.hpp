#pragma once

#include <cmath>

#include "vito/mesh.hpp"
#include "vito/rng.hpp"

namespace vito {

/// Gaussian random field law N(0, scale * (-Laplacian + tau^2 I)^(-alpha)).
///
/// `periodic` selects the complex-exponential eigenbasis on a periodic mesh;
/// otherwise the cosine (Neumann) eigenbasis on a bounded mesh is used.
struct GrfSpec {
  double tau = 3.0;
  double alpha = 2.0;
  double scale = 1.0;
  bool periodic = false;

  void validate() const;

  friend bool operator==(const GrfSpec&, const GrfSpec&) = default;

  /// Navier-Stokes initial vorticity law.
  static GrfSpec navier_stokes() { return {7.0, 2.5, std::pow(7.0, 1.5), true}; }
  /// Darcy permeability law (before binarization).
  static GrfSpec darcy() { return {3.0, 2.0, 1.0, false}; }
};

/// Gaussian sources with uniformly drawn grid-index centers and amplitudes.
struct BumpSpec {
  int count = 2;
  double amp_low = -1.0;
  double amp_high = 1.0;
  double width = 0.05;

  void validate() const;

  friend bool operator==(const BumpSpec&, const BumpSpec&) = default;
};

/// Variance of the coefficient of eigenmode (k1, k2): scale * (lambda + tau^2)^(-alpha).
double grf_mode_variance(const Mesh2D& mesh, const GrfSpec& spec, int k1, int k2);

/// One realization. Each eigenmode coefficient is an independent zero-mean
/// Gaussian with variance grf_mode_variance(); synthesis uses a fast transform
/// (complex FFT for periodic meshes, DCT-I for bounded ones).
Field2D sample_grf(const Mesh2D& mesh, const GrfSpec& spec, Rng& rng);

/// value > 0 -> hi, value < 0 -> lo, value == 0 -> hi.
Field2D binarize(const Field2D& field, double hi, double lo);

Field2D gaussian_bumps(const Mesh2D& mesh, const BumpSpec& spec, Rng& rng);

}  // namespace vito
