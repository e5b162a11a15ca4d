#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vito {

/// Equispaced 2-D grid with origin at (0,0).
///
/// Bounded meshes include both endpoints: dx = lx / (nx - 1).
/// Periodic meshes omit the right endpoint (it duplicates the origin):
/// dx = lx / nx. In both cases point (i, j) sits at (i*dx, j*dy).
class Mesh2D {
 public:
  Mesh2D(int nx, int ny, double lx, double ly, bool periodic = false);

  static Mesh2D unit_square(int n) { return Mesh2D(n, n, 1.0, 1.0); }

  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }
  double lx() const noexcept { return lx_; }
  double ly() const noexcept { return ly_; }
  bool periodic() const noexcept { return periodic_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(nx_) * ny_; }

  double dx() const noexcept { return periodic_ ? lx_ / nx_ : lx_ / (nx_ - 1); }
  double dy() const noexcept { return periodic_ ? ly_ / ny_ : ly_ / (ny_ - 1); }
  double x(int i) const noexcept { return i * dx(); }
  double y(int j) const noexcept { return j * dy(); }

  bool square() const noexcept { return nx_ == ny_ && lx_ == ly_; }

  friend bool operator==(const Mesh2D&, const Mesh2D&) = default;

 private:
  int nx_;
  int ny_;
  double lx_;
  double ly_;
  bool periodic_;
};

/// Scalar field on a Mesh2D, row-major by x-index then y-index.
class Field2D {
 public:
  explicit Field2D(const Mesh2D& mesh, double fill = 0.0);
  Field2D(const Mesh2D& mesh, std::vector<double> values);

  const Mesh2D& mesh() const noexcept { return mesh_; }
  int nx() const noexcept { return mesh_.nx(); }
  int ny() const noexcept { return mesh_.ny(); }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(int i, int j) noexcept { return values_[static_cast<std::size_t>(i) * mesh_.ny() + j]; }
  double operator()(int i, int j) const noexcept {
    return values_[static_cast<std::size_t>(i) * mesh_.ny() + j];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }

  bool all_finite() const noexcept;
  double min() const;
  double max() const;

  friend bool operator==(const Field2D&, const Field2D&) = default;

 private:
  Mesh2D mesh_;
  std::vector<double> values_;
};

/// Coordinate channels fed to the network alongside the observed field.
struct GridEncoding {
  Field2D xmat;
  Field2D ymat;
};

GridEncoding grid_encoding(const Mesh2D& mesh);

/// Bilinear resampling over the same physical domain.
///
/// Bounded meshes use the corner-aligned convention (corners map to corners,
/// affine functions are reproduced exactly). Periodic meshes resample on the
/// torus, wrapping between the last and first points.
Field2D bilinear_resize(const Field2D& field, int target_nx, int target_ny);

/// Keep indices 0, stride, 2*stride, ... in both directions.
Field2D subsample(const Field2D& field, int stride);

/// Smallest integer >= n that is divisible by m.
int pad_to_multiple(int n, int m);

/// Side length after stride-r subsampling with nearest-integer rounding of n/r.
int rounded_side(int n, int r);

/// Stride-r subsample truncated to round(n/r) points per side, anchored at 0.
/// Used for variable-grid augmentation where n/r is not integral; the kept
/// points stay exactly equispaced.
Field2D subsample_rounded(const Field2D& field, int r);

}  // namespace vito
