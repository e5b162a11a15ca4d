#include "vito/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vito/error.hpp"

namespace vito {

Mesh2D::Mesh2D(int nx, int ny, double lx, double ly, bool periodic)
    : nx_(nx), ny_(ny), lx_(lx), ly_(ly), periodic_(periodic) {
  if (nx < 2 || ny < 2)
    throw InvalidArgument("mesh needs at least 2 points per side, got " + std::to_string(nx) + "x" +
                          std::to_string(ny));
  if (!(lx > 0.0) || !(ly > 0.0) || !std::isfinite(lx) || !std::isfinite(ly))
    throw InvalidArgument("mesh lengths must be positive and finite");
}

Field2D::Field2D(const Mesh2D& mesh, double fill) : mesh_(mesh), values_(mesh.size(), fill) {}

Field2D::Field2D(const Mesh2D& mesh, std::vector<double> values) : mesh_(mesh), values_(std::move(values)) {
  if (values_.size() != mesh_.size())
    throw InvalidArgument("field has " + std::to_string(values_.size()) + " values, mesh needs " +
                          std::to_string(mesh_.size()));
}

bool Field2D::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Field2D::min() const { return *std::min_element(values_.begin(), values_.end()); }
double Field2D::max() const { return *std::max_element(values_.begin(), values_.end()); }

GridEncoding grid_encoding(const Mesh2D& mesh) {
  GridEncoding g{Field2D(mesh), Field2D(mesh)};
  for (int i = 0; i < mesh.nx(); ++i) {
    for (int j = 0; j < mesh.ny(); ++j) {
      g.xmat(i, j) = mesh.x(i);
      g.ymat(i, j) = mesh.y(j);
    }
  }
  return g;
}

namespace {

// Source position of target index `i` as (lower index, upper index, weight).
// Exact rational arithmetic keeps corners and the identity case bit-exact.
struct Tap {
  int lo;
  int hi;
  double t;
};

std::vector<Tap> taps(int n, int m, bool periodic) {
  std::vector<Tap> out(m);
  for (int i = 0; i < m; ++i) {
    if (periodic) {
      const long num = static_cast<long>(i) * n;
      const int lo = static_cast<int>(num / m);
      out[i] = {lo, (lo + 1) % n, static_cast<double>(num % m) / m};
    } else {
      const long num = static_cast<long>(i) * (n - 1);
      const int lo = static_cast<int>(num / (m - 1));
      const double t = static_cast<double>(num % (m - 1)) / (m - 1);
      out[i] = {lo, std::min(lo + 1, n - 1), t};
    }
  }
  return out;
}

}  // namespace

Field2D bilinear_resize(const Field2D& field, int target_nx, int target_ny) {
  if (target_nx < 2 || target_ny < 2)
    throw InvalidArgument("bilinear_resize target must be at least 2x2, got " + std::to_string(target_nx) + "x" +
                          std::to_string(target_ny));
  const Mesh2D& src = field.mesh();
  if (target_nx == src.nx() && target_ny == src.ny()) return field;

  const Mesh2D dst(target_nx, target_ny, src.lx(), src.ly(), src.periodic());
  const auto tx = taps(src.nx(), target_nx, src.periodic());
  const auto ty = taps(src.ny(), target_ny, src.periodic());
  Field2D out(dst);
  for (int i = 0; i < target_nx; ++i) {
    const Tap& a = tx[i];
    for (int j = 0; j < target_ny; ++j) {
      const Tap& b = ty[j];
      const double lo = (1.0 - b.t) * field(a.lo, b.lo) + b.t * field(a.lo, b.hi);
      const double hi = (1.0 - b.t) * field(a.hi, b.lo) + b.t * field(a.hi, b.hi);
      out(i, j) = (1.0 - a.t) * lo + a.t * hi;
    }
  }
  return out;
}

namespace {

Field2D strided_copy(const Field2D& field, int stride, int mx, int my) {
  const Mesh2D& src = field.mesh();
  if (mx < 2 || my < 2)
    throw InvalidArgument("subsampling " + std::to_string(src.nx()) + "x" + std::to_string(src.ny()) +
                          " by stride " + std::to_string(stride) + " leaves fewer than 2 points");
  const bool keeps_period =
      src.periodic() && src.nx() % stride == 0 && src.ny() % stride == 0 && mx == src.nx() / stride &&
      my == src.ny() / stride;
  const Mesh2D dst = keeps_period ? Mesh2D(mx, my, src.lx(), src.ly(), true)
                                  : Mesh2D(mx, my, (mx - 1) * stride * src.dx(), (my - 1) * stride * src.dy());
  Field2D out(dst);
  for (int i = 0; i < mx; ++i)
    for (int j = 0; j < my; ++j) out(i, j) = field(i * stride, j * stride);
  return out;
}

}  // namespace

Field2D subsample(const Field2D& field, int stride) {
  if (stride < 1) throw InvalidArgument("subsample stride must be >= 1");
  if (stride == 1) return field;
  const int mx = (field.nx() - 1) / stride + 1;
  const int my = (field.ny() - 1) / stride + 1;
  return strided_copy(field, stride, mx, my);
}

int pad_to_multiple(int n, int m) {
  if (n < 1 || m < 1) throw InvalidArgument("pad_to_multiple needs n >= 1 and m >= 1");
  return (n + m - 1) / m * m;
}

int rounded_side(int n, int r) {
  if (r < 1) throw InvalidArgument("subsampling factor must be >= 1");
  return (2 * n + r) / (2 * r);
}

Field2D subsample_rounded(const Field2D& field, int r) {
  if (r < 1) throw InvalidArgument("subsampling factor must be >= 1");
  if (r == 1) return field;
  return strided_copy(field, r, rounded_side(field.nx(), r), rounded_side(field.ny(), r));
}

}  // namespace vito
