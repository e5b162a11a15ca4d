#include "vito/solvers.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include "fftw_plan.hpp"
#include "vito/error.hpp"

namespace vito {

namespace {
constexpr double kPi = std::numbers::pi;
using cplx = std::complex<double>;
}  // namespace

// ---------------------------------------------------------------------------
// Wave

void WaveSpec::validate() const {
  if (!(L > 0.0)) throw InvalidArgument("wave: L must be positive");
  if (!(T > 0.0)) throw InvalidArgument("wave: T must be positive");
  if (!(cfl_safety > 0.0 && cfl_safety < 1.0)) throw InvalidArgument("wave: cfl_safety must lie in (0,1)");
  if (!(c0_low <= c0_high)) throw InvalidArgument("wave: c0 range is empty");
}

Field2D wave_speed(const Mesh2D& mesh, double c0) {
  Field2D c(mesh);
  for (int i = 0; i < mesh.nx(); ++i)
    for (int j = 0; j < mesh.ny(); ++j) c(i, j) = c0 * std::sin(mesh.x(i)) * std::sin(mesh.y(j));
  return c;
}

int wave_steps(const Mesh2D& mesh, double max_speed, const WaveSpec& spec) {
  if (!(max_speed > 0.0)) return 0;
  const double inv = std::sqrt(1.0 / (mesh.dx() * mesh.dx()) + 1.0 / (mesh.dy() * mesh.dy()));
  // For dx == dy this is cfl_safety * dx / (sqrt(2) * max c).
  const double dt_max = spec.cfl_safety / (max_speed * inv);
  return static_cast<int>(std::ceil(spec.T / dt_max - 1e-12));
}

Field2D solve_wave(const Field2D& u0, const Field2D& c, const WaveSpec& spec, const WaveObserver& observer) {
  spec.validate();
  if (!(u0.mesh() == c.mesh())) throw InvalidArgument("wave: u0 and c live on different meshes");
  const Mesh2D& mesh = u0.mesh();
  if (mesh.periodic()) throw InvalidArgument("wave: needs a bounded mesh");
  const int nx = mesh.nx();
  const int ny = mesh.ny();

  std::vector<double> cur(u0.values().begin(), u0.values().end());
  for (int i = 0; i < nx; ++i) {
    cur[static_cast<std::size_t>(i) * ny] = 0.0;
    cur[static_cast<std::size_t>(i) * ny + ny - 1] = 0.0;
  }
  for (int j = 0; j < ny; ++j) {
    cur[j] = 0.0;
    cur[static_cast<std::size_t>(nx - 1) * ny + j] = 0.0;
  }

  double cmax = 0.0;
  for (double v : c.values()) cmax = std::max(cmax, std::abs(v));
  const int steps = wave_steps(mesh, cmax, spec);
  if (steps == 0) return Field2D(mesh, std::move(cur));
  const double dt = spec.T / steps;

  // coef = (c dt)^2, precomputed per node.
  std::vector<double> coef(mesh.size());
  for (std::size_t k = 0; k < coef.size(); ++k) coef[k] = c.values()[k] * c.values()[k] * dt * dt;
  const double rdx2 = 1.0 / (mesh.dx() * mesh.dx());
  const double rdy2 = 1.0 / (mesh.dy() * mesh.dy());

  std::vector<double> prev(cur);
  std::vector<double> next(mesh.size(), 0.0);
  for (int n = 1; n <= steps; ++n) {
    // First step uses v0 = 0: u^1 = u^0 + dt^2/2 c^2 Lap u^0.
    const double a = n == 1 ? 0.5 : 1.0;
#pragma omp parallel for schedule(static)
    for (int i = 1; i < nx - 1; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * ny;
      for (int j = 1; j < ny - 1; ++j) {
        const std::size_t k = row + j;
        const double lap = (cur[k + ny] - 2.0 * cur[k] + cur[k - ny]) * rdx2 +
                           (cur[k + 1] - 2.0 * cur[k] + cur[k - 1]) * rdy2;
        next[k] = n == 1 ? cur[k] + a * coef[k] * lap : 2.0 * cur[k] - prev[k] + coef[k] * lap;
      }
    }
    std::swap(prev, cur);
    std::swap(cur, next);
    if (observer) observer(n, Field2D(mesh, prev), Field2D(mesh, cur), dt);
  }
  return Field2D(mesh, std::move(cur));
}

// ---------------------------------------------------------------------------
// Navier-Stokes

void NsSpec::validate() const {
  if (!(nu > 0.0)) throw InvalidArgument("navier_stokes: nu must be positive");
  if (!(T > 0.0)) throw InvalidArgument("navier_stokes: T must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("navier_stokes: dt must be positive");
}

Field2D ns_forcing(const Mesh2D& mesh) {
  Field2D f(mesh);
  for (int i = 0; i < mesh.nx(); ++i)
    for (int j = 0; j < mesh.ny(); ++j) {
      const double s = 2.0 * kPi * (mesh.x(i) + mesh.y(j));
      f(i, j) = 0.1 * (std::sin(s) + std::cos(s));
    }
  return f;
}

namespace {

void require_periodic_square(const Mesh2D& mesh, const char* who) {
  if (!mesh.periodic() || !mesh.square())
    throw InvalidArgument(std::string(who) + ": needs a periodic square mesh");
}

// Half-spectrum workspace for real fields on a periodic n x n mesh.
class Spectral {
 public:
  explicit Spectral(const Mesh2D& mesh)
      : n_(mesh.nx()),
        nh_(n_ / 2 + 1),
        real_(static_cast<std::size_t>(n_) * n_),
        spec_(static_cast<std::size_t>(n_) * nh_),
        fwd_(detail::plan_r2c_2d(n_, n_, real_.data(), spec_.data())),
        inv_(detail::plan_c2r_2d(n_, n_, spec_.data(), real_.data())),
        kx_(n_),
        ky_(nh_),
        kx_odd_(n_),
        ky_odd_(nh_) {
    const double base = 2.0 * kPi / mesh.lx();
    for (int p = 0; p < n_; ++p) {
      const int w = detail::wavenumber(p, n_);
      kx_[p] = base * w;
      // Odd derivatives of the Nyquist mode are zeroed.
      kx_odd_[p] = (n_ % 2 == 0 && p == n_ / 2) ? 0.0 : kx_[p];
    }
    for (int q = 0; q < nh_; ++q) {
      ky_[q] = base * q;
      ky_odd_[q] = (n_ % 2 == 0 && q == n_ / 2) ? 0.0 : ky_[q];
    }
  }

  int n() const { return n_; }
  int nh() const { return nh_; }
  std::size_t spec_size() const { return spec_.size(); }
  double kx(int p) const { return kx_[p]; }
  double ky(int q) const { return ky_[q]; }
  double kx_odd(int p) const { return kx_odd_[p]; }
  double ky_odd(int q) const { return ky_odd_[q]; }
  int abs_wx(int p) const { return std::abs(detail::wavenumber(p, n_)); }

  void forward(std::span<const double> in, std::vector<cplx>& out) {
    std::copy(in.begin(), in.end(), real_.begin());
    fwd_.execute();
    out.assign(spec_.begin(), spec_.end());
  }

  // Normalized inverse: returns the physical field whose forward transform is `in`.
  void inverse(const std::vector<cplx>& in, std::vector<double>& out) {
    std::copy(in.begin(), in.end(), spec_.begin());
    inv_.execute();
    const double norm = 1.0 / (static_cast<double>(n_) * n_);
    out.resize(real_.size());
    for (std::size_t k = 0; k < real_.size(); ++k) out[k] = real_[k] * norm;
  }

 private:
  int n_;
  int nh_;
  std::vector<double> real_;
  std::vector<cplx> spec_;
  detail::FftwPlan fwd_;
  detail::FftwPlan inv_;
  std::vector<double> kx_, ky_, kx_odd_, ky_odd_;
};

void velocity_hat(const Spectral& sp, const std::vector<cplx>& w_hat, std::vector<cplx>& u_hat,
                  std::vector<cplx>& v_hat) {
  u_hat.resize(w_hat.size());
  v_hat.resize(w_hat.size());
  const cplx I(0.0, 1.0);
  for (int p = 0; p < sp.n(); ++p)
    for (int q = 0; q < sp.nh(); ++q) {
      const std::size_t k = static_cast<std::size_t>(p) * sp.nh() + q;
      const double k2 = sp.kx(p) * sp.kx(p) + sp.ky(q) * sp.ky(q);
      const cplx psi = k2 > 0.0 ? w_hat[k] / k2 : cplx(0.0);
      u_hat[k] = I * sp.ky_odd(q) * psi;
      v_hat[k] = -I * sp.kx_odd(p) * psi;
    }
}

}  // namespace

Field2D solve_navier_stokes(const Field2D& omega0, const NsSpec& spec) {
  spec.validate();
  const Mesh2D& mesh = omega0.mesh();
  require_periodic_square(mesh, "navier_stokes");
  Spectral sp(mesh);
  const int n = sp.n();
  const int nh = sp.nh();
  const cplx I(0.0, 1.0);

  const int steps = static_cast<int>(std::ceil(spec.T / spec.dt - 1e-9));
  const double dt = spec.T / steps;

  std::vector<cplx> w_hat, f_hat(sp.spec_size(), cplx(0.0)), u_hat, v_hat, wx_hat(sp.spec_size()),
      wy_hat(sp.spec_size()), adv_hat;
  sp.forward(omega0.values(), w_hat);
  if (spec.forcing) sp.forward(ns_forcing(mesh).values(), f_hat);

  std::vector<double> u, v, wx, wy, adv(mesh.size());
  const double cut = n / 3.0;
  for (int step = 0; step < steps; ++step) {
    velocity_hat(sp, w_hat, u_hat, v_hat);
    for (int p = 0; p < n; ++p)
      for (int q = 0; q < nh; ++q) {
        const std::size_t k = static_cast<std::size_t>(p) * nh + q;
        wx_hat[k] = I * sp.kx_odd(p) * w_hat[k];
        wy_hat[k] = I * sp.ky_odd(q) * w_hat[k];
      }
    sp.inverse(u_hat, u);
    sp.inverse(v_hat, v);
    sp.inverse(wx_hat, wx);
    sp.inverse(wy_hat, wy);
    for (std::size_t k = 0; k < adv.size(); ++k) adv[k] = u[k] * wx[k] + v[k] * wy[k];
    sp.forward(adv, adv_hat);
    // The advection of a divergence-free flow has zero mean; drop its round-off.
    adv_hat[0] = 0.0;

    for (int p = 0; p < n; ++p) {
      const bool keep_x = sp.abs_wx(p) <= cut;
      for (int q = 0; q < nh; ++q) {
        const std::size_t k = static_cast<std::size_t>(p) * nh + q;
        const cplx a = (keep_x && q <= cut) ? adv_hat[k] : cplx(0.0);
        const double k2 = sp.kx(p) * sp.kx(p) + sp.ky(q) * sp.ky(q);
        const double h = 0.5 * dt * spec.nu * k2;
        w_hat[k] = (-dt * a + dt * f_hat[k] + (1.0 - h) * w_hat[k]) / (1.0 + h);
      }
    }
  }

  std::vector<double> w;
  sp.inverse(w_hat, w);
  return Field2D(mesh, std::move(w));
}

std::pair<Field2D, Field2D> ns_velocity(const Field2D& omega) {
  const Mesh2D& mesh = omega.mesh();
  require_periodic_square(mesh, "ns_velocity");
  Spectral sp(mesh);
  std::vector<cplx> w_hat, u_hat, v_hat;
  sp.forward(omega.values(), w_hat);
  velocity_hat(sp, w_hat, u_hat, v_hat);
  std::vector<double> u, v;
  sp.inverse(u_hat, u);
  sp.inverse(v_hat, v);
  return {Field2D(mesh, std::move(u)), Field2D(mesh, std::move(v))};
}

double spectral_divergence(const Field2D& u, const Field2D& v) {
  if (!(u.mesh() == v.mesh())) throw InvalidArgument("spectral_divergence: mesh mismatch");
  const Mesh2D& mesh = u.mesh();
  require_periodic_square(mesh, "spectral_divergence");
  Spectral sp(mesh);
  std::vector<cplx> u_hat, v_hat;
  sp.forward(u.values(), u_hat);
  sp.forward(v.values(), v_hat);
  const cplx I(0.0, 1.0);
  std::vector<cplx> d_hat(sp.spec_size());
  for (int p = 0; p < sp.n(); ++p)
    for (int q = 0; q < sp.nh(); ++q) {
      const std::size_t k = static_cast<std::size_t>(p) * sp.nh() + q;
      d_hat[k] = I * sp.kx_odd(p) * u_hat[k] + I * sp.ky_odd(q) * v_hat[k];
    }
  std::vector<double> d;
  sp.inverse(d_hat, d);
  double m = 0.0;
  for (double x : d) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------
// Darcy

void DarcySpec::validate() const {
  if (n < 8) throw InvalidArgument("darcy: n must be >= 8");
}

Field2D solve_darcy(const Field2D& K, const Field2D& f) {
  const Mesh2D& mesh = K.mesh();
  if (!(f.mesh() == mesh)) throw InvalidArgument("darcy: K and f live on different meshes");
  if (mesh.periodic()) throw InvalidArgument("darcy: needs a bounded mesh");
  for (double k : K.values())
    if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("darcy: K must be strictly positive and finite");

  const int nx = mesh.nx();
  const int ny = mesh.ny();
  Field2D h(mesh);
  if (nx < 3 || ny < 3) return h;
  const int mx = nx - 2;
  const int my = ny - 2;
  const auto idx = [my](int i, int j) { return (i - 1) * my + (j - 1); };
  const auto face = [](double a, double b) { return 2.0 * a * b / (a + b); };
  const double rdx2 = 1.0 / (mesh.dx() * mesh.dx());
  const double rdy2 = 1.0 / (mesh.dy() * mesh.dy());

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mx) * my * 5);
  Eigen::VectorXd rhs(mx * my);
  for (int i = 1; i <= mx; ++i)
    for (int j = 1; j <= my; ++j) {
      const int r = idx(i, j);
      const double kc = K(i, j);
      const double ke = face(kc, K(i + 1, j)) * rdx2;
      const double kw = face(kc, K(i - 1, j)) * rdx2;
      const double kn = face(kc, K(i, j + 1)) * rdy2;
      const double ks = face(kc, K(i, j - 1)) * rdy2;
      trip.emplace_back(r, r, ke + kw + kn + ks);
      if (i + 1 <= mx) trip.emplace_back(r, idx(i + 1, j), -ke);
      if (i - 1 >= 1) trip.emplace_back(r, idx(i - 1, j), -kw);
      if (j + 1 <= my) trip.emplace_back(r, idx(i, j + 1), -kn);
      if (j - 1 >= 1) trip.emplace_back(r, idx(i, j - 1), -ks);
      rhs[r] = f(i, j);
    }
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return h;

  Eigen::SparseMatrix<double> A(mx * my, mx * my);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(A);
  if (llt.info() != Eigen::Success) throw NumericError("darcy: Cholesky factorization failed");
  Eigen::VectorXd sol = llt.solve(rhs);
  double rel = (A * sol - rhs).norm() / rhs_norm;
  for (int it = 0; it < 3 && rel > 1e-10; ++it) {
    sol += llt.solve(rhs - A * sol);
    rel = (A * sol - rhs).norm() / rhs_norm;
  }
  if (!(rel <= 1e-10)) {
    std::ostringstream os;
    os << "darcy: linear solve did not converge, relative residual " << rel;
    throw NumericError(os.str());
  }
  for (int i = 1; i <= mx; ++i)
    for (int j = 1; j <= my; ++j) h(i, j) = sol[idx(i, j)];
  return h;
}

Field2D solve_darcy(const Field2D& K, const DarcySpec& spec) {
  spec.validate();
  if (K.nx() != spec.n || K.ny() != spec.n)
    throw InvalidArgument("darcy: K is " + std::to_string(K.nx()) + "x" + std::to_string(K.ny()) +
                          ", spec expects n = " + std::to_string(spec.n));
  return solve_darcy(K, Field2D(K.mesh(), spec.forcing));
}

}  // namespace vito
