#pragma once

// RAII wrappers over FFTW plans. The FFTW planner is not thread-safe, so plan
// creation and destruction go through one process-wide mutex; executing
// distinct plans concurrently is safe.

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <vector>

namespace vito::detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class FftwPlan {
 public:
  FftwPlan() = default;
  explicit FftwPlan(fftw_plan p) : plan_(p) {}
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
  FftwPlan(FftwPlan&& o) noexcept : plan_(o.plan_) { o.plan_ = nullptr; }
  FftwPlan& operator=(FftwPlan&& o) noexcept {
    std::swap(plan_, o.plan_);
    return *this;
  }
  ~FftwPlan() {
    if (plan_) {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
  }

  void execute() const { fftw_execute(plan_); }
  fftw_plan get() const { return plan_; }

 private:
  fftw_plan plan_ = nullptr;
};

inline fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }

inline FftwPlan plan_dft_2d(int n0, int n1, std::complex<double>* in, std::complex<double>* out, int sign) {
  std::lock_guard lock(fftw_planner_mutex());
  return FftwPlan(fftw_plan_dft_2d(n0, n1, as_fftw(in), as_fftw(out), sign, FFTW_ESTIMATE));
}

inline FftwPlan plan_r2c_2d(int n0, int n1, double* in, std::complex<double>* out) {
  std::lock_guard lock(fftw_planner_mutex());
  return FftwPlan(fftw_plan_dft_r2c_2d(n0, n1, in, as_fftw(out), FFTW_ESTIMATE));
}

inline FftwPlan plan_c2r_2d(int n0, int n1, std::complex<double>* in, double* out) {
  std::lock_guard lock(fftw_planner_mutex());
  return FftwPlan(fftw_plan_dft_c2r_2d(n0, n1, as_fftw(in), out, FFTW_ESTIMATE | FFTW_DESTROY_INPUT));
}

inline FftwPlan plan_dct1_2d(int n0, int n1, double* in, double* out) {
  std::lock_guard lock(fftw_planner_mutex());
  return FftwPlan(fftw_plan_r2r_2d(n0, n1, in, out, FFTW_REDFT00, FFTW_REDFT00, FFTW_ESTIMATE));
}

/// Signed wavenumber of FFT index p on a length-n axis.
inline int wavenumber(int p, int n) { return p <= n / 2 ? p : p - n; }

}  // namespace vito::detail
