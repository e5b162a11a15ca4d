#include "vito/nn/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "vito/nn/tensor.hpp"

namespace vito::nn::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_range(int kx, const ConvGeom& g, int wo, int& lo, int& hi) {
  const int off = kx - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = g.w - 1 - off;  // largest ox*stride allowed
  hi = last < 0 ? 0 : std::min(wo, last / g.stride + 1);
  if (hi < lo) hi = lo;
}

// col has (cin*k*k) rows and (ho*wo) columns.
template <typename T>
void im2col(const T* x, T* col, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  for (int kx = 0; kx < g.k; ++kx) {
    int lo, hi;
    valid_range(kx, g, wo, lo, hi);
    const int off = kx - g.pad;
    for (int c = 0; c < g.cin; ++c) {
      const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
      for (int ky = 0; ky < g.k; ++ky) {
        T* row = col + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w + off;
          // Edge runs are at most `pad` long; plain stores beat memset calls.
          for (int ox = 0; ox < lo; ++ox) dst[ox] = T(0);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          for (int ox = hi; ox < wo; ++ox) dst[ox] = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, T* x, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  std::fill(x, x + static_cast<std::size_t>(g.cin) * g.h * g.w, T(0));
  for (int c = 0; c < g.cin; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        int lo, hi;
        valid_range(kx, g, wo, lo, hi);
        const int off = kx - g.pad;
        const T* row = col + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = xc + static_cast<std::size_t>(iy) * g.w + off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
  }
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, int batch, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  const int kk = g.cin * g.k * g.k;
  const std::size_t in_sz = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_sz = static_cast<std::size_t>(g.cout) * ho * wo;
  const CMap<T> W(w, g.cout, kk);
#pragma omp parallel
  {
    AlignedVector<T> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk) * ho * wo);
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      const T* xn = x + n * in_sz;
      const T* src = xn;
      if (!is_pointwise(g)) {
        im2col(xn, col.data(), g);
        src = col.data();
      }
      Map<T> Y(y + n * out_sz, g.cout, ho * wo);
      Y.noalias() = W * CMap<T>(src, kk, ho * wo);
      if (b)
        for (int o = 0; o < g.cout; ++o) Y.row(o).array() += b[o];
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  const int kk = g.cin * g.k * g.k;
  const std::size_t in_sz = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_sz = static_cast<std::size_t>(g.cout) * ho * wo;
  const CMap<T> W(w, g.cout, kk);
  const int threads = omp_get_max_threads();
  // Per-thread partial weight gradients, reduced in thread order so the
  // result is deterministic for a fixed thread count.
  std::vector<AlignedVector<T>> dw_part(threads);
  std::vector<AlignedVector<T>> db_part(threads);
#pragma omp parallel
  {
    const int t = omp_get_thread_num();
    dw_part[t].assign(static_cast<std::size_t>(g.cout) * kk, T(0));
    db_part[t].assign(g.cout, T(0));
    AlignedVector<T> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk) * ho * wo);
    AlignedVector<T> dcol(is_pointwise(g) || !dx ? 0 : static_cast<std::size_t>(kk) * ho * wo);
    Map<T> dW(dw_part[t].data(), g.cout, kk);
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      const T* xn = x + n * in_sz;
      const T* src = xn;
      if (!is_pointwise(g)) {
        im2col(xn, col.data(), g);
        src = col.data();
      }
      const CMap<T> dY(dy + n * out_sz, g.cout, ho * wo);
      dW.noalias() += dY * CMap<T>(src, kk, ho * wo).transpose();
      for (int o = 0; o < g.cout; ++o) db_part[t][o] += dY.row(o).sum();
      if (dx) {
        if (is_pointwise(g)) {
          Map<T>(dx + n * in_sz, kk, ho * wo).noalias() = W.transpose() * dY;
        } else {
          Map<T>(dcol.data(), kk, ho * wo).noalias() = W.transpose() * dY;
          col2im(dcol.data(), dx + n * in_sz, g);
        }
      }
    }
  }
  for (int t = 0; t < threads; ++t) {
    if (dw_part[t].empty()) continue;
    for (std::size_t i = 0; i < dw_part[t].size(); ++i) dw[i] += dw_part[t][i];
    if (db)
      for (int o = 0; o < g.cout; ++o) db[o] += db_part[t][o];
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, T* y, int batch, int c, int h, int wd, int k) {
  const int pad = k / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * h * wd;
      const T* xc = x + off;
      T* yc = y + off;
      const T* wc = w + static_cast<std::size_t>(ch) * k * k;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j) {
          T s = b ? b[ch] : T(0);
          for (int ky = 0; ky < k; ++ky) {
            const int ii = i + ky - pad;
            if (ii < 0 || ii >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int jj = j + kx - pad;
              if (jj >= 0 && jj < wd) s += wc[ky * k + kx] * xc[ii * wd + jj];
            }
          }
          yc[i * wd + j] = s;
        }
    }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, int c, int h, int wd,
                        int k) {
  const int pad = k / 2;
  // Parallel over channels: each channel owns its weight gradient.
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const T* wc = w + static_cast<std::size_t>(ch) * k * k;
    T* dwc = dw + static_cast<std::size_t>(ch) * k * k;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * h * wd;
      const T* xc = x + off;
      const T* gc = dy + off;
      T* dxc = dx ? dx + off : nullptr;
      if (dxc) std::fill(dxc, dxc + static_cast<std::size_t>(h) * wd, T(0));
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j) {
          const T g = gc[i * wd + j];
          if (db) db[ch] += g;
          for (int ky = 0; ky < k; ++ky) {
            const int ii = i + ky - pad;
            if (ii < 0 || ii >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int jj = j + kx - pad;
              if (jj < 0 || jj >= wd) continue;
              dwc[ky * k + kx] += g * xc[ii * wd + jj];
              if (dxc) dxc[ii * wd + jj] += g * wc[ky * k + kx];
            }
          }
        }
    }
  }
}

namespace {

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
    } else if (m == 1) {
      out[i] = {0, 0, 0.0};
    } else {
      const long num = static_cast<long>(i) * (n - 1);
      const int lo = static_cast<int>(num / (m - 1));
      out[i] = {lo, std::min(lo + 1, n - 1), static_cast<double>(num % (m - 1)) / (m - 1)};
    }
  }
  return out;
}

}  // namespace

template <typename T>
void resize_forward(const T* x, T* y, int planes, int h, int w, int ho, int wo, bool periodic) {
  const auto ty = taps(h, ho, periodic);
  const auto tx = taps(w, wo, periodic);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = x + static_cast<std::size_t>(p) * h * w;
    T* dst = y + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      const Tap& a = ty[i];
      const T ta = static_cast<T>(a.t);
      for (int j = 0; j < wo; ++j) {
        const Tap& b = tx[j];
        const T tb = static_cast<T>(b.t);
        const T lo = (T(1) - tb) * src[a.lo * w + b.lo] + tb * src[a.lo * w + b.hi];
        const T hi = (T(1) - tb) * src[a.hi * w + b.lo] + tb * src[a.hi * w + b.hi];
        dst[i * wo + j] = (T(1) - ta) * lo + ta * hi;
      }
    }
  }
}

template <typename T>
void resize_backward(const T* dy, T* dx, int planes, int h, int w, int ho, int wo, bool periodic) {
  const auto ty = taps(h, ho, periodic);
  const auto tx = taps(w, wo, periodic);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* g = dy + static_cast<std::size_t>(p) * ho * wo;
    T* dst = dx + static_cast<std::size_t>(p) * h * w;
    std::fill(dst, dst + static_cast<std::size_t>(h) * w, T(0));
    for (int i = 0; i < ho; ++i) {
      const Tap& a = ty[i];
      const T ta = static_cast<T>(a.t);
      for (int j = 0; j < wo; ++j) {
        const Tap& b = tx[j];
        const T tb = static_cast<T>(b.t);
        const T v = g[i * wo + j];
        dst[a.lo * w + b.lo] += (T(1) - ta) * (T(1) - tb) * v;
        dst[a.lo * w + b.hi] += (T(1) - ta) * tb * v;
        dst[a.hi * w + b.lo] += ta * (T(1) - tb) * v;
        dst[a.hi * w + b.hi] += ta * tb * v;
      }
    }
  }
}

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, int rows, int in, int out) {
  Map<T> Y(y, rows, out);
  Y.noalias() = CMap<T>(x, rows, in) * CMap<T>(w, out, in).transpose();
  if (b)
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out; ++o) Y(r, o) += b[o];
}

template <typename T>
void linear_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int rows, int in, int out) {
  const CMap<T> dY(dy, rows, out);
  Map<T>(dw, out, in).noalias() += dY.transpose() * CMap<T>(x, rows, in);
  if (db)
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out; ++o) db[o] += dY(r, o);
  if (dx) Map<T>(dx, rows, in).noalias() = dY * CMap<T>(w, out, in);
}

namespace reference {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, int batch, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < g.cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T s = b ? b[o] : T(0);
          for (int c = 0; c < g.cin; ++c)
            for (int ky = 0; ky < g.k; ++ky)
              for (int kx = 0; kx < g.k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
                s += w[((o * g.cin + c) * g.k + ky) * g.k + kx] * x[((n * g.cin + c) * g.h + iy) * g.w + ix];
              }
          y[((n * g.cout + o) * ho + oy) * wo + ox] = s;
        }
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, const ConvGeom& g) {
  const int ho = g.ho(), wo = g.wo();
  if (dx) std::fill(dx, dx + static_cast<std::size_t>(batch) * g.cin * g.h * g.w, T(0));
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < g.cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const T gv = dy[((n * g.cout + o) * ho + oy) * wo + ox];
          if (db) db[o] += gv;
          for (int c = 0; c < g.cin; ++c)
            for (int ky = 0; ky < g.k; ++ky)
              for (int kx = 0; kx < g.k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
                const std::size_t wi = ((o * g.cin + c) * g.k + ky) * g.k + kx;
                const std::size_t xi = ((n * g.cin + c) * g.h + iy) * g.w + ix;
                dw[wi] += gv * x[xi];
                if (dx) dx[xi] += gv * w[wi];
              }
        }
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*, int, const ConvGeom&);
template void conv2d_forward<double>(const double*, const double*, const double*, double*, int, const ConvGeom&);
template void conv2d_backward<float>(const float*, const float*, const float*, float*, float*, float*, int,
                                     const ConvGeom&);
template void conv2d_backward<double>(const double*, const double*, const double*, double*, double*, double*, int,
                                      const ConvGeom&);

}  // namespace reference

#define VITO_INSTANTIATE_KERNELS(T)                                                                        \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, int, const ConvGeom&);                 \
  template void conv2d_backward<T>(const T*, const T*, const T*, T*, T*, T*, int, const ConvGeom&);        \
  template void depthwise_forward<T>(const T*, const T*, const T*, T*, int, int, int, int, int);           \
  template void depthwise_backward<T>(const T*, const T*, const T*, T*, T*, T*, int, int, int, int, int);  \
  template void resize_forward<T>(const T*, T*, int, int, int, int, int, bool);                            \
  template void resize_backward<T>(const T*, T*, int, int, int, int, int, bool);                           \
  template void linear_forward<T>(const T*, const T*, const T*, T*, int, int, int);                        \
  template void linear_backward<T>(const T*, const T*, const T*, T*, T*, T*, int, int, int);

VITO_INSTANTIATE_KERNELS(float)
VITO_INSTANTIATE_KERNELS(double)

}  // namespace vito::nn::kernels
