#pragma once

// Hot loops of the network. Each kernel has an OpenMP-parallel implementation
// (im2col + GEMM, parallel over the batch) and a serial direct-loop reference
// in `reference::` used by the tests and the benchmark.
//
// Backward kernels accumulate into dw / db and overwrite dx; dx may be null.

namespace vito::nn {

struct ConvGeom {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int stride = 1;
  int pad = 1;
  int h = 0;
  int w = 0;

  int ho() const { return (h + 2 * pad - k) / stride + 1; }
  int wo() const { return (w + 2 * pad - k) / stride + 1; }
};

namespace kernels {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, int batch, const ConvGeom& g);

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, const ConvGeom& g);

/// Depthwise k x k convolution (one filter per channel), zero padding k/2, stride 1.
template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, T* y, int batch, int c, int h, int wd, int k);

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, int c, int h, int wd,
                        int k);

/// Bilinear resampling of `planes` independent h x w planes to ho x wo.
/// Corner-aligned, or wrapping when `periodic`.
template <typename T>
void resize_forward(const T* x, T* y, int planes, int h, int w, int ho, int wo, bool periodic);

template <typename T>
void resize_backward(const T* dy, T* dx, int planes, int h, int w, int ho, int wo, bool periodic);

/// y (rows x out) = x (rows x in) * w^T + b with w stored (out x in).
template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y, int rows, int in, int out);

template <typename T>
void linear_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int rows, int in, int out);

namespace reference {

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, int batch, const ConvGeom& g);

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int batch, const ConvGeom& g);

}  // namespace reference
}  // namespace kernels
}  // namespace vito::nn
