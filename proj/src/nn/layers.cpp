#include "vito/nn/layers.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vito::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using SMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CSMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double a) {
  std::uniform_real_distribution<double> d(-a, a);
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
}

void require_rank(int rank, int expected, const char* who) {
  if (rank != expected) throw std::invalid_argument(std::string(who) + ": unexpected tensor rank");
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int cin, int cout, int k, int stride, bool bias)
    : cin_(cin),
      cout_(cout),
      k_(k),
      stride_(stride),
      has_bias_(bias),
      weight_(name + ".weight", {cout, cin, k, k}),
      bias_(bias ? Param<T>(name + ".bias", {cout}) : Param<T>()) {}

template <typename T>
ConvGeom Conv2d<T>::geom(const Tensor<T>& x) const {
  require_rank(x.rank(), 4, "conv2d");
  if (x.dim(1) != cin_) throw std::invalid_argument("conv2d: channel mismatch on " + weight_.name);
  return ConvGeom{cin_, cout_, k_, stride_, k_ / 2, x.dim(2), x.dim(3)};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  const ConvGeom g = geom(x);
  auto y = Tensor<T>::uninitialized({x.dim(0), cout_, g.ho(), g.wo()});
  kernels::conv2d_forward(x.data(), weight_.value.data(), has_bias_ ? bias_.value.data() : nullptr, y.data(),
                          x.dim(0), g);
  if (cache) cache->x = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
  const ConvGeom g = geom(cache.x);
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>::uninitialized(cache.x.shape());
  kernels::conv2d_backward(cache.x.data(), weight_.value.data(), dy.data(), need_dx ? dx.data() : nullptr,
                           weight_.grad.data(), has_bias_ ? bias_.grad.data() : nullptr, cache.x.dim(0), g);
  return dx;
}

template <typename T>
void Conv2d<T>::init(Rng& rng, double gain) {
  fill_normal(weight_.value, rng, gain * std::sqrt(2.0 / (cin_ * k_ * k_)));
  if (has_bias_) bias_.value.zero();
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// DepthwiseConv2d

template <typename T>
DepthwiseConv2d<T>::DepthwiseConv2d(const std::string& name, int channels, int k)
    : c_(channels), k_(k), weight_(name + ".weight", {channels, 1, k, k}), bias_(name + ".bias", {channels}) {}

template <typename T>
Tensor<T> DepthwiseConv2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_rank(x.rank(), 4, "depthwise");
  auto y = Tensor<T>::uninitialized(x.shape());
  kernels::depthwise_forward(x.data(), weight_.value.data(), bias_.value.data(), y.data(), x.dim(0), c_, x.dim(2),
                             x.dim(3), k_);
  if (cache) cache->x = x;
  return y;
}

template <typename T>
Tensor<T> DepthwiseConv2d<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  const auto& x = cache.x;
  auto dx = Tensor<T>::uninitialized(x.shape());
  kernels::depthwise_backward(x.data(), weight_.value.data(), dy.data(), dx.data(), weight_.grad.data(),
                              bias_.grad.data(), x.dim(0), c_, x.dim(2), x.dim(3), k_);
  return dx;
}

template <typename T>
void DepthwiseConv2d<T>::init(Rng& rng, double gain) {
  fill_normal(weight_.value, rng, gain * std::sqrt(2.0 / (k_ * k_)));
  bias_.value.zero();
}

template <typename T>
void DepthwiseConv2d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : c_(channels),
      gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}),
      running_mean_(name + ".running_mean", {channels}, false),
      running_var_(name + ".running_var", {channels}, false) {
  std::fill(gamma_.value.storage().begin(), gamma_.value.storage().end(), T(1));
  std::fill(running_var_.value.storage().begin(), running_var_.value.storage().end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_rank(x.rank(), 4, "batchnorm");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  auto y = Tensor<T>::uninitialized(x.shape());
  std::vector<T> mean(c_), invstd(c_), var(c_);
  if (cache) {
    // Per-channel batch statistics, accumulated in double.
    for (int c = 0; c < c_; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / (n * plane);
      for (int b = 0; b < n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s2 += (p[i] - m) * (p[i] - m);
      }
      const double v = s2 / (n * plane);
      mean[c] = static_cast<T>(m);
      var[c] = static_cast<T>(v);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + kEps));
    }
    cache->xhat = Tensor<T>::uninitialized(x.shape());
  } else {
    for (int c = 0; c < c_; ++c) {
      mean[c] = running_mean_.value[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + kEps));
    }
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < c_; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * plane;
      const T g = gamma_.value[c], be = beta_.value[c], m = mean[c], is = invstd[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[off + i] - m) * is;
        if (cache) cache->xhat[off + i] = xh;
        y[off + i] = g * xh + be;
      }
    }
  if (cache) {
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->invstd = std::move(invstd);
    cache->count = n * plane;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  const auto& xhat = cache.xhat;
  const int n = xhat.dim(0);
  const std::size_t plane = static_cast<std::size_t>(xhat.dim(2)) * xhat.dim(3);
  const double m = static_cast<double>(cache.count);
  auto dx = Tensor<T>::uninitialized(xhat.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat[off + i];
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    beta_.grad[c] += static_cast<T>(sum_dy);
    const double g = gamma_.value[c];
    const double k = g * cache.invstd[c] / m;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        dx[off + i] = static_cast<T>(k * (m * dy[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat));
    }
  }
  // Fold this step's batch statistics into the running estimates.
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (int c = 0; c < c_; ++c) {
    running_mean_.value[c] =
        static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * cache.mean[c]);
    running_var_.value[c] =
        static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * cache.var[c] * unbias);
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------
// GELU (exact erf form). Eigen's erf is vectorized for float.

namespace {

constexpr std::size_t kChunk = 1 << 14;

template <typename T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

}  // namespace

template <typename T>
Tensor<T> Gelu<T>::forward(const Tensor<T>& x, Cache* cache) {
  auto y = Tensor<T>::uninitialized(x.shape());
  const std::size_t n = x.size();
  const auto chunks = static_cast<std::ptrdiff_t>((n + kChunk - 1) / kChunk);
  const T r2 = T(0.5 * std::numbers::sqrt2);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * kChunk, len = std::min(kChunk, n - lo);
    const CArrayMap<T> v(x.data() + lo, len);
    ArrayMap<T>(y.data() + lo, len) = T(0.5) * v * (T(1) + (v * r2).erf());
  }
  if (cache) cache->x = x;
  return y;
}

template <typename T>
Tensor<T> Gelu<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  auto dx = Tensor<T>::uninitialized(dy.shape());
  const std::size_t n = dy.size();
  const auto chunks = static_cast<std::ptrdiff_t>((n + kChunk - 1) / kChunk);
  const T r2 = T(0.5 * std::numbers::sqrt2);
  const T inv_sqrt_2pi = T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * kChunk, len = std::min(kChunk, n - lo);
    const CArrayMap<T> v(cache.x.data() + lo, len);
    const CArrayMap<T> g(dy.data() + lo, len);
    const auto cdf = T(0.5) * (T(1) + (v * r2).erf());
    const auto pdf = inv_sqrt_2pi * (T(-0.5) * v.square()).exp();
    ArrayMap<T>(dx.data() + lo, len) = g * (cdf + v * pdf);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvBnGelu

template <typename T>
ConvBnGelu<T>::ConvBnGelu(const std::string& name, int cin, int cout, int k, int stride)
    : conv_(name + ".conv", cin, cout, k, stride, false), bn_(name + ".bn", cout) {}

template <typename T>
Tensor<T> ConvBnGelu<T>::forward(const Tensor<T>& x, Cache* cache) const {
  auto y = conv_.forward(x, cache ? &cache->conv : nullptr);
  y = bn_.forward(y, cache ? &cache->bn : nullptr);
  return Gelu<T>::forward(y, cache ? &cache->act : nullptr);
}

template <typename T>
Tensor<T> ConvBnGelu<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
  auto g = Gelu<T>::backward(dy, cache.act);
  g = bn_.backward(g, cache.bn);
  return conv_.backward(g, cache.conv, need_dx);
}

template <typename T>
void ConvBnGelu<T>::collect(ParamList<T>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out)
    : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Cache* cache) const {
  if (x.shape().back() != in_) throw std::invalid_argument("linear: feature mismatch on " + weight_.name);
  auto shape = x.shape();
  shape.back() = out_;
  auto y = Tensor<T>::uninitialized(shape);
  const int rows = static_cast<int>(x.size() / in_);
  kernels::linear_forward(x.data(), weight_.value.data(), bias_.value.data(), y.data(), rows, in_, out_);
  if (cache) cache->x = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  auto dx = Tensor<T>::uninitialized(cache.x.shape());
  const int rows = static_cast<int>(cache.x.size() / in_);
  kernels::linear_backward(cache.x.data(), weight_.value.data(), dy.data(), dx.data(), weight_.grad.data(),
                           bias_.grad.data(), rows, in_, out_);
  return dx;
}

template <typename T>
void Linear<T>::init(Rng& rng, double gain) {
  fill_uniform(weight_.value, rng, gain / std::sqrt(static_cast<double>(in_)));
  bias_.value.zero();
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int dim)
    : d_(dim), gamma_(name + ".gamma", {dim}), beta_(name + ".beta", {dim}) {
  std::fill(gamma_.value.storage().begin(), gamma_.value.storage().end(), T(1));
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x, Cache* cache) const {
  const std::size_t rows = x.size() / d_;
  auto y = Tensor<T>::uninitialized(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>::uninitialized(x.shape());
    cache->invstd.assign(rows, T(0));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d_;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < d_; ++i) s += p[i];
    const double m = s / d_;
    for (int i = 0; i < d_; ++i) s2 += (p[i] - m) * (p[i] - m);
    const T is = static_cast<T>(1.0 / std::sqrt(s2 / d_ + kEps));
    for (int i = 0; i < d_; ++i) {
      const T xh = (p[i] - static_cast<T>(m)) * is;
      if (cache) cache->xhat[r * d_ + i] = xh;
      y[r * d_ + i] = gamma_.value[i] * xh + beta_.value[i];
    }
    if (cache) cache->invstd[r] = is;
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  const std::size_t rows = dy.size() / d_;
  auto dx = Tensor<T>::uninitialized(dy.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy.data() + r * d_;
    const T* xh = cache.xhat.data() + r * d_;
    double sum_d = 0.0, sum_dx = 0.0;
    for (int i = 0; i < d_; ++i) {
      gamma_.grad[i] += g[i] * xh[i];
      beta_.grad[i] += g[i];
      const double dxh = static_cast<double>(g[i]) * gamma_.value[i];
      sum_d += dxh;
      sum_dx += dxh * xh[i];
    }
    const double k = static_cast<double>(cache.invstd[r]) / d_;
    for (int i = 0; i < d_; ++i) {
      const double dxh = static_cast<double>(g[i]) * gamma_.value[i];
      dx[r * d_ + i] = static_cast<T>(k * (d_ * dxh - sum_d - xh[i] * sum_dx));
    }
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ---------------------------------------------------------------------------
// SelfAttention

template <typename T>
SelfAttention<T>::SelfAttention(const std::string& name, int dim, int heads)
    : d_(dim), heads_(heads), qkv_(name + ".qkv", dim, 3 * dim), proj_(name + ".proj", dim, dim) {
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("attention: heads must divide the embedding dim");
}

template <typename T>
Tensor<T> SelfAttention<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_rank(x.rank(), 3, "attention");
  const int n = x.dim(0), L = x.dim(1), D = d_, dh = D / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> qkv = qkv_.forward(x, cache ? &cache->qkv_in : nullptr);
  auto probs = Tensor<T>::uninitialized({n, heads_, L, L});
  auto o = Tensor<T>::uninitialized({n, L, D});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b)
    for (int h = 0; h < heads_; ++h) {
      const T* base = qkv.data() + static_cast<std::size_t>(b) * L * 3 * D;
      const CSMap<T> Q(base + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      const CSMap<T> K(base + D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      const CSMap<T> V(base + 2 * D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      T* pp = probs.data() + (static_cast<std::size_t>(b) * heads_ + h) * L * L;
      Eigen::Map<RowMat<T>> P(pp, L, L);
      P.noalias() = (Q * K.transpose()) * scale;
      for (int i = 0; i < L; ++i) {
        auto row = P.row(i);
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      SMap<T> O(o.data() + static_cast<std::size_t>(b) * L * D + h * dh, L, dh, Eigen::OuterStride<>(D));
      O.noalias() = P * V;
    }
  if (cache) {
    cache->qkv = qkv;
    cache->probs = probs;
  }
  return proj_.forward(o, cache ? &cache->proj_in : nullptr);
}

template <typename T>
Tensor<T> SelfAttention<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  const Tensor<T> d_o = proj_.backward(dy, cache.proj_in);
  const int n = d_o.dim(0), L = d_o.dim(1), D = d_, dh = D / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto dqkv = Tensor<T>::uninitialized({n, L, 3 * D});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b)
    for (int h = 0; h < heads_; ++h) {
      const T* base = cache.qkv.data() + static_cast<std::size_t>(b) * L * 3 * D;
      T* dbase = dqkv.data() + static_cast<std::size_t>(b) * L * 3 * D;
      const CSMap<T> Q(base + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      const CSMap<T> K(base + D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      const CSMap<T> V(base + 2 * D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      SMap<T> dQ(dbase + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      SMap<T> dK(dbase + D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      SMap<T> dV(dbase + 2 * D + h * dh, L, dh, Eigen::OuterStride<>(3 * D));
      const Eigen::Map<const RowMat<T>> P(cache.probs.data() + (static_cast<std::size_t>(b) * heads_ + h) * L * L, L,
                                          L);
      const CSMap<T> dO(d_o.data() + static_cast<std::size_t>(b) * L * D + h * dh, L, dh, Eigen::OuterStride<>(D));
      dV.noalias() = P.transpose() * dO;
      RowMat<T> dP = dO * V.transpose();
      // Softmax Jacobian: dS = P * (dP - rowsum(dP * P)).
      for (int i = 0; i < L; ++i) {
        const T dot = (dP.row(i).array() * P.row(i).array()).sum();
        dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
      }
      dQ.noalias() = (dP * K) * scale;
      dK.noalias() = (dP.transpose() * Q) * scale;
    }
  return qkv_.backward(dqkv, cache.qkv_in);
}

template <typename T>
void SelfAttention<T>::init(Rng& rng) {
  qkv_.init(rng);
  proj_.init(rng);
}

template <typename T>
void SelfAttention<T>::collect(ParamList<T>& out) {
  qkv_.collect(out);
  proj_.collect(out);
}

// ---------------------------------------------------------------------------
// TransformerBlock

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, int dim, int heads, int mlp_dim)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads),
      fc1_(name + ".mlp.fc1", dim, mlp_dim),
      fc2_(name + ".mlp.fc2", mlp_dim, dim) {}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, Cache* c) const {
  Tensor<T> h = x;
  h += attn_.forward(ln1_.forward(x, c ? &c->ln1 : nullptr), c ? &c->attn : nullptr);
  auto m = fc1_.forward(ln2_.forward(h, c ? &c->ln2 : nullptr), c ? &c->fc1 : nullptr);
  m = Gelu<T>::forward(m, c ? &c->act : nullptr);
  h += fc2_.forward(m, c ? &c->fc2 : nullptr);
  return h;
}

template <typename T>
Tensor<T> TransformerBlock<T>::backward(const Tensor<T>& dy, const Cache& c) {
  auto g = fc2_.backward(dy, c.fc2);
  g = Gelu<T>::backward(g, c.act);
  g = ln2_.backward(fc1_.backward(g, c.fc1), c.ln2);
  Tensor<T> dh = dy;
  dh += g;
  auto ga = ln1_.backward(attn_.backward(dh, c.attn), c.ln1);
  dh += ga;
  return dh;
}

template <typename T>
void TransformerBlock<T>::init(Rng& rng) {
  attn_.init(rng);
  fc1_.init(rng);
  fc2_.init(rng);
}

template <typename T>
void TransformerBlock<T>::collect(ParamList<T>& out) {
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

// ---------------------------------------------------------------------------
// ConvPositionalEncoding

template <typename T>
ConvPositionalEncoding<T>::ConvPositionalEncoding(const std::string& name, int dim)
    : dw_(name + ".depthwise", dim, 3),
      pw_(name + ".pointwise", dim, dim, 1, 1, true),
      conv_(name + ".conv", dim, dim, 3, 1, true) {}

template <typename T>
Tensor<T> ConvPositionalEncoding<T>::forward(const Tensor<T>& x, Cache* c) const {
  auto p = dw_.forward(x, c ? &c->dw : nullptr);
  p = pw_.forward(p, c ? &c->pw : nullptr);
  p = conv_.forward(p, c ? &c->conv : nullptr);
  p += x;
  return p;
}

template <typename T>
Tensor<T> ConvPositionalEncoding<T>::backward(const Tensor<T>& dy, const Cache& c) {
  auto g = conv_.backward(dy, c.conv);
  g = pw_.backward(g, c.pw);
  g = dw_.backward(g, c.dw);
  g += dy;
  return g;
}

template <typename T>
void ConvPositionalEncoding<T>::init(Rng& rng) {
  dw_.init(rng, 0.5);
  pw_.init(rng, 0.5);
  conv_.init(rng, 0.5);
}

template <typename T>
void ConvPositionalEncoding<T>::collect(ParamList<T>& out) {
  dw_.collect(out);
  pw_.collect(out);
  conv_.collect(out);
}

// ---------------------------------------------------------------------------
// Layout helpers

template <typename T>
Tensor<T> image_to_tokens(const Tensor<T>& x) {
  const int n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  auto t = Tensor<T>::uninitialized({n, l, c});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < l; ++i) t[(static_cast<std::size_t>(b) * l + i) * c + ch] = x[(static_cast<std::size_t>(b) * c + ch) * l + i];
  return t;
}

template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& x, int h, int w) {
  const int n = x.dim(0), l = x.dim(1), c = x.dim(2);
  if (l != h * w) throw std::invalid_argument("tokens_to_image: token count does not match h*w");
  auto y = Tensor<T>::uninitialized({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < l; ++i) y[(static_cast<std::size_t>(b) * c + ch) * l + i] = x[(static_cast<std::size_t>(b) * l + i) * c + ch];
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  auto y = Tensor<T>::uninitialized({n, ca + cb, a.dim(2), a.dim(3)});
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.sample(s), ca * plane, y.sample(s));
    std::copy_n(b.sample(s), cb * plane, y.sample(s) + ca * plane);
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb) {
  const int n = g.dim(0), cb = g.dim(1) - ca;
  const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  ga = Tensor<T>::uninitialized({n, ca, g.dim(2), g.dim(3)});
  gb = Tensor<T>::uninitialized({n, cb, g.dim(2), g.dim(3)});
  for (int s = 0; s < n; ++s) {
    std::copy_n(g.sample(s), ca * plane, ga.sample(s));
    std::copy_n(g.sample(s) + ca * plane, cb * plane, gb.sample(s));
  }
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, int ho, int wo, bool periodic) {
  if (x.dim(2) == ho && x.dim(3) == wo) return x;
  auto y = Tensor<T>::uninitialized({x.dim(0), x.dim(1), ho, wo});
  kernels::resize_forward(x.data(), y.data(), x.dim(0) * x.dim(1), x.dim(2), x.dim(3), ho, wo, periodic);
  return y;
}

template <typename T>
Tensor<T> resize_backward(const Tensor<T>& dy, int h, int w, bool periodic) {
  if (dy.dim(2) == h && dy.dim(3) == w) return dy;
  auto dx = Tensor<T>::uninitialized({dy.dim(0), dy.dim(1), h, w});
  kernels::resize_backward(dy.data(), dx.data(), dy.dim(0) * dy.dim(1), h, w, dy.dim(2), dy.dim(3), periodic);
  return dx;
}

#define VITO_INSTANTIATE_LAYERS(T)                                                         \
  template class Conv2d<T>;                                                                \
  template class DepthwiseConv2d<T>;                                                       \
  template class BatchNorm2d<T>;                                                           \
  template struct Gelu<T>;                                                                 \
  template class ConvBnGelu<T>;                                                            \
  template class Linear<T>;                                                                \
  template class LayerNorm<T>;                                                             \
  template class SelfAttention<T>;                                                         \
  template class TransformerBlock<T>;                                                      \
  template class ConvPositionalEncoding<T>;                                                \
  template Tensor<T> image_to_tokens<T>(const Tensor<T>&);                                 \
  template Tensor<T> tokens_to_image<T>(const Tensor<T>&, int, int);                       \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);               \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);          \
  template Tensor<T> resize<T>(const Tensor<T>&, int, int, bool);                          \
  template Tensor<T> resize_backward<T>(const Tensor<T>&, int, int, bool);

VITO_INSTANTIATE_LAYERS(float)
VITO_INSTANTIATE_LAYERS(double)

}  // namespace vito::nn
