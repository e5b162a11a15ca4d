#pragma once

// Building blocks of the operator network. Every layer follows one protocol:
//
//   y  = layer.forward(x, cache)      // cache == nullptr: inference, nothing stored
//   dx = layer.backward(dy, cache)    // accumulates parameter gradients
//
// forward() never mutates the layer, so inference may run concurrently.
// BatchNorm running statistics are folded in during backward(), i.e. once per
// optimizer step.

#include <string>
#include <vector>

#include "vito/nn/kernels.hpp"
#include "vito/nn/tensor.hpp"
#include "vito/rng.hpp"

namespace vito::nn {

template <typename T>
class Conv2d {
 public:
  struct Cache {
    Tensor<T> x;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int k, int stride, bool bias);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx = true);

  /// He-normal weights scaled by `gain`, zero bias.
  void init(Rng& rng, double gain = 1.0);
  void collect(ParamList<T>& out);

  int cin() const { return cin_; }
  int cout() const { return cout_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  ConvGeom geom(const Tensor<T>& x) const;

  int cin_ = 0, cout_ = 0, k_ = 3, stride_ = 1;
  bool has_bias_ = false;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class DepthwiseConv2d {
 public:
  struct Cache {
    Tensor<T> x;
  };

  DepthwiseConv2d() = default;
  DepthwiseConv2d(const std::string& name, int channels, int k);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void init(Rng& rng, double gain = 1.0);
  void collect(ParamList<T>& out);
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  int c_ = 0, k_ = 3;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class BatchNorm2d {
 public:
  struct Cache {
    Tensor<T> xhat;
    std::vector<T> invstd;
    std::vector<T> mean;
    std::vector<T> var;
    std::size_t count = 0;
  };

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  /// With a cache: normalizes by batch statistics. Without: by running statistics.
  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void collect(ParamList<T>& out);

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int c_ = 0;
  Param<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
struct Gelu {
  struct Cache {
    Tensor<T> x;
  };
  static Tensor<T> forward(const Tensor<T>& x, Cache* cache);
  static Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
};

/// conv -> batch norm -> GELU.
template <typename T>
class ConvBnGelu {
 public:
  struct Cache {
    typename Conv2d<T>::Cache conv;
    typename BatchNorm2d<T>::Cache bn;
    typename Gelu<T>::Cache act;
  };

  ConvBnGelu() = default;
  ConvBnGelu(const std::string& name, int cin, int cout, int k = 3, int stride = 1);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx = true);
  void init(Rng& rng) { conv_.init(rng); }
  void collect(ParamList<T>& out);

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

/// Token-wise affine map over the last axis of an (N, L, D) tensor.
template <typename T>
class Linear {
 public:
  struct Cache {
    Tensor<T> x;
  };

  Linear() = default;
  Linear(const std::string& name, int in, int out);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  /// Uniform(-a, a) with a = gain / sqrt(in), zero bias.
  void init(Rng& rng, double gain = 1.0);
  void collect(ParamList<T>& out);
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class LayerNorm {
 public:
  struct Cache {
    Tensor<T> xhat;
    std::vector<T> invstd;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void collect(ParamList<T>& out);

  static constexpr double kEps = 1e-5;

 private:
  int d_ = 0;
  Param<T> gamma_, beta_;
};

/// Multi-head scaled dot-product self-attention over (N, L, D) tokens.
template <typename T>
class SelfAttention {
 public:
  struct Cache {
    typename Linear<T>::Cache qkv_in;
    Tensor<T> qkv;    // (N, L, 3D)
    Tensor<T> probs;  // (N, heads, L, L)
    typename Linear<T>::Cache proj_in;
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, int dim, int heads);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void init(Rng& rng);
  void collect(ParamList<T>& out);

  int heads() const { return heads_; }

 private:
  int d_ = 0, heads_ = 1;
  Linear<T> qkv_;
  Linear<T> proj_;
};

/// Pre-norm transformer block: x + attn(ln(x)), then + mlp(ln(.)).
template <typename T>
class TransformerBlock {
 public:
  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2;
    typename SelfAttention<T>::Cache attn;
    typename Linear<T>::Cache fc1, fc2;
    typename Gelu<T>::Cache act;
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_dim);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void init(Rng& rng);
  void collect(ParamList<T>& out);

 private:
  LayerNorm<T> ln1_, ln2_;
  SelfAttention<T> attn_;
  Linear<T> fc1_, fc2_;
};

/// Convolutional positional encoding over the token map (N, D, H, W):
/// x + conv3x3(pointwise(depthwise3x3(x))).
template <typename T>
class ConvPositionalEncoding {
 public:
  struct Cache {
    typename DepthwiseConv2d<T>::Cache dw;
    typename Conv2d<T>::Cache pw, conv;
  };

  ConvPositionalEncoding() = default;
  ConvPositionalEncoding(const std::string& name, int dim);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);
  void init(Rng& rng);
  void collect(ParamList<T>& out);

 private:
  DepthwiseConv2d<T> dw_;
  Conv2d<T> pw_;
  Conv2d<T> conv_;
};

// Layout helpers.

/// (N, C, H, W) -> (N, H*W, C)
template <typename T>
Tensor<T> image_to_tokens(const Tensor<T>& x);
/// (N, L, C) -> (N, C, H, W) with L = H*W
template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& x, int h, int w);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb);

/// Bilinear resampling of every (N, C) plane.
template <typename T>
Tensor<T> resize(const Tensor<T>& x, int ho, int wo, bool periodic = false);
template <typename T>
Tensor<T> resize_backward(const Tensor<T>& dy, int h, int w, bool periodic = false);

}  // namespace vito::nn
