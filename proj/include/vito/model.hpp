#pragma once

// U-Net + latent vision transformer operator network.
//
// Layout for an internal side P (a multiple of 16):
//
//   [u, xmat, ymat] --resize--> P
//   stem    CBG 3->c0, stride 2                          P/2
//   enc k   a = CBG, b = CBG(a), d = CBG(b); skip = a + d
//           then CBG stride 2                             P/4, P/8, P/16
//   vit     tokens -> linear c3->D -> CPE -> blocks -> linear D->c3
//   dec k   up x2 + CBG, concat skip, c1 = CBG, c3 = CBG(CBG(c1)); out = c1 + c3
//   head    up x2 to P + CBG, 1x1 conv c0->1 --resize--> requested output size
//
// CBG = conv3x3 -> batch norm -> GELU.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "vito/mesh.hpp"
#include "vito/nn/layers.hpp"
#include "vito/rng.hpp"

namespace vito {

struct ViTOConfig {
  std::array<int, 4> channel_widths{8, 16, 24, 32};
  int vit_blocks = 2;
  int vit_heads = 2;
  int vit_embed_dim = 16;
  int vit_mlp_dim = 128;
  int sr_factor = 8;
  int divisibility = 16;

  /// Throws InvalidConfig.
  void validate() const;

  static ViTOConfig wave();
  static ViTOConfig navier_stokes();
  static ViTOConfig darcy();

  /// key=value lines; from_text accepts exactly the keys to_text writes.
  std::string to_text() const;
  static ViTOConfig from_text(const std::string& text);

  friend bool operator==(const ViTOConfig&, const ViTOConfig&) = default;
};

template <typename T>
class Model {
 public:
  using Tensor = nn::Tensor<T>;

  struct EncoderCache {
    typename nn::ConvBnGelu<T>::Cache a, b, d, down;
  };
  struct DecoderCache {
    typename nn::ConvBnGelu<T>::Cache up, c1, c2, c3;
    int in_h = 0, in_w = 0;
  };
  /// Everything backward() needs. Also exposes attention probabilities.
  struct Tape {
    int in_h = 0, in_w = 0;  // raw input size
    int p_h = 0, p_w = 0;    // internal size
    int out_h = 0, out_w = 0;
    bool periodic = false;
    typename nn::ConvBnGelu<T>::Cache stem;
    std::array<EncoderCache, 3> enc;
    int latent_h = 0, latent_w = 0;
    typename nn::Linear<T>::Cache proj_in, proj_out;
    typename nn::ConvPositionalEncoding<T>::Cache cpe;
    std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
    std::array<DecoderCache, 3> dec;
    int dec_h = 0, dec_w = 0;  // decoder output size (P/2)
    typename nn::ConvBnGelu<T>::Cache final_up;
    typename nn::Conv2d<T>::Cache head;
  };

  /// Builds the network with initialized weights.
  Model(const ViTOConfig& config, Rng& rng);
  /// Builds the network with all weights zero (to be loaded).
  explicit Model(const ViTOConfig& config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ViTOConfig& config() const { return config_; }

  /// Batched forward on raw inputs (N, 1, nx, ny) sampled on `mesh`.
  /// With a tape the network runs in training mode (batch statistics) and
  /// records what backward() needs; without, it runs in eval mode.
  /// Output is (N, 1, out_h, out_w) in target units.
  Tensor forward(const Tensor& inputs, const Mesh2D& mesh, int out_h, int out_w, Tape* tape = nullptr) const;

  /// Accumulates parameter gradients for dL/d(output) and folds batch
  /// statistics into the running estimates.
  void backward(const Tensor& dy, const Tape& tape);

  /// Eval-mode prediction on the fine mesh: s*nx x s*ny points with spacing
  /// dx/s, dy/s from the same origin (the mesh stride-s subsampling came from).
  Field2D predict(const Field2D& input) const;
  /// Same, with the coordinate channels supplied explicitly.
  Field2D predict(const Field2D& input, const GridEncoding& grids) const;

  /// All named tensors in a stable order, buffers included.
  nn::ParamList<T> parameters();
  std::vector<const nn::Param<T>*> parameters() const;
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  void zero_grad();

  /// Affine normalization of input values and of the output, stored as a
  /// buffer so checkpoints are self-contained.
  void set_normalization(double input_mean, double input_std, double target_mean, double target_std);
  std::array<double, 4> normalization() const;

  /// Internal side for a raw side n.
  int internal_side(int n) const;

  /// The latent ViT alone on a feature map (N, c3, h, w).
  Tensor apply_vit(const Tensor& latent, Tape* tape) const;

 private:
  struct Encoder {
    nn::ConvBnGelu<T> a, b, d, down;
  };
  struct Decoder {
    nn::ConvBnGelu<T> up, c1, c2, c3;
  };

  void construct();
  void init(Rng& rng);
  Tensor run(const Tensor& inputs, const GridEncoding& grids, bool periodic, int out_h, int out_w,
             Tape* tape) const;
  Tensor vit_backward(const Tensor& dy, const Tape& tape);

  ViTOConfig config_;
  nn::ConvBnGelu<T> stem_;
  std::array<Encoder, 3> enc_;
  nn::Linear<T> proj_in_, proj_out_;
  nn::ConvPositionalEncoding<T> cpe_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  std::array<Decoder, 3> dec_;
  nn::ConvBnGelu<T> final_up_;
  nn::Conv2d<T> head_;
  nn::Param<T> norm_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Checkpoint layout (little-endian):
///   "VITOCK1\0" | u32 version | u32 len, config text | u64 trainable count |
///   u32 tensor count | per tensor: u32 len, name, u32 rank, u32 dims, f32 data |
///   u32 CRC-32 of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing model; throws ConfigMismatch if the configs differ.
void load_checkpoint_into(Model<float>& model, const std::filesystem::path& path);
ViTOConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace vito
