#include "vito/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "vito/error.hpp"

namespace vito {

// ---------------------------------------------------------------------------
// ViTOConfig

void ViTOConfig::validate() const {
  for (int c : channel_widths)
    if (c < 1) throw InvalidConfig("channel widths must be positive");
  if (vit_blocks < 0) throw InvalidConfig("vit_blocks must be >= 0");
  if (vit_heads < 1 || vit_embed_dim < 1 || vit_mlp_dim < 1)
    throw InvalidConfig("vit_heads, vit_embed_dim and vit_mlp_dim must be positive");
  if (vit_embed_dim % vit_heads != 0)
    throw InvalidConfig("vit_embed_dim (" + std::to_string(vit_embed_dim) + ") is not divisible by vit_heads (" +
                        std::to_string(vit_heads) + ")");
  if (sr_factor < 1) throw InvalidConfig("sr_factor must be >= 1");
  if (divisibility != 16) throw InvalidConfig("divisibility must be 16 (four 2x downsampling stages)");
}

ViTOConfig ViTOConfig::wave() { return ViTOConfig{}; }

ViTOConfig ViTOConfig::navier_stokes() {
  ViTOConfig c;
  c.vit_blocks = 4;
  c.vit_heads = 8;
  c.vit_embed_dim = 16;
  c.vit_mlp_dim = 64;
  return c;
}

ViTOConfig ViTOConfig::darcy() { return ViTOConfig{}; }

std::string ViTOConfig::to_text() const {
  std::ostringstream os;
  os << "channel_widths=" << channel_widths[0] << ',' << channel_widths[1] << ',' << channel_widths[2] << ','
     << channel_widths[3] << '\n'
     << "vit_blocks=" << vit_blocks << '\n'
     << "vit_heads=" << vit_heads << '\n'
     << "vit_embed_dim=" << vit_embed_dim << '\n'
     << "vit_mlp_dim=" << vit_mlp_dim << '\n'
     << "sr_factor=" << sr_factor << '\n'
     << "divisibility=" << divisibility << '\n';
  return os.str();
}

namespace {

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw InvalidConfig("bad integer for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

ViTOConfig ViTOConfig::from_text(const std::string& text) {
  ViTOConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("config line without '=': " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "channel_widths") {
      std::istringstream vs(val);
      std::string tok;
      int i = 0;
      while (std::getline(vs, tok, ',')) {
        if (i >= 4) throw InvalidConfig("channel_widths needs exactly 4 values");
        c.channel_widths[i++] = parse_int(key, tok);
      }
      if (i != 4) throw InvalidConfig("channel_widths needs exactly 4 values");
    } else if (key == "vit_blocks") {
      c.vit_blocks = parse_int(key, val);
    } else if (key == "vit_heads") {
      c.vit_heads = parse_int(key, val);
    } else if (key == "vit_embed_dim") {
      c.vit_embed_dim = parse_int(key, val);
    } else if (key == "vit_mlp_dim") {
      c.vit_mlp_dim = parse_int(key, val);
    } else if (key == "sr_factor") {
      c.sr_factor = parse_int(key, val);
    } else if (key == "divisibility") {
      c.divisibility = parse_int(key, val);
    } else {
      throw InvalidConfig("unknown model config key: " + key);
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const ViTOConfig& config) : config_(config) {
  config_.validate();
  construct();
}

template <typename T>
Model<T>::Model(const ViTOConfig& config, Rng& rng) : Model(config) {
  init(rng);
}

template <typename T>
void Model<T>::construct() {
  const auto& c = config_.channel_widths;
  stem_ = nn::ConvBnGelu<T>("stem", 3, c[0], 3, 2);
  for (int k = 0; k < 3; ++k) {
    const std::string p = "enc" + std::to_string(k + 1);
    enc_[k].a = nn::ConvBnGelu<T>(p + ".a", c[k], c[k + 1]);
    enc_[k].b = nn::ConvBnGelu<T>(p + ".b", c[k + 1], c[k + 1]);
    enc_[k].d = nn::ConvBnGelu<T>(p + ".d", c[k + 1], c[k + 1]);
    enc_[k].down = nn::ConvBnGelu<T>(p + ".down", c[k + 1], c[k + 1], 3, 2);
  }
  const int d = config_.vit_embed_dim;
  proj_in_ = nn::Linear<T>("vit.proj_in", c[3], d);
  cpe_ = nn::ConvPositionalEncoding<T>("vit.cpe", d);
  blocks_.clear();
  for (int b = 0; b < config_.vit_blocks; ++b)
    blocks_.emplace_back("vit.block" + std::to_string(b), d, config_.vit_heads, config_.vit_mlp_dim);
  proj_out_ = nn::Linear<T>("vit.proj_out", d, c[3]);
  for (int k = 0; k < 3; ++k) {
    const std::string p = "dec" + std::to_string(k + 1);
    dec_[k].up = nn::ConvBnGelu<T>(p + ".up", c[k + 1], c[k + 1]);
    dec_[k].c1 = nn::ConvBnGelu<T>(p + ".c1", 2 * c[k + 1], c[k]);
    dec_[k].c2 = nn::ConvBnGelu<T>(p + ".c2", c[k], c[k]);
    dec_[k].c3 = nn::ConvBnGelu<T>(p + ".c3", c[k], c[k]);
  }
  final_up_ = nn::ConvBnGelu<T>("final.up", c[0], c[0]);
  head_ = nn::Conv2d<T>("head", c[0], 1, 1, 1, true);
  norm_ = nn::Param<T>("normalization", {4}, false);
  norm_.value[1] = T(1);
  norm_.value[3] = T(1);
}

template <typename T>
void Model<T>::init(Rng& rng) {
  stem_.init(rng);
  for (auto& e : enc_) {
    e.a.init(rng);
    e.b.init(rng);
    e.d.init(rng);
    e.down.init(rng);
  }
  proj_in_.init(rng);
  cpe_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  proj_out_.init(rng);
  for (auto& d : dec_) {
    d.up.init(rng);
    d.c1.init(rng);
    d.c2.init(rng);
    d.c3.init(rng);
  }
  final_up_.init(rng);
  head_.init(rng, 0.5);
}

template <typename T>
nn::ParamList<T> Model<T>::parameters() {
  nn::ParamList<T> out;
  stem_.collect(out);
  for (auto& e : enc_) {
    e.a.collect(out);
    e.b.collect(out);
    e.d.collect(out);
    e.down.collect(out);
  }
  proj_in_.collect(out);
  cpe_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  proj_out_.collect(out);
  for (auto& d : dec_) {
    d.up.collect(out);
    d.c1.collect(out);
    d.c2.collect(out);
    d.c3.collect(out);
  }
  final_up_.collect(out);
  head_.collect(out);
  out.push_back(&norm_);
  return out;
}

template <typename T>
std::vector<const nn::Param<T>*> Model<T>::parameters() const {
  auto list = const_cast<Model*>(this)->parameters();
  return {list.begin(), list.end()};
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->trainable) n += p->value.size();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : parameters())
    if (p->trainable) p->grad.zero();
}

template <typename T>
void Model<T>::set_normalization(double input_mean, double input_std, double target_mean, double target_std) {
  if (!(input_std > 0) || !(target_std > 0) || !std::isfinite(input_mean) || !std::isfinite(target_mean))
    throw InvalidArgument("normalization needs finite means and positive standard deviations");
  norm_.value[0] = static_cast<T>(input_mean);
  norm_.value[1] = static_cast<T>(input_std);
  norm_.value[2] = static_cast<T>(target_mean);
  norm_.value[3] = static_cast<T>(target_std);
}

template <typename T>
std::array<double, 4> Model<T>::normalization() const {
  return {double(norm_.value[0]), double(norm_.value[1]), double(norm_.value[2]), double(norm_.value[3])};
}

template <typename T>
int Model<T>::internal_side(int n) const {
  return pad_to_multiple(config_.sr_factor * n, config_.divisibility);
}

template <typename T>
typename Model<T>::Tensor Model<T>::apply_vit(const Tensor& latent, Tape* tape) const {
  const int h = latent.dim(2), w = latent.dim(3);
  auto t = proj_in_.forward(nn::image_to_tokens(latent), tape ? &tape->proj_in : nullptr);
  auto m = cpe_.forward(nn::tokens_to_image(t, h, w), tape ? &tape->cpe : nullptr);
  t = nn::image_to_tokens(m);
  if (tape) tape->blocks.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) t = blocks_[b].forward(t, tape ? &tape->blocks[b] : nullptr);
  t = proj_out_.forward(t, tape ? &tape->proj_out : nullptr);
  return nn::tokens_to_image(t, h, w);
}

template <typename T>
typename Model<T>::Tensor Model<T>::vit_backward(const Tensor& dy, const Tape& tape) {
  const int h = tape.latent_h, w = tape.latent_w;
  auto g = proj_out_.backward(nn::image_to_tokens(dy), tape.proj_out);
  for (std::size_t b = blocks_.size(); b-- > 0;) g = blocks_[b].backward(g, tape.blocks[b]);
  auto gm = cpe_.backward(nn::tokens_to_image(g, h, w), tape.cpe);
  g = proj_in_.backward(nn::image_to_tokens(gm), tape.proj_in);
  return nn::tokens_to_image(g, h, w);
}

template <typename T>
typename Model<T>::Tensor Model<T>::forward(const Tensor& inputs, const Mesh2D& mesh, int out_h, int out_w,
                                            Tape* tape) const {
  if (inputs.rank() != 4 || inputs.dim(1) != 1 || inputs.dim(2) != mesh.nx() || inputs.dim(3) != mesh.ny())
    throw InvalidArgument("model input " + nn::shape_string(inputs.shape()) + " does not match mesh " +
                          std::to_string(mesh.nx()) + "x" + std::to_string(mesh.ny()));
  return run(inputs, grid_encoding(mesh), mesh.periodic(), out_h, out_w, tape);
}

template <typename T>
typename Model<T>::Tensor Model<T>::run(const Tensor& inputs, const GridEncoding& grids, bool periodic, int out_h,
                                        int out_w, Tape* tape) const {
  const int n = inputs.dim(0), nx = inputs.dim(2), ny = inputs.dim(3);
  if (out_h < 2 || out_w < 2) throw InvalidArgument("model output side must be >= 2");
  const std::size_t plane = static_cast<std::size_t>(nx) * ny;

  // Stack [normalized u, xmat, ymat].
  Tensor x({n, 3, nx, ny});
  const T in_mean = norm_.value[0], in_std = norm_.value[1];
  for (int b = 0; b < n; ++b) {
    T* dst = x.sample(b);
    const T* src = inputs.sample(b);
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = (src[i] - in_mean) / in_std;
      dst[plane + i] = static_cast<T>(grids.xmat.values()[i]);
      dst[2 * plane + i] = static_cast<T>(grids.ymat.values()[i]);
    }
  }
  const int ph = internal_side(nx), pw = internal_side(ny);
  x = nn::resize(x, ph, pw, periodic);

  if (tape) {
    tape->in_h = nx;
    tape->in_w = ny;
    tape->p_h = ph;
    tape->p_w = pw;
    tape->out_h = out_h;
    tape->out_w = out_w;
    tape->periodic = periodic;
  }

  auto h = stem_.forward(x, tape ? &tape->stem : nullptr);
  std::array<Tensor, 3> skips;
  for (int k = 0; k < 3; ++k) {
    EncoderCache* ec = tape ? &tape->enc[k] : nullptr;
    auto a = enc_[k].a.forward(h, ec ? &ec->a : nullptr);
    auto d = enc_[k].b.forward(a, ec ? &ec->b : nullptr);
    d = enc_[k].d.forward(d, ec ? &ec->d : nullptr);
    a += d;
    skips[k] = std::move(a);
    h = enc_[k].down.forward(skips[k], ec ? &ec->down : nullptr);
  }

  if (tape) {
    tape->latent_h = h.dim(2);
    tape->latent_w = h.dim(3);
  }
  h = apply_vit(h, tape);

  for (int k = 2; k >= 0; --k) {
    DecoderCache* dc = tape ? &tape->dec[k] : nullptr;
    if (dc) {
      dc->in_h = h.dim(2);
      dc->in_w = h.dim(3);
    }
    auto u = nn::resize(h, skips[k].dim(2), skips[k].dim(3), periodic);
    u = dec_[k].up.forward(u, dc ? &dc->up : nullptr);
    auto c1 = dec_[k].c1.forward(nn::concat_channels(u, skips[k]), dc ? &dc->c1 : nullptr);
    auto c3 = dec_[k].c2.forward(c1, dc ? &dc->c2 : nullptr);
    c3 = dec_[k].c3.forward(c3, dc ? &dc->c3 : nullptr);
    c1 += c3;
    h = std::move(c1);
  }

  if (tape) {
    tape->dec_h = h.dim(2);
    tape->dec_w = h.dim(3);
  }
  h = final_up_.forward(nn::resize(h, ph, pw, periodic), tape ? &tape->final_up : nullptr);
  auto y = head_.forward(h, tape ? &tape->head : nullptr);
  y = nn::resize(y, out_h, out_w, periodic);
  const T out_mean = norm_.value[2], out_std = norm_.value[3];
  for (auto& v : y.storage()) v = v * out_std + out_mean;
  return y;
}

template <typename T>
void Model<T>::backward(const Tensor& dy, const Tape& tape) {
  if (dy.rank() != 4 || dy.dim(1) != 1 || dy.dim(2) != tape.out_h || dy.dim(3) != tape.out_w)
    throw InvalidArgument("output gradient shape " + nn::shape_string(dy.shape()) + " does not match the tape");
  Tensor g = dy;
  const T out_std = norm_.value[3];
  for (auto& v : g.storage()) v *= out_std;
  g = nn::resize_backward(g, tape.p_h, tape.p_w, tape.periodic);
  g = final_up_.backward(head_.backward(g, tape.head), tape.final_up);
  g = nn::resize_backward(g, tape.dec_h, tape.dec_w, tape.periodic);

  std::array<Tensor, 3> gskip;
  for (int k = 0; k < 3; ++k) {
    const DecoderCache& dc = tape.dec[k];
    // out = c1 + c3(c2(c1))
    auto gc1 = dec_[k].c2.backward(dec_[k].c3.backward(g, dc.c3), dc.c2);
    gc1 += g;
    auto gcat = dec_[k].c1.backward(gc1, dc.c1);
    Tensor gu;
    nn::split_channels(gcat, config_.channel_widths[k + 1], gu, gskip[k]);
    gu = dec_[k].up.backward(gu, dc.up);
    g = nn::resize_backward(gu, dc.in_h, dc.in_w, tape.periodic);
  }

  g = vit_backward(g, tape);

  for (int k = 2; k >= 0; --k) {
    const EncoderCache& ec = tape.enc[k];
    auto gs = enc_[k].down.backward(g, ec.down);
    gs += gskip[k];
    // skip = a + d(b(a))
    auto ga = enc_[k].b.backward(enc_[k].d.backward(gs, ec.d), ec.b);
    ga += gs;
    g = enc_[k].a.backward(ga, ec.a);
  }
  stem_.backward(g, tape.stem, false);
}

namespace {

Mesh2D fine_mesh(const Mesh2D& m, int s) {
  const int fx = s * m.nx(), fy = s * m.ny();
  if (m.periodic()) return Mesh2D(fx, fy, m.lx(), m.ly(), true);
  return Mesh2D(fx, fy, (fx - 1) * m.dx() / s, (fy - 1) * m.dy() / s);
}

}  // namespace

template <typename T>
Field2D Model<T>::predict(const Field2D& input, const GridEncoding& grids) const {
  if (!(grids.xmat.mesh() == input.mesh()) || !(grids.ymat.mesh() == input.mesh()))
    throw InvalidArgument("input field and grid encoding must share a mesh");
  Tensor x({1, 1, input.nx(), input.ny()});
  for (std::size_t i = 0; i < input.size(); ++i) x[i] = static_cast<T>(input.values()[i]);
  const Mesh2D out_mesh = fine_mesh(input.mesh(), config_.sr_factor);
  const auto y = run(x, grids, input.mesh().periodic(), out_mesh.nx(), out_mesh.ny(), nullptr);
  Field2D out(out_mesh);
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] = static_cast<double>(y[i]);
  return out;
}

template <typename T>
Field2D Model<T>::predict(const Field2D& input) const {
  return predict(input, grid_encoding(input.mesh()));
}

template class Model<float>;
template class Model<double>;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'V', 'I', 'T', 'O', 'C', 'K', '1', '\0'};

struct CheckpointData {
  ViTOConfig config;
  std::uint64_t trainable = 0;
  std::map<std::string, nn::Tensor<float>> tensors;
};

CheckpointData read_checkpoint(const std::filesystem::path& path, bool config_only) {
  const auto buf = io::read_file(path);
  const std::string what = "checkpoint " + path.string();
  io::Reader r(buf.data(), buf.size(), what);
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(what + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionMismatch(what + ": format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  if (buf.size() < 12 + 4) throw TruncatedFile(what + ": unexpected end of file");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (io::crc32_of(buf.data(), buf.size() - 4) != stored_crc) throw ChecksumError(what + ": CRC-32 mismatch");

  CheckpointData out;
  out.config = ViTOConfig::from_text(r.str());
  out.trainable = r.u64();
  if (config_only) return out;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    nn::Tensor<float> t(shape);
    r.f32(t.data(), t.size());
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(model.config().to_text());
  w.u64(model.parameter_count());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (int d : p->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32(p->value.data(), p->value.size());
  }
  w.u32(io::crc32_of(w.buffer().data(), w.buffer().size()));
  w.save(path);
}

void load_checkpoint_into(Model<float>& model, const std::filesystem::path& path) {
  auto data = read_checkpoint(path, false);
  if (!(data.config == model.config()))
    throw ConfigMismatch("checkpoint " + path.string() + " was written for a different model config:\n" +
                         data.config.to_text() + "model has:\n" + model.config().to_text());
  if (data.trainable != model.parameter_count())
    throw ConfigMismatch("checkpoint parameter count " + std::to_string(data.trainable) + " != model " +
                         std::to_string(model.parameter_count()));
  auto params = model.parameters();
  if (params.size() != data.tensors.size())
    throw ConfigMismatch("checkpoint holds " + std::to_string(data.tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  for (auto* p : params) {
    auto it = data.tensors.find(p->name);
    if (it == data.tensors.end()) throw ConfigMismatch("checkpoint lacks tensor " + p->name);
    if (it->second.shape() != p->value.shape())
      throw ConfigMismatch("tensor " + p->name + " has shape " + nn::shape_string(it->second.shape()) +
                           ", model expects " + nn::shape_string(p->value.shape()));
    p->value = std::move(it->second);
  }
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  Model<float> model(read_checkpoint_config(path));
  load_checkpoint_into(model, path);
  return model;
}

ViTOConfig read_checkpoint_config(const std::filesystem::path& path) { return read_checkpoint(path, true).config; }

}  // namespace vito
