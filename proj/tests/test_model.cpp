#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <utility>

#include "vito/error.hpp"
#include "vito/model.hpp"

using namespace vito;
using nn::Tensor;

namespace {

ViTOConfig tiny_config() {
  ViTOConfig c;
  c.channel_widths = {2, 2, 2, 2};
  c.vit_blocks = 1;
  c.vit_heads = 1;
  c.vit_embed_dim = 4;
  c.vit_mlp_dim = 4;
  c.sr_factor = 4;
  return c;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

Field2D random_field(const Mesh2D& m, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d;
  Field2D f(m);
  for (auto& v : f.storage()) v = static_cast<float>(d(rng));
  return f;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("vito_test_model_" + name);
}

}  // namespace

TEST_CASE("config validation and presets") {
  ViTOConfig bad = ViTOConfig::darcy();
  bad.vit_heads = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  Rng rng(1);
  CHECK_THROWS_AS(Model<float>(bad, rng), InvalidConfig);

  for (const auto& c : {ViTOConfig::wave(), ViTOConfig::navier_stokes(), ViTOConfig::darcy()}) {
    CHECK_NOTHROW(c.validate());
    CHECK(ViTOConfig::from_text(c.to_text()) == c);
  }
  CHECK(ViTOConfig::navier_stokes().vit_blocks == 4);
  CHECK(ViTOConfig::navier_stokes().vit_heads == 8);
  CHECK(ViTOConfig::navier_stokes().vit_mlp_dim == 64);
  CHECK(ViTOConfig::darcy().vit_mlp_dim == 128);
  CHECK_THROWS_AS(ViTOConfig::from_text("vit_blocks=2\nmystery=1\n"), InvalidConfig);
  CHECK_THROWS_AS(ViTOConfig::from_text("vit_blocks=two\n"), InvalidConfig);
}

TEST_CASE("16x16 input with s = 8 gives a 128x128 output and an 8x8 latent") {
  Rng rng(2);
  Model<float> model(ViTOConfig::darcy(), rng);
  const Mesh2D coarse(16, 16, 120.0 / 127.0, 120.0 / 127.0);
  const auto out = model.predict(random_field(coarse, 3));
  CHECK(out.nx() == 128);
  CHECK(out.ny() == 128);
  CHECK(out.mesh().lx() == doctest::Approx(1.0));
  CHECK(out.all_finite());

  Model<float>::Tape tape;
  Tensor<float> x({2, 1, 16, 16}, 0.5f);
  model.forward(x, coarse, 128, 128, &tape);
  CHECK(tape.latent_h == 8);
  CHECK(tape.latent_w == 8);
  CHECK(tape.blocks.at(0).attn.probs.shape() == std::vector<int>{2, 2, 64, 64});
}

TEST_CASE("arbitrary input sides and non-square inputs") {
  Rng rng(4);
  Model<float> model(tiny_config(), rng);
  for (int n : {2, 3, 7, 16, 33}) {
    const auto out = model.predict(random_field(Mesh2D::unit_square(n), 5));
    CHECK(out.nx() == 4 * n);
    CHECK(out.ny() == 4 * n);
  }
  const auto rect = model.predict(random_field(Mesh2D(5, 9, 1.0, 2.0), 6));
  CHECK(rect.nx() == 20);
  CHECK(rect.ny() == 36);
  const auto per = model.predict(random_field(Mesh2D(8, 8, 1.0, 1.0, true), 7));
  CHECK(per.mesh().periodic());
  CHECK(per.nx() == 32);
}

TEST_CASE("forward rejects inputs that do not match the mesh") {
  Rng rng(8);
  Model<float> model(tiny_config(), rng);
  Tensor<float> x({1, 1, 8, 8});
  CHECK_THROWS_AS(model.forward(x, Mesh2D::unit_square(9), 32, 32), InvalidArgument);
  const Field2D f(Mesh2D::unit_square(8));
  CHECK_THROWS_AS(model.predict(f, grid_encoding(Mesh2D::unit_square(9))), InvalidArgument);
}

TEST_CASE("eval mode is deterministic and batch independent") {
  Rng rng(9);
  Model<float> model(ViTOConfig::darcy(), rng);
  // Move running statistics away from their initial values.
  const Mesh2D mesh = Mesh2D::unit_square(16);
  for (int step = 0; step < 2; ++step) {
    Model<float>::Tape tape;
    auto x = random_tensor<float>({3, 1, 16, 16}, 10 + step);
    auto y = model.forward(x, mesh, 128, 128, &tape);
    model.backward(random_tensor<float>(y.shape(), 20 + step), tape);
  }
  auto batch = random_tensor<float>({4, 1, 16, 16}, 30);
  const auto y1 = model.forward(batch, mesh, 128, 128);
  const auto y2 = model.forward(batch, mesh, 128, 128);
  CHECK(y1 == y2);
  double max_diff = 0.0;
  for (int b = 0; b < 4; ++b) {
    Tensor<float> one({1, 1, 16, 16});
    std::copy_n(batch.sample(b), 256, one.data());
    const auto ys = model.forward(one, mesh, 128, 128);
    for (std::size_t i = 0; i < ys.size(); ++i)
      max_diff = std::max(max_diff, std::abs(double(ys[i]) - double(y1.sample(b)[i])));
  }
  CHECK(max_diff <= 1e-6);
}

TEST_CASE("attention rows sum to one") {
  Rng rng(11);
  Model<float> model(ViTOConfig::navier_stokes(), rng);
  Model<float>::Tape tape;
  auto x = random_tensor<float>({2, 1, 16, 16}, 12);
  model.forward(x, Mesh2D(16, 16, 1.0, 1.0, true), 128, 128, &tape);
  REQUIRE(tape.blocks.size() == 4);
  double worst = 0.0;
  for (const auto& blk : tape.blocks) {
    const auto& p = blk.attn.probs;
    const int rows = static_cast<int>(p.size() / p.dim(3));
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int j = 0; j < p.dim(3); ++j) s += p[static_cast<std::size_t>(r) * p.dim(3) + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("ViT preserves the latent shape") {
  Rng rng(13);
  Model<float> model(ViTOConfig::wave(), rng);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{3, 5}, std::pair{1, 1}}) {
    auto z = random_tensor<float>({2, 32, h, w}, 14);
    CHECK(model.apply_vit(z, nullptr).shape() == z.shape());
  }
}

TEST_CASE("CPE with zeroed kernels is the identity") {
  nn::ConvPositionalEncoding<double> cpe("cpe", 4);
  Rng rng(15);
  cpe.init(rng);
  nn::ParamList<double> ps;
  cpe.collect(ps);
  for (auto* p : ps) p->value.zero();
  auto x = random_tensor<double>({2, 4, 6, 5}, 16);
  CHECK(cpe.forward(x, nullptr) == x);
}

TEST_CASE("CPE is translation equivariant away from the border") {
  nn::ConvPositionalEncoding<double> cpe("cpe", 3);
  Rng rng(17);
  cpe.init(rng);
  const int n = 12;
  auto x = random_tensor<double>({1, 3, n, n}, 18);
  // shifted(i, j) = x(i - 1, j - 1)
  Tensor<double> shifted(x.shape());
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < n; ++i)
      for (int j = 1; j < n; ++j) shifted[(c * n + i) * n + j] = x[(c * n + i - 1) * n + j - 1];
  const auto y = cpe.forward(x, nullptr);
  const auto ys = cpe.forward(shifted, nullptr);
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 3; i < n - 2; ++i)
      for (int j = 3; j < n - 2; ++j)
        worst = std::max(worst, std::abs(ys[(c * n + i) * n + j] - y[(c * n + i - 1) * n + j - 1]));
  CHECK(worst <= 1e-6);
}

TEST_CASE("analytic parameter gradients match finite differences") {
  Rng rng(19);
  Model<double> model(tiny_config(), rng);
  model.set_normalization(0.1, 1.3, -0.2, 2.0);
  const Mesh2D mesh = Mesh2D::unit_square(8);
  const auto x = random_tensor<double>({2, 1, 8, 8}, 20);
  const auto probe = random_tensor<double>({2, 1, 30, 30}, 21);
  auto objective = [&] {
    Model<double>::Tape t;
    const auto y = model.forward(x, mesh, 30, 30, &t);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y[i];
    return s;
  };

  Model<double>::Tape tape;
  model.forward(x, mesh, 30, 30, &tape);
  model.zero_grad();
  // Snapshot running statistics: backward() folds batch stats in.
  std::vector<Tensor<double>> saved;
  for (auto* p : model.parameters()) saved.push_back(p->value);
  model.backward(probe, tape);
  {
    auto ps = model.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = saved[i];
  }

  double worst = 0.0;
  int checked = 0;
  for (auto* p : model.parameters()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 5)) {
      const double h = 1e-5, orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = objective();
      p->value[i] = orig - h;
      const double fm = objective();
      p->value[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = p->grad[i];
      // Key biases shift every logit of a query equally, so softmax makes
      // their gradient exactly zero; a relative error is meaningless there.
      const int d = tiny_config().vit_embed_dim;
      if (p->name.ends_with("attn.qkv.bias") && int(i) >= d && int(i) < 2 * d) {
        CHECK(std::abs(an) <= 1e-12);
        CHECK(std::abs(fd) <= 1e-7);
        continue;
      }
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      if (rel > worst) worst = rel;
      ++checked;
    }
  }
  INFO("checked " << checked << " entries");
  CHECK(checked > 100);
  CHECK(worst <= 1e-3);
}

TEST_CASE("checkpoint roundtrip is bit exact") {
  Rng rng(22);
  Model<float> model(ViTOConfig::darcy(), rng);
  model.set_normalization(1.0, 2.0, 7.5, 4.5);
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.config() == model.config());
  CHECK(loaded.parameter_count() == model.parameter_count());
  const auto a = std::as_const(model).parameters();
  const auto b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
  const auto f = random_field(Mesh2D::unit_square(16), 23);
  CHECK(model.predict(f) == loaded.predict(f));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors are distinct") {
  Rng rng(24);
  Model<float> model(tiny_config(), rng);
  const auto path = temp_path("errors.ckpt");
  save_checkpoint(model, path);

  SUBCASE("config mismatch") {
    Model<float> other(ViTOConfig::darcy(), rng);
    CHECK_THROWS_AS(load_checkpoint_into(other, path), ConfigMismatch);
  }
  SUBCASE("tampered payload") {
    auto bytes = read_bytes(path);
    bytes[bytes.size() / 2] ^= 0x40;
    write_bytes(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), ChecksumError);
  }
  SUBCASE("version mismatch") {
    auto bytes = read_bytes(path);
    bytes[8] = 99;
    write_bytes(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), VersionMismatch);
  }
  SUBCASE("truncated file") {
    auto bytes = read_bytes(path);
    bytes.resize(10);
    write_bytes(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedFile);
  }
  SUBCASE("not a checkpoint") {
    write_bytes(path, std::vector<char>(64, 'x'));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_path("absent.ckpt")), IoError); }
  std::filesystem::remove(path);
}
