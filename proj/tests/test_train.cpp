#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "vito/error.hpp"
#include "vito/train.hpp"

using namespace vito;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

Tensor<double> random_batch(std::vector<int> shape, Rng& rng) {
  std::normal_distribution<double> d;
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

// Straight transcription of the loss with long double sums.
double brute_loss(const Tensor<double>& p, const Tensor<double>& t, double eps) {
  const int n = p.dim(0);
  const std::size_t per = p.size() / n;
  long double acc = 0;
  for (int j = 0; j < n; ++j) {
    long double num = 0, den = 0;
    for (std::size_t k = 0; k < per; ++k) {
      const long double a = p[j * per + k], b = t[j * per + k];
      num += (a - b) * (a - b);
      den += b * b;
    }
    acc += std::sqrt(num) / (eps + std::sqrt(den));
  }
  return static_cast<double>(acc / n);
}

ViTOConfig tiny_config(int sr) {
  ViTOConfig c;
  c.channel_widths = {4, 4, 4, 4};
  c.vit_blocks = 1;
  c.vit_heads = 1;
  c.vit_embed_dim = 4;
  c.vit_mlp_dim = 8;
  c.sr_factor = sr;
  return c;
}

Dataset toy_darcy(int n_samples, std::uint64_t seed = 3) {
  DatasetSpec s;
  s.problem = Problem::Darcy;
  s.n_samples = n_samples;
  s.fine_n = 32;
  s.sr_factor = 4;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST_CASE("loss matches a brute-force transcription") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 5;
    const auto p = random_batch({n, 1, 7, 5}, rng), t = random_batch({n, 1, 7, 5}, rng);
    const double got = relative_l2_loss(p, t, 1e-8), want = brute_loss(p, t, 1e-8);
    REQUIRE(std::abs(got - want) <= 1e-12 * want);
  }
}

TEST_CASE("loss closed-form cases") {
  Tensor<double> t({1, 1, 2, 2}, 0.0), z({1, 1, 2, 2}, 0.0);
  t[0] = 3.0;
  t[3] = 4.0;  // norm 5
  CHECK(relative_l2_loss(t, t, 1e-8) == 0.0);
  CHECK(relative_l2_loss(z, t, 1e-8) == doctest::Approx(5.0 / (1e-8 + 5.0)).epsilon(1e-15));

  Tensor<double> p2({2, 1, 1, 2}, 0.0), t2({2, 1, 1, 2}, 0.0);
  t2[0] = 1.0;
  p2[0] = 1.0;  // sample 0 exact
  t2[2] = 2.0;  // sample 1: prediction 0, error 1 with eps = 0
  CHECK(relative_l2_loss(p2, t2, 0.0) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(relative_l2_loss(Tensor<double>({1, 4}), Tensor<double>({1, 5}), 1e-8), InvalidArgument);
}

TEST_CASE("loss is invariant under a shared permutation and scale-invariant as epsilon -> 0") {
  Rng rng(5);
  const auto p = random_batch({3, 1, 6, 6}, rng), t = random_batch({3, 1, 6, 6}, rng);
  std::vector<std::size_t> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> pp(p.shape()), tp(t.shape());
  for (int j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 36; ++k) {
      pp[j * 36 + k] = p[j * 36 + perm[k]];
      tp[j * 36 + k] = t[j * 36 + perm[k]];
    }
  CHECK(relative_l2_loss(pp, tp, 1e-8) == doctest::Approx(relative_l2_loss(p, t, 1e-8)).epsilon(1e-13));

  const double base = relative_l2_loss(p, t, 1e-12);
  for (double c : {0.1, 10.0}) {
    Tensor<double> ps = p, ts = t;
    for (auto& v : ps.storage()) v *= c;
    for (auto& v : ts.storage()) v *= c;
    CHECK(std::abs(relative_l2_loss(ps, ts, 1e-12) / base - 1.0) <= 1e-6);
  }
}

TEST_CASE("loss gradient matches central differences") {
  Rng rng(8);
  auto p = random_batch({2, 1, 3, 4}, rng);
  const auto t = random_batch({2, 1, 3, 4}, rng);
  Tensor<double> g;
  relative_l2_loss(p, t, 0.1, &g);
  const double h = 1e-6;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k];
    p[k] = keep + h;
    const double up = relative_l2_loss(p, t, 0.1);
    p[k] = keep - h;
    const double dn = relative_l2_loss(p, t, 0.1);
    p[k] = keep;
    CHECK(g[k] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(1e-3, 0, 150) == 1e-3);
  CHECK(std::abs(cosine_lr(1e-3, 75, 150) - 5e-4) <= 1e-9);
  CHECK(std::abs(cosine_lr(2e-3, 250, 500) - 1e-3) <= 1e-9);
  CHECK(cosine_lr(1e-3, 150, 150) == doctest::Approx(0.0));
}

TEST_CASE("AdamW first step") {
  nn::Param<double> w("w", {3});
  w.value[0] = 1.0;
  w.value[1] = -2.0;
  w.value[2] = 0.5;
  w.grad[0] = 0.3;
  w.grad[1] = -4.0;
  w.grad[2] = 0.0;
  AdamW<double> opt({&w}, 0.01, 0.9, 0.999, 1e-8);
  opt.step(0.1);
  // Bias-corrected moments equal g and g^2 after one step.
  const double expect[3] = {1.0 - 0.1 * (0.3 / (0.3 + 1e-8) + 0.01 * 1.0),
                            -2.0 - 0.1 * (-4.0 / (4.0 + 1e-8) + 0.01 * -2.0), 0.5 - 0.1 * 0.01 * 0.5};
  for (int k = 0; k < 3; ++k) CHECK(w.value[k] == doctest::Approx(expect[k]).epsilon(1e-14));

  nn::Param<double> frozen("f", {1}, false);
  frozen.value[0] = 7.0;
  AdamW<double> opt2({&frozen}, 0.1);
  opt2.step(1.0);
  CHECK(frozen.value[0] == 7.0);
}

TEST_CASE("early stopping after patience stale epochs") {
  const int k = 4;
  EarlyStopping es(3);
  int stopped = -1;
  for (int e = 0; e < 50; ++e) {
    const double loss = e <= k ? 10.0 - e : 10.0 - k + 0.01 * (e % 2);
    es.update(e, loss);
    if (es.should_stop()) {
      stopped = e;
      break;
    }
  }
  CHECK(stopped == k + 3);
  CHECK(es.best_epoch() == k);
  CHECK_THROWS_AS(EarlyStopping(0), InvalidArgument);
}

TEST_CASE("augment_subsample") {
  Tensor<float> b({2, 1, 512, 512});
  for (std::size_t k = 0; k < b.size(); ++k) b[k] = static_cast<float>(k % 1009);
  CHECK(augment_subsample(b, 1) == b);
  const auto q = augment_subsample(b, 4);
  CHECK(q.shape() == std::vector<int>{2, 1, 128, 128});
  const auto t = augment_subsample(b, 3);
  CHECK(t.shape() == std::vector<int>{2, 1, 171, 171});
  CHECK(t[170 * 171 + 170] == b[510 * 512 + 510]);
  CHECK(t[171 * 171 + 5] == b[512 * 512 + 15]);
  std::vector<int> sides;
  for (int r = 1; r <= 9; ++r) sides.push_back(augment_subsample(b, r).dim(2));
  CHECK(sides == std::vector<int>{512, 256, 171, 128, 102, 85, 73, 64, 57});
  CHECK(augment_mesh(Mesh2D::unit_square(512), 3).nx() == 171);
  CHECK_THROWS_AS(augment_subsample(Tensor<float>({1, 1, 4, 4}), 5), InvalidArgument);
}

TEST_CASE("train config text roundtrip rejects unknown keys") {
  TrainConfig c;
  c.batch_size = 7;
  c.lr0 = 3.3e-4;
  c.augment_r_max = 9;
  c.seed = 99;
  CHECK(TrainConfig::from_text(c.to_text()) == c);
  CHECK_THROWS_AS(TrainConfig::from_text("batch_size=4\nmomentum=0.9\n"), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_text("patience=0\n"), InvalidConfig);
}

TEST_CASE("training is reproducible and keeps the best-validation parameters") {
  const Dataset d = toy_darcy(12);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  cfg.seed = 5;
  cfg.augment_r_max = 2;

  auto run = [&](const fs::path& dir) {
    Rng rng(1);
    Model<float> m(tiny_config(4), rng);
    TrainOptions opt;
    opt.run_dir = dir;
    auto h = train(m, d, cfg, opt);
    return std::make_pair(std::move(m), h);
  };
  const fs::path da = fs::temp_directory_path() / "vito_test_train_a";
  const fs::path db = fs::temp_directory_path() / "vito_test_train_b";
  fs::remove_all(da);
  fs::remove_all(db);
  auto [ma, ha] = run(da);
  auto [mb, hb] = run(db);
  CHECK(ha == hb);
  REQUIRE(ha.epochs.size() == 4);
  std::ifstream fa(da / "history.csv"), fb(db / "history.csv");
  const std::string ca((std::istreambuf_iterator<char>(fa)), {}), cb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ca == ha.to_csv());
  CHECK(ca == cb);
  CHECK(fs::exists(da / "config.txt"));

  double lowest = ha.epochs[0].val_loss;
  for (const auto& e : ha.epochs) lowest = std::min(lowest, e.val_loss);
  CHECK(ha.best_val_loss() == lowest);
  // The model returned and the checkpoint on disk are the best epoch.
  const double again = validation_loss(ma, d, d.split(Split::Val), cfg.epsilon, cfg.batch_size);
  CHECK(again == lowest);
  const Model<float> loaded = load_checkpoint(da / "best.ckpt");
  CHECK(validation_loss(loaded, d, d.split(Split::Val), cfg.epsilon, cfg.batch_size) == lowest);
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("training errors") {
  Dataset d = toy_darcy(6);
  Rng rng(2);
  Model<float> m(tiny_config(4), rng);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_epochs = 1;

  SUBCASE("empty validation split") {
    Dataset e = d;
    e.splits[0] = {0, 6};
    e.splits[1] = {6, 6};
    e.splits[2] = {6, 6};
    CHECK_THROWS_AS(train(m, e, cfg), InvalidArgument);
  }
  SUBCASE("non-finite loss is reported with its position") {
    Dataset e = d;
    e.targets[5] = std::numeric_limits<float>::quiet_NaN();
    e.splits[0] = {0, 4};
    try {
      // Normalization statistics become NaN as well, so this must fail.
      train(m, e, cfg);
      FAIL("expected an error");
    } catch (const Error& err) {
      CHECK((err.category() == "numeric_error" || err.category() == "invalid_argument"));
    }
  }
  SUBCASE("augmentation factor too large") {
    cfg.augment_r_max = 9;
    CHECK_THROWS_AS(train(m, d, cfg), InvalidArgument);
  }
}

TEST_CASE("a small model overfits ten Darcy samples") {
  Dataset d = toy_darcy(10, 21);
  d.splits[0] = {0, 10};
  d.splits[1] = {0, 10};
  d.splits[2] = {0, 10};
  Rng rng(4);
  ViTOConfig c = tiny_config(4);
  c.channel_widths = {16, 16, 16, 16};
  Model<float> m(c, rng);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.max_epochs = 2000;
  cfg.patience = 2000;
  cfg.lr0 = 3e-3;
  cfg.weight_decay = 0.0;
  double last = 1.0;
  TrainOptions opt;
  // Stop as soon as the target is reached; the cap stays at 2000 epochs.
  struct Reached {};
  opt.on_epoch = [&](const EpochRecord& r, bool) {
    last = r.train_loss;
    if (last < 0.05) throw Reached{};
  };
  try {
    train(m, d, cfg, opt);
  } catch (const Reached&) {
  }
  MESSAGE("final training loss " << last);
  CHECK(last < 0.05);
}
