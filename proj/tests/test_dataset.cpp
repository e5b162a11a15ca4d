#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "vito/dataset.hpp"
#include "vito/error.hpp"

using namespace vito;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec(Problem p, int n_samples = 6) {
  DatasetSpec s;
  s.problem = p;
  s.n_samples = n_samples;
  s.fine_n = 32;
  s.sr_factor = 4;
  s.seed = 17;
  if (p == Problem::NavierStokes) {
    s.ns.T = 0.05;
    s.ns.dt = 1e-2;
  }
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vito_test_dataset_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("problem names") {
  CHECK(parse_problem("ns") == Problem::NavierStokes);
  CHECK(parse_problem(problem_name(Problem::Wave)) == Problem::Wave);
  CHECK(parse_problem(problem_name(Problem::Darcy)) == Problem::Darcy);
  CHECK_THROWS_AS(parse_problem("heat"), InvalidArgument);
}

TEST_CASE("spec validation") {
  DatasetSpec s = small_spec(Problem::Darcy);
  s.sr_factor = 5;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec(Problem::Darcy);
  s.n_samples = 2;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("default splits are a contiguous 80/10/10 partition") {
  const auto s = default_splits(1000);
  CHECK(s[0] == IndexRange{0, 800});
  CHECK(s[1] == IndexRange{800, 900});
  CHECK(s[2] == IndexRange{900, 1000});
  const auto t = default_splits(3);
  CHECK(t[0].size() == 1);
  CHECK(t[1].size() == 1);
  CHECK(t[2].size() == 1);
}

TEST_CASE("Darcy 16 -> 128 shapes") {
  DatasetSpec s;
  s.problem = Problem::Darcy;
  s.n_samples = 3;
  s.fine_n = 128;
  s.sr_factor = 8;
  const Dataset d = generate(s);
  CHECK(d.inputs.shape() == std::vector<int>{3, 1, 16, 16});
  CHECK(d.targets.shape() == std::vector<int>{3, 1, 128, 128});
  CHECK(d.input_mesh.nx() == 16);
  CHECK(d.target_mesh == Mesh2D::unit_square(128));
  for (float v : d.targets.storage()) CHECK((v == 12.0f || v == 3.0f));
}

TEST_CASE("inputs are strided samples of an independently solved state") {
  for (Problem p : {Problem::Darcy, Problem::Wave, Problem::NavierStokes}) {
    CAPTURE(problem_name(p));
    const DatasetSpec s = small_spec(p, 3);
    const Dataset d = generate(s);
    const std::size_t i = 2;
    const Field2D cause = d.target(i);
    Field2D solution(s.fine_mesh());
    switch (p) {
      case Problem::Wave: {
        Rng rng = derive_stream(s.seed, i, stream::kSample);
        (void)gaussian_bumps(s.fine_mesh(), s.bumps, rng);
        std::uniform_real_distribution<double> c0(s.wave.c0_low, s.wave.c0_high);
        solution = solve_wave(cause, wave_speed(s.fine_mesh(), c0(rng)), s.wave);
        break;
      }
      case Problem::NavierStokes:
        solution = solve_navier_stokes(cause, s.ns);
        break;
      case Problem::Darcy:
        solution = solve_darcy(cause, Field2D(s.fine_mesh(), 1.0));
        break;
    }
    const Field2D in = d.input(i);
    REQUIRE(in.mesh().nx() == 8);
    double worst = 0.0, scale = 0.0;
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) {
        worst = std::max(worst, std::abs(in(a, b) - solution(4 * a, 4 * b)));
        scale = std::max(scale, std::abs(solution(4 * a, 4 * b)));
      }
    // The stored target is float-rounded, so the re-solve differs slightly.
    CHECK(worst <= 1e-5 * scale + 1e-12);
  }
}

TEST_CASE("wave targets vanish on the walls") {
  const Dataset d = generate(small_spec(Problem::Wave, 3));
  const Field2D t = d.target(1);
  const int n = t.mesh().nx();
  for (int k = 0; k < n; ++k) {
    CHECK(t(k, 0) == 0.0);
    CHECK(t(k, n - 1) == 0.0);
    CHECK(t(0, k) == 0.0);
    CHECK(t(n - 1, k) == 0.0);
  }
}

TEST_CASE("generation is deterministic and per-sample reproducible") {
  const DatasetSpec s = small_spec(Problem::Darcy);
  const Dataset a = generate(s), b = generate(s);
  CHECK(a == b);
  const SamplePair p = generate_sample(s, 4);
  const Field2D t = a.target(4), in = a.input(4);
  for (std::size_t k = 0; k < p.target.size(); ++k) REQUIRE(p.target.values()[k] == t.values()[k]);
  for (std::size_t k = 0; k < p.input.size(); ++k) REQUIRE(p.input.values()[k] == in.values()[k]);
  DatasetSpec other = s;
  other.seed = 18;
  CHECK_FALSE(generate(other).targets == a.targets);
}

TEST_CASE("sigma^2 matches a two-pass recomputation") {
  const Dataset d = generate(small_spec(Problem::Darcy));
  long double sum = 0;
  for (float v : d.inputs.storage()) sum += v;
  const long double mean = sum / d.inputs.size();
  long double ss = 0;
  for (float v : d.inputs.storage()) ss += (v - mean) * (v - mean);
  const double oracle = static_cast<double>(ss / d.inputs.size());
  CHECK(d.sigma2 > 0.0);
  CHECK(std::abs(d.sigma2 - oracle) <= 1e-10 * oracle);
}

TEST_CASE("noise has variance gamma^2 sigma^2 and leaves targets alone") {
  DatasetSpec s = small_spec(Problem::Darcy, 3);
  s.fine_n = 192;
  s.sr_factor = 1;  // 3 * 192^2 > 1e5 noisy values
  Dataset d = generate(s);
  const Dataset clean = d;
  add_noise(d, 0.1, 5);
  CHECK(d.targets == clean.targets);
  CHECK(d.clean_inputs == clean.inputs);
  CHECK(d.sigma2 == clean.sigma2);
  double sum = 0, ss = 0;
  const std::size_t n = d.inputs.size();
  REQUIRE(n >= 100000);
  for (std::size_t k = 0; k < n; ++k) sum += d.inputs.data()[k] - clean.inputs.data()[k];
  const double mean = sum / n;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = d.inputs.data()[k] - clean.inputs.data()[k] - mean;
    ss += e * e;
  }
  const double var = ss / n, expected = 0.01 * d.sigma2;
  CHECK(std::abs(var / expected - 1.0) <= 0.05);
  CHECK_THROWS_AS(add_noise(d, 0.1, 5), InvalidState);

  Dataset z = clean;
  add_noise(z, 0.0, 5);
  CHECK(z == clean);
}

TEST_CASE("noise is reproducible from its seed") {
  const Dataset base = generate(small_spec(Problem::Darcy));
  Dataset a = base, b = base, c = base;
  add_noise(a, 0.05, 9);
  add_noise(b, 0.05, 9);
  add_noise(c, 0.05, 10);
  CHECK(a == b);
  CHECK_FALSE(a.inputs == c.inputs);
}

TEST_CASE("save and load roundtrip") {
  Dataset d = generate(small_spec(Problem::NavierStokes));
  add_noise(d, 0.01, 3);
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back == d);
  fs::remove_all(dir);
}

TEST_CASE("corrupted containers raise distinct errors") {
  const Dataset d = generate(small_spec(Problem::Darcy));
  const fs::path dir = temp_dir("corrupt");
  save_dataset(d, dir);
  const auto inputs = read_bytes(dir / "inputs.bin");
  const auto manifest = read_bytes(dir / "manifest");

  SUBCASE("tampered values") {
    auto b = inputs;
    b[b.size() - 3] ^= 0x10;
    write_bytes(dir / "inputs.bin", b);
    CHECK_THROWS_AS(load_dataset(dir), ChecksumError);
  }
  SUBCASE("truncated tensor") {
    auto b = inputs;
    b.resize(b.size() - 7);
    write_bytes(dir / "inputs.bin", b);
    CHECK_THROWS_AS(load_dataset(dir), TruncatedFile);
  }
  SUBCASE("future format version") {
    std::string m(manifest.begin(), manifest.end());
    m.replace(m.find("format_version=1"), 16, "format_version=2");
    write_bytes(dir / "manifest", std::vector<char>(m.begin(), m.end()));
    CHECK_THROWS_AS(load_dataset(dir), VersionMismatch);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_dataset(dir / "absent"), IoError); }
  fs::remove_all(dir);
}

TEST_CASE("tensor files roundtrip") {
  nn::Tensor<float> t({2, 3, 4});
  for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = 0.25f * k - 1.0f;
  const fs::path p = fs::temp_directory_path() / "vito_test_tensor.bin";
  save_tensor(t, p);
  CHECK(load_tensor(p) == t);
  fs::remove(p);
}
