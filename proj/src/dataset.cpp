#include "vito/dataset.hpp"

#include <omp.h>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "vito/error.hpp"
#include "vito/rng.hpp"

namespace vito {

namespace fs = std::filesystem;

std::string problem_name(Problem p) {
  switch (p) {
    case Problem::Wave:
      return "wave";
    case Problem::NavierStokes:
      return "navier_stokes";
    case Problem::Darcy:
      return "darcy";
  }
  return "unknown";
}

Problem parse_problem(const std::string& name) {
  if (name == "wave") return Problem::Wave;
  if (name == "ns" || name == "navier_stokes") return Problem::NavierStokes;
  if (name == "darcy") return Problem::Darcy;
  throw InvalidArgument("unknown problem '" + name + "' (expected wave, ns or darcy)");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// DatasetSpec

void DatasetSpec::validate() const {
  if (n_samples < 3) throw InvalidArgument("n_samples must be >= 3 (one per split)");
  if (sr_factor < 1) throw InvalidArgument("sr_factor must be >= 1");
  if (fine_n < 2) throw InvalidArgument("fine_n must be >= 2");
  if (fine_n % sr_factor != 0)
    throw InvalidArgument("fine_n (" + std::to_string(fine_n) + ") must be divisible by sr_factor (" +
                          std::to_string(sr_factor) + ")");
  if (fine_n / sr_factor < 2) throw InvalidArgument("coarse side fine_n / sr_factor must be >= 2");
  switch (problem) {
    case Problem::Wave:
      wave.validate();
      bumps.validate();
      break;
    case Problem::NavierStokes:
      ns.validate();
      break;
    case Problem::Darcy:
      DarcySpec{fine_n, darcy_forcing}.validate();
      if (!(darcy_high > 0) || !(darcy_low > 0)) throw InvalidArgument("permeability values must be positive");
      break;
  }
}

Mesh2D DatasetSpec::fine_mesh() const {
  switch (problem) {
    case Problem::Wave:
      return Mesh2D(fine_n, fine_n, wave.L, wave.L);
    case Problem::NavierStokes:
      return Mesh2D(fine_n, fine_n, 1.0, 1.0, true);
    case Problem::Darcy:
      break;
  }
  return Mesh2D::unit_square(fine_n);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw FormatError("bad number for " + key + ": '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw FormatError("bad integer for " + key + ": '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || v[0] == '-') throw FormatError("bad unsigned integer for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

std::string DatasetSpec::params_text() const {
  std::ostringstream os;
  os << "wave.L=" << fmt(wave.L) << ";wave.T=" << fmt(wave.T) << ";wave.c0_low=" << fmt(wave.c0_low)
     << ";wave.c0_high=" << fmt(wave.c0_high) << ";wave.cfl_safety=" << fmt(wave.cfl_safety)
     << ";bumps.count=" << bumps.count << ";bumps.amp_low=" << fmt(bumps.amp_low)
     << ";bumps.amp_high=" << fmt(bumps.amp_high) << ";bumps.width=" << fmt(bumps.width) << ";ns.nu=" << fmt(ns.nu)
     << ";ns.T=" << fmt(ns.T) << ";ns.dt=" << fmt(ns.dt) << ";ns.forcing=" << (ns.forcing ? 1 : 0)
     << ";darcy.high=" << fmt(darcy_high) << ";darcy.low=" << fmt(darcy_low) << ";darcy.forcing=" << fmt(darcy_forcing);
  return os.str();
}

void DatasetSpec::apply_params_text(const std::string& text) {
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("bad problem parameter '" + item + "'");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    if (k == "wave.L") wave.L = to_double(k, v);
    else if (k == "wave.T") wave.T = to_double(k, v);
    else if (k == "wave.c0_low") wave.c0_low = to_double(k, v);
    else if (k == "wave.c0_high") wave.c0_high = to_double(k, v);
    else if (k == "wave.cfl_safety") wave.cfl_safety = to_double(k, v);
    else if (k == "bumps.count") bumps.count = static_cast<int>(to_int(k, v));
    else if (k == "bumps.amp_low") bumps.amp_low = to_double(k, v);
    else if (k == "bumps.amp_high") bumps.amp_high = to_double(k, v);
    else if (k == "bumps.width") bumps.width = to_double(k, v);
    else if (k == "ns.nu") ns.nu = to_double(k, v);
    else if (k == "ns.T") ns.T = to_double(k, v);
    else if (k == "ns.dt") ns.dt = to_double(k, v);
    else if (k == "ns.forcing") ns.forcing = to_int(k, v) != 0;
    else if (k == "darcy.high") darcy_high = to_double(k, v);
    else if (k == "darcy.low") darcy_low = to_double(k, v);
    else if (k == "darcy.forcing") darcy_forcing = to_double(k, v);
    else throw FormatError("unknown problem parameter '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Generation

namespace {

Field2D round_to_float(Field2D f) {
  for (auto& v : f.storage()) v = static_cast<float>(v);
  return f;
}

}  // namespace

SamplePair generate_sample(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  const Mesh2D mesh = spec.fine_mesh();
  Rng rng = derive_stream(spec.seed, index, stream::kSample);
  Field2D cause(mesh), solution(mesh);
  switch (spec.problem) {
    case Problem::Wave: {
      cause = gaussian_bumps(mesh, spec.bumps, rng);
      std::uniform_real_distribution<double> c0(spec.wave.c0_low, spec.wave.c0_high);
      const Field2D c = wave_speed(mesh, c0(rng));
      // The walls are Dirichlet: the recoverable initial state is zero there.
      for (int i = 0; i < mesh.nx(); ++i) {
        cause(i, 0) = 0.0;
        cause(i, mesh.ny() - 1) = 0.0;
      }
      for (int j = 0; j < mesh.ny(); ++j) {
        cause(0, j) = 0.0;
        cause(mesh.nx() - 1, j) = 0.0;
      }
      solution = solve_wave(cause, c, spec.wave);
      break;
    }
    case Problem::NavierStokes:
      cause = sample_grf(mesh, GrfSpec::navier_stokes(), rng);
      solution = solve_navier_stokes(cause, spec.ns);
      break;
    case Problem::Darcy:
      cause = binarize(sample_grf(mesh, GrfSpec::darcy(), rng), spec.darcy_high, spec.darcy_low);
      solution = solve_darcy(cause, Field2D(mesh, spec.darcy_forcing));
      break;
  }
  return {round_to_float(subsample(solution, spec.sr_factor)), round_to_float(std::move(cause))};
}

std::array<IndexRange, 3> default_splits(std::size_t n) {
  if (n < 3) throw InvalidArgument("need at least 3 samples to split");
  const auto tenth = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  const std::size_t n_val = std::max<std::size_t>(1, tenth);
  const std::size_t n_test = std::max<std::size_t>(1, tenth);
  const std::size_t n_train = n - n_val - n_test;
  return {IndexRange{0, n_train}, IndexRange{n_train, n_train + n_val}, IndexRange{n_train + n_val, n}};
}

namespace {

void copy_into(const Field2D& f, float* dst) {
  for (std::size_t i = 0; i < f.size(); ++i) dst[i] = static_cast<float>(f.values()[i]);
}

Field2D field_from(const nn::Tensor<float>& t, std::size_t i, const Mesh2D& mesh) {
  if (i >= static_cast<std::size_t>(t.dim(0)))
    throw InvalidArgument("sample index " + std::to_string(i) + " out of range");
  const float* p = t.sample(static_cast<int>(i));
  std::vector<double> v(p, p + mesh.size());
  return Field2D(mesh, std::move(v));
}

}  // namespace

Field2D Dataset::input(std::size_t i) const { return field_from(inputs, i, input_mesh); }
Field2D Dataset::clean_input(std::size_t i) const {
  return field_from(clean_inputs.empty() ? inputs : clean_inputs, i, input_mesh);
}
Field2D Dataset::target(std::size_t i) const { return field_from(targets, i, target_mesh); }

double value_variance(const nn::Tensor<float>& t) {
  if (t.empty()) return 0.0;
  double mean = 0.0;
  for (float v : t.storage()) mean += v;
  mean /= static_cast<double>(t.size());
  double ss = 0.0;
  for (float v : t.storage()) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(t.size());
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  const Mesh2D fine = spec.fine_mesh();
  const SamplePair first = generate_sample(spec, 0);
  d.input_mesh = first.input.mesh();
  d.target_mesh = fine;
  const int n = spec.n_samples, ni = d.input_mesh.nx(), nt = fine.nx();
  d.inputs = nn::Tensor<float>({n, 1, ni, ni});
  d.targets = nn::Tensor<float>({n, 1, nt, nt});
  copy_into(first.input, d.inputs.sample(0));
  copy_into(first.target, d.targets.sample(0));

  std::vector<std::exception_ptr> failures(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 1; i < n; ++i) {
    try {
      const SamplePair p = generate_sample(spec, static_cast<std::size_t>(i));
      copy_into(p.input, d.inputs.sample(i));
      copy_into(p.target, d.targets.sample(i));
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const Error& e) {
      throw Error(e.category(), "sample " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw NumericError("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  d.splits = default_splits(static_cast<std::size_t>(n));
  d.sigma2 = value_variance(d.inputs);
  return d;
}

void add_noise(Dataset& d, double gamma, std::uint64_t seed) {
  if (d.noise_gamma != 0.0) throw InvalidState("dataset already carries noise (gamma = " + fmt(d.noise_gamma) + ")");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("noise gamma must be >= 0");
  if (gamma == 0.0) return;
  d.clean_inputs = d.inputs;
  const double sd = gamma * std::sqrt(d.sigma2);
  const int n = static_cast<int>(d.size());
  const std::size_t per = d.inputs.size() / static_cast<std::size_t>(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i), stream::kNoise);
    std::normal_distribution<double> nd(0.0, sd);
    float* p = d.inputs.sample(i);
    for (std::size_t k = 0; k < per; ++k) p[k] = static_cast<float>(p[k] + nd(rng));
  }
  d.noise_gamma = gamma;
  d.noise_seed = seed;
}

// ---------------------------------------------------------------------------
// Storage

namespace {

constexpr char kTensorMagic[8] = {'V', 'I', 'T', 'O', 'D', 'S', '1', '\0'};

std::vector<char> tensor_bytes(const nn::Tensor<float>& t) {
  io::Writer w;
  w.bytes(kTensorMagic, 8);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32(t.data(), t.size());
  return w.buffer();
}

nn::Tensor<float> parse_tensor(const std::vector<char>& buf, const std::string& what) {
  io::Reader r(buf.data(), buf.size(), what);
  char magic[8];
  r.bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kTensorMagic)) throw FormatError(what + ": not a tensor file (bad magic)");
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError(what + ": implausible rank " + std::to_string(rank));
  std::vector<int> shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    const std::uint32_t v = r.u32();
    if (v > (1u << 30)) throw FormatError(what + ": implausible dimension " + std::to_string(v));
    d = static_cast<int>(v);
    count *= v;
  }
  r.need(count * sizeof(float));
  if (r.remaining() != count * sizeof(float)) throw FormatError(what + ": trailing bytes after tensor data");
  auto t = nn::Tensor<float>::uninitialized(shape);
  r.f32(t.data(), count);
  return t;
}

std::string crc_hex(std::uint32_t c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08" PRIx32, c);
  return buf;
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string mesh_text(const Mesh2D& m) {
  return std::to_string(m.nx()) + "," + std::to_string(m.ny()) + "," + fmt(m.lx()) + "," + fmt(m.ly()) + "," +
         (m.periodic() ? "1" : "0");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(tok);
  return out;
}

Mesh2D parse_mesh(const std::string& key, const std::string& s) {
  const auto p = split_commas(s);
  if (p.size() != 5) throw FormatError("bad mesh for " + key + ": '" + s + "'");
  return Mesh2D(static_cast<int>(to_int(key, p[0])), static_cast<int>(to_int(key, p[1])), to_double(key, p[2]),
                to_double(key, p[3]), to_int(key, p[4]) != 0);
}

std::string shape_text(const nn::Tensor<float>& t) {
  std::string s;
  for (int i = 0; i < t.rank(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
  return s;
}

}  // namespace

void save_tensor(const nn::Tensor<float>& t, const fs::path& path) { write_file(path, tensor_bytes(t)); }

nn::Tensor<float> load_tensor(const fs::path& path) { return parse_tensor(io::read_file(path), path.string()); }

void save_dataset(const Dataset& d, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  std::vector<std::pair<std::string, const nn::Tensor<float>*>> files = {{"inputs.bin", &d.inputs},
                                                                         {"targets.bin", &d.targets}};
  if (!d.clean_inputs.empty()) files.emplace_back("inputs_clean.bin", &d.clean_inputs);

  std::ostringstream m;
  m << "format_version=" << kDatasetFormatVersion << '\n'
    << "problem=" << problem_name(d.spec.problem) << '\n'
    << "n_samples=" << d.size() << '\n'
    << "sr_factor=" << d.spec.sr_factor << '\n'
    << "fine_n=" << d.spec.fine_n << '\n'
    << "seed=" << d.spec.seed << '\n'
    << "input_shape=" << shape_text(d.inputs) << '\n'
    << "target_shape=" << shape_text(d.targets) << '\n'
    << "input_mesh=" << mesh_text(d.input_mesh) << '\n'
    << "target_mesh=" << mesh_text(d.target_mesh) << '\n'
    << "noise_gamma=" << fmt(d.noise_gamma) << '\n'
    << "noise_seed=" << d.noise_seed << '\n'
    << "sigma2=" << fmt(d.sigma2) << '\n';
  for (int s = 0; s < 3; ++s)
    m << "split_" << split_name(static_cast<Split>(s)) << '=' << d.splits[s].begin << ',' << d.splits[s].end << '\n';
  m << "problem_params=" << d.spec.params_text() << '\n';
  for (const auto& [name, t] : files) {
    const auto bytes = tensor_bytes(*t);
    write_file(dir / name, bytes);
    m << "checksum." << name << '=' << crc_hex(io::crc32_of(bytes.data(), bytes.size())) << '\n';
  }
  const std::string text = m.str();
  write_file(dir / "manifest", std::vector<char>(text.begin(), text.end()));
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest";
  if (!fs::exists(mpath)) throw IoError("no dataset manifest at " + mpath.string());
  const auto raw = io::read_file(mpath);
  std::map<std::string, std::string> kv;
  {
    std::istringstream is(std::string(raw.begin(), raw.end()));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("manifest " + mpath.string() + " lacks key '" + k + "'");
    return it->second;
  };
  const long long version = to_int("format_version", get("format_version"));
  if (version != kDatasetFormatVersion)
    throw VersionMismatch("dataset " + dir.string() + " has format version " + std::to_string(version) +
                          ", expected " + std::to_string(kDatasetFormatVersion));

  Dataset d;
  d.spec.problem = parse_problem(get("problem"));
  d.spec.n_samples = static_cast<int>(to_int("n_samples", get("n_samples")));
  d.spec.sr_factor = static_cast<int>(to_int("sr_factor", get("sr_factor")));
  d.spec.fine_n = static_cast<int>(to_int("fine_n", get("fine_n")));
  d.spec.seed = to_u64("seed", get("seed"));
  d.spec.apply_params_text(get("problem_params"));
  d.input_mesh = parse_mesh("input_mesh", get("input_mesh"));
  d.target_mesh = parse_mesh("target_mesh", get("target_mesh"));
  d.noise_gamma = to_double("noise_gamma", get("noise_gamma"));
  d.noise_seed = to_u64("noise_seed", get("noise_seed"));
  d.sigma2 = to_double("sigma2", get("sigma2"));
  for (int s = 0; s < 3; ++s) {
    const std::string key = "split_" + split_name(static_cast<Split>(s));
    const auto p = split_commas(get(key));
    if (p.size() != 2) throw FormatError("bad split range for " + key);
    d.splits[s] = IndexRange{to_u64(key, p[0]), to_u64(key, p[1])};
  }

  auto load = [&](const std::string& name) {
    const fs::path path = dir / name;
    const auto bytes = io::read_file(path);
    const std::string expected = get("checksum." + name);
    // Structure first, so a short file reports truncation rather than a bad checksum.
    auto t = parse_tensor(bytes, path.string());
    if (crc_hex(io::crc32_of(bytes.data(), bytes.size())) != expected)
      throw ChecksumError(path.string() + ": CRC-32 does not match the manifest");
    return t;
  };
  d.inputs = load("inputs.bin");
  d.targets = load("targets.bin");
  if (d.noise_gamma != 0.0) d.clean_inputs = load("inputs_clean.bin");

  const auto n = static_cast<std::size_t>(d.spec.n_samples);
  if (d.size() != n || static_cast<std::size_t>(d.targets.dim(0)) != n)
    throw FormatError("dataset " + dir.string() + ": sample count disagrees with the manifest");
  if (shape_text(d.inputs) != get("input_shape") || shape_text(d.targets) != get("target_shape"))
    throw FormatError("dataset " + dir.string() + ": tensor shapes disagree with the manifest");
  if (d.splits[0].begin != 0 || d.splits[0].end != d.splits[1].begin || d.splits[1].end != d.splits[2].begin ||
      d.splits[2].end != n)
    throw FormatError("dataset " + dir.string() + ": splits do not partition the samples");
  return d;
}

}  // namespace vito
