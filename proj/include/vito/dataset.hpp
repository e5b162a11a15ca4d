#pragma once

// Supervised pairs (coarse observation -> fine causal field), their splits,
// noise variants, and the on-disk container.
//
// Container layout (a directory):
//   manifest            key=value lines, see save()
//   inputs.bin          (N, 1, n, n) network inputs (noisy if noise_gamma > 0)
//   targets.bin         (N, 1, s*n, s*n)
//   inputs_clean.bin    clean inputs, present only when noise_gamma > 0
// Tensor files: "VITODS1\0", u32 rank, u32 dims[rank], f32 values (LE, row-major).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "vito/mesh.hpp"
#include "vito/nn/tensor.hpp"
#include "vito/random_fields.hpp"
#include "vito/solvers.hpp"

namespace vito {

enum class Problem { Wave, NavierStokes, Darcy };

std::string problem_name(Problem p);
/// Accepts "wave", "ns", "navier_stokes", "darcy".
Problem parse_problem(const std::string& name);

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string split_name(Split s);

struct DatasetSpec {
  Problem problem = Problem::Darcy;
  int n_samples = 1000;
  int sr_factor = 8;
  int fine_n = 128;
  std::uint64_t seed = 0;

  WaveSpec wave;
  BumpSpec bumps;
  NsSpec ns;
  double darcy_high = 12.0;
  double darcy_low = 3.0;
  double darcy_forcing = 1.0;

  /// Throws InvalidArgument.
  void validate() const;

  /// Fine (target) mesh of the problem.
  Mesh2D fine_mesh() const;

  /// Solver and sampler parameters as one `k=v;k=v` line, exact to round-trip.
  std::string params_text() const;
  /// Applies a params_text() line onto this spec.
  void apply_params_text(const std::string& text);

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct SamplePair {
  Field2D input;
  Field2D target;
};

/// Sample `index` of the dataset `spec` describes. Depends only on
/// (spec, index). Values are rounded to float precision.
SamplePair generate_sample(const DatasetSpec& spec, std::size_t index);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Contiguous 80/10/10 partition; validation and test get at least one each.
std::array<IndexRange, 3> default_splits(std::size_t n);

struct Dataset {
  DatasetSpec spec;
  Mesh2D input_mesh{2, 2, 1.0, 1.0};
  Mesh2D target_mesh{2, 2, 1.0, 1.0};
  nn::Tensor<float> inputs;        // (N, 1, n, n)
  nn::Tensor<float> targets;       // (N, 1, s*n, s*n)
  nn::Tensor<float> clean_inputs;  // empty unless noise_gamma > 0
  std::array<IndexRange, 3> splits;
  double noise_gamma = 0.0;
  std::uint64_t noise_seed = 0;
  double sigma2 = 0.0;  // variance of all clean input values

  std::size_t size() const { return inputs.empty() ? 0 : static_cast<std::size_t>(inputs.dim(0)); }
  const IndexRange& split(Split s) const { return splits[static_cast<int>(s)]; }

  Field2D input(std::size_t i) const;
  Field2D clean_input(std::size_t i) const;
  Field2D target(std::size_t i) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Runs the solvers for every sample (parallel over samples).
Dataset generate(const DatasetSpec& spec);

/// Population variance of all values, accumulated in double.
double value_variance(const nn::Tensor<float>& t);

/// Adds i.i.d. N(0, (gamma * sigma_D)^2) to every input value; targets are
/// untouched. Throws InvalidState if the dataset is already noisy.
void add_noise(Dataset& dataset, double gamma, std::uint64_t seed);

inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws VersionMismatch, ChecksumError, TruncatedFile, FormatError, IoError.
Dataset load_dataset(const std::filesystem::path& dir);

void save_tensor(const nn::Tensor<float>& t, const std::filesystem::path& path);
nn::Tensor<float> load_tensor(const std::filesystem::path& path);

}  // namespace vito
