#pragma once

// Test-set metrics, error maps, variable-grid evaluation and report files.

#include <filesystem>
#include <string>
#include <vector>

#include "vito/dataset.hpp"
#include "vito/model.hpp"

namespace vito {

struct EvalReport {
  std::string label;  // free-form run/config name used in summaries
  std::vector<double> per_sample_errors;
  std::vector<std::size_t> sample_indices;
  double mean_error = 0.0;
  double baseline_mean_error = 0.0;  // mean-predictor
  double noise_gamma = 0.0;
  int grid_side = 0;       // input side evaluated
  bool zero_shot = false;  // input produced by resizing rather than subsampling
};

/// Relative L2 (no stabilizer) of eval-mode predictions over a split, plus
/// the error of predicting the training-split mean target for every sample.
/// Throws InvalidArgument on an empty split.
EvalReport evaluate(const Model<float>& model, const Dataset& dataset, Split split, int batch_size = 16);

/// Same metric for precomputed predictions (N, 1, H, W) of the split.
EvalReport evaluate_predictions(const nn::Tensor<float>& predictions, const Dataset& dataset, Split split);

/// Pixelwise mean of the training-split targets.
nn::Tensor<float> mean_target(const Dataset& dataset);

/// Eval-mode predictions at the target resolution for dataset samples.
nn::Tensor<float> predict_samples(const Model<float>& model, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices, int batch_size = 16);

struct ErrorMap {
  Field2D map;
  bool zero_truth = false;  // truth identically zero: map is the absolute error
};

/// |pred - truth| / rms(truth). Its RMS equals the relative L2 error.
ErrorMap error_map(const Field2D& pred, const Field2D& truth);

/// Input batch for another side: stride subsampling when `side` is one of
/// the rounded n/r sides for r = 1..r_max, bilinear resizing otherwise.
struct ResizedInputs {
  nn::Tensor<float> inputs;
  Mesh2D mesh{2, 2, 1.0, 1.0};
  bool zero_shot = false;
};
ResizedInputs inputs_at_side(const Dataset& dataset, const std::vector<std::size_t>& indices, int side,
                             int r_max = 9);

/// One report per side, evaluated against the unchanged fine targets.
std::vector<EvalReport> evaluate_variable_grids(const Model<float>& model, const Dataset& dataset,
                                                const std::vector<int>& sides, Split split = Split::Test,
                                                int r_max = 9, int batch_size = 8);

/// Sides {round(n / r) : r = 1..r_max}.
std::vector<int> seen_sides(int n, int r_max);

struct PanelSample {
  std::size_t index = 0;
  Field2D input;
  Field2D truth;
  Field2D prediction;
};

/// Writes, under out_dir:
///   errors_<k>.csv          sample,relative_l2 for report k
///   summary.txt             one row per report (label, noise, grid, mean, baseline)
///   metrics_<k>.txt         key=value copy of each report's scalars
///   sample_<i>_{input,truth,prediction,error}.png for each panel sample
/// Throws IoError naming the path on failure.
void render_report(const std::vector<EvalReport>& reports, const std::vector<PanelSample>& panels,
                   const std::filesystem::path& out_dir);

/// Plain-text table with rows = grid side and columns = noise level.
std::string summary_table(const std::vector<EvalReport>& reports);

/// key=value text with the scalar fields of a report (per-sample list excluded).
std::string report_metrics_text(const EvalReport& report);
EvalReport parse_report_metrics(const std::string& text);

/// Colour-mapped PNG of a field; values are clamped to [lo, hi]. Sides
/// below `min_side` are enlarged by pixel replication.
void write_field_png(const Field2D& field, const std::filesystem::path& path, double lo, double hi,
                     int min_side = 128);

}  // namespace vito
