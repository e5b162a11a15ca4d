#include "vito/eval.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "vito/error.hpp"
#include "vito/train.hpp"

namespace vito {

namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> split_indices(const Dataset& d, Split split) {
  const IndexRange& r = d.split(split);
  if (r.size() == 0) throw InvalidArgument(split_name(split) + " split is empty");
  std::vector<std::size_t> v(r.size());
  std::iota(v.begin(), v.end(), r.begin);
  return v;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

nn::Tensor<float> mean_target(const Dataset& d) {
  const IndexRange& tr = d.split(Split::Train);
  if (tr.size() == 0) throw InvalidArgument("training split is empty");
  const std::size_t per = d.targets.size() / static_cast<std::size_t>(d.targets.dim(0));
  std::vector<double> acc(per, 0.0);
  for (std::size_t i = tr.begin; i < tr.end; ++i) {
    const float* t = d.targets.data() + i * per;
    for (std::size_t k = 0; k < per; ++k) acc[k] += t[k];
  }
  std::vector<int> shape = d.targets.shape();
  shape[0] = 1;
  nn::Tensor<float> out(shape);
  for (std::size_t k = 0; k < per; ++k) out[k] = static_cast<float>(acc[k] / static_cast<double>(tr.size()));
  return out;
}

nn::Tensor<float> predict_samples(const Model<float>& model, const Dataset& d, const std::vector<std::size_t>& indices,
                                  int batch_size) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  const int oh = d.target_mesh.nx(), ow = d.target_mesh.ny();
  auto out = nn::Tensor<float>::uninitialized({static_cast<int>(indices.size()), 1, oh, ow});
  const std::size_t per = static_cast<std::size_t>(oh) * ow;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::size_t e = std::min(indices.size(), b + batch_size);
    const std::vector<std::size_t> idx(indices.begin() + b, indices.begin() + e);
    const auto y = model.forward(gather(d.inputs, idx), d.input_mesh, oh, ow);
    std::copy_n(y.data(), y.size(), out.data() + b * per);
  }
  return out;
}

EvalReport evaluate_predictions(const nn::Tensor<float>& predictions, const Dataset& d, Split split) {
  const auto idx = split_indices(d, split);
  const auto truth = gather(d.targets, idx);
  if (predictions.shape() != truth.shape())
    throw InvalidArgument("predictions " + nn::shape_string(predictions.shape()) + " do not match targets " +
                          nn::shape_string(truth.shape()));
  EvalReport r;
  r.sample_indices = idx;
  r.per_sample_errors = relative_l2_per_sample(predictions, truth, 0.0);
  r.mean_error = mean_of(r.per_sample_errors);

  const auto mean = mean_target(d);
  nn::Tensor<float> baseline = nn::Tensor<float>::uninitialized(truth.shape());
  const std::size_t per = mean.size();
  for (std::size_t j = 0; j < idx.size(); ++j) std::copy_n(mean.data(), per, baseline.data() + j * per);
  r.baseline_mean_error = mean_of(relative_l2_per_sample(baseline, truth, 0.0));
  r.noise_gamma = d.noise_gamma;
  r.grid_side = d.input_mesh.nx();
  r.label = problem_name(d.spec.problem) + "_" + split_name(split);
  return r;
}

EvalReport evaluate(const Model<float>& model, const Dataset& d, Split split, int batch_size) {
  return evaluate_predictions(predict_samples(model, d, split_indices(d, split), batch_size), d, split);
}

ErrorMap error_map(const Field2D& pred, const Field2D& truth) {
  if (!(pred.mesh() == truth.mesh())) throw InvalidArgument("error_map needs prediction and truth on one mesh");
  double ss = 0.0;
  for (double v : truth.values()) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(truth.size()));
  ErrorMap out{Field2D(truth.mesh()), rms == 0.0};
  const double scale = rms == 0.0 ? 1.0 : 1.0 / rms;
  for (std::size_t k = 0; k < truth.size(); ++k)
    out.map.storage()[k] = std::abs(pred.values()[k] - truth.values()[k]) * scale;
  return out;
}

std::vector<int> seen_sides(int n, int r_max) {
  std::vector<int> out;
  for (int r = 1; r <= r_max; ++r) out.push_back(rounded_side(n, r));
  return out;
}

ResizedInputs inputs_at_side(const Dataset& d, const std::vector<std::size_t>& indices, int side, int r_max) {
  if (side < 2) throw InvalidArgument("grid side must be >= 2, got " + std::to_string(side));
  const int n = d.input_mesh.nx();
  if (d.input_mesh.ny() != n) throw InvalidArgument("variable-grid evaluation expects square inputs");
  const auto batch = gather(d.inputs, indices);
  for (int r = 1; r <= r_max; ++r) {
    if (rounded_side(n, r) != side) continue;
    return {augment_subsample(batch, r), augment_mesh(d.input_mesh, r), false};
  }
  ResizedInputs out;
  out.zero_shot = true;
  out.inputs = nn::Tensor<float>::uninitialized({static_cast<int>(indices.size()), 1, side, side});
  const std::size_t per = static_cast<std::size_t>(side) * side;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Field2D f = bilinear_resize(d.input(indices[j]), side, side);
    for (std::size_t k = 0; k < per; ++k) out.inputs[j * per + k] = static_cast<float>(f.values()[k]);
    out.mesh = f.mesh();
  }
  return out;
}

std::vector<EvalReport> evaluate_variable_grids(const Model<float>& model, const Dataset& d,
                                                const std::vector<int>& sides, Split split, int r_max,
                                                int batch_size) {
  const auto idx = split_indices(d, split);
  for (int side : sides)
    if (side < 2) throw InvalidArgument("grid side must be >= 2, got " + std::to_string(side));
  const int oh = d.target_mesh.nx(), ow = d.target_mesh.ny();
  const std::size_t per = static_cast<std::size_t>(oh) * ow;
  std::vector<EvalReport> out;
  for (int side : sides) {
    auto pred = nn::Tensor<float>::uninitialized({static_cast<int>(idx.size()), 1, oh, ow});
    bool zero_shot = false;
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
      const std::size_t e = std::min(idx.size(), b + batch_size);
      const auto in = inputs_at_side(d, {idx.begin() + b, idx.begin() + e}, side, r_max);
      zero_shot = in.zero_shot;
      const auto y = model.forward(in.inputs, in.mesh, oh, ow);
      std::copy_n(y.data(), y.size(), pred.data() + b * per);
    }
    EvalReport r = evaluate_predictions(pred, d, split);
    r.grid_side = side;
    r.zero_shot = zero_shot;
    r.label = problem_name(d.spec.problem) + "_side" + std::to_string(side) + (zero_shot ? "_zeroshot" : "");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

std::string report_metrics_text(const EvalReport& r) {
  std::ostringstream os;
  os << "label=" << r.label << '\n'
     << "samples=" << r.per_sample_errors.size() << '\n'
     << "mean_error=" << fmt(r.mean_error) << '\n'
     << "baseline_mean_error=" << fmt(r.baseline_mean_error) << '\n'
     << "noise_gamma=" << fmt(r.noise_gamma) << '\n'
     << "grid_side=" << r.grid_side << '\n'
     << "zero_shot=" << (r.zero_shot ? 1 : 0) << '\n';
  return os.str();
}

EvalReport parse_report_metrics(const std::string& text) {
  EvalReport r;
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("metrics line without '=': " + line);
      const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      seen.insert(k);
      if (k == "label") r.label = v;
      else if (k == "samples") r.per_sample_errors.assign(std::stoul(v), std::nan(""));
      else if (k == "mean_error") r.mean_error = std::stod(v);
      else if (k == "baseline_mean_error") r.baseline_mean_error = std::stod(v);
      else if (k == "noise_gamma") r.noise_gamma = std::stod(v);
      else if (k == "grid_side") r.grid_side = std::stoi(v);
      else if (k == "zero_shot") r.zero_shot = v == "1";
      else throw FormatError("unknown metrics key '" + k + "'");
    }
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed metrics value: ") + e.what());
  }
  for (const char* k : {"mean_error", "noise_gamma", "grid_side"})
    if (!seen.count(k)) throw FormatError(std::string("metrics lack key '") + k + "'");
  return r;
}

std::string summary_table(const std::vector<EvalReport>& reports) {
  std::set<double> gammas;
  std::set<int> sides;
  std::map<std::pair<int, double>, const EvalReport*> cell;
  for (const auto& r : reports) {
    gammas.insert(r.noise_gamma);
    sides.insert(r.grid_side);
    cell[{r.grid_side, r.noise_gamma}] = &r;
  }
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "grid \\ noise");
  os << buf;
  for (double g : gammas) {
    std::snprintf(buf, sizeof buf, " | %-10s", ("g=" + fixed(g, 3)).c_str());
    os << buf;
  }
  os << '\n' << std::string(12 + 13 * gammas.size(), '-') << '\n';
  for (int s : sides) {
    std::snprintf(buf, sizeof buf, "%-12s", (std::to_string(s) + "x" + std::to_string(s)).c_str());
    os << buf;
    for (double g : gammas) {
      auto it = cell.find({s, g});
      std::snprintf(buf, sizeof buf, " | %-10s", it == cell.end() ? "-" : fixed(it->second->mean_error).c_str());
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Piecewise-linear approximation of the viridis colour map.
std::array<unsigned char, 3> colour(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  std::array<unsigned char, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<unsigned char>(std::lround(stops[i][k] * (1 - f) + stops[i + 1][k] * f));
  return c;
}

std::pair<double, double> value_range(std::initializer_list<const Field2D*> fields) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* f : fields)
    for (double v : f->values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace

void write_field_png(const Field2D& field, const fs::path& path, double lo, double hi, int min_side) {
  const int nx = field.nx(), ny = field.ny();
  const int rep = std::max(1, (min_side + std::min(nx, ny) - 1) / std::min(nx, ny));
  // Image rows run along y (top = largest y), columns along x.
  const int width = nx * rep, height = ny * rep;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int row = 0; row < height; ++row) {
    const int j = ny - 1 - row / rep;
    for (int col = 0; col < width; ++col) {
      const auto c = colour((field(col / rep, j) - lo) / span);
      std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(row) * width + col) * 3);
    }
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int row = 0; row < height; ++row) png_write_row(png, rgb.data() + static_cast<std::size_t>(row) * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("write failed: " + path.string());
}

void render_report(const std::vector<EvalReport>& reports, const std::vector<PanelSample>& panels,
                   const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  std::ostringstream summary;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %8s %6s %9s %8s %11s %13s\n", "label", "noise", "grid", "zero_shot", "samples",
                "mean_error", "mean_baseline");
  summary << buf;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const EvalReport& r = reports[k];
    std::string csv = "sample,relative_l2\n";
    for (std::size_t j = 0; j < r.per_sample_errors.size(); ++j) {
      const std::size_t id = j < r.sample_indices.size() ? r.sample_indices[j] : j;
      csv += std::to_string(id) + ',' + fmt(r.per_sample_errors[j]) + '\n';
    }
    write_text(out_dir / ("errors_" + std::to_string(k) + ".csv"), csv);
    write_text(out_dir / ("metrics_" + std::to_string(k) + ".txt"), report_metrics_text(r));
    std::snprintf(buf, sizeof buf, "%-28s %8.3f %6d %9s %8zu %11.4f %13.4f\n", r.label.c_str(), r.noise_gamma,
                  r.grid_side, r.zero_shot ? "yes" : "no", r.per_sample_errors.size(), r.mean_error,
                  r.baseline_mean_error);
    summary << buf;
  }
  summary << '\n' << summary_table(reports);
  write_text(out_dir / "summary.txt", summary.str());

  for (const auto& p : panels) {
    const std::string stem = "sample_" + std::to_string(p.index) + "_";
    const auto [ilo, ihi] = value_range({&p.input});
    write_field_png(p.input, out_dir / (stem + "input.png"), ilo, ihi);
    const auto [lo, hi] = value_range({&p.truth, &p.prediction});
    write_field_png(p.truth, out_dir / (stem + "truth.png"), lo, hi);
    write_field_png(p.prediction, out_dir / (stem + "prediction.png"), lo, hi);
    const ErrorMap em = error_map(p.prediction, p.truth);
    const auto [elo, ehi] = value_range({&em.map});
    write_field_png(em.map, out_dir / (stem + "error.png"), 0.0, std::max(ehi, elo));
  }
}

}  // namespace vito
