// vito: generate datasets, train, evaluate, predict and summarize runs.
//
// Every subcommand accepts --config FILE with key=value lines; a key names a
// long flag of that subcommand (without the dashes). Flags given on the
// command line override the file. Failures print one line
//   error: <category>: <message>
// and exit with status 1 (usage errors: category "usage", status 2).

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vito/dataset.hpp"
#include "vito/error.hpp"
#include "vito/eval.hpp"
#include "vito/model.hpp"
#include "vito/train.hpp"

namespace fs = std::filesystem;
using namespace vito;

namespace {

struct GenerateArgs {
  std::string problem = "darcy";
  int fine = 128;
  int sr = 8;
  int n = 1000;
  std::uint64_t seed = 0;
  std::string out;
  double t_final = -1.0;
  double nu = -1.0;
  double dt = -1.0;
};

struct ModelArgs {
  std::string widths;
  int vit_blocks = -1, vit_heads = -1, vit_embed = -1, vit_mlp = -1;
};

struct TrainArgs {
  std::string data, out;
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
  TrainConfig cfg;
  std::uint64_t init_seed = 0;
  ModelArgs model;
};

struct EvalArgs {
  std::string checkpoint, data, out;
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
  std::string split = "test";
  std::vector<int> sides;
  int r_max = 9;
  int panels = 2;
  int batch = 16;
  long long fresh_seed = -1;
  std::string label;
};

struct PredictArgs {
  std::string checkpoint, data, out;
  std::vector<std::size_t> indices;
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
};

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw InvalidArgument("unknown split '" + s + "' (expected train, val or test)");
}

ViTOConfig preset_for(Problem p) {
  switch (p) {
    case Problem::Wave:
      return ViTOConfig::wave();
    case Problem::NavierStokes:
      return ViTOConfig::navier_stokes();
    case Problem::Darcy:
      break;
  }
  return ViTOConfig::darcy();
}

int dataset_sr(const Dataset& d) {
  const int n = d.input_mesh.nx(), f = d.target_mesh.nx();
  if (f % n != 0) throw FormatError("target side " + std::to_string(f) + " is not a multiple of input side " +
                                    std::to_string(n));
  return f / n;
}

ViTOConfig model_config(const Dataset& d, const ModelArgs& m) {
  ViTOConfig c = preset_for(d.spec.problem);
  c.sr_factor = dataset_sr(d);
  if (!m.widths.empty()) {
    std::istringstream is(m.widths);
    std::string tok;
    int i = 0;
    while (std::getline(is, tok, ',')) {
      if (i >= 4) throw InvalidConfig("--widths needs 4 comma-separated values");
      try {
        c.channel_widths[i++] = std::stoi(tok);
      } catch (const std::logic_error&) {
        throw InvalidConfig("bad --widths entry '" + tok + "'");
      }
    }
    if (i != 4) throw InvalidConfig("--widths needs 4 comma-separated values");
  }
  if (m.vit_blocks >= 0) c.vit_blocks = m.vit_blocks;
  if (m.vit_heads >= 0) c.vit_heads = m.vit_heads;
  if (m.vit_embed >= 0) c.vit_embed_dim = m.vit_embed;
  if (m.vit_mlp >= 0) c.vit_mlp_dim = m.vit_mlp;
  c.validate();
  return c;
}

Dataset load_with_noise(const std::string& dir, double gamma, std::uint64_t seed) {
  Dataset d = load_dataset(dir);
  if (gamma > 0.0) {
    if (d.noise_gamma != 0.0)
      throw InvalidState("dataset " + dir + " already carries noise; drop --noise or use the clean dataset");
    add_noise(d, gamma, seed);
  }
  return d;
}

void check_compatible(const Model<float>& m, const Dataset& d) {
  if (m.config().sr_factor != dataset_sr(d))
    throw ConfigMismatch("checkpoint super-resolution factor " + std::to_string(m.config().sr_factor) +
                         " differs from the dataset's " + std::to_string(dataset_sr(d)));
}

// ---------------------------------------------------------------------------

int cmd_generate(const GenerateArgs& a) {
  DatasetSpec s;
  s.problem = parse_problem(a.problem);
  s.fine_n = a.fine;
  s.sr_factor = a.sr;
  s.n_samples = a.n;
  s.seed = a.seed;
  if (a.t_final >= 0) {
    s.ns.T = a.t_final;
    s.wave.T = a.t_final;
  }
  if (a.nu >= 0) s.ns.nu = a.nu;
  if (a.dt >= 0) s.ns.dt = a.dt;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = generate(s);
  save_dataset(d, a.out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("generated %s: %zu samples, input %dx%d, target %dx%d, splits %zu/%zu/%zu, sigma2 %.6g (%.1f s)\n",
              problem_name(s.problem).c_str(), d.size(), d.input_mesh.nx(), d.input_mesh.ny(), d.target_mesh.nx(),
              d.target_mesh.ny(), d.split(Split::Train).size(), d.split(Split::Val).size(),
              d.split(Split::Test).size(), d.sigma2, secs);
  return 0;
}

int cmd_train(const TrainArgs& a, int threads) {
  const Dataset d = load_with_noise(a.data, a.noise, a.noise_seed);
  const ViTOConfig mc = model_config(d, a.model);
  Rng rng = derive_stream(a.init_seed, 0, stream::kInit);
  Model<float> model(mc, rng);
  std::printf("model: %zu trainable parameters\n", model.parameter_count());

  std::ostringstream note;
  note << "data=" << fs::absolute(a.data).string() << '\n'
       << "noise=" << a.noise << '\n'
       << "noise_seed=" << a.noise_seed << '\n'
       << "init_seed=" << a.init_seed << '\n'
       << "threads=" << threads << '\n'
       << "parameters=" << model.parameter_count() << '\n';
  TrainOptions opt;
  opt.run_dir = a.out;
  opt.config_note = note.str();
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_epoch = [&](const EpochRecord& r, bool improved) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %4d  train %.5f  val %.5f  lr %.3e%s  [%.0f s]\n", r.epoch, r.train_loss, r.val_loss, r.lr,
                improved ? "  *" : "", secs);
    std::fflush(stdout);
  };
  const TrainHistory h = train(model, d, a.cfg, opt);
  std::printf("best epoch %d, validation loss %.5f; checkpoint %s\n", h.best_epoch, h.best_val_loss(),
              (fs::path(a.out) / "best.ckpt").c_str());
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const Dataset d = load_with_noise(a.data, a.noise, a.noise_seed);
  Model<float> model = [&] {
    if (a.fresh_seed >= 0) {
      Rng rng = derive_stream(static_cast<std::uint64_t>(a.fresh_seed), 0, stream::kInit);
      ViTOConfig c = preset_for(d.spec.problem);
      c.sr_factor = dataset_sr(d);
      Model<float> m(c, rng);
      // Without training statistics the output scale would be arbitrary.
      const IndexRange& tr = d.split(Split::Train);
      auto stats = [&](const nn::Tensor<float>& t) {
        const std::size_t per = t.size() / t.dim(0);
        double s = 0, ss = 0;
        for (std::size_t k = tr.begin * per; k < tr.end * per; ++k) s += t.data()[k];
        const double n = static_cast<double>(tr.size() * per), mean = s / n;
        for (std::size_t k = tr.begin * per; k < tr.end * per; ++k) ss += (t.data()[k] - mean) * (t.data()[k] - mean);
        return std::pair{mean, std::max(std::sqrt(ss / n), 1e-12)};
      };
      const auto [im, is] = stats(d.inputs);
      const auto [om, os] = stats(d.targets);
      m.set_normalization(im, is, om, os);
      return m;
    }
    if (a.checkpoint.empty()) throw InvalidArgument("eval needs --checkpoint or --fresh-seed");
    return load_checkpoint(a.checkpoint);
  }();
  check_compatible(model, d);
  const Split split = parse_split(a.split);

  std::vector<EvalReport> reports;
  if (a.sides.empty()) {
    reports.push_back(evaluate(model, d, split, a.batch));
  } else {
    reports = evaluate_variable_grids(model, d, a.sides, split, a.r_max, a.batch);
  }
  for (auto& r : reports) {
    r.noise_gamma = d.noise_gamma;
    if (!a.label.empty()) r.label = a.label + (a.sides.empty() ? "" : "_side" + std::to_string(r.grid_side));
  }

  std::vector<PanelSample> panels;
  const IndexRange& range = d.split(split);
  for (int k = 0; k < a.panels && static_cast<std::size_t>(k) < range.size(); ++k) {
    const std::size_t i = range.begin + k;
    const auto y = predict_samples(model, d, {i}, 1);
    Field2D pred(d.target_mesh);
    for (std::size_t j = 0; j < pred.size(); ++j) pred.storage()[j] = y[j];
    panels.push_back({i, d.input(i), d.target(i), std::move(pred)});
  }
  render_report(reports, panels, a.out);

  for (const auto& r : reports)
    std::printf("%-28s grid %4d%s  noise %.3f  mean rel. L2 %.5f  mean-predictor %.5f  (%zu samples)\n",
                r.label.c_str(), r.grid_side, r.zero_shot ? " (zero-shot)" : "", r.noise_gamma, r.mean_error,
                r.baseline_mean_error, r.per_sample_errors.size());
  return 0;
}

int cmd_predict(const PredictArgs& a) {
  const Dataset d = load_with_noise(a.data, a.noise, a.noise_seed);
  const Model<float> model = load_checkpoint(a.checkpoint);
  check_compatible(model, d);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create directory " + a.out + ": " + ec.message());
  for (std::size_t i : a.indices) {
    if (i >= d.size()) throw InvalidArgument("sample index " + std::to_string(i) + " out of range");
    const Field2D pred = model.predict(d.input(i));
    nn::Tensor<float> t({1, 1, pred.nx(), pred.ny()});
    for (std::size_t k = 0; k < pred.size(); ++k) t[k] = static_cast<float>(pred.values()[k]);
    const std::string stem = "prediction_" + std::to_string(i);
    save_tensor(t, fs::path(a.out) / (stem + ".bin"));
    const Field2D truth = d.target(i);
    double lo = truth.values()[0], hi = lo;
    for (double v : truth.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    write_field_png(pred, fs::path(a.out) / (stem + ".png"), lo, hi);
    std::printf("sample %zu: %dx%d -> %dx%d, written %s.{png,bin}\n", i, d.input_mesh.nx(), d.input_mesh.ny(),
                pred.nx(), pred.ny(), (fs::path(a.out) / stem).c_str());
  }
  return 0;
}

int cmd_report(const ReportArgs& a) {
  std::vector<EvalReport> reports;
  for (const auto& run : a.runs) {
    bool any = false;
    for (int k = 0;; ++k) {
      const fs::path p = fs::path(run) / ("metrics_" + std::to_string(k) + ".txt");
      if (!fs::exists(p)) break;
      reports.push_back(parse_report_metrics(read_text(p)));
      any = true;
    }
    if (!any) throw IoError("no metrics_0.txt in " + run + " (run `vito eval` there first)");
  }
  const std::string table = summary_table(reports);
  std::fputs(table.c_str(), stdout);
  if (!a.out.empty()) write_text(a.out, table);
  return 0;
}

// ---------------------------------------------------------------------------
// --config FILE expansion

std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  // args excludes argv[0]. Find the subcommand, then its --config.
  std::size_t sub_pos = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (auto* s = app.get_subcommand_no_throw(args[i])) {
      sub = s;
      sub_pos = i;
      break;
    }
  }
  if (!sub) return args;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    std::string path;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i + erase));
    std::vector<std::string> injected;
    std::istringstream is(read_text(path));
    std::string line;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw InvalidConfig(path + ": line without '=': " + line);
      std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
      while (!value.empty() && std::isspace(static_cast<unsigned char>(value.front()))) value.erase(0, 1);
      if (key == "config" || !sub->get_option_no_throw("--" + key))
        throw InvalidConfig(path + ": unknown key '" + key + "' for `" + sub->get_name() + "`");
      const auto* opt = sub->get_option("--" + key);
      injected.push_back("--" + key);
      // List options split on their own delimiter (comma).
      if (opt->get_expected_min() != 0) injected.push_back(value);
    }
    // File values go first so command-line flags override them.
    args.insert(args.begin() + static_cast<long>(sub_pos + 1), injected.begin(), injected.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ViTO inverse-operator pipeline: generate, train, eval, predict, report"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: $VITO_THREADS, else all cores)");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Manufacture a dataset of coarse-input / fine-target pairs");
  gen->add_option("--problem", ga.problem, "wave | ns | darcy")->capture_default_str();
  gen->add_option("--fine", ga.fine, "Fine (target) grid side")->capture_default_str();
  gen->add_option("--sr", ga.sr, "Super-resolution factor s")->capture_default_str();
  gen->add_option("--n", ga.n, "Number of samples")->capture_default_str();
  gen->add_option("--seed", ga.seed, "Master seed")->capture_default_str();
  gen->add_option("--out", ga.out, "Output dataset directory")->required();
  gen->add_option("--t-final", ga.t_final, "Final time T (wave, ns)");
  gen->add_option("--nu", ga.nu, "Viscosity (ns)");
  gen->add_option("--dt", ga.dt, "Time step (ns)");
  gen->add_option("--config", "key=value file");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Run directory")->required();
  tr->add_option("--noise", ta.noise, "Input noise level gamma")->capture_default_str();
  tr->add_option("--noise-seed", ta.noise_seed, "Noise seed")->capture_default_str();
  tr->add_option("--epochs", ta.cfg.max_epochs, "Maximum epochs (cosine period)")->capture_default_str();
  tr->add_option("--batch", ta.cfg.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--patience", ta.cfg.patience, "Early-stopping patience")->capture_default_str();
  tr->add_option("--lr", ta.cfg.lr0, "Initial learning rate")->capture_default_str();
  tr->add_option("--weight-decay", ta.cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
  tr->add_option("--epsilon", ta.cfg.epsilon, "Loss stabilizer")->capture_default_str();
  tr->add_option("--augment-r", ta.cfg.augment_r_max, "Random input subsampling r in 1..R (0: off)")
      ->capture_default_str();
  tr->add_option("--seed", ta.cfg.seed, "Shuffle/augmentation seed")->capture_default_str();
  tr->add_option("--init-seed", ta.init_seed, "Weight initialization seed")->capture_default_str();
  tr->add_option("--widths", ta.model.widths, "Channel widths c0,c1,c2,c3");
  tr->add_option("--vit-blocks", ta.model.vit_blocks, "Transformer blocks");
  tr->add_option("--vit-heads", ta.model.vit_heads, "Attention heads");
  tr->add_option("--vit-embed", ta.model.vit_embed, "Token embedding width");
  tr->add_option("--vit-mlp", ta.model.vit_mlp, "Transformer MLP width");
  tr->add_option("--config", "key=value file");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write a report");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file");
  ev->add_option("--fresh-seed", ea.fresh_seed, "Evaluate an untrained model built with this seed instead");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--out", ea.out, "Report directory")->required();
  ev->add_option("--noise", ea.noise, "Input noise level gamma (match training)")->capture_default_str();
  ev->add_option("--noise-seed", ea.noise_seed, "Noise seed (match training)")->capture_default_str();
  ev->add_option("--split", ea.split, "train | val | test")->capture_default_str();
  ev->add_option("--sides", ea.sides, "Input sides for variable-grid evaluation")->delimiter(',');
  ev->add_option("--r-max", ea.r_max, "Largest training subsampling factor")->capture_default_str();
  ev->add_option("--panels", ea.panels, "Samples rendered as image panels")->capture_default_str();
  ev->add_option("--batch", ea.batch, "Evaluation batch size")->capture_default_str();
  ev->add_option("--label", ea.label, "Report label");
  ev->add_option("--config", "key=value file");

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Predict fine fields for dataset samples");
  pr->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  pr->add_option("--data", pa.data, "Dataset directory")->required();
  pr->add_option("--index", pa.indices, "Sample indices")->required()->delimiter(',');
  pr->add_option("--out", pa.out, "Output directory")->required();
  pr->add_option("--noise", pa.noise, "Input noise level gamma")->capture_default_str();
  pr->add_option("--noise-seed", pa.noise_seed, "Noise seed")->capture_default_str();
  pr->add_option("--config", "key=value file");
  pr->get_option("--index")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "Aggregate eval directories into a grid x noise table");
  rp->add_option("--runs", ra.runs, "Eval report directories")->required();
  rp->add_option("--out", ra.out, "Write the table to this file");
  rp->add_option("--config", "key=value file");
  rp->get_option("--runs")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ev->get_option("--sides")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes the vector from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.what());
    return 1;
  }

  if (threads <= 0) {
    if (const char* env = std::getenv("VITO_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
  const int effective = threads > 0 ? threads : omp_get_max_threads();

  try {
    if (*gen) return cmd_generate(ga);
    if (*tr) return cmd_train(ta, effective);
    if (*ev) return cmd_eval(ea);
    if (*pr) return cmd_predict(pa);
    if (*rp) return cmd_report(ra);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
