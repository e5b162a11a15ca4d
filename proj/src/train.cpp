#include "vito/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "vito/error.hpp"
#include "vito/rng.hpp"

namespace vito {

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
  if (patience < 1) throw InvalidConfig("patience must be >= 1");
  if (!(lr0 >= 0) || !std::isfinite(lr0)) throw InvalidConfig("lr0 must be finite and >= 0");
  if (!(weight_decay >= 0)) throw InvalidConfig("weight_decay must be >= 0");
  if (!(epsilon > 0)) throw InvalidConfig("epsilon must be > 0");
  if (augment_r_max < 0) throw InvalidConfig("augment_r_max must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw InvalidConfig("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw InvalidConfig("adam_eps must be > 0");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw InvalidConfig("bad number for " + key + ": '" + v + "'");
  return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw InvalidConfig("bad integer for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "batch_size=" << batch_size << '\n'
     << "max_epochs=" << max_epochs << '\n'
     << "patience=" << patience << '\n'
     << "lr0=" << fmt(lr0) << '\n'
     << "weight_decay=" << fmt(weight_decay) << '\n'
     << "epsilon=" << fmt(epsilon) << '\n'
     << "augment_r_max=" << augment_r_max << '\n'
     << "seed=" << seed << '\n'
     << "beta1=" << fmt(beta1) << '\n'
     << "beta2=" << fmt(beta2) << '\n'
     << "adam_eps=" << fmt(adam_eps) << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("config line without '=': " + line);
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "batch_size") c.batch_size = static_cast<int>(parse_integer(k, v));
    else if (k == "max_epochs") c.max_epochs = static_cast<int>(parse_integer(k, v));
    else if (k == "patience") c.patience = static_cast<int>(parse_integer(k, v));
    else if (k == "lr0") c.lr0 = parse_real(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_real(k, v);
    else if (k == "epsilon") c.epsilon = parse_real(k, v);
    else if (k == "augment_r_max") c.augment_r_max = static_cast<int>(parse_integer(k, v));
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(k, v));
    else if (k == "beta1") c.beta1 = parse_real(k, v);
    else if (k == "beta2") c.beta2 = parse_real(k, v);
    else if (k == "adam_eps") c.adam_eps = parse_real(k, v);
    else throw InvalidConfig("unknown training key '" + k + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <typename T>
void check_pair(const nn::Tensor<T>& pred, const nn::Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw InvalidArgument("loss shapes differ: " + nn::shape_string(pred.shape()) + " vs " +
                          nn::shape_string(target.shape()));
  if (pred.rank() < 1 || pred.dim(0) < 1) throw InvalidArgument("loss needs a nonempty batch");
}

}  // namespace

template <typename T>
std::vector<double> relative_l2_per_sample(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, double epsilon) {
  check_pair(pred, target);
  const int n = pred.dim(0);
  const std::size_t per = pred.size() / static_cast<std::size_t>(n);
  std::vector<double> out(n);
  for (int j = 0; j < n; ++j) {
    const T* p = pred.data() + j * per;
    const T* t = target.data() + j * per;
    double diff = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double d = double(p[k]) - double(t[k]);
      diff += d * d;
      norm += double(t[k]) * double(t[k]);
    }
    out[j] = std::sqrt(diff) / (epsilon + std::sqrt(norm));
  }
  return out;
}

template <typename T>
double relative_l2_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, double epsilon,
                        nn::Tensor<T>* grad) {
  check_pair(pred, target);
  const int n = pred.dim(0);
  const std::size_t per = pred.size() / static_cast<std::size_t>(n);
  if (grad) *grad = nn::Tensor<T>(pred.shape());
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    const T* p = pred.data() + j * per;
    const T* t = target.data() + j * per;
    double diff = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double d = double(p[k]) - double(t[k]);
      diff += d * d;
      norm += double(t[k]) * double(t[k]);
    }
    const double e = std::sqrt(diff), den = epsilon + std::sqrt(norm);
    total += e / den;
    // d/dp ||p - t|| = (p - t) / ||p - t||; zero at the kink.
    if (grad && e > 0.0) {
      const double c = 1.0 / (n * den * e);
      T* g = grad->data() + j * per;
      for (std::size_t k = 0; k < per; ++k) g[k] = static_cast<T>(c * (double(p[k]) - double(t[k])));
    }
  }
  return total / n;
}

template double relative_l2_loss(const nn::Tensor<float>&, const nn::Tensor<float>&, double, nn::Tensor<float>*);
template double relative_l2_loss(const nn::Tensor<double>&, const nn::Tensor<double>&, double, nn::Tensor<double>*);
template std::vector<double> relative_l2_per_sample(const nn::Tensor<float>&, const nn::Tensor<float>&, double);
template std::vector<double> relative_l2_per_sample(const nn::Tensor<double>&, const nn::Tensor<double>&, double);

double cosine_lr(double lr0, int epoch, int max_epochs) {
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / max_epochs));
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
AdamW<T>::AdamW(nn::ParamList<T> params, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  std::erase_if(params_, [](const nn::Param<T>* p) { return !p->trainable; });
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double c1 = 1.0 / (1.0 - std::pow(b1_, double(t_)));
  const double c2 = 1.0 / (1.0 - std::pow(b2_, double(t_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    T* w = p.value.data();
    const T* g = p.grad.data();
    const std::size_t n = p.value.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g[k];
      m[k] = b1_ * m[k] + (1.0 - b1_) * gk;
      v[k] = b2_ * v[k] + (1.0 - b2_) * gk * gk;
      const double update = (m[k] * c1) / (std::sqrt(v[k] * c2) + eps_) + wd_ * double(w[k]);
      w[k] = static_cast<T>(double(w[k]) - lr * update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

// ---------------------------------------------------------------------------
// Early stopping

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double loss) {
  if (best_epoch_ < 0 || loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

// ---------------------------------------------------------------------------
// Batches

nn::Tensor<float> gather(const nn::Tensor<float>& all, const std::vector<std::size_t>& indices) {
  std::vector<int> shape = all.shape();
  shape[0] = static_cast<int>(indices.size());
  auto out = nn::Tensor<float>::uninitialized(shape);
  const std::size_t per = all.size() / static_cast<std::size_t>(all.dim(0));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= static_cast<std::size_t>(all.dim(0))) throw InvalidArgument("batch index out of range");
    std::copy_n(all.data() + indices[b] * per, per, out.data() + b * per);
  }
  return out;
}

nn::Tensor<float> augment_subsample(const nn::Tensor<float>& batch, int r) {
  if (r < 1) throw InvalidArgument("subsampling factor must be >= 1");
  if (batch.rank() != 4) throw InvalidArgument("augment_subsample expects (N, C, H, W)");
  if (r == 1) return batch;
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int oh = rounded_side(h, r), ow = rounded_side(w, r);
  if (oh < 2 || ow < 2)
    throw InvalidArgument("subsampling " + std::to_string(h) + "x" + std::to_string(w) + " by " + std::to_string(r) +
                          " leaves fewer than 2 points per side");
  auto out = nn::Tensor<float>::uninitialized({n, c, oh, ow});
  for (int s = 0; s < n * c; ++s) {
    const float* src = batch.data() + static_cast<std::size_t>(s) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(s) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[static_cast<std::size_t>(i) * r * w + j * r];
  }
  return out;
}

Mesh2D augment_mesh(const Mesh2D& mesh, int r) {
  if (r == 1) return mesh;
  return subsample_rounded(Field2D(mesh), r).mesh();
}

// ---------------------------------------------------------------------------
// History

double TrainHistory::best_val_loss() const {
  if (best_epoch < 0) return std::numeric_limits<double>::quiet_NaN();
  for (const auto& e : epochs)
    if (e.epoch == best_epoch) return e.val_loss;
  return std::numeric_limits<double>::quiet_NaN();
}

std::string TrainHistory::to_csv() const {
  std::string s = "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs)
    s += std::to_string(e.epoch) + ',' + fmt(e.train_loss) + ',' + fmt(e.val_loss) + ',' + fmt(e.lr) + '\n';
  return s;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_csv();
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct MeanStd {
  double mean = 0.0, std = 1.0;
};

MeanStd range_stats(const nn::Tensor<float>& t, const IndexRange& range) {
  const std::size_t per = t.size() / static_cast<std::size_t>(t.dim(0));
  const float* begin = t.data() + range.begin * per;
  const std::size_t n = range.size() * per;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) sum += begin[k];
  const double mean = sum / n;
  double ss = 0.0;
  for (std::size_t k = 0; k < n; ++k) ss += (begin[k] - mean) * (begin[k] - mean);
  const double sd = std::sqrt(ss / n);
  return {mean, sd > 0 ? sd : 1.0};
}

std::vector<std::size_t> iota_range(const IndexRange& r) {
  std::vector<std::size_t> v(r.size());
  std::iota(v.begin(), v.end(), r.begin);
  return v;
}

bool all_finite(const nn::ParamList<float>& params) {
  for (const auto* p : params)
    for (float v : p->value.storage())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

double validation_loss(const Model<float>& model, const Dataset& dataset, const IndexRange& range, double epsilon,
                       int batch_size) {
  if (range.size() == 0) throw InvalidArgument("validation split is empty");
  const int oh = dataset.target_mesh.nx(), ow = dataset.target_mesh.ny();
  double total = 0.0;
  for (std::size_t b = range.begin; b < range.end; b += batch_size) {
    const std::size_t e = std::min(range.end, b + batch_size);
    const auto idx = iota_range({b, e});
    const auto pred = model.forward(gather(dataset.inputs, idx), dataset.input_mesh, oh, ow);
    total += relative_l2_loss(pred, gather(dataset.targets, idx), epsilon) * static_cast<double>(e - b);
  }
  return total / static_cast<double>(range.size());
}

TrainHistory train(Model<float>& model, const Dataset& dataset, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const IndexRange& tr = dataset.split(Split::Train);
  const IndexRange& va = dataset.split(Split::Val);
  if (tr.size() == 0) throw InvalidArgument("training split is empty");
  if (va.size() == 0) throw InvalidArgument("validation split is empty");
  if (cfg.augment_r_max >= 2) {
    const int side = std::min(dataset.input_mesh.nx(), dataset.input_mesh.ny());
    if (rounded_side(side, cfg.augment_r_max) < 2)
      throw InvalidArgument("augment_r_max " + std::to_string(cfg.augment_r_max) + " is too large for input side " +
                            std::to_string(side));
  }

  const MeanStd in = range_stats(dataset.inputs, tr), out = range_stats(dataset.targets, tr);
  model.set_normalization(in.mean, in.std, out.mean, out.std);

  const bool write = !options.run_dir.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(options.run_dir, ec);
    if (ec) throw IoError("cannot create run directory " + options.run_dir.string() + ": " + ec.message());
    std::ofstream cf(options.run_dir / "config.txt", std::ios::trunc);
    if (!cf) throw IoError("cannot write " + (options.run_dir / "config.txt").string());
    cf << "# model\n" << model.config().to_text() << "# training\n" << cfg.to_text();
    if (!options.config_note.empty()) cf << "# run\n" << options.config_note;
  }

  auto params = model.parameters();
  AdamW<float> opt(params, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
  EarlyStopping stopper(cfg.patience);
  TrainHistory history;
  std::vector<nn::Tensor<float>> best;

  const int oh = dataset.target_mesh.nx(), ow = dataset.target_mesh.ny();
  const auto batches = static_cast<int>((tr.size() + cfg.batch_size - 1) / cfg.batch_size);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr0, epoch, cfg.max_epochs);
    auto order = iota_range(tr);
    Rng shuffle = derive_stream(cfg.seed, static_cast<std::uint64_t>(epoch), stream::kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle);

    double loss_sum = 0.0;
    for (int b = 0; b < batches; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);

      auto x = gather(dataset.inputs, idx);
      Mesh2D mesh = dataset.input_mesh;
      if (cfg.augment_r_max >= 2) {
        Rng ar = derive_stream(cfg.seed, static_cast<std::uint64_t>(epoch) * batches + b, stream::kAugment);
        const int r = std::uniform_int_distribution<int>(1, cfg.augment_r_max)(ar);
        x = augment_subsample(x, r);
        mesh = augment_mesh(mesh, r);
      }
      const auto y = gather(dataset.targets, idx);

      Model<float>::Tape tape;
      const auto pred = model.forward(x, mesh, oh, ow, &tape);
      nn::Tensor<float> grad;
      const double loss = relative_l2_loss(pred, y, cfg.epsilon, &grad);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ", lr " + fmt(lr));
      model.zero_grad();
      model.backward(grad, tape);
      opt.step(lr);
      loss_sum += loss * static_cast<double>(idx.size());
    }
    if (!all_finite(params))
      throw NumericError("non-finite parameters after epoch " + std::to_string(epoch) + ", lr " + fmt(lr));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(tr.size());
    rec.val_loss = validation_loss(model, dataset, va, cfg.epsilon, cfg.batch_size);
    rec.lr = lr;
    if (!std::isfinite(rec.val_loss))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) + ", lr " + fmt(lr));
    history.epochs.push_back(rec);

    const bool improved = stopper.update(epoch, rec.val_loss);
    if (improved) {
      history.best_epoch = epoch;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
      if (write) save_checkpoint(model, options.run_dir / "best.ckpt");
    }
    if (write) history.write_csv(options.run_dir / "history.csv");
    if (options.on_epoch) options.on_epoch(rec, improved);
    if (stopper.should_stop()) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return history;
}

}  // namespace vito
