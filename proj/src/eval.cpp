#include "mrai/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mrai/rng.hpp"

namespace mrai {

namespace {

struct Standardized {
  std::vector<double> data;  // row-major, same shape as the input
  std::vector<double> mean;
  std::vector<double> scale;
};

Standardized standardize(const FeatureMatrix& x) {
  Standardized s;
  s.mean.assign(x.cols, 0.0);
  s.scale.assign(x.cols, 1.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) s.mean[j] += x.data[i * x.cols + j];
  }
  for (auto& m : s.mean) m /= double(x.rows);
  std::vector<double> var(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x.data[i * x.cols + j] - s.mean[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < x.cols; ++j) {
    const double sd = std::sqrt(var[j] / double(x.rows));
    s.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  s.data.resize(x.data.size());
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      s.data[i * x.cols + j] = (x.data[i * x.cols + j] - s.mean[j]) * s.scale[j];
    }
  }
  return s;
}

struct Binary {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> trace;
};

// 0.5 ||w||^2 + C * mean hinge.
double objective(const std::vector<double>& z, std::size_t n, std::size_t d,
                 std::span<const double> y, const std::vector<double>& w, double b, double c) {
  double hinge = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * d;
    double s = b;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * row[j];
    hinge += std::max(0.0, 1.0 - y[i] * s);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return 0.5 * reg + c * hinge / double(n);
}

// Each epoch is one seeded pass of stochastic subgradient steps with step
// 1 / (t + 1) (the objective is 1-strongly convex). The epoch is kept only if
// the full objective did not increase; otherwise it is undone and the step
// sequence restarts ten times smaller.
Binary train_binary(const std::vector<double>& z, std::size_t n, std::size_t d,
                    std::span<const double> y, const SvmConfig& cfg, std::uint64_t seed) {
  Binary m;
  m.w.assign(d, 0.0);
  double f = objective(z, n, d, y, m.w, m.b, cfg.c);
  m.trace.push_back(f);
  std::vector<double> w(d);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double t = 0.0;
  double scale = 1.0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    w = m.w;
    double b = m.b;
    const double t_start = t;
    for (std::size_t i : order) {
      const double eta = scale / (t + 1.0);
      t += 1.0;
      const double* row = z.data() + i * d;
      double s = b;
      for (std::size_t j = 0; j < d; ++j) s += w[j] * row[j];
      for (std::size_t j = 0; j < d; ++j) w[j] *= 1.0 - eta;
      if (y[i] * s < 1.0) {
        const double g = eta * cfg.c * y[i];
        for (std::size_t j = 0; j < d; ++j) w[j] += g * row[j];
        b += g;
      }
    }
    const double f_new = objective(z, n, d, y, w, b, cfg.c);
    if (f_new <= f) {
      const double change = f - f_new;
      m.w.swap(w);
      m.b = b;
      f = f_new;
      m.trace.push_back(f);
      if (change < cfg.tolerance) break;
    } else {
      t = t_start;
      scale *= 0.1;
      m.trace.push_back(f);
      if (scale < 1e-12) break;
    }
  }
  return m;
}

}  // namespace

int LinearModel::predict(std::span<const double> x) const {
  if (x.size() != dimension()) {
    throw std::invalid_argument("feature vector has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(dimension()));
  }
  auto score = [&](std::size_t k) {
    double s = bias[k];
    for (std::size_t j = 0; j < x.size(); ++j) {
      s += weights[k][j] * (x[j] - feature_mean[j]) * feature_scale[j];
    }
    return s;
  };
  if (classes.size() == 2) return score(0) > 0.0 ? classes[1] : classes[0];
  std::size_t best = 0;
  double best_score = score(0);
  for (std::size_t k = 1; k < classes.size(); ++k) {
    const double s = score(k);
    if (s > best_score) {
      best = k;
      best_score = s;
    }
  }
  return classes[best];
}

std::vector<int> LinearModel::predict(const FeatureMatrix& x) const {
  std::vector<int> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = predict(x.row(i));
  return out;
}

LinearModel train_linear_svm(const FeatureMatrix& x, std::span<const int> labels,
                             const SvmConfig& config, std::uint64_t seed) {
  if (labels.size() != x.rows) {
    throw std::invalid_argument("label count does not match feature rows");
  }
  if (!(config.c > 0.0)) throw std::invalid_argument("SVM C must be positive");
  LinearModel model;
  model.c = config.c;
  model.classes.assign(labels.begin(), labels.end());
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()),
                      model.classes.end());
  if (model.classes.size() < 2) {
    throw std::invalid_argument("linear SVM needs at least two classes, got " +
                                std::to_string(model.classes.size()));
  }
  const Standardized s = standardize(x);
  model.feature_mean = s.mean;
  model.feature_scale = s.scale;
  const std::size_t problems = model.classes.size() == 2 ? 1 : model.classes.size();
  std::vector<double> y(x.rows);
  for (std::size_t k = 0; k < problems; ++k) {
    const int positive = model.classes.size() == 2 ? model.classes[1] : model.classes[k];
    for (std::size_t i = 0; i < x.rows; ++i) y[i] = labels[i] == positive ? 1.0 : -1.0;
    Binary b = train_binary(s.data, x.rows, x.cols, y, config, derive_seed(seed, k));
    model.weights.push_back(std::move(b.w));
    model.bias.push_back(b.b);
    model.objective_trace.push_back(std::move(b.trace));
  }
  return model;
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> fold(labels.size(), 0);
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < folds) {
      throw std::invalid_argument("class " + std::to_string(label) + " has " +
                                  std::to_string(idx.size()) +
                                  " examples, too few to stratify into " +
                                  std::to_string(folds) + " folds");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label) + 0x100));
    std::shuffle(idx.begin(), idx.end(), rng);
    // Continue dealing where the previous class stopped to balance fold sizes.
    for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = (offset + i) % folds;
    offset = (offset + idx.size()) % folds;
  }
  return fold;
}

double cross_val_error(const FeatureMatrix& x, std::span<const int> labels, std::size_t folds,
                       const SvmConfig& config, std::uint64_t seed) {
  if (labels.size() != x.rows) {
    throw std::invalid_argument("label count does not match feature rows");
  }
  const auto fold = stratified_folds(labels, folds, seed);
  double total = 0.0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::size_t n_train = 0;
    for (auto v : fold) n_train += v != f;
    FeatureMatrix train(n_train, x.cols);
    FeatureMatrix test(x.rows - n_train, x.cols);
    std::vector<int> y_train;
    std::vector<int> y_test;
    std::size_t a = 0;
    std::size_t b = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      auto dst = fold[i] == f ? test.row(b++) : train.row(a++);
      std::copy(x.row(i).begin(), x.row(i).end(), dst.begin());
      (fold[i] == f ? y_test : y_train).push_back(labels[i]);
    }
    const LinearModel m = train_linear_svm(train, y_train, config, derive_seed(seed, f));
    total += error_rate(m.predict(test), y_test);
  }
  return total / double(folds);
}

double proxy_a_distance_from_error(double e) {
  return std::clamp(2.0 * (1.0 - 2.0 * e), 0.0, 2.0);
}

namespace {

FeatureMatrix subsample(const FeatureMatrix& x, std::size_t max_rows, std::uint64_t seed) {
  if (x.rows <= max_rows) return x;
  std::vector<std::size_t> idx(x.rows);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < max_rows; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  FeatureMatrix out(max_rows, x.cols);
  for (std::size_t i = 0; i < max_rows; ++i) {
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

ADistance proxy_a_distance(const FeatureMatrix& source, const FeatureMatrix& target,
                           const ADistanceConfig& config, std::uint64_t seed) {
  if (source.rows == 0 || target.rows == 0) {
    throw std::invalid_argument("proxy A-distance needs non-empty source and target sets");
  }
  if (source.cols != target.cols) {
    throw std::invalid_argument("source and target features differ in dimension");
  }
  const std::size_t side = std::min({source.rows, target.rows, config.max_per_side});
  const FeatureMatrix s = subsample(source, side, derive_seed(seed, 1));
  const FeatureMatrix t = subsample(target, side, derive_seed(seed, 2));
  FeatureMatrix x(s.rows + t.rows, s.cols);
  std::copy(s.data.begin(), s.data.end(), x.data.begin());
  std::copy(t.data.begin(), t.data.end(), x.data.begin() + std::ptrdiff_t(s.data.size()));
  std::vector<int> y(x.rows, 0);
  std::fill(y.begin() + std::ptrdiff_t(s.rows), y.end(), 1);
  ADistance r;
  r.error = cross_val_error(x, y, config.folds, config.svm, derive_seed(seed, 3));
  r.distance = proxy_a_distance_from_error(r.error);
  return r;
}

int tissue_class(Tissue t) {
  if (t == Tissue::background) {
    throw std::invalid_argument("background is not a tissue class");
  }
  return static_cast<int>(t) - 1;
}

Tissue class_tissue(int c) {
  if (c < 0 || c > 2) throw std::invalid_argument("tissue class out of range");
  return static_cast<Tissue>(c + 1);
}

std::vector<int> tissue_labels(std::span<const Patch> patches) {
  std::vector<int> y(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) y[i] = tissue_class(patches[i].tissue);
  return y;
}

double error_rate(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw std::invalid_argument("empty test set");
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("prediction count does not match label count");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predicted[i] != truth[i];
  return double(wrong) / double(truth.size());
}

int CnnClassifier::predict(std::span<const double> patch) const {
  nn::ForwardCache cache;
  const auto s = nn::forward_into(params, patch, nn::Mode::eval, 0, cache);
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<int> CnnClassifier::predict(const FeatureMatrix& patches) const {
  std::vector<int> out(patches.rows);
  nn::ForwardCache cache;
  for (std::size_t i = 0; i < patches.rows; ++i) {
    const auto s = nn::forward_into(params, patches.row(i), nn::Mode::eval, 0, cache);
    out[i] = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
  }
  return out;
}

CnnClassifier train_cnn_classifier(const FeatureMatrix& patches, std::span<const int> labels,
                                   const CnnConfig& config, std::uint64_t seed) {
  if (labels.size() != patches.rows || patches.rows == 0) {
    throw std::invalid_argument("CNN training needs one label per patch and at least one patch");
  }
  if (config.batch_size < 1) throw std::invalid_argument("CNN batch size must be >= 1");
  for (int y : labels) {
    if (y < 0 || std::size_t(y) >= config.classes) {
      throw std::invalid_argument("CNN label " + std::to_string(y) + " out of range");
    }
  }
  const auto arch = nn::Architecture::patch_trunk(config.classes, config.dropout);
  CnnClassifier model{nn::NetworkParams::glorot_uniform(arch, derive_seed(seed, 0))};
  nn::RmsState rms(model.params.size(), config.optimizer);
  std::vector<std::size_t> order(patches.rows);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(model.params.size());
  std::vector<double> g(config.classes);
  nn::ForwardCache cache;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(seed, 1, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / double(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto s = nn::forward_into(model.params, patches.row(i), nn::Mode::train,
                                        derive_seed(seed, 2, step++), cache);
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double v : s) z += std::exp(v - mx);
        const double loss = std::log(z) + mx - s[std::size_t(labels[i])];
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "non-finite cross-entropy at epoch " << epoch << ", patch " << i;
          throw nn::NumericError(os.str());
        }
        for (std::size_t c = 0; c < s.size(); ++c) {
          g[c] = inv * (std::exp(s[c] - mx) / z - (int(c) == labels[i] ? 1.0 : 0.0));
        }
        nn::backward_accumulate(model.params, cache, g, grad);
      }
      nn::rmsprop_step(model.params, grad, rms);
    }
  }
  return model;
}

double tissue_error(const LinearModel& model, const FeatureMatrix& features,
                    std::span<const int> truth) {
  return error_rate(model.predict(features), truth);
}

double tissue_error(const CnnClassifier& model, const FeatureMatrix& patches,
                    std::span<const int> truth) {
  return error_rate(model.predict(patches), truth);
}

}  // namespace mrai
