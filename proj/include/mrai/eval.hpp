#pragma once

// Linear SVM (scanner discriminator and feature-space tissue classifier),
// stratified cross-validation, proxy A-distance, tissue error and the
// baseline CNN tissue classifier.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrai/nn.hpp"
#include "mrai/phantom.hpp"
#include "mrai/siamese.hpp"

namespace mrai {

struct SvmConfig {
  double c = 1.0;
  std::size_t max_epochs = 500;
  double tolerance = 1e-6;
};

/// One-vs-rest linear SVM on standardized features. For two classes a single
/// weight vector scores classes[1] against classes[0].
struct LinearModel {
  std::vector<int> classes;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;  // 1 / std, or 1 for constant columns
  std::vector<std::vector<double>> weights;
  std::vector<double> bias;
  double c = 1.0;
  /// Objective value after every optimizer epoch, one trace per binary problem.
  std::vector<std::vector<double>> objective_trace;

  std::size_t dimension() const noexcept { return feature_mean.size(); }
  /// Ties between one-vs-rest scores go to the lowest class index.
  int predict(std::span<const double> x) const;
  std::vector<int> predict(const FeatureMatrix& x) const;
};

/// Minimizes 0.5 ||w||^2 + C * mean_i max(0, 1 - y_i (w.x_i + b)) for each
/// binary problem by seeded stochastic subgradient descent from zero weights.
/// An epoch whose result would raise the objective is rejected, so the
/// recorded objective never increases. Stops when an accepted epoch improves
/// the objective by less than the tolerance, or after max_epochs.
LinearModel train_linear_svm(const FeatureMatrix& x, std::span<const int> labels,
                             const SvmConfig& config = {}, std::uint64_t seed = 0);

/// Stratified fold assignment: within each class, a seeded shuffle followed by
/// round-robin dealing, so fold class counts differ by at most one.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed);

/// Mean held-out misclassification rate over stratified folds.
double cross_val_error(const FeatureMatrix& x, std::span<const int> labels, std::size_t folds,
                       const SvmConfig& config, std::uint64_t seed);

/// 2 (1 - 2e), clamped to [0, 2].
double proxy_a_distance_from_error(double e);

struct ADistanceConfig {
  std::size_t folds = 5;
  std::size_t max_per_side = 1500;
  SvmConfig svm{};
};

struct ADistance {
  double error = 0.0;
  double distance = 0.0;
};

/// Discriminates source rows (label 0) from target rows (label 1). Both sides
/// are subsampled without replacement to min(source rows, target rows,
/// max_per_side) so the discriminator sees balanced classes.
ADistance proxy_a_distance(const FeatureMatrix& source, const FeatureMatrix& target,
                           const ADistanceConfig& config, std::uint64_t seed);

/// CSF -> 0, GM -> 1, WM -> 2. Background is rejected.
int tissue_class(Tissue t);
Tissue class_tissue(int c);
std::vector<int> tissue_labels(std::span<const Patch> patches);

/// Misclassification rate; throws on an empty set or length mismatch.
double error_rate(std::span<const int> predicted, std::span<const int> truth);

struct CnnConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  nn::RmsHyper optimizer{};
  double dropout = 0.2;
  std::size_t classes = 3;
};

struct CnnClassifier {
  nn::NetworkParams params;

  /// Arg-max class score in eval mode (ties to the lowest class).
  int predict(std::span<const double> patch) const;
  std::vector<int> predict(const FeatureMatrix& patches) const;
};

/// Patch trunk ending in `classes` scores with softmax cross-entropy, trained
/// by mini-batch RMSprop on the mean batch loss.
CnnClassifier train_cnn_classifier(const FeatureMatrix& patches, std::span<const int> labels,
                                   const CnnConfig& config, std::uint64_t seed);

double tissue_error(const LinearModel& model, const FeatureMatrix& features,
                    std::span<const int> truth);
double tissue_error(const CnnClassifier& model, const FeatureMatrix& patches,
                    std::span<const int> truth);

}  // namespace mrai
