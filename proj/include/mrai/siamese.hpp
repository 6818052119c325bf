#pragma once

// Two weight-shared patch pipelines trained with the contrastive loss
//   y d^2 + (1 - y) max(0, m - d),   d = ||f(a) - f(b)||_1.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mrai/nn.hpp"
#include "mrai/pairs.hpp"
#include "mrai/phantom.hpp"

namespace mrai {

/// Row-major matrix of real features, one row per sample.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Flattened patch intensities (225 columns).
FeatureMatrix patch_matrix(std::span<const Patch> patches);

double l1_distance(std::span<const double> fa, std::span<const double> fb);

double siamese_loss(std::span<const double> fa, std::span<const double> fb, int y,
                    double margin);

struct LossGrad {
  double loss = 0.0;
  double distance = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

/// Subgradients with sign(0) = 0; at d == m the flat branch is used.
LossGrad siamese_loss_grad(std::span<const double> fa, std::span<const double> fb, int y,
                           double margin);

struct SiameseConfig {
  double margin = 1.0;
  std::size_t epochs = 32;
  std::size_t batch_size = 128;
  nn::RmsHyper optimizer{};
  std::size_t out_dim = 2;
  double dropout = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> mean_similar_distance;
  std::vector<double> mean_dissimilar_distance;

  std::size_t epochs() const noexcept { return loss.size(); }
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// Both pipelines are views of one parameter set.
class SiameseNet {
 public:
  explicit SiameseNet(nn::NetworkParams params) : params_(std::move(params)) {}

  nn::NetworkParams& pipeline_a() noexcept { return params_; }
  nn::NetworkParams& pipeline_b() noexcept { return params_; }
  const nn::NetworkParams& params() const noexcept { return params_; }

 private:
  nn::NetworkParams params_;
};

struct SiameseResult {
  nn::NetworkParams params;
  TrainHistory history;
};

/// Called after each epoch with (epoch index, history so far).
using EpochCallback = std::function<void(std::size_t, const TrainHistory&)>;

/// Mini-batch RMSprop on the mean pair loss of each batch. Both passes of a
/// pair draw independent dropout masks. The pair order is reshuffled every
/// epoch. History distances are measured in eval mode after each epoch.
SiameseResult train_mrainet(std::span<const Patch> source, std::span<const Patch> target,
                            const PairSet& pairs, const SiameseConfig& config,
                            const EpochCallback& on_epoch = {});

/// Same as train_mrainet() but on pre-flattened pooled inputs.
SiameseResult train_siamese(const FeatureMatrix& pooled, const PairSet& pairs,
                            const SiameseConfig& config,
                            const EpochCallback& on_epoch = {});

/// Eval-mode features, one row per patch.
FeatureMatrix extract_features(const nn::NetworkParams& params, std::span<const Patch> patches);
FeatureMatrix extract_features(const nn::NetworkParams& params, const FeatureMatrix& inputs);

}  // namespace mrai
