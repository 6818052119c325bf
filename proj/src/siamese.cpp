#include "mrai/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mrai/rng.hpp"

namespace mrai {

FeatureMatrix patch_matrix(std::span<const Patch> patches) {
  FeatureMatrix m(patches.size(), kPatchPixels);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    std::copy(patches[i].pixels.begin(), patches[i].pixels.end(), m.row(i).begin());
  }
  return m;
}

namespace {

void check_dims(std::span<const double> fa, std::span<const double> fb) {
  if (fa.size() != fb.size()) {
    throw std::invalid_argument("feature vectors differ in dimension (" +
                                std::to_string(fa.size()) + " vs " +
                                std::to_string(fb.size()) + ")");
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double l1_distance(std::span<const double> fa, std::span<const double> fb) {
  check_dims(fa, fb);
  double d = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) d += std::abs(fa[i] - fb[i]);
  return d;
}

double siamese_loss(std::span<const double> fa, std::span<const double> fb, int y,
                    double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  const double d = l1_distance(fa, fb);
  return y == 1 ? d * d : std::max(0.0, margin - d);
}

LossGrad siamese_loss_grad(std::span<const double> fa, std::span<const double> fb, int y,
                           double margin) {
  LossGrad g;
  g.distance = l1_distance(fa, fb);
  g.loss = siamese_loss(fa, fb, y, margin);
  g.grad_a.assign(fa.size(), 0.0);
  g.grad_b.assign(fa.size(), 0.0);
  double scale = 0.0;
  if (y == 1) {
    scale = 2.0 * g.distance;
  } else if (g.distance < margin) {
    scale = -1.0;
  }
  if (scale == 0.0) return g;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double s = scale * sign(fa[i] - fb[i]);
    g.grad_a[i] = s;
    g.grad_b[i] = -s;
  }
  return g;
}

void SiameseConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("siamese margin must be positive");
  if (batch_size < 1) throw std::invalid_argument("siamese batch size must be >= 1");
  if (out_dim < 1) throw std::invalid_argument("siamese out_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
}

FeatureMatrix extract_features(const nn::NetworkParams& params, const FeatureMatrix& inputs) {
  FeatureMatrix out(inputs.rows, params.architecture().output_size());
  nn::ForwardCache cache;
  for (std::size_t i = 0; i < inputs.rows; ++i) {
    const auto f = nn::forward_into(params, inputs.row(i), nn::Mode::eval, 0, cache);
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

FeatureMatrix extract_features(const nn::NetworkParams& params, std::span<const Patch> patches) {
  return extract_features(params, patch_matrix(patches));
}

SiameseResult train_mrainet(std::span<const Patch> source, std::span<const Patch> target,
                            const PairSet& pairs, const SiameseConfig& config,
                            const EpochCallback& on_epoch) {
  if (pairs.n_source != source.size() || pairs.n_target != target.size()) {
    throw std::invalid_argument("pair set was built for a different patch store");
  }
  FeatureMatrix pooled(source.size() + target.size(), kPatchPixels);
  for (std::size_t i = 0; i < source.size(); ++i) {
    std::copy(source[i].pixels.begin(), source[i].pixels.end(), pooled.row(i).begin());
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    std::copy(target[i].pixels.begin(), target[i].pixels.end(),
              pooled.row(source.size() + i).begin());
  }
  return train_siamese(pooled, pairs, config, on_epoch);
}

SiameseResult train_siamese(const FeatureMatrix& pooled, const PairSet& pairs,
                            const SiameseConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  std::size_t n_sim = 0;
  for (const auto& p : pairs.pairs) {
    if (p.index_a >= pooled.rows || p.index_b >= pooled.rows) {
      throw std::out_of_range("pair index outside the patch store");
    }
    n_sim += p.y;
  }
  if (n_sim == 0 || n_sim == pairs.size()) {
    throw std::invalid_argument("training needs at least one similar and one dissimilar pair");
  }

  const auto arch = nn::Architecture::patch_trunk(config.out_dim, config.dropout);
  SiameseNet net(nn::NetworkParams::glorot_uniform(arch, derive_seed(config.seed, 0)));
  nn::RmsState rms(net.params().size(), config.optimizer);
  SiameseResult result{net.params(), {}};

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(net.params().size());
  nn::ForwardCache cache_a;
  nn::ForwardCache cache_b;
  std::vector<double> fa(config.out_dim);
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, 1, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / double(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const PatchPair& p = pairs.pairs[order[k]];
        const std::uint64_t s = derive_seed(config.seed, 2, step * 2);
        const std::uint64_t t = derive_seed(config.seed, 2, step * 2 + 1);
        ++step;
        const auto out_a = nn::forward_into(net.pipeline_a(), pooled.row(p.index_a),
                                            nn::Mode::train, s, cache_a);
        std::copy(out_a.begin(), out_a.end(), fa.begin());
        const auto out_b = nn::forward_into(net.pipeline_b(), pooled.row(p.index_b),
                                            nn::Mode::train, t, cache_b);
        LossGrad lg = siamese_loss_grad(fa, out_b, p.y, config.margin);
        if (!std::isfinite(lg.loss)) {
          std::ostringstream os;
          os << "non-finite siamese loss at epoch " << epoch << ", pair (" << p.index_a
             << ", " << p.index_b << ")";
          throw nn::NumericError(os.str());
        }
        epoch_loss += lg.loss;
        if (lg.loss == 0.0) continue;
        for (auto& v : lg.grad_a) v *= inv;
        for (auto& v : lg.grad_b) v *= inv;
        nn::backward_accumulate(net.pipeline_a(), cache_a, lg.grad_a, grad);
        nn::backward_accumulate(net.pipeline_b(), cache_b, lg.grad_b, grad);
      }
      nn::rmsprop_step(net.pipeline_a(), grad, rms);
    }

    // Separation statistics in eval mode on every patch touched by a pair.
    const FeatureMatrix feats = extract_features(net.params(), pooled);
    double sim_sum = 0.0;
    double dis_sum = 0.0;
    for (const auto& p : pairs.pairs) {
      const double d = l1_distance(feats.row(p.index_a), feats.row(p.index_b));
      (p.y == 1 ? sim_sum : dis_sum) += d;
    }
    result.history.loss.push_back(epoch_loss / double(pairs.size()));
    result.history.mean_similar_distance.push_back(sim_sum / double(n_sim));
    result.history.mean_dissimilar_distance.push_back(dis_sum / double(pairs.size() - n_sim));
    if (on_epoch) on_epoch(epoch, result.history);
  }
  result.params = net.params();
  return result;
}

}  // namespace mrai
