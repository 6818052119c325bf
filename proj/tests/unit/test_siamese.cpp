#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mrai/pairs.hpp"
#include "mrai/rng.hpp"
#include "mrai/siamese.hpp"

using namespace mrai;

namespace {

// Constant patches whose level is drawn around 0.2 (CSF) or 0.8 (WM).
std::vector<Patch> toy_patches(std::size_t per_tissue, ScannerId scanner, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<Patch> out;
  for (Tissue t : {Tissue::csf, Tissue::white_matter}) {
    for (std::size_t i = 0; i < per_tissue; ++i) {
      Patch p;
      p.tissue = t;
      p.scanner = scanner;
      const double level = (t == Tissue::csf ? 0.2 : 0.8) + noise(rng);
      p.pixels.fill(static_cast<float>(level));
      out.push_back(p);
    }
  }
  return out;
}

SiameseConfig toy_config(std::size_t epochs) {
  SiameseConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = 42;
  c.optimizer.learning_rate = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("l1 distance") {
  const std::vector<double> a{1.0, 2.0}, b{3.0, 0.0};
  CHECK(l1_distance(a, b) == 4.0);
  CHECK(l1_distance(a, a) == 0.0);
  CHECK_THROWS(l1_distance(a, std::vector<double>{1.0}));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> x{g(rng), g(rng), g(rng)}, y{g(rng), g(rng), g(rng)};
    CHECK(l1_distance(x, y) == l1_distance(y, x));
    CHECK(l1_distance(x, y) >= 0.0);
  }
}

TEST_CASE("siamese loss branch values") {
  const std::vector<double> z{0.0, 0.0};
  CHECK(siamese_loss(z, z, 1, 1.0) == 0.0);
  CHECK(siamese_loss(std::vector<double>{4.0, 0.0}, z, 0, 1.0) == 0.0);
  CHECK(siamese_loss(std::vector<double>{0.25, 0.0}, z, 0, 1.0) == 0.75);
  CHECK(siamese_loss(std::vector<double>{0.5, -0.25}, z, 1, 1.0) == 0.5625);
  CHECK_THROWS(siamese_loss(z, z, 1, 0.0));
}

TEST_CASE("siamese loss gradient special cases") {
  const std::vector<double> a{3.0, -2.0}, b{0.5, 0.0};
  const auto flat = siamese_loss_grad(a, b, 0, 1.0);
  CHECK(flat.loss == 0.0);
  CHECK(flat.grad_a == std::vector<double>{0.0, 0.0});
  CHECK(flat.grad_b == std::vector<double>{0.0, 0.0});
  const auto same = siamese_loss_grad(a, a, 1, 1.0);
  CHECK(same.grad_a == std::vector<double>{0.0, 0.0});
  // exactly at the margin: flat branch
  const auto edge = siamese_loss_grad(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}, 0, 1.0);
  CHECK(edge.grad_a == std::vector<double>{0.0, 0.0});
}

TEST_CASE("siamese loss gradient matches finite differences") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)};
    const int y = trial % 2;
    const double m = 1.5;
    const auto lg = siamese_loss_grad(a, b, y, m);
    bool near_kink = std::abs(lg.distance - m) < 1e-3;
    for (std::size_t i = 0; i < a.size(); ++i) near_kink |= std::abs(a[i] - b[i]) < 1e-3;
    if (near_kink) continue;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto ap = a, am = a;
      ap[i] += h;
      am[i] -= h;
      const double num = (siamese_loss(ap, b, y, m) - siamese_loss(am, b, y, m)) / (2 * h);
      CHECK(mrai::testing::relative_error(lg.grad_a[i], num) < 1e-5);
      auto bp = b, bm = b;
      bp[i] += h;
      bm[i] -= h;
      const double numb = (siamese_loss(a, bp, y, m) - siamese_loss(a, bm, y, m)) / (2 * h);
      CHECK(mrai::testing::relative_error(lg.grad_b[i], numb) < 1e-5);
    }
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("loss through the network matches finite differences") {
  const auto p = mrai::testing::random_params(nn::Architecture::patch_trunk(2), 8);
  const auto a = mrai::testing::random_input(225, 9);
  const auto b = mrai::testing::random_input(225, 10);
  for (int y : {0, 1}) {
    const auto s = mrai::testing::check_siamese_gradient(p, a, b, y, 5.0, 120, 11 + y);
    CHECK(s.checked >= 100);
    CHECK(s.worst < 1e-4);
  }
}

TEST_CASE("siamese config validation") {
  SiameseConfig c;
  CHECK_NOTHROW(c.validate());
  c.margin = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("both pipelines share one parameter set") {
  SiameseNet net(nn::NetworkParams::glorot_uniform(nn::Architecture::patch_trunk(2), 1));
  CHECK(&net.pipeline_a() == &net.pipeline_b());
}

TEST_CASE("toy separable training") {
  const auto src = toy_patches(40, ScannerId::source, 1);
  const auto tgt = toy_patches(4, ScannerId::target, 2);
  const auto pairs = sample_pairs(src, tgt, 1200, 0.5, 3);
  const auto cfg = toy_config(15);
  const auto r = train_mrainet(src, tgt, pairs, cfg);
  REQUIRE(r.history.epochs() == 15);
  CHECK(r.history.mean_dissimilar_distance.back() >= cfg.margin / 2);
  CHECK(r.history.mean_similar_distance.back() <= cfg.margin / 10);
  CHECK(r.history.loss.back() <= r.history.loss.front() * 1.05);

  SUBCASE("deterministic per seed") {
    const auto again = train_mrainet(src, tgt, pairs, cfg);
    CHECK(again.history == r.history);
    CHECK(again.params == r.params);
  }
}

TEST_CASE("zero epochs leaves the initialization") {
  const auto src = toy_patches(5, ScannerId::source, 1);
  const auto pairs = sample_pairs(src, {}, 20, 0.5, 3);
  auto cfg = toy_config(0);
  const auto r = train_mrainet(src, {}, pairs, cfg);
  CHECK(r.history.epochs() == 0);
  const auto init = nn::NetworkParams::glorot_uniform(
      nn::Architecture::patch_trunk(cfg.out_dim, cfg.dropout), derive_seed(cfg.seed, 0));
  CHECK(r.params == init);
}

TEST_CASE("feature extraction") {
  const auto p = mrai::testing::random_params(nn::Architecture::patch_trunk(2), 4);
  const auto ps = toy_patches(6, ScannerId::source, 5);
  const auto f = extract_features(p, ps);
  CHECK(f.rows == ps.size());
  CHECK(f.cols == 2);

  // a single patch gives the same feature as the batch row
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto one = extract_features(p, std::span<const Patch>(&ps[i], 1));
    CHECK(one.row(0)[0] == f.row(i)[0]);
    CHECK(one.row(0)[1] == f.row(i)[1]);
  }
  // permuting the inputs permutes the outputs
  std::vector<Patch> rev(ps.rbegin(), ps.rend());
  const auto fr = extract_features(p, rev);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(fr.row(i)[0] == f.row(ps.size() - 1 - i)[0]);
  }
  // pooled matrix input matches the patch path
  CHECK(extract_features(p, patch_matrix(ps)) == f);
}
