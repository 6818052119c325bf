#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mrai/eval.hpp"

using namespace mrai;

namespace {

struct Labeled {
  FeatureMatrix x;
  std::vector<int> y;
};

// Two Gaussian blobs in d dimensions with class means +-offset on axis 0.
Labeled blobs(std::size_t per_class, std::size_t d, double offset, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  Labeled out{FeatureMatrix(2 * per_class, d), {}};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int c = i < per_class ? 0 : 1;
    for (std::size_t j = 0; j < d; ++j) out.x.row(i)[j] = g(rng);
    out.x.row(i)[0] += c == 0 ? -offset : offset;
    out.y.push_back(c);
  }
  return out;
}

std::vector<Patch> level_patches(std::size_t per_tissue, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<Patch> out;
  for (Tissue t : kBrainTissues) {
    const double level = t == Tissue::csf ? 0.2 : t == Tissue::gray_matter ? 0.5 : 0.8;
    for (std::size_t i = 0; i < per_tissue; ++i) {
      Patch p;
      p.tissue = t;
      for (auto& v : p.pixels) v = static_cast<float>(level + g(rng));
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("separable two-class svm") {
  Labeled d{FeatureMatrix(200, 2), {}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (std::size_t i = 0; i < 200; ++i) {
    const int c = i < 100 ? 0 : 1;
    d.x.row(i)[0] = (c == 0 ? -1.0 : 1.0) + u(rng);
    d.x.row(i)[1] = u(rng);
    d.y.push_back(c);
  }
  const auto m = train_linear_svm(d.x, d.y);
  CHECK(error_rate(m.predict(d.x), d.y) == 0.0);
  CHECK(m.weights.size() == 1);
  CHECK(m.dimension() == 2);
}

TEST_CASE("single-class input is rejected") {
  FeatureMatrix x(3, 1);
  const std::vector<int> y{1, 1, 1};
  CHECK_THROWS(train_linear_svm(x, y));
}

TEST_CASE("svm objective never increases") {
  const auto d = blobs(150, 5, 0.5, 1.0, 2);
  const auto m = train_linear_svm(d.x, d.y, {}, 3);
  for (const auto& trace : m.objective_trace) {
    REQUIRE(!trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-9);
  }
}

TEST_CASE("svm is deterministic per seed") {
  const auto d = blobs(60, 3, 0.5, 1.0, 4);
  const auto a = train_linear_svm(d.x, d.y, {}, 9);
  const auto b = train_linear_svm(d.x, d.y, {}, 9);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
}

TEST_CASE("duplicating every point leaves the decision function") {
  const auto d = blobs(80, 2, 0.8, 1.0, 5);
  FeatureMatrix x2(d.x.rows * 2, d.x.cols);
  std::vector<int> y2;
  for (std::size_t r = 0; r < 2; ++r) {
    std::copy(d.x.data.begin(), d.x.data.end(), x2.data.begin() + r * d.x.data.size());
    y2.insert(y2.end(), d.y.begin(), d.y.end());
  }
  const auto a = train_linear_svm(d.x, d.y, {}, 1);
  const auto b = train_linear_svm(x2, y2, {}, 1);
  // same minimizer: weights agree to optimizer tolerance and predictions match
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(a.weights[0][j] == doctest::Approx(b.weights[0][j]).epsilon(0.02).scale(0.05));
  }
  // the bias sits in a flat valley, so compare the objectives it reaches
  CHECK(a.objective_trace[0].back() == doctest::Approx(b.objective_trace[0].back()).epsilon(1e-3));
  FeatureMatrix grid(21 * 21, 2);
  for (std::size_t i = 0; i < 21; ++i) {
    for (std::size_t j = 0; j < 21; ++j) {
      grid.row(i * 21 + j)[0] = -3.0 + 0.3 * i;
      grid.row(i * 21 + j)[1] = -3.0 + 0.3 * j;
    }
  }
  const auto pa = a.predict(grid), pb = b.predict(grid);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) differ += pa[i] != pb[i];
  // only points within optimizer tolerance of the boundary may flip
  CHECK(differ <= 3);
}

TEST_CASE("one-vs-rest ties go to the lowest class") {
  LinearModel m;
  m.classes = {4, 7, 9};
  m.feature_mean = {0.0};
  m.feature_scale = {1.0};
  m.weights = {{1.0}, {1.0}, {0.5}};
  m.bias = {0.0, 0.0, 0.0};
  CHECK(m.predict(std::vector<double>{1.0}) == 4);
  CHECK(m.predict(std::vector<double>{-1.0}) == 9);
}

TEST_CASE("three-class svm") {
  FeatureMatrix x(300, 1);
  std::vector<int> y;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.1);
  for (std::size_t i = 0; i < 300; ++i) {
    const int c = static_cast<int>(i / 100);
    x.row(i)[0] = c + g(rng);
    y.push_back(c);
  }
  // the middle class is not linearly separable one-vs-rest in 1-D, so add x^2
  FeatureMatrix x2(300, 2);
  for (std::size_t i = 0; i < 300; ++i) {
    x2.row(i)[0] = x.row(i)[0];
    x2.row(i)[1] = x.row(i)[0] * x.row(i)[0];
  }
  const auto m = train_linear_svm(x2, y, SvmConfig{.c = 100.0}, 1);
  CHECK(m.weights.size() == 3);
  CHECK(error_rate(m.predict(x2), y) < 0.05);
}

TEST_CASE("stratified folds keep class proportions") {
  std::vector<int> y;
  for (int i = 0; i < 53; ++i) y.push_back(0);
  for (int i = 0; i < 31; ++i) y.push_back(1);
  for (int i = 0; i < 17; ++i) y.push_back(2);
  const auto f = stratified_folds(y, 5, 7);
  REQUIRE(f.size() == y.size());
  for (int c = 0; c < 3; ++c) {
    std::vector<int> count(5, 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == c) ++count[f[i]];
    }
    CHECK(*std::max_element(count.begin(), count.end()) -
              *std::min_element(count.begin(), count.end()) <=
          1);
  }
  std::vector<int> size(5, 0);
  for (auto k : f) ++size[k];
  CHECK(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()) <= 1);
  CHECK(stratified_folds(y, 5, 7) == f);
  CHECK_THROWS(stratified_folds(std::vector<int>{0, 0, 1}, 2, 1));
}

TEST_CASE("cross-validation error") {
  SUBCASE("matched distributions") {
    const auto d = blobs(500, 4, 0.0, 1.0, 11);
    const double e = cross_val_error(d.x, d.y, 5, {}, 1);
    CHECK(std::abs(e - 0.5) <= 0.05);
  }
  SUBCASE("separable") {
    const auto d = blobs(200, 4, 3.0, 0.3, 12);
    CHECK(cross_val_error(d.x, d.y, 5, {}, 1) <= 0.02);
  }
  SUBCASE("shuffled labels") {
    auto d = blobs(500, 4, 2.0, 1.0, 13);
    std::mt19937_64 rng(14);
    std::shuffle(d.y.begin(), d.y.end(), rng);
    const double e = cross_val_error(d.x, d.y, 5, {}, 1);
    CHECK(std::abs(e - 0.5) <= 0.05);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}

TEST_CASE("proxy a-distance formula") {
  CHECK(proxy_a_distance_from_error(0.5) == 0.0);
  CHECK(proxy_a_distance_from_error(0.0) == 2.0);
  CHECK(proxy_a_distance_from_error(0.25) == 1.0);
  CHECK(proxy_a_distance_from_error(0.7) == 0.0);
  double prev = 3.0;
  for (double e = 0.0; e <= 0.5; e += 0.01) {
    const double d = proxy_a_distance_from_error(e);
    CHECK(d <= prev);
    CHECK(d >= 0.0);
    prev = d;
  }
}

TEST_CASE("proxy a-distance on simulated sets") {
  const auto a = blobs(300, 3, 0.0, 1.0, 21);
  FeatureMatrix s(300, 3), t(300, 3);
  std::copy(a.x.data.begin(), a.x.data.begin() + 900, s.data.begin());
  std::copy(a.x.data.begin() + 900, a.x.data.end(), t.data.begin());
  CHECK(proxy_a_distance(s, t, {}, 1).distance <= 0.2);
  for (std::size_t i = 0; i < 300; ++i) t.row(i)[0] += 10.0;
  const auto far = proxy_a_distance(s, t, {}, 1);
  CHECK(far.distance >= 1.8);
  CHECK(far.distance == proxy_a_distance_from_error(far.error));
}

TEST_CASE("tissue classes") {
  CHECK(tissue_class(Tissue::csf) == 0);
  CHECK(tissue_class(Tissue::white_matter) == 2);
  CHECK(class_tissue(1) == Tissue::gray_matter);
  CHECK_THROWS(tissue_class(Tissue::background));
}

TEST_CASE("error rates") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  CHECK(error_rate(truth, truth) == 0.0);
  CHECK(error_rate(std::vector<int>(6, 1), truth) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS(error_rate(std::vector<int>{}, std::vector<int>{}));
  CHECK_THROWS(error_rate(std::vector<int>{0}, truth));

  std::vector<int> t1500, r1500;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u(0, 2);
  for (int i = 0; i < 1500; ++i) {
    t1500.push_back(i % 3);
    r1500.push_back(u(rng));
  }
  CHECK(std::abs(error_rate(r1500, t1500) - 2.0 / 3.0) <= 0.05);
}

TEST_CASE("cnn classifier") {
  const auto train = level_patches(100, 1);
  const auto x = patch_matrix(train);
  const auto y = tissue_labels(train);
  const CnnConfig cfg{};
  const auto m = train_cnn_classifier(x, y, cfg, 3);
  CHECK(tissue_error(m, x, y) <= 0.05);

  SUBCASE("same seed gives identical weights") {
    CHECK(train_cnn_classifier(x, y, cfg, 3).params == m.params);
  }
  SUBCASE("untrained network is at chance") {
    CnnConfig zero = cfg;
    zero.epochs = 0;
    const auto test = level_patches(100, 2);
    // A single untrained net can be anywhere in [0, 1]; over random inits the
    // mean error of a label-blind predictor on a balanced set is 2/3.
    double sum = 0.0;
    const int inits = 20;
    for (int s = 0; s < inits; ++s) {
      sum += tissue_error(train_cnn_classifier(x, y, zero, 100 + s), patch_matrix(test),
                          tissue_labels(test));
    }
    CHECK(std::abs(sum / inits - 2.0 / 3.0) <= 0.1);
  }
}
