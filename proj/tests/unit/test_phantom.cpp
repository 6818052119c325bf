#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mrai/phantom.hpp"

using namespace mrai;

namespace {

// Direct evaluation of the steady-state equation, written out independently.
double oracle_signal(double pd, double t1, double t2s, double flip_deg, double tr, double te) {
  const double a = flip_deg * 3.14159265358979323846 / 180.0;
  const double e1 = std::exp(-tr / t1);
  const double e2 = std::exp(-te / t2s);
  return pd * std::sin(a) * (1.0 - e1) * e2 / (1.0 - std::cos(a) * e1);
}

}  // namespace

TEST_CASE("phantom contains all four tissues") {
  const auto m = generate_phantom(7, 64, 0);
  CHECK(m.width == 64);
  CHECK(m.height == 64);
  for (Tissue t : {Tissue::background, Tissue::csf, Tissue::gray_matter, Tissue::white_matter}) {
    CHECK(m.count(t) >= 50);
  }
}

TEST_CASE("phantom is deterministic per seed") {
  CHECK(generate_phantom(7, 64, 0).labels == generate_phantom(7, 64, 0).labels);
  CHECK(generate_phantom(7, 64, 0).labels != generate_phantom(8, 64, 0).labels);
}

TEST_CASE("phantom below 31 pixels is rejected") {
  CHECK_THROWS_AS(generate_phantom(1, 30, 0), PhantomError);
  CHECK_NOTHROW(generate_phantom(1, 31, 0));
}

TEST_CASE("signal equation") {
  CHECK(spoiled_gre_signal({1000.0, 80.0, 1.0}, 20.0, 13.8, 2.8) ==
        doctest::Approx(oracle_signal(1.0, 1000.0, 80.0, 20.0, 13.8, 2.8)).epsilon(1e-12));
  CHECK(spoiled_gre_signal({1000.0, 80.0, 1.0}, 20.0, 13.8, 2.8) ==
        doctest::Approx(0.06184).epsilon(1e-3));
  // 90 degrees with TR >> T1: S -> PD exp(-TE/T2*)
  CHECK(spoiled_gre_signal({10.0, 40.0, 0.7}, 90.0, 1e5, 4.0) ==
        doctest::Approx(0.7 * std::exp(-0.1)).epsilon(1e-12));
}

TEST_CASE("signal increases with T2*") {
  for (double t1 : {300.0, 1000.0, 4000.0}) {
    for (double flip : {10.0, 20.0, 90.0}) {
      double prev = 0.0;
      for (double t2 = 10.0; t2 <= 400.0; t2 += 10.0) {
        const double s = spoiled_gre_signal({t1, t2, 0.8}, flip, 13.8, 2.8);
        CHECK(s > prev);
        prev = s;
      }
    }
  }
}

TEST_CASE("default protocols") {
  const auto p = default_protocols();
  CHECK(p.source.flip_angle_deg == 20.0);
  CHECK(p.source.tr_ms == 13.8);
  CHECK(p.source.te_ms == 2.8);
  CHECK(p.target.flip_angle_deg == 90.0);
  CHECK(p.target.tr_ms == 7.9);
  CHECK(p.target.te_ms == 4.5);
  CHECK(p.source.tr_ms > p.source.te_ms);
  CHECK(p.target.tr_ms > p.target.te_ms);
  CHECK(p.target.tissue_params[Tissue::gray_matter].t1_ms >
        p.source.tissue_params[Tissue::gray_matter].t1_ms);
  CHECK_NOTHROW(p.source.validate());
  CHECK_NOTHROW(p.target.validate());
}

TEST_CASE("protocol validation") {
  auto p = default_protocols().source;
  p.te_ms = p.tr_ms;
  CHECK_THROWS_AS(p.validate(), PhantomError);
  p = default_protocols().source;
  p.flip_angle_deg = 0.0;
  CHECK_THROWS_AS(p.validate(), PhantomError);
  p = default_protocols().source;
  p.noise_sigma = -1.0;
  CHECK_THROWS_AS(p.validate(), PhantomError);
}

TEST_CASE("noiseless scan is piecewise constant per tissue") {
  const auto m = generate_phantom(3, 64, 0);
  auto proto = default_protocols().source;
  proto.noise_sigma = 0.0;
  const auto s = simulate_scan(m, proto, ScannerId::source, 1);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const Tissue t = m.labels[i];
    const double expect =
        t == Tissue::background
            ? 0.0
            : spoiled_gre_signal(proto.tissue_params[t], proto.flip_angle_deg, proto.tr_ms,
                                 proto.te_ms);
    CHECK(s.image[i] == expect);
  }
}

TEST_CASE("noise standard deviation") {
  const auto m = generate_phantom(4, 256, 0);
  auto proto = default_protocols().source;
  proto.noise_sigma = 0.01;
  const auto s = simulate_scan(m, proto, ScannerId::source, 2);
  const double level = spoiled_gre_signal(proto.tissue_params[Tissue::white_matter],
                                          proto.flip_angle_deg, proto.tr_ms, proto.te_ms);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (m.labels[i] != Tissue::white_matter) continue;
    const double r = s.image[i] - level;
    sum += r;
    sq += r * r;
    ++n;
  }
  REQUIRE(n >= 10000);
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(sd - 0.01) < 0.05 * 0.01);
}

TEST_CASE("normalization spans [0, 1]") {
  const auto m = generate_phantom(5, 64, 0);
  const auto s = simulate_scan(m, default_protocols().target, ScannerId::target, 3);
  const auto z = s.normalized();
  CHECK(*std::min_element(z.begin(), z.end()) == 0.0);
  CHECK(*std::max_element(z.begin(), z.end()) == 1.0);
}

TEST_CASE("patch extraction") {
  const auto m = generate_phantom(6, 128, 2);
  const auto s = simulate_scan(m, default_protocols().source, ScannerId::source, 4);
  const std::vector<Tissue> tissues(kBrainTissues.begin(), kBrainTissues.end());
  const auto ps = extract_patches(s, m, 50, tissues, 9);
  REQUIRE(ps.size() == 150);
  for (Tissue t : kBrainTissues) {
    CHECK(std::count_if(ps.begin(), ps.end(), [&](const Patch& p) { return p.tissue == t; }) == 50);
  }
  const auto z = s.normalized();
  for (const auto& p : ps) {
    CHECK(p.tissue == m.at(p.center_row, p.center_col));
    CHECK(p.subject_id == 2);
    CHECK(p.pixels[kPatchPixels / 2] == static_cast<float>(z[p.center_row * m.width + p.center_col]));
    for (float v : p.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  // centers are unique within a tissue
  std::vector<std::pair<int, int>> centers;
  for (const auto& p : ps) centers.emplace_back(p.center_row, p.center_col);
  std::sort(centers.begin(), centers.end());
  CHECK(std::adjacent_find(centers.begin(), centers.end()) == centers.end());
  CHECK(extract_patches(s, m, 50, tissues, 9) == ps);
}

TEST_CASE("tissue exhausted error names the tissue") {
  const auto m = generate_phantom(6, 64, 0);
  const auto s = simulate_scan(m, default_protocols().source, ScannerId::source, 4);
  const auto avail = candidate_centers(m);
  const std::size_t too_many = avail[static_cast<std::size_t>(Tissue::csf)] + 1;
  try {
    extract_patches(s, m, too_many, {Tissue::csf}, 1);
    FAIL("expected TissueExhaustedError");
  } catch (const TissueExhaustedError& e) {
    CHECK(e.tissue() == Tissue::csf);
    CHECK(std::string(e.what()).find("CSF") != std::string::npos);
  }
}

TEST_CASE("tissue names round-trip") {
  for (Tissue t : {Tissue::background, Tissue::csf, Tissue::gray_matter, Tissue::white_matter}) {
    CHECK(parse_tissue(tissue_name(t)) == t);
  }
  CHECK_THROWS(parse_tissue("bone"));
}
