#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mrai/nn.hpp"

using namespace mrai;
using namespace mrai::nn;
using mrai::testing::check_input_gradient;
using mrai::testing::check_network_gradient;
using mrai::testing::random_input;
using mrai::testing::random_params;

TEST_CASE("patch trunk shapes and parameter count") {
  const auto arch = Architecture::patch_trunk(2);
  const auto& s = arch.shapes();
  REQUIRE(s.size() == 10);
  CHECK(s[0] == Shape3{8, 13, 13});
  CHECK(s[3].size() == 1352);
  CHECK(arch.output_size() == 2);
  // conv 8*9+8, dense 1352*16+16, 16*8+8, 8*2+2
  CHECK(arch.parameter_count() == 80 + 21648 + 136 + 18);
}

TEST_CASE("all-zero parameters give a zero output") {
  const auto arch = Architecture::patch_trunk(2);
  const auto p = NetworkParams::zeros(arch);
  const auto x = random_input(225, 1);
  const auto r = forward(p, Tensor({15, 15}, x), Mode::eval);
  CHECK(r.output.data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("single scalar dense layer") {
  const Architecture arch({1, 1, 1}, {Dense{1, 1}});
  NetworkParams p(arch);
  auto v = p.mutable_values();
  v[0] = 2.0;   // w
  v[1] = -0.5;  // b
  const auto r = forward(p, Tensor({1, 1, 1}, {3.0}), Mode::eval);
  CHECK(r.output.data[0] == doctest::Approx(5.5));
  const auto g = backward(p, r.cache, std::vector<double>{1.0});
  CHECK(g.params[0] == doctest::Approx(3.0));  // d/dw = x
  CHECK(g.params[1] == doctest::Approx(1.0));
  CHECK(g.input[0] == doctest::Approx(2.0));
}

TEST_CASE("eval mode is deterministic and ignores the dropout seed") {
  const auto p = random_params(Architecture::patch_trunk(2), 3);
  const auto x = random_input(225, 4);
  const auto a = forward(p, Tensor({15, 15}, x), Mode::eval, 1);
  const auto b = forward(p, Tensor({15, 15}, x), Mode::eval, 99);
  CHECK(a.output.data == b.output.data);
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  const auto p = random_params(Architecture::patch_trunk(2), 5);
  const auto r = forward(p, Tensor({15, 15}, random_input(225, 6)), Mode::train, 7);
  const auto g = backward(p, r.cache, std::vector<double>{0.0, 0.0});
  CHECK(std::all_of(g.params.begin(), g.params.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(g.input.begin(), g.input.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("shape mismatches are rejected") {
  const auto p = random_params(Architecture::patch_trunk(2), 5);
  CHECK_THROWS_AS(forward(p, Tensor({14, 14}, random_input(196, 1)), Mode::eval), ShapeError);
  const auto r = forward(p, Tensor({15, 15}, random_input(225, 1)), Mode::eval);
  CHECK_THROWS_AS(backward(p, r.cache, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(Architecture({1, 2, 2}, {Conv2D{1, 1, 3}}), ShapeError);
  CHECK_THROWS_AS(Architecture({1, 3, 3}, {Flatten{}, Dense{8, 2}}), ShapeError);
}

TEST_CASE("backward on a stale cache is an error") {
  auto p = random_params(Architecture::patch_trunk(2), 5);
  const auto r = forward(p, Tensor({15, 15}, random_input(225, 1)), Mode::eval);
  p.mutable_values()[0] += 1e-3;
  CHECK_THROWS_AS(backward(p, r.cache, std::vector<double>{1.0, 1.0}), std::logic_error);
}

TEST_CASE("layer gradients match finite differences") {
  const auto x = random_input(5 * 5 * 2, 11);
  SUBCASE("conv2d") {
    const auto p = random_params(Architecture({2, 5, 5}, {Conv2D{2, 3, 3}}), 12);
    const auto sp = check_network_gradient(p, x, Mode::eval, 0, 57, 1);
    CHECK(sp.checked == 57);  // every parameter, no kinks in a linear layer
    CHECK(sp.worst < 1e-5);
    const auto si = check_input_gradient(p, x, Mode::eval, 0, 2);
    CHECK(si.checked == x.size());
    CHECK(si.worst < 1e-5);
  }
  SUBCASE("dense") {
    const auto p = random_params(Architecture({2, 5, 5}, {Flatten{}, Dense{50, 4}}), 13);
    const auto sp = check_network_gradient(p, x, Mode::eval, 0, 150, 3);
    CHECK(sp.worst < 1e-5);
    CHECK(check_input_gradient(p, x, Mode::eval, 0, 4).worst < 1e-5);
  }
  SUBCASE("relu") {
    std::vector<double> z = random_input(50, 14);
    for (auto& v : z) v -= 0.5;
    const NetworkParams p(Architecture({2, 5, 5}, {Relu{}}));
    const auto s = check_input_gradient(p, z, Mode::eval, 0, 5);
    CHECK(s.checked >= 45);
    CHECK(s.worst < 1e-5);
  }
  SUBCASE("dropout in train mode with a fixed mask") {
    const NetworkParams p(Architecture({2, 5, 5}, {Dropout{0.5}}));
    const auto s = check_input_gradient(p, x, Mode::train, 77, 6);
    CHECK(s.checked == x.size());
    CHECK(s.worst < 1e-5);
  }
  SUBCASE("flatten") {
    const NetworkParams p(Architecture({2, 5, 5}, {Flatten{}}));
    CHECK(check_input_gradient(p, x, Mode::eval, 0, 7).worst < 1e-5);
  }
}

TEST_CASE("full trunk gradient matches finite differences") {
  const auto p = random_params(Architecture::patch_trunk(2), 21);
  const auto x = random_input(225, 22);
  const auto s = check_network_gradient(p, x, Mode::train, 23, 200, 24);
  CHECK(s.checked == 200);
  CHECK(s.worst < 1e-4);
}

TEST_CASE("inverted dropout preserves the expected activation") {
  const NetworkParams p(Architecture({1, 1, 4}, {Dropout{0.2}}));
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  const std::size_t trials = 10000;
  std::vector<double> sum(4, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto r = forward(p, Tensor({1, 1, 4}, x), Mode::train, t);
    for (std::size_t i = 0; i < 4; ++i) sum[i] += r.output.data[i];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    // Var of x * Bernoulli(0.8) / 0.8 is x^2 * 0.25; 3 standard errors.
    const double se = x[i] * std::sqrt(0.25 / trials);
    CHECK(std::abs(sum[i] / trials - x[i]) < 3.0 * se);
  }
}

TEST_CASE("rmsprop step") {
  const Architecture arch({1, 1, 1}, {Dense{1, 1}});
  SUBCASE("first step from zero state") {
    NetworkParams p(arch);
    RmsState st(p.size(), RmsHyper{});
    const std::vector<double> g{0.5, -2.0};
    rmsprop_step(p, g, st);
    // v = 0.1 g^2, step = lr g / sqrt(v) = lr sign(g) / sqrt(0.1)
    const double expect = 1e-3 / std::sqrt(0.1);
    CHECK(p.values()[0] == doctest::Approx(-expect).epsilon(1e-6));
    CHECK(p.values()[0] == doctest::Approx(-0.0031623).epsilon(1e-4));
    CHECK(p.values()[1] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(st.mean_square[0] == doctest::Approx(0.025));
  }
  SUBCASE("zero gradient leaves parameters and decays the mean square") {
    NetworkParams p(arch);
    p.mutable_values()[0] = 0.7;
    RmsState st(p.size(), RmsHyper{});
    st.mean_square = {1.0, 2.0};
    rmsprop_step(p, std::vector<double>{0.0, 0.0}, st);
    CHECK(p.values()[0] == 0.7);
    CHECK(st.mean_square[0] == doctest::Approx(0.9));
    CHECK(st.mean_square[1] == doctest::Approx(1.8));
  }
  SUBCASE("equal gradients give equal updates") {
    NetworkParams p(arch);
    RmsState st(p.size(), RmsHyper{});
    rmsprop_step(p, std::vector<double>{0.3, 0.3}, st);
    CHECK(p.values()[0] == p.values()[1]);
  }
  SUBCASE("non-finite gradient throws and leaves parameters") {
    NetworkParams p(arch);
    RmsState st(p.size(), RmsHyper{});
    CHECK_THROWS_AS(rmsprop_step(p, std::vector<double>{NAN, 0.0}, st), NumericError);
    CHECK(p.values()[0] == 0.0);
    CHECK(p.values()[1] == 0.0);
  }
}

TEST_CASE("glorot init is seeded and bounded") {
  const auto arch = Architecture::patch_trunk(2);
  const auto a = NetworkParams::glorot_uniform(arch, 9);
  const auto b = NetworkParams::glorot_uniform(arch, 9);
  const auto c = NetworkParams::glorot_uniform(arch, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const auto& s = a.slices()[4];  // Dense(1352, 16)
  const double limit = std::sqrt(6.0 / (1352 + 16));
  for (std::size_t i = 0; i < s.weight_count; ++i) {
    CHECK(std::abs(a.values()[s.weight_offset + i]) <= limit);
  }
  for (std::size_t i = 0; i < s.bias_count; ++i) CHECK(a.values()[s.bias_offset + i] == 0.0);
}
