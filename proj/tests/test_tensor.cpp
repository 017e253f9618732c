#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "afa/conv.hpp"
#include "afa/gradcheck.hpp"
#include "afa/ops.hpp"
#include "afa/rng.hpp"
#include "oracles.hpp"

using afa::Graph;
using afa::ShapeError;
using afa::Shape;
using afa::SplitMix64;
using afa::Tensor;
using Catch::Approx;

TEST_CASE("conv2d basics") {
  Graph<double> g;

  SECTION("all-ones 3x3 input and kernel, pad 1: center sees full overlap") {
    auto x = Tensor<double>::ones(1, 1, 3, 3);
    auto w = Tensor<double>::ones(1, 1, 3, 3);
    auto b = Tensor<double>::zeros(1, 1, 1, 1);
    auto y = afa::conv2d(g, x, w, b, 1, 1);
    REQUIRE(y.shape == Shape{1, 1, 3, 3});
    CHECK(y.at(0, 0, 1, 1) == Approx(9.0));
    CHECK(y.at(0, 0, 0, 0) == Approx(4.0));
    CHECK(y.at(0, 0, 0, 1) == Approx(6.0));
  }

  SECTION("1x1 identity kernel reproduces the input") {
    SplitMix64 rng(3);
    auto x = oracle::random_tensor<double>(rng, 2, 3, 4, 5);
    auto w = Tensor<double>::from({1, 3, 1, 1}, {0.0, 1.0, 0.0});
    // picks channel 1; full identity needs Cout == Cin
    auto wid = Tensor<double>::zeros(3, 3, 1, 1);
    for (int c = 0; c < 3; ++c) wid.at(c, c, 0, 0) = 1.0;
    auto b = Tensor<double>::zeros(1, 3, 1, 1);
    auto y = afa::conv2d(g, x, wid, b, 1, 0);
    REQUIRE(y.shape == x.shape);
    CHECK(oracle::max_abs_diff(y, x) == 0.0);
    (void)w;
  }

  SECTION("matches the 6-loop reference on random shapes") {
    SplitMix64 rng(7);
    for (int stride : {1, 2}) {
      auto x = oracle::random_tensor<double>(rng, 2, 3, 8, 8);
      auto w = oracle::random_tensor<double>(rng, 4, 3, 3, 3);
      auto b = oracle::random_tensor<double>(rng, 1, 4, 1, 1);
      auto y = afa::conv2d(g, x, w, b, stride, 1);
      auto ref = oracle::conv2d_ref(x, w, b, stride, 1);
      REQUIRE(y.shape == ref.shape);
      CHECK(oracle::max_abs_diff(y, ref) < 1e-6);
    }
  }

  SECTION("asymmetric input and 1x1 stride-2 kernels against reference") {
    SplitMix64 rng(11);
    auto x = oracle::random_tensor<double>(rng, 1, 2, 7, 5);
    auto w = oracle::random_tensor<double>(rng, 3, 2, 1, 1);
    auto b = oracle::random_tensor<double>(rng, 1, 3, 1, 1);
    auto y = afa::conv2d(g, x, w, b, 2, 0);
    auto ref = oracle::conv2d_ref(x, w, b, 2, 0);
    REQUIRE(y.shape == ref.shape);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-6);
  }

  SECTION("channel mismatch raises a structured error naming the axis") {
    auto x = Tensor<double>::ones(1, 3, 4, 4);
    auto w = Tensor<double>::ones(2, 4, 3, 3);
    auto b = Tensor<double>::zeros(1, 2, 1, 1);
    REQUIRE_THROWS_MATCHES(afa::conv2d(g, x, w, b, 1, 1), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("C=3") &&
                               Catch::Matchers::ContainsSubstring("Cin=4")));
  }

  SECTION("bad bias shape is rejected") {
    auto x = Tensor<double>::ones(1, 3, 4, 4);
    auto w = Tensor<double>::ones(2, 3, 3, 3);
    auto b = Tensor<double>::zeros(1, 3, 1, 1);
    REQUIRE_THROWS_AS(afa::conv2d(g, x, w, b, 1, 1), ShapeError);
  }
}

TEST_CASE("global pooling") {
  Graph<double> g;

  SECTION("constant field returns the constant for both pools") {
    auto x = Tensor<double>::full(2, 3, 4, 5, 2.75);
    CHECK(afa::global_avg_pool(g, x).at(1, 2, 0, 0) == Approx(2.75));
    CHECK(afa::global_max_pool(g, x).at(0, 0, 0, 0) == Approx(2.75));
  }

  SECTION("2x2 example") {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(afa::global_avg_pool(g, x).value() == Approx(2.5));
    CHECK(afa::global_max_pool(g, x).value() == Approx(4.0));
  }

  SECTION("random tensors match the scan-loop oracle exactly") {
    SplitMix64 rng(13);
    auto x = oracle::random_tensor<double>(rng, 2, 4, 5, 5);
    auto avg = afa::global_avg_pool(g, x);
    auto mx = afa::global_max_pool(g, x);
    auto avg_ref = oracle::global_avg_pool_ref(x);
    auto max_ref = oracle::global_max_pool_ref(x);
    CHECK(avg.data == avg_ref.data);
    CHECK(mx.data == max_ref.data);
  }

  SECTION("max pool routes gradient to the first argmax on ties") {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {7.0, 7.0, 1.0, 7.0});
    x.requires_grad = true;
    Graph<double> tape;
    auto y = afa::global_max_pool(tape, x);
    auto loss = afa::reduce_sum(tape, y);
    auto grads = tape.backward(loss);
    const auto& dx = grads.at(x);
    CHECK(dx.data == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  }

  SECTION("empty spatial extent is an error") {
    Tensor<double> x(1, 1, 0, 0);
    REQUIRE_THROWS_AS(afa::global_avg_pool(g, x), ShapeError);
    REQUIRE_THROWS_AS(afa::global_max_pool(g, x), ShapeError);
  }
}

TEST_CASE("elementwise and broadcasting") {
  Graph<double> g;

  SECTION("sigmoid(0) is one half, softplus(0) is ln 2") {
    auto x = Tensor<double>::zeros(1, 1, 1, 1);
    CHECK(afa::sigmoid(g, x).value() == Approx(0.5));
    CHECK(afa::softplus(g, x).value() == Approx(std::log(2.0)));
  }

  SECTION("spatial map times channel vector broadcasts to full shape") {
    SplitMix64 rng(17);
    auto a = oracle::random_tensor<double>(rng, 2, 1, 3, 4);
    auto b = oracle::random_tensor<double>(rng, 2, 5, 1, 1);
    auto y = afa::mul(g, a, b);
    REQUIRE(y.shape == Shape{2, 5, 3, 4});
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 5; ++c)
        for (int h = 0; h < 3; ++h)
          for (int w = 0; w < 4; ++w) {
            CHECK(y.at(n, c, h, w) == Approx(a.at(n, 0, h, w) * b.at(n, c, 0, 0)));
          }
  }

  SECTION("broadcast mul is commutative and matches materialized expansion") {
    SplitMix64 rng(19);
    for (int trial = 0; trial < 10; ++trial) {
      auto a = oracle::random_tensor<double>(rng, 2, 1, 3, 1);
      auto b = oracle::random_tensor<double>(rng, 1, 4, 3, 5);
      auto ab = afa::mul(g, a, b);
      auto ba = afa::mul(g, b, a);
      CHECK(ab.data == ba.data);
      auto ea = oracle::expand_ref(a, ab.shape);
      auto eb = oracle::expand_ref(b, ab.shape);
      std::vector<double> expected(ab.data.size());
      for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = ea.data[i] * eb.data[i];
      CHECK(ab.data == expected);
    }
  }

  SECTION("illegal broadcast names the offending axis") {
    auto a = Tensor<double>::ones(1, 2, 3, 4);
    auto b = Tensor<double>::ones(1, 2, 5, 4);
    REQUIRE_THROWS_MATCHES(afa::add(g, a, b), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("axis H")));
  }

  SECTION("exp_neg computes e^{-x}") {
    auto x = Tensor<double>::from({1, 1, 1, 2}, {0.0, 2.0});
    auto y = afa::exp_neg(g, x);
    CHECK(y.data[0] == Approx(1.0));
    CHECK(y.data[1] == Approx(std::exp(-2.0)));
  }
}

TEST_CASE("bilinear resize") {
  Graph<double> g;

  SECTION("identity size returns identical values") {
    SplitMix64 rng(23);
    auto x = oracle::random_tensor<double>(rng, 1, 2, 5, 7);
    auto y = afa::bilinear_resize(g, x, 5, 7);
    CHECK(y.data == x.data);
  }

  SECTION("constant tensor stays constant at any size") {
    auto x = Tensor<double>::full(1, 1, 3, 3, 0.4);
    auto y = afa::bilinear_resize(g, x, 9, 2);
    for (double v : y.data) CHECK(v == Approx(0.4));
  }

  SECTION("2x2 to 4x4 matches the direct formula oracle") {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto y = afa::bilinear_resize(g, x, 4, 4);
    auto ref = oracle::bilinear_ref(x, 4, 4);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-6);
  }

  SECTION("downscale matches the oracle") {
    SplitMix64 rng(29);
    auto x = oracle::random_tensor<double>(rng, 2, 3, 8, 6);
    auto y = afa::bilinear_resize(g, x, 3, 4);
    auto ref = oracle::bilinear_ref(x, 3, 4);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("backward") {
  SECTION("reduce_sum gradient is all ones") {
    auto x = Tensor<double>::full(2, 1, 2, 2, 3.0);
    x.requires_grad = true;
    Graph<double> g;
    auto loss = afa::reduce_sum(g, x);
    auto grads = g.backward(loss);
    for (double v : grads.at(x).data) CHECK(v == 1.0);
  }

  SECTION("sum of squares gradient is 2x") {
    SplitMix64 rng(31);
    auto x = oracle::random_tensor<double>(rng, 1, 2, 3, 3);
    x.requires_grad = true;
    Graph<double> g;
    auto loss = afa::reduce_sum(g, afa::mul(g, x, x));
    auto grads = g.backward(loss);
    const auto& dx = grads.at(x);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      CHECK(dx.data[i] == Approx(2.0 * x.data[i]));
    }
  }

  SECTION("non-scalar loss is rejected") {
    auto x = Tensor<double>::ones(1, 1, 2, 2);
    x.requires_grad = true;
    Graph<double> g;
    auto y = afa::scalar_mul(g, x, 2.0);
    REQUIRE_THROWS_AS(g.backward(y), ShapeError);
  }

  SECTION("parameters not reaching the loss get zero-filled gradients") {
    auto x = Tensor<double>::ones(1, 1, 2, 2);
    auto dead = Tensor<double>::ones(1, 1, 2, 2);
    x.requires_grad = true;
    dead.requires_grad = true;
    Graph<double> g;
    auto unused = afa::mul(g, dead, dead);
    auto loss = afa::reduce_sum(g, x);
    auto grads = g.backward(loss);
    (void)unused;
    const auto& dd = grads.at(dead);
    for (double v : dd.data) CHECK(v == 0.0);
  }

  SECTION("backward twice yields bit-identical gradient maps") {
    SplitMix64 rng(37);
    auto x = oracle::random_tensor<double>(rng, 2, 3, 4, 4);
    auto w = oracle::random_tensor<double>(rng, 2, 3, 3, 3);
    auto b = oracle::random_tensor<double>(rng, 1, 2, 1, 1);
    x.requires_grad = w.requires_grad = b.requires_grad = true;
    Graph<double> g;
    auto y = afa::conv2d(g, x, w, b, 1, 1);
    auto loss = afa::reduce_sum(g, afa::mul(g, y, afa::sigmoid(g, y)));
    auto g1 = g.backward(loss);
    auto g2 = g.backward(loss);
    CHECK(g1.at(x).data == g2.at(x).data);
    CHECK(g1.at(w).data == g2.at(w).data);
    CHECK(g1.at(b).data == g2.at(b).data);
  }
}

namespace {

afa::GradCheckReport check_op(const std::function<afa::Tensor<double>(
                                  afa::Graph<double>&, std::vector<afa::Tensor<double>>&)>& f,
                              std::vector<afa::Tensor<double>> inputs) {
  return afa::gradcheck(f, std::move(inputs));
}

}  // namespace

TEST_CASE("gradcheck against finite differences") {
  SplitMix64 rng(41);

  SECTION("sigmoid") {
    auto r = check_op([](Graph<double>& g, std::vector<Tensor<double>>& in) {
      return afa::reduce_sum(g, afa::sigmoid(g, in[0]));
    }, {oracle::random_tensor<double>(rng, 1, 2, 3, 3)});
    INFO(r.detail);
    CHECK(r.pass);
  }

  SECTION("conv2d with random parameters") {
    auto r = check_op([](Graph<double>& g, std::vector<Tensor<double>>& in) {
      auto y = afa::conv2d(g, in[0], in[1], in[2], 1, 1);
      return afa::reduce_sum(g, afa::mul(g, y, y));
    }, {oracle::random_tensor<double>(rng, 2, 3, 5, 5),
        oracle::random_tensor<double>(rng, 2, 3, 3, 3),
        oracle::random_tensor<double>(rng, 1, 2, 1, 1)});
    INFO(r.detail);
    CHECK(r.pass);
  }

  SECTION("constant function has identically zero gradients") {
    auto r = check_op([](Graph<double>& g, std::vector<Tensor<double>>& in) {
      (void)in;
      auto c = Tensor<double>::full(1, 1, 1, 1, 4.2);
      return afa::scalar_mul(g, c, 1.0);
    }, {oracle::random_tensor<double>(rng, 1, 1, 2, 2)});
    CHECK(r.pass);
    CHECK(r.max_rel_err == 0.0);
  }

  SECTION("composite broadcast expression") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SplitMix64 r2(100 + seed);
      auto r = check_op([](Graph<double>& g, std::vector<Tensor<double>>& in) {
        auto prod = afa::mul(g, in[0], in[1]);                  // (2,4,3,3)
        auto gated = afa::mul(g, afa::sigmoid(g, prod), prod);  // silu-like
        auto shifted = afa::sub(g, gated, in[2]);
        return afa::reduce_sum(g, shifted);
      }, {oracle::random_tensor<double>(r2, 2, 1, 3, 3),
          oracle::random_tensor<double>(r2, 2, 4, 1, 1),
          oracle::random_tensor<double>(r2, 1, 4, 3, 3)});
      INFO("seed " << seed << ": " << r.detail);
      CHECK(r.pass);
    }
  }

  SECTION("remaining primitive ops") {
    struct Case {
      const char* name;
      std::function<Tensor<double>(Graph<double>&, std::vector<Tensor<double>>&)> fn;
      bool away_from_zero;
    };
    const std::vector<Case> cases = {
        {"relu", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::relu(g, in[0])); }, true},
        {"softplus", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::softplus(g, in[0])); }, false},
        {"abs", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::abs(g, in[0])); }, true},
        {"exp_neg", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::exp_neg(g, in[0])); }, false},
        {"affine", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::affine(g, in[0], -1.5, 0.25)); }, false},
        {"avg_pool", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::global_avg_pool(g, in[0])); }, false},
        {"max_pool", [](Graph<double>& g, auto& in) { return afa::reduce_sum(g, afa::global_max_pool(g, in[0])); }, true},
        {"resize_up", [](Graph<double>& g, auto& in) {
           auto y = afa::bilinear_resize(g, in[0], 7, 6);
           return afa::reduce_sum(g, afa::mul(g, y, y));
         }, false},
        {"resize_down", [](Graph<double>& g, auto& in) {
           auto y = afa::bilinear_resize(g, in[0], 2, 2);
           return afa::reduce_sum(g, afa::mul(g, y, y));
         }, false},
        {"concat", [](Graph<double>& g, auto& in) {
           auto y = afa::concat_channels(g, {in[0], in[0]});
           return afa::reduce_sum(g, afa::mul(g, y, y));
         }, false},
    };
    for (const auto& c : cases) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SplitMix64 r2(200 + seed);
        auto in = c.away_from_zero ? oracle::random_tensor_away_from_zero<double>(r2, 1, 2, 4, 3)
                                   : oracle::random_tensor<double>(r2, 1, 2, 4, 3);
        auto r = afa::gradcheck(c.fn, {in});
        INFO(c.name << " seed " << seed << ": " << r.detail);
        CHECK(r.pass);
      }
    }
  }
}
