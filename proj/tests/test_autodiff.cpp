// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "geopatch/autodiff.hpp"
#include "geopatch/error.hpp"
#include "oracles/conv_reference.hpp"
#include "test_util.hpp"

using namespace geopatch;
using ad::Tape;
using ad::Var;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-3;

// Reduces any tensor to a scalar with fixed, non-uniform weights so that
// every output coordinate contributes a distinct gradient.
Var<double> probe(Var<double> x) {
  std::vector<double> w(x.value().size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1) + 1.3;
  return ad::weighted_sum(x, w);
}

void check_grad(const std::function<Var<double>(Tape<double>&, Var<double>)>& f, const TensorD& at) {
  const auto rep = ad::finite_diff_check(f, at);
  INFO("worst index " << rep.worst_index << " analytic " << rep.analytic_at_worst << " numeric "
                      << rep.numeric_at_worst);
  CHECK(rep.coordinates == at.size());
  CHECK(rep.max_rel_error <= kTol);
}

// Values bounded away from the relu/clamp kinks.
TensorD away_from_kinks(Shape shape, std::uint64_t seed) {
  auto t = random_tensor<double>(std::move(shape), seed, 0.1, 0.9);
  geopatch::Rng rng(seed + 1);
  for (auto& v : t.data()) {
    if (rng.bernoulli(0.5)) v = -v;
  }
  return t;
}

}  // namespace

TEST_CASE("conv2d forward matches the direct-sum oracle") {
  for (int stride : {1, 2}) {
    for (bool same : {true, false}) {
      const auto in = random_tensor<double>({9, 7, 3}, 11, -1, 1);
      const auto k = random_tensor<double>({3, 3, 3, 4}, 12, -1, 1);
      Tape<double> tape;
      const auto out = ad::conv2d(tape.constant(in), tape.constant(k), stride,
                                  same ? ad::Padding::same : ad::Padding::valid)
                           .value();
      const auto ref = oracle::conv2d(in.storage(), 9, 7, 3, k.storage(), 3, 3, 4, static_cast<std::size_t>(stride), same);
      REQUIRE(out.shape() == Shape{ref.out_h, ref.out_w, 4});
      for (std::size_t i = 0; i < ref.out.size(); ++i) CHECK(out[i] == doctest::Approx(ref.out[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d float forward agrees with double") {
  const auto in = random_tensor<double>({16, 16, 3}, 21);
  const auto k = random_tensor<double>({3, 3, 3, 8}, 22, -0.5, 0.5);
  Tape<double> td;
  Tape<float> tf;
  const auto d = ad::conv2d(td.constant(in), td.constant(k), 1, ad::Padding::same).value();
  const auto f = ad::conv2d(tf.constant(in.cast<float>()), tf.constant(k.cast<float>()), 1, ad::Padding::same).value();
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(f[i] == doctest::Approx(d[i]).epsilon(1e-5));
}

TEST_CASE("gradient suite: every op against central differences") {
  const auto k334 = random_tensor<double>({3, 3, 3, 4}, 31, -0.5, 0.5);
  const auto img = random_tensor<double>({8, 8, 3}, 32);

  SUBCASE("conv2d input, same padding, stride 1 and 2") {
    for (int s : {1, 2}) {
      check_grad([&](Tape<double>& t, Var<double> x) { return probe(ad::conv2d(x, t.constant(k334), s, ad::Padding::same)); },
                 img);
    }
  }
  SUBCASE("conv2d kernel, valid padding") {
    check_grad([&](Tape<double>& t, Var<double> k) { return probe(ad::conv2d(t.constant(img), k, 1, ad::Padding::valid)); },
               k334);
  }
  SUBCASE("conv2d wide output channels (transposed-kernel path)") {
    const auto in = random_tensor<double>({6, 6, 8}, 33);
    const auto k = random_tensor<double>({3, 3, 8, 2}, 34, -0.5, 0.5);
    check_grad([&](Tape<double>& t, Var<double> x) { return probe(ad::conv2d(x, t.constant(k), 1, ad::Padding::same)); },
               in);
  }
  SUBCASE("add_channel_bias") {
    const auto bias = random_tensor<double>({3}, 35);
    check_grad([&](Tape<double>& t, Var<double> x) { return probe(ad::add_channel_bias(x, t.constant(bias))); }, img);
    check_grad([&](Tape<double>& t, Var<double> b) { return probe(ad::add_channel_bias(t.constant(img), b)); }, bias);
  }
  SUBCASE("maxpool2") {
    check_grad([](Tape<double>&, Var<double> x) { return probe(ad::maxpool2(x)); }, img);
  }
  SUBCASE("dense weights, bias and input") {
    const auto x = random_tensor<double>({12}, 36, -1, 1);
    const auto w = random_tensor<double>({12, 5}, 37, -1, 1);
    const auto b = random_tensor<double>({5}, 38, -1, 1);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::dense(v, t.constant(w), t.constant(b))); }, x);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::dense(t.constant(x), v, t.constant(b))); }, w);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::dense(t.constant(x), t.constant(w), v)); }, b);
  }
  SUBCASE("relu and clamp01 away from kinks") {
    const auto x = away_from_kinks({4, 4, 3}, 39);
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::relu(v)); }, x);
    auto inside = random_tensor<double>({4, 4, 3}, 40, -0.5, 1.5);
    for (auto& v : inside.data()) {
      if (std::abs(v) < 0.05 || std::abs(v - 1.0) < 0.05) v += 0.1;
    }
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::clamp01(v)); }, inside);
  }
  SUBCASE("add, sub, mul, scale, including aliasing") {
    const auto other = random_tensor<double>({4, 4, 3}, 41, -1, 1);
    const auto x = random_tensor<double>({4, 4, 3}, 42, -1, 1);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::add(v, t.constant(other))); }, x);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::sub(t.constant(other), v)); }, x);
    check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::mul(v, t.constant(other))); }, x);
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::mul(v, v)); }, x);
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::add(v, v)); }, x);
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::scale(v, -2.5)); }, x);
  }
  SUBCASE("sum, weighted_sum, reshape") {
    const auto x = random_tensor<double>({3, 5}, 43, -1, 1);
    check_grad([](Tape<double>&, Var<double> v) { return ad::sum(v); }, x);
    check_grad([](Tape<double>&, Var<double> v) { return probe(ad::reshape(v, {15})); }, x);
  }
  SUBCASE("gather with repeated indices") {
    const auto x = random_tensor<double>({2, 2, 3}, 44);
    auto idx = std::make_shared<std::vector<std::uint32_t>>();
    for (std::uint32_t i = 0; i < 27; ++i) idx->push_back((i * 5) % 12);
    check_grad([&](Tape<double>&, Var<double> v) { return probe(ad::gather(v, idx, {3, 3, 3})); }, x);
  }
  SUBCASE("paste, partially clipped, gradient to base and patch") {
    const auto base = random_tensor<double>({6, 6, 3}, 45);
    const auto patch = random_tensor<double>({4, 4, 3}, 46);
    for (auto [top, left] : {std::pair{1, 1}, std::pair{-2, 3}, std::pair{4, -1}}) {
      check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::paste(v, t.constant(patch), top, left)); },
                 base);
      check_grad([&](Tape<double>& t, Var<double> v) { return probe(ad::paste(t.constant(base), v, top, left)); },
                 patch);
    }
  }
  SUBCASE("softmax_cross_entropy") {
    const auto logits = random_tensor<double>({6}, 47, -3, 3);
    for (int label = 0; label < 6; ++label) {
      check_grad([&](Tape<double>&, Var<double> v) { return ad::softmax_cross_entropy(v, label); }, logits);
    }
  }
  SUBCASE("composed conv-pool-dense-loss network on 16x16x3") {
    const auto x = random_tensor<double>({16, 16, 3}, 48);
    const auto k = random_tensor<double>({3, 3, 3, 4}, 49, -0.5, 0.5);
    const auto w = random_tensor<double>({8 * 8 * 4, 3}, 50, -0.2, 0.2);
    const auto b = random_tensor<double>({3}, 51, -0.1, 0.1);
    check_grad(
        [&](Tape<double>& t, Var<double> v) {
          auto h = ad::maxpool2(ad::relu(ad::conv2d(v, t.constant(k), 1, ad::Padding::same)));
          auto logits = ad::dense(ad::reshape(h, {8 * 8 * 4}), t.constant(w), t.constant(b));
          return ad::softmax_cross_entropy(logits, 1);
        },
        x);
  }
}

TEST_CASE("maxpool2 routes ties to the first index") {
  Tape<double> tape;
  auto x = tape.leaf(TensorD({2, 2, 1}, 0.5), true);
  auto y = ad::sum(ad::maxpool2(x));
  tape.backward(y);
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("clamp01 passes gradient only strictly inside") {
  Tape<double> tape;
  auto x = tape.leaf(TensorD({4}, std::vector<double>{-0.5, 0.0, 0.5, 1.0}), true);
  tape.backward(ad::sum(ad::clamp01(x)));
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("softmax and cross-entropy basics") {
  const std::vector<double> logits{1.0, 2.0, 3.0, -4.0};
  const auto p = ad::softmax<double>(logits);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));

  Tape<double> tape;
  auto uniform = tape.constant(TensorD({5}, 0.25));
  CHECK(ad::softmax_cross_entropy(uniform, 3).value()[0] == doctest::Approx(std::log(5.0)));

  // Large logits must not overflow.
  auto big = tape.constant(TensorD({2}, std::vector<double>{1000.0, 0.0}));
  CHECK(ad::softmax_cross_entropy(big, 0).value()[0] == doctest::Approx(0.0));
  CHECK(ad::softmax_cross_entropy(big, 1).value()[0] == doctest::Approx(1000.0));

  CHECK_THROWS_AS(ad::softmax_cross_entropy(uniform, 5), UsageError);
  CHECK_THROWS_AS(ad::softmax_cross_entropy(uniform, -1), UsageError);
  auto bad = tape.constant(TensorD({2}, std::vector<double>{NAN, 0.0}));
  CHECK_THROWS_AS(ad::softmax_cross_entropy(bad, 0), NumericError);
}

TEST_CASE("tape contract") {
  SUBCASE("second backward on the same tape is rejected") {
    Tape<double> tape;
    auto x = tape.leaf(TensorD({2}, 1.0), true);
    auto y = ad::sum(ad::mul(x, x));
    tape.backward(y);
    CHECK(x.grad() == std::vector<double>{2.0, 2.0});
    CHECK_THROWS_AS(tape.backward(y), std::logic_error);
  }
  SUBCASE("non-scalar loss") {
    Tape<double> tape;
    auto x = tape.leaf(TensorD({2}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(ad::scale(x, 2.0)), ShapeError);
  }
  SUBCASE("reset allows reuse") {
    Tape<double> tape;
    auto x = tape.leaf(TensorD({1}, 3.0), true);
    tape.backward(ad::sum(x));
    tape.reset();
    CHECK(tape.node_count() == 0);
    auto z = tape.leaf(TensorD({1}, 3.0), true);
    tape.backward(ad::sum(ad::mul(z, z)));
    CHECK(z.grad()[0] == doctest::Approx(6.0));
  }
  SUBCASE("shape mismatches are reported") {
    Tape<double> tape;
    auto a = tape.constant(TensorD({2, 3}));
    auto b = tape.constant(TensorD({3, 2}));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
    CHECK_THROWS_AS(ad::mul(a, b), ShapeError);
    CHECK_THROWS_AS(ad::reshape(a, {5}), ShapeError);
    auto img = tape.constant(TensorD({4, 4, 2}));
    auto k = tape.constant(TensorD({3, 3, 3, 1}));
    CHECK_THROWS_AS(ad::conv2d(img, k, 1, ad::Padding::same), ShapeError);
    CHECK_THROWS_AS(ad::maxpool2(tape.constant(TensorD({3, 3, 1}))), ShapeError);
    CHECK_THROWS_AS(ad::weighted_sum(a, std::vector<double>(5, 1.0)), ShapeError);
  }
  SUBCASE("constants receive no gradient work") {
    Tape<double> tape;
    auto c = tape.constant(TensorD({2}, 1.0));
    auto y = ad::sum(ad::mul(c, c));
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(TensorF({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(TensorF({2, 2}, std::vector<float>(3)), ShapeError);
  const TensorF t({2, 2, 3}, 0.25f);
  CHECK(t.size() == 12);
  CHECK(t.at(1, 1, 2) == 0.25f);
}
