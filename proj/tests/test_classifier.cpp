// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "geopatch/classifier.hpp"
#include "geopatch/error.hpp"
#include "geopatch/io.hpp"
#include "test_util.hpp"

using namespace geopatch;
using testutil::random_tensor;

namespace {

ModelConfig small_config(std::size_t k = 3) {
  ModelConfig c;
  c.input_size = 16;
  c.class_count = k;
  c.conv_filters = {4, 8};
  c.dense_widths = {16};
  c.seed = 7;
  return c;
}

void zero_parameters(Model& m) {
  for (auto& p : m.mutable_parameters()) {
    for (auto& v : p.value.storage()) v = 0.0f;
  }
}

bool same_parameters(const Model& a, const Model& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    if (a.parameters()[i].name != b.parameters()[i].name) return false;
    if (!(a.parameters()[i].value == b.parameters()[i].value)) return false;
  }
  return true;
}

std::vector<LabeledImage> toy_dataset(std::size_t per_class, std::size_t k, std::uint64_t seed) {
  // Class c is a brightness level plus noise; separable by mean intensity.
  std::vector<LabeledImage> data;
  Rng rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      TensorF img({16, 16, 3});
      const double level = (static_cast<double>(c) + 0.5) / static_cast<double>(k);
      for (auto& v : img.data()) v = static_cast<float>(std::clamp(level + rng.uniform(-0.1, 0.1), 0.0, 1.0));
      data.push_back({img, static_cast<int>(c)});
    }
  }
  return data;
}

}  // namespace

TEST_CASE("default architecture parameter count") {
  // conv 3x3: 27*16+16, 144*32+32, 288*64+64; dense 8*8*64*128+128; head 128*6+6
  const std::size_t expected = (27 * 16 + 16) + (144 * 32 + 32) + (288 * 64 + 64) + (4096 * 128 + 128) + (128 * 6 + 6);
  const Model m{ModelConfig{}};
  CHECK(m.parameter_count() == expected);
  CHECK(m.parameter_count() == 548774);
  CHECK(m.input_shape() == Shape{64, 64, 3});
}

TEST_CASE("build_model is deterministic in config and seed") {
  const Model a{small_config()}, b{small_config()};
  CHECK(same_parameters(a, b));
  auto other = small_config();
  other.seed = 8;
  CHECK_FALSE(same_parameters(a, Model{other}));
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.class_count = 1;
  CHECK_THROWS_AS(Model{c}, UsageError);
  c = small_config();
  c.input_size = 18;  // not divisible by 4
  CHECK_THROWS_AS(Model{c}, UsageError);
  c = small_config();
  c.conv_filters = {4, 0};
  CHECK_THROWS_AS(Model{c}, UsageError);
}

TEST_CASE("minimal k=2, S=32 model gives finite logits on zeros") {
  ModelConfig c;
  c.input_size = 32;
  c.class_count = 2;
  const Model m{c};
  ad::Tape<float> tape;
  const auto logits = m.logits(tape, tape.constant(TensorF({32, 32, 3}, 0.0f))).value();
  REQUIRE(logits.size() == 2);
  for (float v : logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("predict") {
  const Model m{small_config(4)};
  const auto x = random_tensor({16, 16, 3}, 3);
  const auto p = m.predict(x);
  CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-5));
  const auto again = m.predict(x);
  CHECK(again.label == p.label);
  CHECK(again.probabilities == p.probabilities);
  CHECK_THROWS_AS(m.predict(TensorF({8, 8, 3})), ShapeError);

  Model flat{small_config(4)};
  zero_parameters(flat);
  CHECK(flat.predict(x).label == 0);  // four-way tie goes to the lowest index
}

TEST_CASE("loss_and_input_grad") {
  const Model m{small_config()};
  const auto x = random_tensor<double>({16, 16, 3}, 5);

  SUBCASE("gradient matches finite differences in double precision") {
    const auto rep = ad::finite_diff_check(
        [&](ad::Tape<double>& t, ad::Var<double> v) { return ad::softmax_cross_entropy(m.logits(t, v), 1); }, x);
    CHECK(rep.max_rel_error <= 1e-3);
    const auto g = m.loss_and_input_grad<double>(x, 1);
    CHECK(g.gradient.shape() == x.shape());
  }
  SUBCASE("uniform logits give ln k") {
    Model flat{small_config(3)};
    zero_parameters(flat);
    CHECK(flat.loss_and_input_grad<double>(x, 2).loss == doctest::Approx(std::log(3.0)));
  }
  SUBCASE("label range") {
    CHECK_THROWS_AS(m.loss_and_input_grad<double>(x, 3), UsageError);
    CHECK_THROWS_AS(m.loss_and_input_grad<double>(x, -1), UsageError);
  }
  SUBCASE("first-order descent along -grad at step 1e-3") {
    const auto g = m.loss_and_input_grad<double>(x, 0);
    TensorD stepped = x;
    double norm = 0.0;
    for (double v : g.gradient.data()) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < x.size(); ++i) stepped[i] -= 1e-3 * g.gradient[i] / norm;
    CHECK(m.loss_and_input_grad<double>(stepped, 0).loss < g.loss);
  }
  SUBCASE("saturated confidence gives near-zero gradient") {
    // Linear model whose class-0 logit dominates by a wide margin.
    ModelConfig lc = small_config(2);
    lc.conv_filters = {};
    lc.dense_widths = {};
    Model lin{lc};
    zero_parameters(lin);
    lin.mutable_parameters().back().value[0] = 100.0f;  // bias of class 0
    const auto g = lin.loss_and_input_grad<double>(x, 0);
    double mx = 0.0;
    for (double v : g.gradient.data()) mx = std::max(mx, std::abs(v));
    CHECK(g.loss < 1e-30);
    CHECK(mx < 1e-30);
  }
  SUBCASE("predict and gradients leave parameters untouched") {
    const Model copy{small_config()};
    (void)m.predict(x.cast<float>());
    (void)m.loss_and_input_grad<float>(x.cast<float>(), 2);
    CHECK(same_parameters(m, copy));
  }
}

TEST_CASE("train") {
  const auto data = toy_dataset(6, 3, 1);

  SUBCASE("lr = 0 leaves parameters unchanged and loss constant") {
    Model m{small_config()};
    const Model before{small_config()};
    TrainOptions o;
    o.epochs = 3;
    o.learning_rate = 0.0;
    o.batch_size = 4;
    const auto log = train(m, data, {}, o);
    CHECK(same_parameters(m, before));
    REQUIRE(log.epochs.size() == 3);
    CHECK(log.epochs[1].train_loss == doctest::Approx(log.epochs[0].train_loss).epsilon(1e-6));
    CHECK(log.epochs[2].train_loss == doctest::Approx(log.epochs[0].train_loss).epsilon(1e-6));
  }
  SUBCASE("single example is memorized") {
    Model m{small_config()};
    TrainOptions o;
    o.epochs = 60;
    o.learning_rate = 0.05;
    o.batch_size = 1;
    const auto log = train(m, {data[4]}, {}, o);
    CHECK(log.epochs.back().train_loss < 0.05);
    CHECK(m.predict(data[4].pixels).label == data[4].label);
  }
  SUBCASE("separable toy data is learned and training is bit-reproducible") {
    TrainOptions o;
    o.epochs = 60;
    o.learning_rate = 0.03;
    o.batch_size = 3;
    Model a{small_config()}, b{small_config()};
    const auto val = toy_dataset(3, 3, 2);
    const auto log = train(a, data, val, o);
    train(b, data, val, o);
    CHECK(same_parameters(a, b));
    CHECK(log.epochs.back().val_accuracy.value() >= 0.9);
    CHECK(accuracy(a, val) == doctest::Approx(log.epochs.back().val_accuracy.value()));
  }
  SUBCASE("errors") {
    Model m{small_config()};
    CHECK_THROWS_AS(train(m, {}, {}, TrainOptions{}), DataError);
    auto bad = data;
    bad[0].pixels[0] = 1.5f;
    CHECK_THROWS_AS(train(m, bad, {}, TrainOptions{}), DataError);
    auto wrong_label = data;
    wrong_label[0].label = 3;
    CHECK_THROWS_AS(train(m, wrong_label, {}, TrainOptions{}), UsageError);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testutil::scratch_dir("checkpoint");
  const Model m{small_config()};
  const auto path = dir / "model.ckpt";
  save_checkpoint(m, path);

  const auto loaded = load_checkpoint(path);
  CHECK(same_parameters(m, loaded));
  const auto x = random_tensor({16, 16, 3}, 9);
  CHECK(loaded.predict(x).probabilities == m.predict(x).probabilities);

  const auto bytes = io::read_file(path);
  const auto framed = io::decode_framed(bytes, "ckpt");
  CHECK(framed.header.at("param_count").get<std::size_t>() == framed.blob.size());
  CHECK(framed.header.at("param_count").get<std::size_t>() == m.parameter_count());
  const auto sep = bytes.find("\n\n");
  CHECK((bytes.size() - sep - 2) / 4 == m.parameter_count());

  SUBCASE("truncated file") {
    io::write_file_atomic(dir / "short.ckpt", bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
  }
  SUBCASE("version mismatch") {
    auto header = framed.header;
    header["version"] = kCheckpointVersion + 1;
    io::write_file_atomic(dir / "v2.ckpt", io::encode_framed(header, framed.blob));
    CHECK_THROWS_AS(load_checkpoint(dir / "v2.ckpt"), DataError);
  }
  SUBCASE("not a checkpoint") {
    io::write_file_atomic(dir / "junk.ckpt", "hello");
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  }
}
