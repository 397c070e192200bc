#include <doctest.h>

#include <cmath>

#include "atlab/errors.hpp"
#include "atlab/model.hpp"
#include "atlab/ops.hpp"
#include "gradient_suite.hpp"
#include "support.hpp"

using namespace atlab;
using namespace atlab::model;
using testsupport::random_tensor;
using testsupport::tiny_model_config;

namespace {

std::vector<double> random_frames(std::size_t S, std::size_t fd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> f(S * fd);
  for (auto& v : f) v = g(rng);
  return f;
}

ModelConfig deterministic(ModelConfig c) {
  c.prenet_dropout_at_inference = false;
  return c;
}

}  // namespace

TEST_CASE("positional encoding") {
  Tensor pe = positional_encoding(50, 16);
  for (std::size_t j = 0; j < 16; ++j) CHECK(pe.at(0, j) == (j % 2 ? 1.0 : 0.0));
  for (double v : pe.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848078965).epsilon(1e-15));
  CHECK(pe.at(3, 5) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 16.0))).epsilon(1e-15));
  CHECK_THROWS_AS(positional_encoding(4, 7), ParameterError);
}

TEST_CASE("encoder input modes") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({5, 8}, rng, false, -3, 3);
  Tensor p = positional_encoding(5, 8);
  EncoderInputParams ones{Tensor::scalar(1.0), Tensor::full({8}, 1.0), Tensor::zeros({8})};

  Tensor base = encoder_input(x, p, EncoderInputMode::kBaseline, {});
  Tensor lw = encoder_input(x, p, EncoderInputMode::kLearnableWeight, ones);
  CHECK(std::equal(base.data().begin(), base.data().end(), lw.data().begin()));

  Tensor zero_base = encoder_input(Tensor::zeros({5, 8}), p, EncoderInputMode::kBaseline, {});
  CHECK(std::equal(zero_base.data().begin(), zero_base.data().end(), p.data().begin()));

  Tensor ln = encoder_input(x, p, EncoderInputMode::kLayerNorm, ones);
  Tensor manual = add(layer_norm(x, ones.gamma, ones.beta, 1e-5), p);
  CHECK(std::equal(ln.data().begin(), ln.data().end(), manual.data().begin()));

  CHECK_THROWS_AS(encoder_input(x, p, EncoderInputMode::kLayerNorm, {}), ConfigError);
  CHECK_THROWS_AS(encoder_input(x, p, EncoderInputMode::kLearnableWeight, {}), ConfigError);
  CHECK_THROWS_AS(encoder_input(x, positional_encoding(4, 8), EncoderInputMode::kBaseline, {}),
                  ShapeError);
}

TEST_CASE("position similarity") {
  Tensor p = positional_encoding(9, 8);
  CHECK(std::abs(position_similarity(p, p) - 1.0) <= 1e-12);

  // Rows orthogonal to p: rotate each (sin, cos) pair by 90 degrees.
  std::vector<double> orth(p.numel());
  for (std::size_t i = 0; i < p.numel(); i += 2) {
    orth[i] = -p.at(i + 1);
    orth[i + 1] = p.at(i);
  }
  CHECK(std::abs(position_similarity(Tensor::from(p.shape(), orth), p)) <= 1e-12);

  std::mt19937_64 rng(6);
  Tensor c = random_tensor({9, 8}, rng, false);
  double acc = 0.0;
  for (std::size_t t = 0; t < 9; ++t) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      dot += c.at(t, j) * p.at(t, j);
      na += c.at(t, j) * c.at(t, j);
      nb += p.at(t, j) * p.at(t, j);
    }
    acc += dot / std::sqrt(na * nb);
  }
  CHECK(std::abs(position_similarity(c, p) - acc / 9) <= 1e-12);
  CHECK_THROWS_AS(position_similarity(Tensor::zeros({9, 8}), p), NumericError);
}

TEST_CASE("pre-net widths") {
  ModelConfig large = ModelConfig::large_scale();
  CHECK(large.prenet_widths() == std::vector<std::size_t>{80, 32, 32, 256});
  large.prenet_bottleneck_enabled = false;
  CHECK(large.prenet_widths() == std::vector<std::size_t>{80, 256, 256, 256});
  ModelConfig desk;
  CHECK(desk.prenet_widths() == std::vector<std::size_t>{16, 4, 4, 32});
  CHECK(desk.prenet_bottleneck_size == desk.frame_dim / 4);
  CHECK(desk.prenet_dropout_rate == 0.5);

  AcousticModel m(desk, 1);
  CHECK(m.params().get("dec.prenet.fc0.w").shape() == Shape{16, 4});
  CHECK(m.params().get("dec.prenet.fc1.w").shape() == Shape{4, 4});
  CHECK(m.params().get("dec.prenet.fc2.w").shape() == Shape{4, 32});

  ModelConfig bad = desk;
  bad.prenet_bottleneck_size = 16;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ModelConfig heads = desk;
  heads.num_heads = 3;
  CHECK_THROWS_AS(heads.validate(), ConfigError);
}

TEST_CASE("pre-net dropout sits in both hidden layers") {
  ModelConfig c;
  AcousticModel m(c, 3);
  Tensor frames = Tensor::from({1, 16}, random_frames(1, 16, 4));
  Tensor on1 = m.prenet(m.params(), frames, true, 5);
  Tensor on2 = m.prenet(m.params(), frames, true, 5);
  Tensor off = m.prenet(m.params(), frames, false, 5);
  CHECK(std::equal(on1.data().begin(), on1.data().end(), on2.data().begin()));
  CHECK_FALSE(std::equal(on1.data().begin(), on1.data().end(), off.data().begin()));
  CHECK(off.shape() == Shape{1, 32});
  CHECK_THROWS_AS(m.prenet(m.params(), Tensor::zeros({1, 15}), false, 0), ShapeError);
}

TEST_CASE("speaker conditioning") {
  std::mt19937_64 rng(2);
  Tensor hidden = random_tensor({4, 6}, rng, false);
  Tensor table = Tensor::zeros({3, 5});
  Tensor w = random_tensor({5, 6}, rng, false);
  Tensor b = Tensor::zeros({6});
  Tensor same = speaker_condition(hidden, table, w, b, 1);
  CHECK(std::equal(same.data().begin(), same.data().end(), hidden.data().begin()));

  Tensor table2 = random_tensor({3, 5}, rng, false, -4, 4);
  Tensor a = speaker_condition(hidden, table2, w, b, 0);
  Tensor c = speaker_condition(hidden, table2, w, b, 2);
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double added = a.at(i) - hidden.at(i);
    CHECK(added > -1.0);
    CHECK(added < 1.0);
  }
  CHECK_THROWS_AS(speaker_condition(hidden, table2, w, b, 3), ParameterError);
}

TEST_CASE("teacher-forced shapes and attention rows") {
  ModelConfig c;
  AcousticModel m(c, 9);
  const std::vector<std::size_t> ph{1, 4, 7, 2, 2, 9};
  const auto frames = random_frames(17, 16, 3);
  auto out = m.forward(ph, frames, 3, {true, 1});
  CHECK(out.mel.shape() == Shape{17, 16});
  CHECK(out.stop_logits.numel() == 17);
  REQUIRE(out.attention.size() == c.num_layers * c.num_heads);
  for (const auto& a : out.attention) {
    CHECK(a.shape() == Shape{17, 6});
    for (std::size_t s = 0; s < 17; ++s) {
      double tot = 0.0;
      for (std::size_t t = 0; t < 6; ++t) tot += a.at(s, t);
      CHECK(std::abs(tot - 1.0) <= 1e-9);
    }
  }
  CHECK(out.encoder_input.shape() == Shape{6, 32});

  auto again = m.forward(ph, frames, 3, {true, 1});
  CHECK(std::equal(out.mel.data().begin(), out.mel.data().end(), again.mel.data().begin()));

  ModelConfig small = c;
  small.max_tokens = 5;
  small.max_frames = 16;
  AcousticModel limited(small, 1);
  CHECK_THROWS_AS(limited.forward(ph, frames, 0, {}), ParameterError);
  const std::vector<std::size_t> two{1, 2}, none;
  CHECK_THROWS_AS(limited.forward(two, frames, 0, {}), ParameterError);
  CHECK_THROWS_AS(m.forward(none, frames, 0, {}), ParameterError);
  CHECK_THROWS_AS(m.forward(ph, frames, 8, {}), ParameterError);
}

TEST_CASE("layer-normalized embeddings") {
  ModelConfig c;
  AcousticModel m(c, 4);
  const std::vector<std::size_t> ph{0, 3, 5, 19, 7};
  // encoder_input_for in layer_norm mode minus p is LN(x) (gamma=1, beta=0 at init).
  Tensor combined = m.encoder_input_for(ph, EncoderInputMode::kLayerNorm);
  Tensor x = embedding(m.params().get("enc.embed"), ph);
  Tensor p = positional_encoding(ph.size(), 32);
  for (std::size_t t = 0; t < ph.size(); ++t) {
    double mean = 0, var = 0, xm = 0, xv = 0;
    for (std::size_t j = 0; j < 32; ++j) {
      mean += (combined.at(t, j) - p.at(t, j)) / 32;
      xm += x.at(t, j) / 32;
    }
    for (std::size_t j = 0; j < 32; ++j) {
      const double v = combined.at(t, j) - p.at(t, j) - mean;
      var += v * v / 32;
      xv += (x.at(t, j) - xm) * (x.at(t, j) - xm) / 32;
    }
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - xv / (xv + 1e-5)) <= 1e-9);
  }
}

TEST_CASE("full tiny model gradients match finite differences") {
  for (auto mode : {EncoderInputMode::kLayerNorm, EncoderInputMode::kLearnableWeight,
                    EncoderInputMode::kBaseline}) {
    for (bool bottleneck : {true, false}) {
      INFO("mode " << to_string(mode) << " bottleneck " << bottleneck);
      CHECK(testsupport::tiny_model_gradient_error(mode, bottleneck) <= 1e-4);
    }
  }
}

TEST_CASE("decoder is causal") {
  AcousticModel m(deterministic(ModelConfig{}), 5);
  const std::vector<std::size_t> ph{2, 6, 1, 8};
  auto frames = random_frames(12, 16, 1);
  auto base = m.forward(ph, frames, 0, {false, 0});
  for (std::size_t j : {0u, 4u, 10u}) {
    auto perturbed = frames;
    for (std::size_t k = 0; k < 16; ++k) perturbed[j * 16 + k] += 0.5;
    auto out = m.forward(ph, perturbed, 0, {false, 0});
    for (std::size_t s = 0; s < 12; ++s) {
      bool same = true;
      for (std::size_t k = 0; k < 16; ++k)
        same = same && out.mel.at(s, k) == base.mel.at(s, k);
      if (s <= j) CHECK(same);
      else if (s == j + 1) CHECK_FALSE(same);
    }
  }
}

TEST_CASE("incremental decoding matches the teacher-forced pass") {
  for (std::size_t layers : {1u, 2u}) {
    ModelConfig c = deterministic(ModelConfig{});
    c.num_layers = layers;
    AcousticModel m(c, 12);
    const std::vector<std::size_t> ph{3, 3, 11, 0, 5, 19};
    const auto frames = random_frames(14, 16, 2);
    auto tf = m.forward(ph, frames, 2, {false, 0});
    InferenceOptions io;
    io.window_enabled = false;
    io.max_frames = 14;
    io.ignore_stop = true;
    io.forced_frames = &frames;
    auto ar = m.infer(ph, 2, io);
    REQUIRE(ar.frames == 14);
    for (std::size_t i = 0; i < ar.mel.size(); ++i)
      CHECK(std::abs(ar.mel[i] - tf.mel.at(i)) <= 1e-10);
    for (std::size_t h = 0; h < tf.attention.size(); ++h)
      for (std::size_t i = 0; i < tf.attention[h].numel(); ++i)
        CHECK(std::abs(ar.head_attention[h][i] - tf.attention[h].at(i)) <= 1e-10);
    for (std::size_t s = 0; s < 14; ++s)
      CHECK(std::abs(ar.stop_probabilities[s] -
                     1.0 / (1.0 + std::exp(-tf.stop_logits.at(s)))) <= 1e-10);
  }
}

TEST_CASE("autoregressive inference with the window") {
  ModelConfig c;
  AcousticModel m(c, 21);
  const std::vector<std::size_t> ph{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  InferenceOptions io;
  io.max_frames = 60;
  io.ignore_stop = true;
  io.seed = 4;
  auto r = m.infer(ph, 1, io);
  REQUIRE(r.frames == 60);
  REQUIRE(r.centers.size() == 60);
  CHECK(r.centers.front() == 0);
  for (std::size_t s = 1; s < r.centers.size(); ++s) {
    CHECK(r.centers[s] >= r.centers[s - 1]);
    CHECK(r.centers[s] - r.centers[s - 1] <= 1);
  }
  const std::size_t T = ph.size();
  for (const auto& head : r.head_attention) {
    REQUIRE(head.size() == 60 * T);
    for (std::size_t s = 0; s < 60; ++s)
      for (std::size_t t = 0; t < T; ++t)
        if (t < r.windows[s].first || t > r.windows[s].last) CHECK(head[s * T + t] == 0.0);
  }

  InferenceOptions off = io;
  off.window_enabled = false;
  auto a = m.infer(ph, 1, off), b = m.infer(ph, 1, off);
  CHECK(a.mel == b.mel);
  CHECK(a.mean_attention == b.mean_attention);

  InferenceOptions limit;
  limit.max_frames = 7;
  limit.stop_threshold = 1.0;  // never fires
  auto capped = m.infer(ph, 0, limit);
  CHECK(capped.frames == 7);
  CHECK_FALSE(capped.stopped_at.has_value());

  InferenceOptions eager;
  eager.stop_threshold = 0.0;  // fires on the first frame
  auto first = m.infer(ph, 0, eager);
  CHECK(first.frames == 1);
  CHECK(first.stopped_at == std::optional<std::size_t>(1));

  InferenceOptions zero;
  zero.max_frames = 0;
  CHECK_THROWS_AS(m.infer(ph, 0, zero), ParameterError);
}

TEST_CASE("initialization is seed-deterministic") {
  AcousticModel a(ModelConfig{}, 3), b(ModelConfig{}, 3), c(ModelConfig{}, 4);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    auto x = a.params().entries()[i].value.data();
    auto y = b.params().entries()[i].value.data();
    auto z = c.params().entries()[i].value.data();
    all_same = all_same && std::equal(x.begin(), x.end(), y.begin());
    any_diff = any_diff || !std::equal(x.begin(), x.end(), z.begin());
  }
  CHECK(all_same);
  CHECK(any_diff);
}
