#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "atlab/alignment.hpp"
#include "atlab/errors.hpp"
#include "atlab/ops.hpp"
#include "support.hpp"

using namespace atlab;
using namespace atlab::alignment;
using testsupport::naive_diagonal_rate;
using testsupport::random_attention;

namespace {

AttentionMatrix one_hot(std::size_t S, std::size_t T,
                        const std::vector<std::size_t>& hot) {
  std::vector<double> w(S * T, 0.0);
  for (std::size_t s = 0; s < S; ++s) w[s * T + hot[s]] = 1.0;
  return {S, T, std::move(w)};
}

}  // namespace

TEST_CASE("attention matrix validation") {
  CHECK_THROWS_AS(AttentionMatrix(0, 3, {}), ParameterError);
  CHECK_THROWS_AS(AttentionMatrix(1, 2, {0.5, 0.4}), ParameterError);
  CHECK_THROWS_AS(AttentionMatrix(1, 2, {1.5, -0.5}), ParameterError);
  CHECK_NOTHROW(AttentionMatrix(1, 2, {0.5, 0.5}));
}

TEST_CASE("in_band examples") {
  auto square = DiagonalBand::for_lengths(0, 6, 6);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t s = 0; s < 6; ++s) CHECK(in_band(t, s, square) == (s == t));

  auto wide = DiagonalBand::for_lengths(9, 9, 4);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t s = 0; s < 9; ++s) CHECK(in_band(t, s, wide));

  auto b = DiagonalBand::for_lengths(2, 80, 20);
  std::vector<std::size_t> hits;
  for (std::size_t s = 0; s < 80; ++s)
    if (in_band(5, s, b)) hits.push_back(s);
  CHECK(hits == std::vector<std::size_t>{18, 19, 20, 21, 22});

  CHECK_THROWS_AS(in_band(20, 0, b), ParameterError);
  CHECK_THROWS_AS(in_band(0, 80, b), ParameterError);
}

TEST_CASE("diagonal_rate examples") {
  CHECK(diagonal_rate(one_hot(4, 4, {0, 1, 2, 3}), DiagonalBand::for_lengths(0, 4, 4)) == 1.0);
  AttentionMatrix uniform(4, 4, std::vector<double>(16, 0.25));
  CHECK(diagonal_rate(uniform, DiagonalBand::for_lengths(0, 4, 4)) == 0.25);

  std::mt19937_64 rng(13);
  auto a = random_attention(13, 7, rng);
  auto band = DiagonalBand::for_lengths(3, 13, 7);
  CHECK(std::abs(diagonal_rate(a, band) - naive_diagonal_rate(a, 3)) <= 1e-12);

  CHECK_THROWS_AS(diagonal_rate(a, DiagonalBand::for_lengths(3, 12, 7)), ParameterError);
  // Same slope but different lengths is accepted (k matches).
  CHECK_NOTHROW(diagonal_rate(one_hot(4, 2, {0, 0, 1, 1}), DiagonalBand::for_lengths(1, 2, 1)));
}

TEST_CASE("diagonal_rate bounds, monotonicity and oracle") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(1, 20);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t S = len(rng), T = len(rng);
    auto a = random_attention(S, T, rng);
    double prev = -1.0;
    for (std::size_t b = 0; b <= 21; ++b) {
      const double r = diagonal_rate(a, DiagonalBand::for_lengths(b, S, T));
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      CHECK(r >= prev);
      CHECK(std::abs(r - naive_diagonal_rate(a, b)) <= 1e-12);
      prev = r;
    }
    CHECK(std::abs(prev - 1.0) <= 1e-12);  // b >= S covers everything
  }
}

TEST_CASE("tensor diagonal_rate agrees with the matrix version") {
  std::mt19937_64 rng(4);
  auto a = random_attention(9, 5, rng);
  Tensor t = Tensor::from({9, 5}, a.weights());
  auto band = DiagonalBand::for_lengths(2, 9, 5);
  CHECK(std::abs(diagonal_rate(t, band).item() - diagonal_rate(a, band)) <= 1e-15);
}

TEST_CASE("diagonal_constraint_loss") {
  auto band = DiagonalBand::for_lengths(0, 3, 3);
  std::vector<AttentionMatrix> perfect(2, one_hot(3, 3, {0, 1, 2}));
  CHECK(diagonal_constraint_loss(perfect, band) == -1.0);

  // r = 0.4 and r = 0.6 on a 5 x 5, b = 0 band.
  auto with_rate = [](double r) {
    std::vector<double> w(25, 0.0);
    for (std::size_t s = 0; s < 5; ++s) {
      w[s * 5 + s] = r;
      w[s * 5 + (s + 1) % 5] = 1.0 - r;
    }
    return AttentionMatrix(5, 5, std::move(w));
  };
  std::vector<AttentionMatrix> pair{with_rate(0.4), with_rate(0.6)};
  CHECK(diagonal_constraint_loss(pair, DiagonalBand::for_lengths(0, 5, 5)) ==
        doctest::Approx(-0.5).epsilon(1e-15));

  std::mt19937_64 rng(8);
  std::vector<AttentionMatrix> many;
  double acc = 0.0;
  auto b3 = DiagonalBand::for_lengths(3, 11, 6);
  for (int i = 0; i < 6; ++i) {
    many.push_back(random_attention(11, 6, rng));
    acc += naive_diagonal_rate(many.back(), 3);
  }
  CHECK(std::abs(diagonal_constraint_loss(many, b3) + acc / 6) <= 1e-12);

  CHECK_THROWS_AS(diagonal_constraint_loss(std::vector<AttentionMatrix>{}, band),
                  ParameterError);
}

TEST_CASE("L_DC gradient through softmax logits") {
  std::mt19937_64 rng(17);
  std::vector<Tensor> logits{testsupport::random_tensor({7, 4}, rng),
                             testsupport::random_tensor({7, 4}, rng)};
  auto band = DiagonalBand::for_lengths(1, 7, 4);
  const double err = testsupport::gradcheck(logits, [&] {
    std::vector<Tensor> attns{softmax_lastdim(logits[0]), softmax_lastdim(logits[1])};
    return diagonal_constraint_loss(attns, band);
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("attention_centroid") {
  std::vector<double> hot(8, 0.0);
  hot[5] = 1.0;
  CHECK(attention_centroid(hot) == 5);
  CHECK(attention_centroid(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 1);
  CHECK(attention_centroid(std::vector<double>{0.2, 0.8}) == 0);
  // A sum landing a hair under an integer still floors to it.
  CHECK(attention_centroid(std::vector<double>{0.0, 1.0 - 1e-12, 1e-12 * 0.5, 1e-12 * 0.5}) == 1);
  CHECK_THROWS_AS(attention_centroid(std::vector<double>{0.5, 0.4}), ParameterError);
}

TEST_CASE("window init and ranges") {
  auto st = window_init();
  CHECK(st.center == 0);
  CHECK(st.deviation_count == 0);
  CHECK(st.back == 1);
  CHECK(st.ahead == 4);
  auto r10 = window_range(st, 10);
  CHECK(r10.first == 0);
  CHECK(r10.last == 4);
  auto r3 = window_range(st, 3);
  CHECK(r3.first == 0);
  CHECK(r3.last == 2);

  SlidingWindowState at3 = st;
  at3.center = 3;
  std::vector<double> logits(10, 0.5);
  auto masked = window_mask(logits, at3);
  for (std::size_t t = 0; t < 10; ++t) {
    if (t >= 2 && t <= 7) CHECK(masked[t] == 0.5);
    else CHECK(masked[t] == -std::numeric_limits<double>::infinity());
  }
  auto two = window_mask(std::vector<double>{1.0, 2.0}, st);
  CHECK(two[0] == 1.0);
  CHECK(two[1] == 2.0);
}

TEST_CASE("window_update rules") {
  auto st = window_init();
  st.center = 2;
  auto same = window_update(st, 2, 10);
  CHECK(same.center == 2);
  CHECK(same.deviation_count == 0);

  auto s = window_init();
  for (int i = 0; i < 3; ++i) s = window_update(s, s.center + 2, 10);
  CHECK(s.center == 1);
  CHECK(s.deviation_count == 0);

  auto c = window_init();
  c.center = 4;
  c = window_update(c, 5, 10);
  c = window_update(c, 6, 10);
  c = window_update(c, 4, 10);
  CHECK(c.center == 4);
  CHECK(c.deviation_count == 0);

  auto back = window_init();
  back.center = 4;
  back = window_update(back, 5, 10);
  back = window_update(back, 2, 10);  // backward deviation resets
  CHECK(back.deviation_count == 0);

  auto capped = window_init();
  capped.center = 9;
  CHECK_THROWS_AS(window_update(capped, 10, 10), ParameterError);
  auto edge = window_init();
  edge.center = 8;
  for (int i = 0; i < 3; ++i) edge = window_update(edge, 9, 10);
  CHECK(edge.center == 9);
  for (int i = 0; i < 6; ++i) edge = window_update(edge, 9, 10);
  CHECK(edge.center == 9);
}

TEST_CASE("window properties over random decoding traces") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> tokens(1, 30);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trace = 0; trace < 1000; ++trace) {
    const std::size_t T = tokens(rng);
    auto st = window_init();
    std::size_t run = 0;
    for (int frame = 0; frame < 60; ++frame) {
      std::vector<double> logits(T);
      for (auto& l : logits) l = g(rng);
      auto masked = window_mask(logits, st);
      // -inf logits are rejected by Tensor, so the softmax takes the
      // equivalent allowed-mask form.
      Tensor p = softmax_lastdim(Tensor::from({1, T}, logits), window_allowed(st, T));
      const auto range = window_range(st, T);
      double outside = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        if (t < range.first || t > range.last) {
          outside += p.at(t);
          REQUIRE(masked[t] == -std::numeric_limits<double>::infinity());
        } else {
          REQUIRE(masked[t] == logits[t]);
        }
      }
      REQUIRE(outside == 0.0);
      const std::size_t centroid =
          attention_centroid(std::vector<double>(p.data().begin(), p.data().end()));
      auto next = window_update(st, centroid, T);
      REQUIRE(next.center >= st.center);
      REQUIRE(next.center - st.center <= 1);
      REQUIRE(next.deviation_count <= 2);
      run = centroid > st.center ? run + 1 : 0;
      if (next.center != st.center) {
        REQUIRE(run == 3);
        run = 0;
      }
      REQUIRE(run < 3);
      REQUIRE(next.deviation_count == run);
      st = next;
    }
  }
}

TEST_CASE("attention CSV and PGM") {
  std::mt19937_64 rng(3);
  auto a = random_attention(6, 4, rng);
  std::stringstream csv;
  write_attention_csv(csv, a);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "s,t,weight");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  CHECK(rows == 24);

  std::stringstream again;
  write_attention_csv(again, a);
  auto back = read_attention_csv(again);
  CHECK(back.frames() == 6);
  CHECK(back.tokens() == 4);
  for (std::size_t i = 0; i < 24; ++i)
    CHECK(std::abs(back.weights()[i] - a.weights()[i]) <= 1e-9);

  std::stringstream pgm;
  write_attention_pgm(pgm, a);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  CHECK(magic == "P2");
  CHECK(w == 4);
  CHECK(h == 6);
  CHECK(maxv == 255);
  int v = 0;
  pgm >> v;
  CHECK(v == static_cast<int>(std::lround(a(0, 0) * 255.0)));
}
