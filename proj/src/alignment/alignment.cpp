#include "atlab/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "atlab/errors.hpp"
#include "atlab/ops.hpp"

namespace atlab::alignment {
namespace {

constexpr double kRowTolerance = 1e-9;

void validate_row(std::span<const double> row, const char* what) {
  double total = 0.0;
  for (double w : row) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ParameterError(std::string(what) + ": negative or non-finite weight");
    total += w;
  }
  if (std::abs(total - 1.0) > kRowTolerance)
    throw ParameterError(std::string(what) + ": row sums to " +
                         std::to_string(total) + ", not 1");
}

bool same_slope(const DiagonalBand& band, std::size_t frames,
                std::size_t tokens) {
  return band.frames * tokens == frames * band.tokens;
}

bool band_contains(std::size_t s, std::size_t t, std::size_t frames,
                   std::size_t tokens, std::size_t bandwidth) {
  const auto lhs = static_cast<long long>(s * tokens);
  const auto rhs = static_cast<long long>(frames * t);
  return static_cast<unsigned long long>(std::llabs(lhs - rhs)) <=
         bandwidth * tokens;
}

}  // namespace

AttentionMatrix::AttentionMatrix(std::size_t frames, std::size_t tokens,
                                 std::vector<double> weights)
    : frames_(frames), tokens_(tokens), weights_(std::move(weights)) {
  if (frames_ == 0 || tokens_ == 0)
    throw ParameterError("attention matrix needs S >= 1 and T >= 1");
  if (weights_.size() != frames_ * tokens_)
    throw ShapeError("attention matrix payload does not match S x T");
  for (std::size_t s = 0; s < frames_; ++s) validate_row(row(s), "attention");
}

AttentionMatrix AttentionMatrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("attention tensor must be S x T");
  return AttentionMatrix(t.dim(0), t.dim(1),
                         std::vector<double>(t.data().begin(), t.data().end()));
}

DiagonalBand DiagonalBand::for_lengths(std::size_t bandwidth,
                                       std::size_t frames, std::size_t tokens) {
  if (frames == 0 || tokens == 0)
    throw ParameterError("band needs S >= 1 and T >= 1");
  return {bandwidth, frames, tokens};
}

bool in_band(std::size_t t, std::size_t s, const DiagonalBand& band) {
  if (t >= band.tokens || s >= band.frames)
    throw ParameterError("in_band: index outside the S x T grid");
  return band_contains(s, t, band.frames, band.tokens, band.bandwidth);
}

std::vector<double> band_mask(const DiagonalBand& band) {
  std::vector<double> mask(band.frames * band.tokens);
  for (std::size_t s = 0; s < band.frames; ++s)
    for (std::size_t t = 0; t < band.tokens; ++t)
      mask[s * band.tokens + t] =
          band_contains(s, t, band.frames, band.tokens, band.bandwidth) ? 1.0
                                                                        : 0.0;
  return mask;
}

double diagonal_rate(const AttentionMatrix& attn, const DiagonalBand& band) {
  if (!same_slope(band, attn.frames(), attn.tokens()))
    throw ParameterError("diagonal_rate: band slope does not match S/T");
  double inside = 0.0;
  for (std::size_t s = 0; s < attn.frames(); ++s)
    for (std::size_t t = 0; t < attn.tokens(); ++t)
      if (band_contains(s, t, attn.frames(), attn.tokens(), band.bandwidth))
        inside += attn(s, t);
  // Rows sum to 1 only up to rounding; keep the reported fraction in [0, 1].
  return std::clamp(inside / static_cast<double>(attn.frames()), 0.0, 1.0);
}

Tensor diagonal_rate(const Tensor& attn, const DiagonalBand& band) {
  if (attn.rank() != 2) throw ShapeError("diagonal_rate: attention must be S x T");
  const std::size_t frames = attn.dim(0), tokens = attn.dim(1);
  if (!same_slope(band, frames, tokens))
    throw ParameterError("diagonal_rate: band slope does not match S/T");
  const auto mask =
      band_mask(DiagonalBand{band.bandwidth, frames, tokens});
  return scale(weighted_sum(attn, mask), 1.0 / static_cast<double>(frames));
}

double diagonal_constraint_loss(std::span<const AttentionMatrix> attns,
                                const DiagonalBand& band) {
  if (attns.empty())
    throw ParameterError("diagonal_constraint_loss: no attention matrices");
  double acc = 0.0;
  for (const auto& a : attns) acc += diagonal_rate(a, band);
  return -acc / static_cast<double>(attns.size());
}

Tensor diagonal_constraint_loss(std::span<const Tensor> attns,
                                const DiagonalBand& band) {
  if (attns.empty())
    throw ParameterError("diagonal_constraint_loss: no attention matrices");
  std::vector<Tensor> rates;
  rates.reserve(attns.size());
  for (const auto& a : attns) {
    if (a.shape() != attns.front().shape())
      throw ShapeError("diagonal_constraint_loss: matrices differ in S x T");
    rates.push_back(diagonal_rate(a, band));
  }
  return scale(add_n(rates), -1.0 / static_cast<double>(rates.size()));
}

std::size_t attention_centroid(std::span<const double> row) {
  if (row.empty()) throw ParameterError("attention_centroid: empty row");
  validate_row(row, "attention_centroid");
  double c = 0.0;
  for (std::size_t t = 0; t < row.size(); ++t)
    c += row[t] * static_cast<double>(t);
  double f = std::floor(c);
  if (c - f > 1.0 - kRowTolerance) f += 1.0;
  return static_cast<std::size_t>(f);
}

SlidingWindowState window_init() { return SlidingWindowState{}; }

WindowRange window_range(const SlidingWindowState& state, std::size_t tokens) {
  if (tokens == 0) throw ParameterError("window over zero tokens");
  const std::size_t center = std::min(state.center, tokens - 1);
  const std::size_t first = center >= state.back ? center - state.back : 0;
  const std::size_t last = std::min(center + state.ahead, tokens - 1);
  return {first, last};
}

std::vector<unsigned char> window_allowed(const SlidingWindowState& state,
                                          std::size_t tokens) {
  const auto r = window_range(state, tokens);
  std::vector<unsigned char> allowed(tokens, 0);
  for (std::size_t t = r.first; t <= r.last; ++t) allowed[t] = 1;
  return allowed;
}

std::vector<double> window_mask(std::span<const double> logits,
                                const SlidingWindowState& state) {
  const auto allowed = window_allowed(state, logits.size());
  std::vector<double> out(logits.begin(), logits.end());
  for (std::size_t t = 0; t < out.size(); ++t)
    if (!allowed[t]) out[t] = -std::numeric_limits<double>::infinity();
  return out;
}

SlidingWindowState window_update(const SlidingWindowState& state,
                                 std::size_t centroid, std::size_t tokens) {
  if (tokens == 0 || centroid >= tokens)
    throw ParameterError("window_update: centroid outside [0, T)");
  SlidingWindowState next = state;
  if (centroid > state.center) {
    next.deviation_count += 1;
    if (next.deviation_count >= kDeviationsToAdvance) {
      next.center = std::min(state.center + 1, tokens - 1);
      next.deviation_count = 0;
    }
  } else {
    next.deviation_count = 0;
  }
  return next;
}

void write_attention_csv(std::ostream& os, const AttentionMatrix& attn) {
  os << "s,t,weight\n";
  char buf[64];
  for (std::size_t s = 0; s < attn.frames(); ++s)
    for (std::size_t t = 0; t < attn.tokens(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", s, t, attn(s, t));
      os << buf;
    }
}

AttentionMatrix read_attention_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "s,t,weight")
    throw LoadError("attention CSV: missing header");
  struct Cell {
    std::size_t s, t;
    double w;
  };
  std::vector<Cell> cells;
  std::size_t frames = 0, tokens = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Cell c{};
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &c.s, &c.t, &c.w) != 3)
      throw LoadError("attention CSV: malformed row '" + line + "'");
    frames = std::max(frames, c.s + 1);
    tokens = std::max(tokens, c.t + 1);
    cells.push_back(c);
  }
  if (cells.size() != frames * tokens)
    throw LoadError("attention CSV: expected a dense S x T grid");
  std::vector<double> w(frames * tokens, 0.0);
  for (const auto& c : cells) w[c.s * tokens + c.t] = c.w;
  return AttentionMatrix(frames, tokens, std::move(w));
}

void write_attention_pgm(std::ostream& os, const AttentionMatrix& attn) {
  os << "P2\n" << attn.tokens() << ' ' << attn.frames() << "\n255\n";
  for (std::size_t s = 0; s < attn.frames(); ++s) {
    for (std::size_t t = 0; t < attn.tokens(); ++t) {
      const double v = std::clamp(attn(s, t), 0.0, 1.0) * 255.0;
      if (t) os << ' ';
      os << static_cast<int>(std::lround(v));
    }
    os << '\n';
  }
}

}  // namespace atlab::alignment
