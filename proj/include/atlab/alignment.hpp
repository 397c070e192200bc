#pragma once

// Text-to-speech alignment measures and the inference-time attention window.
//
// Orientation: an AttentionMatrix stores one row per decoder frame s and one
// column per encoder position t (S x T), i.e. the transpose of the usual
// "text rows, speech columns" picture. All indices are 0-based.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "atlab/tensor.hpp"

namespace atlab::alignment {

class AttentionMatrix {
 public:
  // Validates S, T >= 1 and that every row is nonnegative and sums to 1
  // within 1e-9.
  AttentionMatrix(std::size_t frames, std::size_t tokens,
                  std::vector<double> weights);
  static AttentionMatrix from_tensor(const Tensor& t);

  std::size_t frames() const { return frames_; }
  std::size_t tokens() const { return tokens_; }
  double operator()(std::size_t s, std::size_t t) const {
    return weights_[s * tokens_ + t];
  }
  std::span<const double> row(std::size_t s) const {
    return {weights_.data() + s * tokens_, tokens_};
  }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::size_t frames_;
  std::size_t tokens_;
  std::vector<double> weights_;
};

// Band of half-width `bandwidth` speech frames around s = k*t, k = S/T.
struct DiagonalBand {
  std::size_t bandwidth = 0;
  std::size_t frames = 1;  // S
  std::size_t tokens = 1;  // T

  static DiagonalBand for_lengths(std::size_t bandwidth, std::size_t frames,
                                  std::size_t tokens);
  double slope() const {
    return static_cast<double>(frames) / static_cast<double>(tokens);
  }
};

// |s - k*t| <= b, evaluated exactly as |s*T - S*t| <= b*T.
bool in_band(std::size_t t, std::size_t s, const DiagonalBand& band);

// S x T row-major 0/1 pattern of in_band.
std::vector<double> band_mask(const DiagonalBand& band);

// Fraction of attention mass inside the band: (sum of in-band A[s][t]) / S.
double diagonal_rate(const AttentionMatrix& attn, const DiagonalBand& band);
// Differentiable form on an S x T attention tensor.
Tensor diagonal_rate(const Tensor& attn, const DiagonalBand& band);

// -mean(diagonal_rate) over all matrices (every head of every layer).
double diagonal_constraint_loss(std::span<const AttentionMatrix> attns,
                                const DiagonalBand& band);
Tensor diagonal_constraint_loss(std::span<const Tensor> attns,
                                const DiagonalBand& band);

// floor(sum_t row[t] * t); sums within 1e-9 below an integer round up.
std::size_t attention_centroid(std::span<const double> row);

struct SlidingWindowState {
  std::size_t center = 0;
  std::size_t deviation_count = 0;
  std::size_t back = 1;
  std::size_t ahead = 4;

  bool operator==(const SlidingWindowState&) const = default;
};

// Consecutive forward deviations needed before the center advances.
inline constexpr std::size_t kDeviationsToAdvance = 3;

SlidingWindowState window_init();

// Inclusive [first, last] encoder range admitted by the window for T tokens.
struct WindowRange {
  std::size_t first;
  std::size_t last;
};
WindowRange window_range(const SlidingWindowState& state, std::size_t tokens);
std::vector<unsigned char> window_allowed(const SlidingWindowState& state,
                                          std::size_t tokens);

// Logits outside the window become -inf; the rest are untouched.
std::vector<double> window_mask(std::span<const double> logits,
                                const SlidingWindowState& state);

// A centroid ahead of the center counts as a deviation; anything else resets
// the count. The third consecutive deviation moves the center one step
// (capped at T-1) and resets the count.
SlidingWindowState window_update(const SlidingWindowState& state,
                                 std::size_t centroid, std::size_t tokens);

// Attention dumps. CSV: header "s,t,weight", one row per cell, full
// precision. PGM: plain P2, T columns x S rows, weight*255 rounded.
void write_attention_csv(std::ostream& os, const AttentionMatrix& attn);
AttentionMatrix read_attention_csv(std::istream& is);
void write_attention_pgm(std::ostream& os, const AttentionMatrix& attn);

}  // namespace atlab::alignment
