#pragma once

// Multi-speaker Transformer acoustic model.
//
//   phonemes -> embedding -> encoder input (x+p | x+alpha*p | LN(x)+p)
//            -> N pre-norm encoder blocks -> LN -> + speaker(enc site)
//   frames   -> shift right (zero go-frame) -> pre-net -> + speaker(dec site)
//            -> + p -> N pre-norm decoder blocks (causal self-attn,
//               encoder-decoder attn, causal conv FFN) -> LN
//            -> mel projection, stop projection
//
// Every encoder-decoder attention head is exposed so alignment losses and
// diagnostics can look at it.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlab/alignment.hpp"
#include "atlab/params.hpp"
#include "atlab/tensor.hpp"

namespace atlab::model {

enum class EncoderInputMode { kBaseline, kLearnableWeight, kLayerNorm };
std::string to_string(EncoderInputMode mode);
bool from_string(const std::string& text, EncoderInputMode& out);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 32;
  std::size_t num_heads = 2;
  std::size_t ffn_filter_size = 128;
  std::size_t ffn_kernel_size = 3;
  std::size_t prenet_bottleneck_size = 4;
  std::size_t prenet_wide_size = 256;
  std::size_t frame_dim = 16;
  std::size_t vocab_size = 20;
  std::size_t num_speakers = 8;
  std::size_t speaker_dim = 16;
  EncoderInputMode encoder_input_mode = EncoderInputMode::kLayerNorm;
  bool prenet_bottleneck_enabled = true;
  double dropout_rate = 0.1;
  double prenet_dropout_rate = 0.5;
  bool prenet_dropout_at_inference = true;
  std::size_t max_tokens = 128;
  std::size_t max_frames = 1024;

  // Desk defaults above; this returns the large configuration (4 layers,
  // hidden 256, 2 heads, FFN 1024 / kernel 9, bottleneck 32, 80-dim frames).
  static ModelConfig large_scale();

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
  std::size_t head_dim() const { return hidden_size / num_heads; }
  // Widths of the pre-net layers, input first: e.g. {80, 32, 32, 256}.
  std::vector<std::size_t> prenet_widths() const;

  template <typename Self, typename F>
  static void fields(Self& c, F&& f) {
    f("num_layers", c.num_layers);
    f("hidden_size", c.hidden_size);
    f("num_heads", c.num_heads);
    f("ffn_filter_size", c.ffn_filter_size);
    f("ffn_kernel_size", c.ffn_kernel_size);
    f("prenet_bottleneck_size", c.prenet_bottleneck_size);
    f("prenet_wide_size", c.prenet_wide_size);
    f("frame_dim", c.frame_dim);
    f("vocab_size", c.vocab_size);
    f("num_speakers", c.num_speakers);
    f("speaker_dim", c.speaker_dim);
    f("encoder_input_mode", c.encoder_input_mode);
    f("prenet_bottleneck_enabled", c.prenet_bottleneck_enabled);
    f("dropout_rate", c.dropout_rate);
    f("prenet_dropout_rate", c.prenet_dropout_rate);
    f("prenet_dropout_at_inference", c.prenet_dropout_at_inference);
    f("max_tokens", c.max_tokens);
    f("max_frames", c.max_frames);
  }

  bool operator==(const ModelConfig&) const = default;
};

// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/dim)),
// PE[pos, 2i+1] = cos(same). `dim` must be even.
Tensor positional_encoding(std::size_t length, std::size_t dim);

// Parameters the encoder input needs for a given mode (alpha for
// learnable_weight, gamma/beta for layer_norm).
struct EncoderInputParams {
  Tensor alpha;
  Tensor gamma;
  Tensor beta;
};
Tensor encoder_input(const Tensor& x, const Tensor& p, EncoderInputMode mode,
                     const EncoderInputParams& params);

// Mean over rows of cos(combined[t], p[t]). Zero-norm rows are a
// NumericError.
double position_similarity(const Tensor& combined, const Tensor& p);

// Row-wise softsign(W * embed(speaker) + b), broadcast-added to `hidden`.
Tensor speaker_condition(const Tensor& hidden, const Tensor& speaker_table,
                         const Tensor& proj_w, const Tensor& proj_b,
                         std::size_t speaker);

// Dropout seeds for one forward pass. Every dropout site derives its own
// stream from `seed`.
struct ForwardOptions {
  bool train = false;
  std::uint64_t seed = 0;
};

struct TeacherForcedOutput {
  Tensor mel;          // S x frame_dim
  Tensor stop_logits;  // S x 1
  // num_layers * num_heads tensors of S x T, layer-major.
  std::vector<Tensor> attention;
  Tensor encoder_input;  // T x hidden, before dropout
  Tensor positions;      // T x hidden
};

struct InferenceOptions {
  bool window_enabled = true;
  std::size_t max_frames = 256;
  double stop_threshold = 0.5;
  // Keep generating until max_frames even when the stop head fires.
  bool ignore_stop = false;
  std::uint64_t seed = 0;
  // Feed these frames instead of the model's own predictions (teacher
  // forcing through the incremental path; used for consistency checks).
  const std::vector<double>* forced_frames = nullptr;
};

struct InferenceResult {
  std::vector<double> mel;  // S' x frame_dim
  std::size_t frames = 0;
  std::optional<std::size_t> stopped_at;  // frame count when stop fired
  std::vector<double> stop_probabilities;  // one per generated frame
  // Per (layer, head), layer-major: S' x T rows.
  std::vector<std::vector<double>> head_attention;
  std::vector<double> mean_attention;  // S' x T, averaged over heads/layers
  std::vector<std::size_t> centers;    // window center used for each frame
  std::vector<alignment::WindowRange> windows;
};

class AcousticModel {
 public:
  AcousticModel(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Teacher-forced pass; `frames` is the S x frame_dim target sequence.
  // Uses `params` so callers can run on a cloned store.
  TeacherForcedOutput forward(const ParameterStore& params,
                              std::span<const std::size_t> phonemes,
                              std::span<const double> frames,
                              std::size_t speaker,
                              const ForwardOptions& options) const;
  TeacherForcedOutput forward(std::span<const std::size_t> phonemes,
                              std::span<const double> frames,
                              std::size_t speaker,
                              const ForwardOptions& options) const {
    return forward(params_, phonemes, frames, speaker, options);
  }

  // Frame-by-frame generation with cached keys/values.
  InferenceResult infer(std::span<const std::size_t> phonemes,
                        std::size_t speaker,
                        const InferenceOptions& options) const;

  // Pre-net on a batch of frames (rows), pre-speaker conditioning.
  Tensor prenet(const ParameterStore& params, const Tensor& frames,
                bool dropout_active, std::uint64_t seed) const;

  // Encoder input for a phoneme sequence under `mode` using this model's
  // embedding table. Modes whose parameters the model lacks fall back to
  // alpha = 1 or gamma = 1 / beta = 0.
  Tensor encoder_input_for(std::span<const std::size_t> phonemes,
                           EncoderInputMode mode) const;

 private:
  Tensor encode(const ParameterStore& params,
                std::span<const std::size_t> phonemes, std::size_t speaker,
                const ForwardOptions& options, Tensor* input_out,
                Tensor* positions_out) const;
  void check_lengths(std::size_t tokens, std::size_t frames) const;

  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace atlab::model
