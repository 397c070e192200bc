#include "atlab/model.hpp"

#include <cmath>
#include <random>
#include <string_view>

#include "atlab/errors.hpp"
#include "atlab/ops.hpp"

namespace atlab::model {
namespace {

constexpr double kLayerNormEps = 1e-5;

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Dropout stream for one site of one forward pass.
std::uint64_t site_seed(std::uint64_t seed, std::string_view site,
                        std::uint64_t extra = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : site) h = (h ^ c) * 0x100000001b3ull;
  return mix64(mix64(seed ^ h) ^ extra);
}

std::string layer_prefix(const char* stack, std::size_t layer) {
  return std::string(stack) + ".l" + std::to_string(layer);
}

Tensor linear(const ParameterStore& p, const std::string& prefix,
              const Tensor& x) {
  return add_row(matmul(x, p.get(prefix + ".w")), p.get(prefix + ".b"));
}

Tensor norm(const ParameterStore& p, const std::string& prefix,
            const Tensor& x) {
  return layer_norm(x, p.get(prefix + ".gamma"), p.get(prefix + ".beta"),
                    kLayerNormEps);
}

struct AttentionResult {
  Tensor out;
  std::vector<Tensor> weights;  // one per head, Lq x Lk
};

// Projected keys/values split per head; shared by the full pass and the
// incremental decoder.
struct HeadSplit {
  std::vector<Tensor> parts;
};

HeadSplit split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t dh = x.cols() / heads;
  HeadSplit s;
  for (std::size_t h = 0; h < heads; ++h)
    s.parts.push_back(slice_cols(x, h * dh, dh));
  return s;
}

AttentionResult attend(const ParameterStore& p, const std::string& prefix,
                       const Tensor& query_in, const HeadSplit& keys,
                       const HeadSplit& values, std::size_t heads,
                       std::span<const unsigned char> allowed) {
  const Tensor q = linear(p, prefix + ".q", query_in);
  const std::size_t dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult r;
  std::vector<Tensor> contexts;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, keys.parts[h]), inv_sqrt);
    Tensor w = softmax_lastdim(scores, allowed);
    contexts.push_back(matmul(w, values.parts[h]));
    r.weights.push_back(std::move(w));
  }
  Tensor ctx = heads == 1 ? contexts[0] : concat_cols(contexts);
  r.out = linear(p, prefix + ".o", ctx);
  return r;
}

AttentionResult multi_head(const ParameterStore& p, const std::string& prefix,
                           const Tensor& query_in, const Tensor& kv_in,
                           std::size_t heads,
                           std::span<const unsigned char> allowed) {
  const Tensor k = linear(p, prefix + ".k", kv_in);
  const Tensor v = linear(p, prefix + ".v", kv_in);
  return attend(p, prefix, query_in, split_heads(k, heads),
                split_heads(v, heads), heads, allowed);
}

// Two 1-D convolutions over the sequence with a ReLU in between.
// left_pad = (k-1)/2 centres the kernel; left_pad = k-1 makes it causal.
Tensor conv_ffn(const ParameterStore& p, const std::string& prefix,
                const Tensor& x, std::size_t kernel, std::size_t left_pad) {
  Tensor mid = relu(linear(p, prefix + ".c1", unfold_rows(x, kernel, left_pad)));
  return linear(p, prefix + ".c2", unfold_rows(mid, kernel, left_pad));
}

std::vector<unsigned char> causal_mask(std::size_t len) {
  std::vector<unsigned char> m(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * len + j] = 1;
  return m;
}

void add_linear(ParameterStore& store, const std::string& name,
                std::size_t in, std::size_t out, std::mt19937_64& rng) {
  store.add(name + ".w", xavier_uniform(in, out, rng));
  store.add(name + ".b", Tensor::zeros({out}, true));
}

void add_norm(ParameterStore& store, const std::string& name, std::size_t d) {
  store.add(name + ".gamma", Tensor::full({d}, 1.0, true));
  store.add(name + ".beta", Tensor::zeros({d}, true));
}

void add_attention(ParameterStore& store, const std::string& name,
                   std::size_t d, std::mt19937_64& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"})
    add_linear(store, name + part, d, d, rng);
}

void add_ffn(ParameterStore& store, const std::string& name, std::size_t d,
             std::size_t filter, std::size_t kernel, std::mt19937_64& rng) {
  add_linear(store, name + ".c1", kernel * d, filter, rng);
  add_linear(store, name + ".c2", kernel * filter, d, rng);
}

}  // namespace

std::string to_string(EncoderInputMode mode) {
  switch (mode) {
    case EncoderInputMode::kBaseline: return "baseline";
    case EncoderInputMode::kLearnableWeight: return "learnable_weight";
    case EncoderInputMode::kLayerNorm: return "layer_norm";
  }
  return "?";
}

bool from_string(const std::string& text, EncoderInputMode& out) {
  if (text == "baseline") out = EncoderInputMode::kBaseline;
  else if (text == "learnable_weight") out = EncoderInputMode::kLearnableWeight;
  else if (text == "layer_norm") out = EncoderInputMode::kLayerNorm;
  else return false;
  return true;
}

ModelConfig ModelConfig::large_scale() {
  ModelConfig c;
  c.num_layers = 4;
  c.hidden_size = 256;
  c.num_heads = 2;
  c.ffn_filter_size = 1024;
  c.ffn_kernel_size = 9;
  c.prenet_bottleneck_size = 32;
  c.prenet_wide_size = 256;
  c.frame_dim = 80;
  c.speaker_dim = 64;
  return c;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(num_layers >= 1, "num_layers must be >= 1");
  require(num_heads >= 1 && hidden_size % num_heads == 0,
          "hidden_size must be divisible by num_heads");
  require(hidden_size % 2 == 0, "hidden_size must be even");
  require(ffn_filter_size >= 1 && ffn_kernel_size >= 1, "empty FFN");
  require(frame_dim >= 1 && vocab_size >= 1 && num_speakers >= 1 &&
              speaker_dim >= 1,
          "frame_dim, vocab_size, num_speakers and speaker_dim must be >= 1");
  require(!prenet_bottleneck_enabled ||
              (prenet_bottleneck_size >= 1 && prenet_bottleneck_size < frame_dim),
          "prenet_bottleneck_size must be in [1, frame_dim)");
  require(prenet_wide_size >= 1, "prenet_wide_size must be >= 1");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate in [0,1)");
  require(prenet_dropout_rate >= 0.0 && prenet_dropout_rate < 1.0,
          "prenet_dropout_rate in [0,1)");
  require(max_tokens >= 1 && max_frames >= 1, "length limits must be >= 1");
}

std::vector<std::size_t> ModelConfig::prenet_widths() const {
  const std::size_t inner =
      prenet_bottleneck_enabled ? prenet_bottleneck_size : prenet_wide_size;
  return {frame_dim, inner, inner, hidden_size};
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    throw ParameterError("positional_encoding: dim must be even and > 0");
  std::vector<double> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      pe[pos * dim + 2 * i] = std::sin(angle);
      pe[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  return Tensor::from({length, dim}, std::move(pe));
}

Tensor encoder_input(const Tensor& x, const Tensor& p, EncoderInputMode mode,
                     const EncoderInputParams& params) {
  if (x.shape() != p.shape())
    throw ShapeError("encoder_input: x and p shapes differ");
  switch (mode) {
    case EncoderInputMode::kBaseline:
      return add(x, p);
    case EncoderInputMode::kLearnableWeight:
      if (!params.alpha.defined())
        throw ConfigError("learnable_weight mode needs alpha");
      return add(x, mul_scalar(p, params.alpha));
    case EncoderInputMode::kLayerNorm:
      if (!params.gamma.defined() || !params.beta.defined())
        throw ConfigError("layer_norm mode needs gamma and beta");
      return add(layer_norm(x, params.gamma, params.beta, kLayerNormEps), p);
  }
  throw ConfigError("unknown encoder input mode");
}

double position_similarity(const Tensor& combined, const Tensor& p) {
  if (combined.shape() != p.shape() || combined.rank() != 2)
    throw ShapeError("position_similarity: shapes differ");
  const std::size_t rows = combined.dim(0), d = combined.dim(1);
  if (rows == 0) throw ShapeError("position_similarity: no rows");
  double acc = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double a = combined.at(t, j), b = p.at(t, j);
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0)
      throw NumericError("position_similarity: zero-norm row " +
                         std::to_string(t));
    acc += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return acc / static_cast<double>(rows);
}

Tensor speaker_condition(const Tensor& hidden, const Tensor& speaker_table,
                         const Tensor& proj_w, const Tensor& proj_b,
                         std::size_t speaker) {
  if (speaker >= speaker_table.dim(0))
    throw ParameterError("unknown speaker id " + std::to_string(speaker));
  const std::size_t ids[] = {speaker};
  Tensor e = embedding(speaker_table, ids);
  Tensor v = softsign(add_row(matmul(e, proj_w), proj_b));
  return add_row(hidden, v);
}

AcousticModel::AcousticModel(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(mix64(init_seed));
  const std::size_t d = config_.hidden_size;
  auto& P = params_;

  P.add("enc.embed", normal_init({config_.vocab_size, d}, 1.0, rng));
  if (config_.encoder_input_mode == EncoderInputMode::kLearnableWeight)
    P.add("enc.alpha", Tensor::scalar(1.0, true));
  if (config_.encoder_input_mode == EncoderInputMode::kLayerNorm)
    add_norm(P, "enc.in_ln", d);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const auto pre = layer_prefix("enc", l);
    add_norm(P, pre + ".ln1", d);
    add_attention(P, pre + ".attn", d, rng);
    add_norm(P, pre + ".ln2", d);
    add_ffn(P, pre + ".ffn", d, config_.ffn_filter_size,
            config_.ffn_kernel_size, rng);
  }
  add_norm(P, "enc.ln_out", d);

  P.add("spk.embed",
        normal_init({config_.num_speakers, config_.speaker_dim}, 1.0, rng));
  add_linear(P, "spk.enc", config_.speaker_dim, d, rng);
  add_linear(P, "spk.dec", config_.speaker_dim, d, rng);

  const auto widths = config_.prenet_widths();
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    add_linear(P, "dec.prenet.fc" + std::to_string(i), widths[i],
               widths[i + 1], rng);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const auto pre = layer_prefix("dec", l);
    add_norm(P, pre + ".ln1", d);
    add_attention(P, pre + ".self", d, rng);
    add_norm(P, pre + ".ln2", d);
    add_attention(P, pre + ".cross", d, rng);
    add_norm(P, pre + ".ln3", d);
    add_ffn(P, pre + ".ffn", d, config_.ffn_filter_size,
            config_.ffn_kernel_size, rng);
  }
  add_norm(P, "dec.ln_out", d);
  add_linear(P, "out.mel", d, config_.frame_dim, rng);
  add_linear(P, "out.stop", d, 1, rng);
}

void AcousticModel::check_lengths(std::size_t tokens, std::size_t frames) const {
  if (tokens == 0 || tokens > config_.max_tokens)
    throw ParameterError("phoneme count " + std::to_string(tokens) +
                         " outside [1, " + std::to_string(config_.max_tokens) +
                         "]");
  if (frames == 0 || frames > config_.max_frames)
    throw ParameterError("frame count " + std::to_string(frames) +
                         " outside [1, " + std::to_string(config_.max_frames) +
                         "]");
}

Tensor AcousticModel::prenet(const ParameterStore& params, const Tensor& frames,
                             bool dropout_active, std::uint64_t seed) const {
  if (frames.cols() != config_.frame_dim)
    throw ShapeError("prenet: frame width " + std::to_string(frames.cols()) +
                     " != frame_dim " + std::to_string(config_.frame_dim));
  Tensor h = frames;
  for (std::size_t i = 0; i < 2; ++i) {
    h = relu(linear(params, "dec.prenet.fc" + std::to_string(i), h));
    h = dropout(h, config_.prenet_dropout_rate, dropout_active,
                site_seed(seed, "prenet", i));
  }
  return linear(params, "dec.prenet.fc2", h);
}

Tensor AcousticModel::encode(const ParameterStore& params,
                             std::span<const std::size_t> phonemes,
                             std::size_t speaker, const ForwardOptions& options,
                             Tensor* input_out, Tensor* positions_out) const {
  const std::size_t d = config_.hidden_size;
  const Tensor x = embedding(params.get("enc.embed"), phonemes);
  const Tensor p = positional_encoding(phonemes.size(), d);
  EncoderInputParams ip;
  if (config_.encoder_input_mode == EncoderInputMode::kLearnableWeight)
    ip.alpha = params.get("enc.alpha");
  if (config_.encoder_input_mode == EncoderInputMode::kLayerNorm) {
    ip.gamma = params.get("enc.in_ln.gamma");
    ip.beta = params.get("enc.in_ln.beta");
  }
  Tensor in = encoder_input(x, p, config_.encoder_input_mode, ip);
  if (input_out) *input_out = in;
  if (positions_out) *positions_out = p;

  const double rate = config_.dropout_rate;
  Tensor h = dropout(in, rate, options.train, site_seed(options.seed, "enc.in"));
  const std::size_t k = config_.ffn_kernel_size;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const auto pre = layer_prefix("enc", l);
    Tensor n1 = norm(params, pre + ".ln1", h);
    auto a = multi_head(params, pre + ".attn", n1, n1, config_.num_heads, {});
    h = add(h, dropout(a.out, rate, options.train,
                       site_seed(options.seed, pre + ".attn")));
    Tensor f = conv_ffn(params, pre + ".ffn", norm(params, pre + ".ln2", h), k,
                        (k - 1) / 2);
    h = add(h, dropout(f, rate, options.train,
                       site_seed(options.seed, pre + ".ffn")));
  }
  h = norm(params, "enc.ln_out", h);
  return speaker_condition(h, params.get("spk.embed"), params.get("spk.enc.w"),
                           params.get("spk.enc.b"), speaker);
}

TeacherForcedOutput AcousticModel::forward(const ParameterStore& params,
                                           std::span<const std::size_t> phonemes,
                                           std::span<const double> frames,
                                           std::size_t speaker,
                                           const ForwardOptions& options) const {
  const std::size_t fd = config_.frame_dim, d = config_.hidden_size;
  if (frames.size() % fd != 0)
    throw ShapeError("forward: frame payload not a multiple of frame_dim");
  const std::size_t S = frames.size() / fd, T = phonemes.size();
  check_lengths(T, S);

  TeacherForcedOutput out;
  const Tensor memory =
      encode(params, phonemes, speaker, options, &out.encoder_input,
             &out.positions);

  // Decoder input: zero go-frame, then frames[0 .. S-2].
  std::vector<double> shifted(S * fd, 0.0);
  std::copy(frames.begin(), frames.end() - static_cast<long>(fd),
            shifted.begin() + static_cast<long>(fd));
  const Tensor dec_in = Tensor::from({S, fd}, std::move(shifted));

  const bool prenet_drop = options.train || config_.prenet_dropout_at_inference;
  Tensor h = prenet(params, dec_in, prenet_drop, site_seed(options.seed, "dec"));
  h = speaker_condition(h, params.get("spk.embed"), params.get("spk.dec.w"),
                        params.get("spk.dec.b"), speaker);
  h = add(h, positional_encoding(S, d));
  const double rate = config_.dropout_rate;
  h = dropout(h, rate, options.train, site_seed(options.seed, "dec.in"));

  const auto causal = causal_mask(S);
  const std::size_t k = config_.ffn_kernel_size;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const auto pre = layer_prefix("dec", l);
    Tensor n1 = norm(params, pre + ".ln1", h);
    auto sa = multi_head(params, pre + ".self", n1, n1, config_.num_heads, causal);
    h = add(h, dropout(sa.out, rate, options.train,
                       site_seed(options.seed, pre + ".self")));
    auto ca = multi_head(params, pre + ".cross", norm(params, pre + ".ln2", h),
                         memory, config_.num_heads, {});
    h = add(h, dropout(ca.out, rate, options.train,
                       site_seed(options.seed, pre + ".cross")));
    for (auto& w : ca.weights) out.attention.push_back(std::move(w));
    Tensor f = conv_ffn(params, pre + ".ffn", norm(params, pre + ".ln3", h), k,
                        k - 1);
    h = add(h, dropout(f, rate, options.train,
                       site_seed(options.seed, pre + ".ffn")));
  }
  h = norm(params, "dec.ln_out", h);
  out.mel = linear(params, "out.mel", h);
  out.stop_logits = linear(params, "out.stop", h);
  return out;
}

InferenceResult AcousticModel::infer(std::span<const std::size_t> phonemes,
                                     std::size_t speaker,
                                     const InferenceOptions& options) const {
  if (options.max_frames == 0)
    throw ParameterError("infer: max_frames must be >= 1");
  const std::size_t T = phonemes.size();
  const std::size_t fd = config_.frame_dim, d = config_.hidden_size;
  const std::size_t heads = config_.num_heads, L = config_.num_layers;
  const std::size_t k = config_.ffn_kernel_size;
  const std::size_t max_frames = std::min(options.max_frames, config_.max_frames);
  check_lengths(T, 1);
  if (options.forced_frames && options.forced_frames->size() < max_frames * fd)
    throw ShapeError("infer: forced frames shorter than max_frames");

  // Inference never needs gradients; a frozen copy keeps the ops from
  // recording a graph.
  const ParameterStore P = params_.clone(false);
  const Tensor memory = encode(P, phonemes, speaker, {}, nullptr, nullptr);
  const Tensor pe = positional_encoding(max_frames, d);

  struct LayerCache {
    HeadSplit cross_k, cross_v;
    std::vector<Tensor> self_k, self_v;  // per head, growing rows
    std::vector<Tensor> ffn_in, ffn_mid;  // last k rows, oldest first
  };
  std::vector<LayerCache> cache(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto pre = layer_prefix("dec", l) + ".cross";
    cache[l].cross_k = split_heads(linear(P, pre + ".k", memory), heads);
    cache[l].cross_v = split_heads(linear(P, pre + ".v", memory), heads);
  }

  // Zero rows padding the causal conv window before the first frame.
  auto window_rows = [k](std::vector<Tensor>& rows, const Tensor& next) {
    rows.push_back(next);
    if (rows.size() > k) rows.erase(rows.begin());
    std::vector<Tensor> full;
    for (std::size_t i = rows.size(); i < k; ++i)
      full.push_back(Tensor::zeros({1, next.cols()}));
    full.insert(full.end(), rows.begin(), rows.end());
    return concat_cols(full);
  };

  InferenceResult res;
  res.head_attention.assign(L * heads, {});
  std::vector<double> prev(fd, 0.0);
  auto state = alignment::window_init();
  std::vector<unsigned char> all_allowed(T, 1);

  for (std::size_t s = 0; s < max_frames; ++s) {
    Tensor x = prenet(P, Tensor::from({1, fd}, prev),
                      config_.prenet_dropout_at_inference,
                      site_seed(options.seed, "infer.prenet", s));
    x = speaker_condition(x, P.get("spk.embed"), P.get("spk.dec.w"),
                          P.get("spk.dec.b"), speaker);
    x = add(x, slice_rows(pe, s, 1));

    const auto allowed =
        options.window_enabled ? alignment::window_allowed(state, T) : all_allowed;
    std::vector<double> mean_row(T, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      const auto pre = layer_prefix("dec", l);
      auto& c = cache[l];

      Tensor n1 = norm(P, pre + ".ln1", x);
      const auto kh = split_heads(linear(P, pre + ".self.k", n1), heads);
      const auto vh = split_heads(linear(P, pre + ".self.v", n1), heads);
      if (c.self_k.empty()) {
        c.self_k = kh.parts;
        c.self_v = vh.parts;
      } else {
        for (std::size_t h = 0; h < heads; ++h) {
          const Tensor ks[] = {c.self_k[h], kh.parts[h]};
          const Tensor vs[] = {c.self_v[h], vh.parts[h]};
          c.self_k[h] = concat_rows(ks);
          c.self_v[h] = concat_rows(vs);
        }
      }
      auto sa = attend(P, pre + ".self", n1, HeadSplit{c.self_k},
                       HeadSplit{c.self_v}, heads, {});
      x = add(x, sa.out);

      auto ca = attend(P, pre + ".cross", norm(P, pre + ".ln2", x), c.cross_k,
                       c.cross_v, heads, allowed);
      x = add(x, ca.out);
      for (std::size_t h = 0; h < heads; ++h) {
        auto row = ca.weights[h].data();
        auto& dst = res.head_attention[l * heads + h];
        dst.insert(dst.end(), row.begin(), row.end());
        for (std::size_t t = 0; t < T; ++t) mean_row[t] += row[t];
      }

      Tensor n3 = norm(P, pre + ".ln3", x);
      Tensor mid = relu(linear(P, pre + ".ffn.c1", window_rows(c.ffn_in, n3)));
      x = add(x, linear(P, pre + ".ffn.c2", window_rows(c.ffn_mid, mid)));
    }
    x = norm(P, "dec.ln_out", x);
    const Tensor mel = linear(P, "out.mel", x);
    const double stop_logit = linear(P, "out.stop", x).item();

    const double inv = 1.0 / static_cast<double>(L * heads);
    for (auto& v : mean_row) v *= inv;
    res.mean_attention.insert(res.mean_attention.end(), mean_row.begin(),
                              mean_row.end());
    res.centers.push_back(state.center);
    res.windows.push_back(options.window_enabled
                              ? alignment::window_range(state, T)
                              : alignment::WindowRange{0, T - 1});
    if (options.window_enabled) {
      // Renormalise before the centroid: the averaged row sums to 1 only up
      // to rounding.
      double total = 0.0;
      for (double v : mean_row) total += v;
      for (auto& v : mean_row) v /= total;
      state = alignment::window_update(
          state, alignment::attention_centroid(mean_row), T);
    }

    res.mel.insert(res.mel.end(), mel.data().begin(), mel.data().end());
    res.frames = s + 1;
    if (options.forced_frames) {
      std::copy_n(options.forced_frames->begin() + static_cast<long>(s * fd), fd,
                  prev.begin());
    } else {
      std::copy(mel.data().begin(), mel.data().end(), prev.begin());
    }
    const double stop_prob = 1.0 / (1.0 + std::exp(-stop_logit));
    res.stop_probabilities.push_back(stop_prob);
    if (stop_prob > options.stop_threshold && !res.stopped_at) {
      res.stopped_at = s + 1;
      if (!options.ignore_stop) break;
    }
  }
  return res;
}

Tensor AcousticModel::encoder_input_for(std::span<const std::size_t> phonemes,
                                        EncoderInputMode mode) const {
  const std::size_t d = config_.hidden_size;
  const Tensor x = embedding(params_.get("enc.embed").detach(), phonemes);
  const Tensor p = positional_encoding(phonemes.size(), d);
  EncoderInputParams ip;
  ip.alpha = params_.contains("enc.alpha") ? params_.get("enc.alpha").detach()
                                           : Tensor::scalar(1.0);
  ip.gamma = params_.contains("enc.in_ln.gamma")
                 ? params_.get("enc.in_ln.gamma").detach()
                 : Tensor::full({d}, 1.0);
  ip.beta = params_.contains("enc.in_ln.beta")
                ? params_.get("enc.in_ln.beta").detach()
                : Tensor::zeros({d});
  return encoder_input(x, p, mode, ip);
}

}  // namespace atlab::model
