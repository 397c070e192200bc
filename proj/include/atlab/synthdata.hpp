#pragma once

// Synthetic multi-speaker "text to frames" task with a known monotonic
// alignment.
//
// Every token id owns a prototype frame vector and a base duration. A
// speaker stretches durations by its speed factor and adds its own Gaussian
// noise level. Consecutive frames are blended (30% of the previous frame
// carries over), so adjacent frames look alike and copying the last frame is
// a strong shortcut for a decoder.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atlab/alignment.hpp"

namespace atlab::synth {

struct TaskConfig {
  std::size_t vocab_size = 20;
  std::size_t num_speakers = 8;
  std::size_t frame_dim = 16;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 20;
  std::size_t min_duration = 2;  // base frames per token, per token id
  std::size_t max_duration = 6;
  double min_speed = 0.7;
  double max_speed = 1.3;
  double min_noise = 0.05;
  double max_noise = 0.2;
  double blend = 0.3;
  std::size_t train_size = 2000;
  std::size_t valid_size = 100;
  std::size_t test_size = 100;
  std::uint64_t seed = 1234;

  // Throws ParameterError for empty ranges, non-positive speeds, etc.
  void validate() const;

  template <typename Self, typename F>
  static void fields(Self& c, F&& f) {
    f("vocab_size", c.vocab_size);
    f("num_speakers", c.num_speakers);
    f("frame_dim", c.frame_dim);
    f("min_tokens", c.min_tokens);
    f("max_tokens", c.max_tokens);
    f("min_duration", c.min_duration);
    f("max_duration", c.max_duration);
    f("min_speed", c.min_speed);
    f("max_speed", c.max_speed);
    f("min_noise", c.min_noise);
    f("max_noise", c.max_noise);
    f("blend", c.blend);
    f("train_size", c.train_size);
    f("valid_size", c.valid_size);
    f("test_size", c.test_size);
    f("seed", c.seed);
  }

  bool operator==(const TaskConfig&) const = default;
};

struct Speaker {
  double speed;
  double noise_sigma;
};

// Everything shared by all samples of a task: derived from the seed only.
struct TaskWorld {
  std::vector<double> prototypes;  // vocab_size x frame_dim
  std::vector<std::size_t> base_durations;
  std::vector<Speaker> speakers;

  static TaskWorld build(const TaskConfig& config);
};

struct SyntheticSample {
  std::vector<std::size_t> phonemes;
  std::size_t speaker = 0;
  std::size_t frame_dim = 0;
  std::vector<double> frames;  // S x frame_dim
  std::vector<std::size_t> alignment;  // generating token of each frame

  std::size_t tokens() const { return phonemes.size(); }
  std::size_t frame_count() const { return alignment.size(); }

  bool operator==(const SyntheticSample&) const = default;
};

enum class Split { kTrain, kValid, kTest };
std::string to_string(Split split);
bool from_string(const std::string& text, Split& out);

struct Dataset {
  TaskConfig config;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> valid;
  std::vector<SyntheticSample> test;

  const std::vector<SyntheticSample>& split(Split s) const;
};

// round(base * speed), at least one frame, per token.
std::vector<std::size_t> token_durations(const TaskWorld& world,
                                         std::span<const std::size_t> phonemes,
                                         double speed);

// Deterministic in (config.seed, split, index).
SyntheticSample make_sample(const TaskConfig& config, const TaskWorld& world,
                            Split split, std::size_t index);
Dataset make_dataset(const TaskConfig& config);

// One-hot S x T matrix, row s hot at alignment[s].
alignment::AttentionMatrix oracle_alignment_matrix(const SyntheticSample& sample);
// max over s of |s - k * alignment[s]| with k = S/T: the smallest bandwidth
// whose band covers the whole path.
double max_path_deviation(const SyntheticSample& sample);

// Split file: "ATDS1", config echo, split name, u32 count, then per sample
// u32 T, T x u32 ids, u32 speaker, u32 S, u32 frame_dim, S*frame_dim f64,
// S x u32 alignment. Little-endian throughout.
void save_split(const std::filesystem::path& path, const TaskConfig& config,
                Split split, const std::vector<SyntheticSample>& samples);
struct LoadedSplit {
  TaskConfig config;
  Split split;
  std::vector<SyntheticSample> samples;
};
LoadedSplit load_split(const std::filesystem::path& path);

// Writes train.bin / valid.bin / test.bin into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

std::string config_text(const TaskConfig& config);
TaskConfig parse_config_text(const std::string& text);

}  // namespace atlab::synth
