#include "atlab/synthdata.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "atlab/binary_io.hpp"
#include "atlab/config_io.hpp"
#include "atlab/errors.hpp"

namespace atlab::synth {
namespace {

constexpr char kMagic[] = "ATDS1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

constexpr std::uint64_t kWorldStream = 0x776f726c64ull;  // "world"

std::uint64_t split_stream(Split s) {
  return 0x73706c6974ull + static_cast<std::uint64_t>(s);  // "split" + id
}

}  // namespace

void TaskConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ParameterError(std::string("task config: ") + what);
  };
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(num_speakers >= 1, "num_speakers must be >= 1");
  require(frame_dim >= 1, "frame_dim must be >= 1");
  require(min_tokens >= 1 && min_tokens <= max_tokens, "empty token range");
  require(min_duration >= 1 && min_duration <= max_duration,
          "empty duration range");
  require(min_speed > 0.0 && min_speed <= max_speed,
          "speed factors must be positive and the range non-empty");
  require(min_noise >= 0.0 && min_noise <= max_noise, "empty noise range");
  require(blend >= 0.0 && blend < 1.0, "blend must lie in [0, 1)");
  require(train_size >= 1, "train split must not be empty");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

bool from_string(const std::string& text, Split& out) {
  if (text == "train") out = Split::kTrain;
  else if (text == "valid") out = Split::kValid;
  else if (text == "test") out = Split::kTest;
  else return false;
  return true;
}

const std::vector<SyntheticSample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return train;
}

TaskWorld TaskWorld::build(const TaskConfig& config) {
  config.validate();
  std::mt19937_64 rng(stream_seed(config.seed, kWorldStream, 0));
  TaskWorld w;
  std::normal_distribution<double> gauss(0.0, 1.0);
  w.prototypes.resize(config.vocab_size * config.frame_dim);
  for (auto& v : w.prototypes) v = gauss(rng);
  std::uniform_int_distribution<std::size_t> dur(config.min_duration,
                                                 config.max_duration);
  w.base_durations.resize(config.vocab_size);
  for (auto& d : w.base_durations) d = dur(rng);
  std::uniform_real_distribution<double> speed(config.min_speed,
                                               config.max_speed);
  std::uniform_real_distribution<double> noise(config.min_noise,
                                               config.max_noise);
  for (std::size_t s = 0; s < config.num_speakers; ++s) {
    const double sp = speed(rng);
    w.speakers.push_back({sp, noise(rng)});
  }
  return w;
}

std::vector<std::size_t> token_durations(const TaskWorld& world,
                                         std::span<const std::size_t> phonemes,
                                         double speed) {
  std::vector<std::size_t> out;
  out.reserve(phonemes.size());
  for (auto id : phonemes) {
    const double frames =
        std::round(static_cast<double>(world.base_durations.at(id)) * speed);
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(frames)));
  }
  return out;
}

SyntheticSample make_sample(const TaskConfig& config, const TaskWorld& world,
                            Split split, std::size_t index) {
  std::mt19937_64 rng(stream_seed(config.seed, split_stream(split), index));
  std::uniform_int_distribution<std::size_t> len(config.min_tokens,
                                                 config.max_tokens);
  std::uniform_int_distribution<std::size_t> tok(0, config.vocab_size - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticSample s;
  s.frame_dim = config.frame_dim;
  s.speaker = index % config.num_speakers;
  s.phonemes.resize(len(rng));
  for (auto& p : s.phonemes) p = tok(rng);

  const Speaker& spk = world.speakers[s.speaker];
  const auto durations = token_durations(world, s.phonemes, spk.speed);
  const std::size_t fd = config.frame_dim;
  for (std::size_t t = 0; t < s.phonemes.size(); ++t) {
    const double* proto = world.prototypes.data() + s.phonemes[t] * fd;
    for (std::size_t r = 0; r < durations[t]; ++r) {
      const std::size_t base = s.frames.size();
      const bool first = base == 0;
      s.frames.resize(base + fd);
      for (std::size_t j = 0; j < fd; ++j) {
        double v = first ? proto[j]
                         : (1.0 - config.blend) * proto[j] +
                               config.blend * s.frames[base - fd + j];
        s.frames[base + j] = v + spk.noise_sigma * gauss(rng);
      }
      s.alignment.push_back(t);
    }
  }
  return s;
}

Dataset make_dataset(const TaskConfig& config) {
  const TaskWorld world = TaskWorld::build(config);
  Dataset d;
  d.config = config;
  auto fill = [&](std::vector<SyntheticSample>& out, Split split,
                  std::size_t count) {
    out.resize(count);
    const auto n = static_cast<long>(count);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i)
      out[i] = make_sample(config, world, split, static_cast<std::size_t>(i));
  };
  fill(d.train, Split::kTrain, config.train_size);
  fill(d.valid, Split::kValid, config.valid_size);
  fill(d.test, Split::kTest, config.test_size);
  return d;
}

alignment::AttentionMatrix oracle_alignment_matrix(
    const SyntheticSample& sample) {
  const std::size_t frames = sample.frame_count(), tokens = sample.tokens();
  std::vector<double> w(frames * tokens, 0.0);
  for (std::size_t s = 0; s < frames; ++s)
    w[s * tokens + sample.alignment[s]] = 1.0;
  return alignment::AttentionMatrix(frames, tokens, std::move(w));
}

double max_path_deviation(const SyntheticSample& sample) {
  const double k = static_cast<double>(sample.frame_count()) /
                   static_cast<double>(sample.tokens());
  double worst = 0.0;
  for (std::size_t s = 0; s < sample.frame_count(); ++s)
    worst = std::max(worst, std::abs(static_cast<double>(s) -
                                     k * static_cast<double>(sample.alignment[s])));
  return worst;
}

std::string config_text(const TaskConfig& config) {
  std::ostringstream os;
  config::write_section(os, "task", config);
  return os.str();
}

TaskConfig parse_config_text(const std::string& text) {
  TaskConfig c;
  const auto doc = config::parse_document(text);
  for (const auto& [name, entries] : doc) {
    if (name != "task")
      throw ConfigError("unexpected section [" + name + "] in task config");
    config::apply_section(entries, c, name);
  }
  c.validate();
  return c;
}

void save_split(const std::filesystem::path& path, const TaskConfig& config,
                Split split, const std::vector<SyntheticSample>& samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open " + path.string() + " for writing");
  os.write(kMagic, kMagicLen);
  binio::put_bytes(os, config_text(config));
  binio::put_bytes(os, to_string(split));
  binio::put_u32(os, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    binio::put_u32(os, static_cast<std::uint32_t>(s.tokens()));
    for (auto id : s.phonemes) binio::put_u32(os, static_cast<std::uint32_t>(id));
    binio::put_u32(os, static_cast<std::uint32_t>(s.speaker));
    binio::put_u32(os, static_cast<std::uint32_t>(s.frame_count()));
    binio::put_u32(os, static_cast<std::uint32_t>(s.frame_dim));
    for (double v : s.frames) binio::put_f64(os, v);
    for (auto a : s.alignment) binio::put_u32(os, static_cast<std::uint32_t>(a));
  }
  if (!os) throw LoadError("write failed for " + path.string());
}

LoadedSplit load_split(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open dataset file " + path.string());
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw LoadError(path.string() + " is not a dataset split (bad magic)");
  LoadedSplit out;
  out.config = parse_config_text(binio::get_bytes(is));
  if (!from_string(binio::get_bytes(is, 16), out.split))
    throw LoadError("unknown split name in " + path.string());
  const std::uint32_t count = binio::get_u32(is);
  constexpr std::uint32_t kLimit = 1u << 24;
  out.samples.reserve(std::min(count, kLimit));
  for (std::uint32_t i = 0; i < count; ++i) {
    SyntheticSample s;
    const std::uint32_t tokens = binio::get_u32(is);
    if (tokens == 0 || tokens > kLimit) throw LoadError("bad token count");
    for (std::uint32_t t = 0; t < tokens; ++t) s.phonemes.push_back(binio::get_u32(is));
    s.speaker = binio::get_u32(is);
    const std::uint32_t frames = binio::get_u32(is);
    s.frame_dim = binio::get_u32(is);
    if (frames == 0 || frames > kLimit || s.frame_dim == 0 || s.frame_dim > 4096)
      throw LoadError("bad frame block");
    s.frames.resize(static_cast<std::size_t>(frames) * s.frame_dim);
    for (auto& v : s.frames) v = binio::get_f64(is);
    for (std::uint32_t f = 0; f < frames; ++f) {
      s.alignment.push_back(binio::get_u32(is));
      if (s.alignment.back() >= tokens) throw LoadError("alignment out of range");
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  save_split(dir / "train.bin", data.config, Split::kTrain, data.train);
  save_split(dir / "valid.bin", data.config, Split::kValid, data.valid);
  save_split(dir / "test.bin", data.config, Split::kTest, data.test);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  auto train = load_split(dir / "train.bin");
  auto valid = load_split(dir / "valid.bin");
  auto test = load_split(dir / "test.bin");
  if (!(train.config == valid.config) || !(train.config == test.config))
    throw LoadError("dataset splits in " + dir.string() +
                    " were generated from different configs");
  d.config = train.config;
  d.train = std::move(train.samples);
  d.valid = std::move(valid.samples);
  d.test = std::move(test.samples);
  return d;
}

}  // namespace atlab::synth
