#include "atlab/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "atlab/errors.hpp"
#include "atlab/trainer.hpp"

namespace atlab::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool parse_switch(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw UsageError("expected on|off, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
      v = std::stoull(item, &used);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("bad ") + what + " list '" + text + "'");
    }
    if (used != item.size())
      throw UsageError(std::string("bad ") + what + " list '" + text + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
  return out;
}

std::size_t env_threads() {
  const char* v = std::getenv("ATLAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("ATLAB_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw LoadError("cannot write " + path.string());
  return os;
}

// Dataset from --data when given, otherwise regenerated from the task config.
synth::Dataset dataset_for(const std::string& dir, const synth::TaskConfig& task) {
  if (dir.empty()) return synth::make_dataset(task);
  synth::Dataset d = synth::load_dataset(dir);
  if (!(d.config == task))
    throw LoadError("dataset in " + dir + " does not match the task config");
  return d;
}

synth::Split parse_split(const std::string& s) {
  synth::Split out;
  if (!synth::from_string(s, out)) throw UsageError("unknown split '" + s + "'");
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Alignment lab for a multi-speaker Transformer acoustic model",
               "atlab"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, ckpt, split_name = "valid",
                                                     mode = "ar", window = "on",
                                                     seeds = "1,2,3", tokens,
                                                     format = "csv", log_dir;
  std::uint64_t seed = 1;
  std::size_t speaker = 0, sample = 0, max_frames = 256;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "Training seed (overrides [train] seed)")
      ->each([&](const std::string&) { seed_given = true; });
  tr->add_option("--out", out_path, "Checkpoint path")->required();
  tr->add_option("--data", data_dir, "Dataset directory (default: regenerate)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory (default: regenerate)");
  ev->add_option("--split", split_name, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  ev->add_option("--mode", mode, "tf|ar")->check(CLI::IsMember({"tf", "ar"}));
  ev->add_option("--window", window, "on|off")->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--out", out_path, "Report path (default: stdout)");

  auto* ab = app.add_subcommand("ablate", "Run the five-arm ablation");
  ab->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  ab->add_option("--seeds", seeds, "Comma-separated seeds");
  ab->add_option("--data", data_dir, "Dataset directory (default: regenerate)");
  ab->add_option("--out", out_path, "CSV path (default: stdout)");
  ab->add_option("--log-dir", log_dir, "Per-arm metric logs");

  auto* inf = app.add_subcommand("infer", "Generate frames for a token sequence");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required();
  inf->add_option("--tokens", tokens, "Comma-separated token ids")->required();
  inf->add_option("--speaker", speaker, "Speaker id");
  inf->add_option("--window", window, "on|off")->check(CLI::IsMember({"on", "off"}));
  inf->add_option("--max-frames", max_frames, "Frame limit");
  inf->add_option("--out", out_path, "Frames CSV")->required();

  auto* dump = app.add_subcommand("dump-attention", "Write attention heatmaps");
  dump->add_option("--ckpt", ckpt, "Checkpoint")->required();
  dump->add_option("--sample", sample, "Sample index");
  dump->add_option("--data", data_dir, "Dataset directory (default: regenerate)");
  dump->add_option("--split", split_name, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  dump->add_option("--mode", mode, "tf|ar")->check(CLI::IsMember({"tf", "ar"}));
  dump->add_option("--format", format, "csv|pgm")->check(CLI::IsMember({"csv", "pgm"}));
  dump->add_option("--out", out_path, "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    auto experiment = [&] {
      return config_path.empty() ? train::parse_experiment("")
                                 : train::load_experiment(config_path);
    };

    if (gen->parsed()) {
      const auto cfg = experiment();
      synth::save_dataset(out_path, synth::make_dataset(cfg.task));
      out << "wrote dataset to " << out_path << '\n';
    } else if (tr->parsed()) {
      auto cfg = experiment();
      if (seed_given) cfg.train.seed = seed;
      if (cfg.train.log_path.empty()) cfg.train.log_path = out_path + ".metrics.jsonl";
      cfg.train.checkpoint_path = out_path;
      if (fs::path(out_path).has_parent_path())
        fs::create_directories(fs::path(out_path).parent_path());
      const auto data = dataset_for(data_dir, cfg.task);
      const auto run = train::train(cfg, data);
      const auto& last = run.history.back();
      out << "trained " << last.step << " steps, mel_loss " << last.mel_loss;
      if (last.r_valid) out << ", r_valid(tf) " << *last.r_valid;
      out << "\ncheckpoint " << out_path << ", log " << cfg.train.log_path << '\n';
    } else if (ev->parsed()) {
      const auto loaded = train::load_run(ckpt);
      const auto data = dataset_for(data_dir, loaded.config.task);
      train::EvalOptions eo;
      eo.teacher_forced = mode == "tf";
      eo.window_enabled = parse_switch(window);
      eo.bandwidth = train::resolve_bandwidth(loaded.config.train, data.train);
      eo.seed = loaded.config.train.seed;
      eo.mel_loss = loaded.config.train.mel_loss;
      const auto rep = train::evaluate(loaded.model, data.split(parse_split(split_name)), eo);
      if (out_path.empty()) {
        train::write_report(out, rep);
      } else {
        auto os = open_out(out_path);
        train::write_report(os, rep);
      }
    } else if (ab->parsed()) {
      const auto cfg = experiment();
      train::AblationOptions ao;
      ao.seeds.clear();
      for (auto s : parse_list(seeds, "seed")) ao.seeds.push_back(s);
      ao.threads = env_threads();
      ao.log_dir = log_dir;
      const auto data = dataset_for(data_dir, cfg.task);
      const auto rows = train::ablate(cfg, data, ao);
      if (out_path.empty()) {
        train::write_ablation_csv(out, rows);
      } else {
        auto os = open_out(out_path);
        train::write_ablation_csv(os, rows);
        for (const auto& [arm, r] : train::median_r_by_arm(rows))
          out << arm << " median r " << r << '\n';
      }
    } else if (inf->parsed()) {
      const auto loaded = train::load_run(ckpt);
      const auto ids = parse_list(tokens, "token");
      model::InferenceOptions io;
      io.window_enabled = parse_switch(window);
      io.max_frames = max_frames;
      io.seed = loaded.config.train.seed;
      const auto res = loaded.model.infer(ids, speaker, io);
      auto os = open_out(out_path);
      const std::size_t fd = loaded.model.config().frame_dim;
      char buf[32];
      for (std::size_t s = 0; s < res.frames; ++s) {
        for (std::size_t j = 0; j < fd; ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", res.mel[s * fd + j]);
          os << (j ? "," : "") << buf;
        }
        os << '\n';
      }
      out << res.frames << " frames";
      if (res.stopped_at) out << ", stop at frame " << *res.stopped_at;
      else out << ", no stop before the frame limit";
      out << '\n';
    } else if (dump->parsed()) {
      const auto loaded = train::load_run(ckpt);
      const auto data = dataset_for(data_dir, loaded.config.task);
      const auto& samples = data.split(parse_split(split_name));
      if (sample >= samples.size())
        throw ParameterError("sample " + std::to_string(sample) + " not in split (" +
                             std::to_string(samples.size()) + " samples)");
      const auto& s = samples[sample];
      const std::size_t S = s.frame_count(), T = s.tokens();
      std::vector<alignment::AttentionMatrix> mats;
      if (mode == "tf") {
        const auto fwd = loaded.model.forward(s.phonemes, s.frames, s.speaker,
                                              {false, loaded.config.train.seed});
        for (const auto& a : fwd.attention) mats.push_back(alignment::AttentionMatrix::from_tensor(a));
      } else {
        model::InferenceOptions io;
        io.max_frames = S;
        io.ignore_stop = true;
        io.window_enabled = loaded.config.train.use_dc;
        io.seed = loaded.config.train.seed;
        auto res = loaded.model.infer(s.phonemes, s.speaker, io);
        for (auto& h : res.head_attention) mats.emplace_back(res.frames, T, std::move(h));
      }
      fs::create_directories(out_path);
      const std::size_t heads = loaded.model.config().num_heads;
      for (std::size_t i = 0; i < mats.size(); ++i) {
        const fs::path file = fs::path(out_path) /
                              ("attn_l" + std::to_string(i / heads) + "_h" +
                               std::to_string(i % heads) + "." + format);
        auto os = open_out(file);
        if (format == "csv") alignment::write_attention_csv(os, mats[i]);
        else alignment::write_attention_pgm(os, mats[i]);
        if (!os) throw LoadError("write failed for " + file.string());
      }
      out << "wrote " << mats.size() << " matrices (" << S << " x " << T << ") to "
          << out_path << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace atlab::cli
