#pragma once

// Training, evaluation and the ablation harness.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlab/alignment.hpp"
#include "atlab/model.hpp"
#include "atlab/params.hpp"
#include "atlab/synthdata.hpp"

namespace atlab::train {

enum class MelLoss { kMae, kMse };
std::string to_string(MelLoss kind);
bool from_string(const std::string& text, MelLoss& out);

struct TrainConfig {
  double lambda_dc = 0.01;
  // Band half-width in frames; 0 means ceil(0.1 * mean S of the train split).
  std::size_t bandwidth = 0;
  std::size_t batch_frames = 256;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 400;
  double lr_scale = 1.0;
  double grad_clip = 1.0;  // global-norm clip, 0 disables
  double stop_pos_weight = 5.0;
  MelLoss mel_loss = MelLoss::kMae;
  std::uint64_t seed = 1;
  bool use_dc = true;
  bool use_ln = true;
  bool use_pb = true;
  std::size_t valid_every = 250;  // 0: only after the last step
  std::size_t valid_samples = 32;  // teacher-forced r during training
  std::size_t threads = 1;  // per-batch sample parallelism
  std::string log_path;
  std::string checkpoint_path;

  void validate() const;

  template <typename Self, typename F>
  static void fields(Self& c, F&& f) {
    f("lambda_dc", c.lambda_dc);
    f("bandwidth", c.bandwidth);
    f("batch_frames", c.batch_frames);
    f("total_steps", c.total_steps);
    f("warmup_steps", c.warmup_steps);
    f("lr_scale", c.lr_scale);
    f("grad_clip", c.grad_clip);
    f("stop_pos_weight", c.stop_pos_weight);
    f("mel_loss", c.mel_loss);
    f("seed", c.seed);
    f("use_dc", c.use_dc);
    f("use_ln", c.use_ln);
    f("use_pb", c.use_pb);
    f("valid_every", c.valid_every);
    f("valid_samples", c.valid_samples);
    f("threads", c.threads);
    f("log_path", c.log_path);
    f("checkpoint_path", c.checkpoint_path);
  }

  bool operator==(const TrainConfig&) const = default;
};

// Everything a run needs: the three config sections.
struct ExperimentConfig {
  synth::TaskConfig task;
  model::ModelConfig model;
  TrainConfig train;

  bool operator==(const ExperimentConfig&) const = default;
};

std::string to_text(const ExperimentConfig& config);
// Sections [task], [model], [train]; missing sections keep defaults,
// unknown sections or keys are a ConfigError.
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Model config after applying the LN / PB ablation flags.
model::ModelConfig effective_model_config(const ExperimentConfig& config);
std::size_t resolve_bandwidth(const TrainConfig& config,
                              const std::vector<synth::SyntheticSample>& train);

struct LossTerms {
  Tensor total;
  double mel = 0.0;
  double stop = 0.0;
  double dc = 0.0;  // L_DC before weighting; 0 when lambda is 0
};

// mel error + weighted stop BCE + lambda * L_DC(attns). A non-finite term is
// a NumericError naming it. With lambda == 0 the attention maps are not
// touched at all.
LossTerms total_loss(const Tensor& mel_pred, std::span<const double> mel_true,
                     const Tensor& stop_logits,
                     std::span<const double> stop_true,
                     std::span<const Tensor> attns, double lambda,
                     const alignment::DiagonalBand& band,
                     MelLoss kind = MelLoss::kMae, double pos_weight = 5.0);

// Stop targets: 1 on the last frame, 0 elsewhere.
std::vector<double> stop_targets(std::size_t frames);

// Element-wise mean over heads and layers.
alignment::AttentionMatrix average_attention(std::span<const Tensor> attns);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double mel_loss = 0.0;
  double stop_loss = 0.0;
  double dc_loss = 0.0;
  std::optional<double> r_valid;

  bool operator==(const StepMetrics&) const = default;
};

std::string to_json_line(const StepMetrics& m);

struct TrainResult {
  model::AcousticModel model;
  AdamState adam;
  std::vector<StepMetrics> history;
  std::size_t bandwidth = 0;
};

TrainResult train(const ExperimentConfig& config, const synth::Dataset& data);

struct EvalOptions {
  bool teacher_forced = false;
  bool window_enabled = true;
  std::size_t bandwidth = 5;
  std::uint64_t seed = 0;
  std::size_t max_samples = 0;  // 0: whole split
  MelLoss mel_loss = MelLoss::kMae;
};

struct EvalReport {
  double r = 0.0;
  double mel_loss = 0.0;
  double stop_accuracy = 0.0;
  std::vector<double> per_sample_r;
  std::map<std::string, double> position_similarity;  // by encoder mode

  bool operator==(const EvalReport&) const = default;
};

// Autoregressive evaluation generates exactly the reference frame count so
// the band geometry matches the reference; the stop head is scored on the
// same frames.
EvalReport evaluate(const model::AcousticModel& model,
                    std::span<const synth::SyntheticSample> samples,
                    const EvalOptions& options);

void write_report(std::ostream& os, const EvalReport& report);

// Checkpoint = parameters + Adam state + to_text(config).
void save_run(const std::filesystem::path& path, const TrainResult& run,
              const ExperimentConfig& config);
struct LoadedRun {
  ExperimentConfig config;
  model::AcousticModel model;
  AdamState adam;
};
LoadedRun load_run(const std::filesystem::path& path);

struct Arm {
  std::string name;
  bool use_dc;
  bool use_ln;
  bool use_pb;
};
// full, -DC, -LN, -PB, -DC-LN-PB
const std::vector<Arm>& ablation_arms();

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  double r = 0.0;
  double mel_loss = 0.0;
  double stop_acc = 0.0;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t threads = 1;
  std::filesystem::path log_dir;  // per-arm metric logs when non-empty
  std::size_t eval_samples = 0;   // 0: whole valid split
};

// Every arm x seed, trained on `data` and evaluated autoregressively on the
// valid split (window on exactly when the arm uses DC). Rows are ordered by
// arm, then seed, independent of thread count.
std::vector<AblationRow> ablate(const ExperimentConfig& base,
                                const synth::Dataset& data,
                                const AblationOptions& options);

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);
// Median r per arm, in arm order.
std::vector<std::pair<std::string, double>> median_r_by_arm(
    std::span<const AblationRow> rows);

}  // namespace atlab::train
