#include "atlab/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "atlab/checkpoint.hpp"
#include "atlab/config_io.hpp"
#include "atlab/errors.hpp"
#include "atlab/ops.hpp"

namespace atlab::train {
namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed) ^ a) ^ b);
}

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kValidStream = 3;

Tensor mel_term(const Tensor& pred, std::span<const double> truth,
                MelLoss kind) {
  const Tensor target = Tensor::from(pred.shape(),
                                     std::vector<double>(truth.begin(), truth.end()));
  return kind == MelLoss::kMae ? mean_abs_error(pred, target)
                               : mean_squared_error(pred, target);
}

// Ops already reject non-finite values; this puts the loss term in the message.
template <typename F>
Tensor named_term(const char* term, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(term) + " loss: " + e.what());
  }
}

double checked(const Tensor& t, const char* term) {
  const double v = t.item();
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + term + " loss");
  return v;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double frame_error(std::span<const double> pred, std::span<const double> truth,
                   MelLoss kind) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += kind == MelLoss::kMae ? std::abs(d) : d * d;
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace

std::string to_string(MelLoss kind) {
  return kind == MelLoss::kMae ? "mae" : "mse";
}

bool from_string(const std::string& text, MelLoss& out) {
  if (text == "mae") out = MelLoss::kMae;
  else if (text == "mse") out = MelLoss::kMse;
  else return false;
  return true;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train config: ") + what);
  };
  require(lambda_dc >= 0.0 && std::isfinite(lambda_dc), "lambda_dc must be >= 0");
  require(total_steps >= 1, "total_steps must be >= 1");
  require(warmup_steps >= 1, "warmup_steps must be >= 1");
  require(batch_frames >= 1, "batch_frames must be >= 1");
  require(lr_scale > 0.0, "lr_scale must be > 0");
  require(grad_clip >= 0.0, "grad_clip must be >= 0");
  require(stop_pos_weight > 0.0, "stop_pos_weight must be > 0");
  require(threads >= 1, "threads must be >= 1");
}

std::string to_text(const ExperimentConfig& config) {
  std::ostringstream os;
  config::write_section(os, "task", config.task);
  os << '\n';
  config::write_section(os, "model", config.model);
  os << '\n';
  config::write_section(os, "train", config.train);
  return os.str();
}

ExperimentConfig parse_experiment(const std::string& text) {
  ExperimentConfig c;
  for (const auto& [name, entries] : config::parse_document(text)) {
    if (name == "task") config::apply_section(entries, c.task, name);
    else if (name == "model") config::apply_section(entries, c.model, name);
    else if (name == "train") config::apply_section(entries, c.train, name);
    else if (name.empty() && entries.empty()) continue;
    else
      throw ConfigError(name.empty() ? "keys outside of any section"
                                     : "unknown section [" + name + "]");
  }
  c.task.validate();
  c.model.validate();
  c.train.validate();
  if (c.model.frame_dim != c.task.frame_dim)
    throw ConfigError("model.frame_dim must equal task.frame_dim");
  if (c.model.vocab_size < c.task.vocab_size)
    throw ConfigError("model.vocab_size smaller than task.vocab_size");
  if (c.model.num_speakers < c.task.num_speakers)
    throw ConfigError("model.num_speakers smaller than task.num_speakers");
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str());
}

model::ModelConfig effective_model_config(const ExperimentConfig& config) {
  model::ModelConfig m = config.model;
  if (!config.train.use_ln) m.encoder_input_mode = model::EncoderInputMode::kBaseline;
  m.prenet_bottleneck_enabled = config.train.use_pb;
  return m;
}

std::size_t resolve_bandwidth(const TrainConfig& config,
                              const std::vector<synth::SyntheticSample>& train) {
  if (config.bandwidth > 0) return config.bandwidth;
  if (train.empty()) throw ParameterError("cannot derive bandwidth: empty split");
  double frames = 0.0;
  for (const auto& s : train) frames += static_cast<double>(s.frame_count());
  const double mean_s = frames / static_cast<double>(train.size());
  return static_cast<std::size_t>(std::ceil(0.1 * mean_s));
}

std::vector<double> stop_targets(std::size_t frames) {
  std::vector<double> t(frames, 0.0);
  if (frames > 0) t.back() = 1.0;
  return t;
}

LossTerms total_loss(const Tensor& mel_pred, std::span<const double> mel_true,
                     const Tensor& stop_logits,
                     std::span<const double> stop_true,
                     std::span<const Tensor> attns, double lambda,
                     const alignment::DiagonalBand& band, MelLoss kind,
                     double pos_weight) {
  if (mel_pred.numel() != mel_true.size())
    throw ShapeError("total_loss: mel prediction and target sizes differ");
  if (stop_logits.numel() != stop_true.size())
    throw ShapeError("total_loss: stop logits and targets sizes differ");
  if (lambda < 0.0) throw ParameterError("total_loss: lambda must be >= 0");
  LossTerms out;
  const Tensor mel = named_term("mel", [&] { return mel_term(mel_pred, mel_true, kind); });
  const Tensor stop = named_term(
      "stop", [&] { return bce_with_logits(stop_logits, stop_true, pos_weight); });
  out.mel = checked(mel, "mel");
  out.stop = checked(stop, "stop");
  out.total = add(mel, stop);
  if (lambda > 0.0) {
    const Tensor dc = named_term(
        "diagonal", [&] { return alignment::diagonal_constraint_loss(attns, band); });
    out.dc = checked(dc, "diagonal");
    out.total = add(out.total, scale(dc, lambda));
  }
  checked(out.total, "total");
  return out;
}

alignment::AttentionMatrix average_attention(std::span<const Tensor> attns) {
  if (attns.empty()) throw ParameterError("average_attention: empty list");
  const std::size_t S = attns.front().dim(0), T = attns.front().dim(1);
  std::vector<double> acc(S * T, 0.0);
  for (const auto& a : attns) {
    if (a.dim(0) != S || a.dim(1) != T)
      throw ShapeError("average_attention: matrices differ in S x T");
    auto d = a.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
  }
  for (auto& v : acc) v /= static_cast<double>(attns.size());
  return alignment::AttentionMatrix(S, T, std::move(acc));
}

std::string to_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["mel_loss"] = m.mel_loss;
  j["stop_loss"] = m.stop_loss;
  j["dc_loss"] = m.dc_loss;
  j["r_valid"] = m.r_valid ? nlohmann::ordered_json(*m.r_valid) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

TrainResult train(const ExperimentConfig& config, const synth::Dataset& data) {
  const TrainConfig& tc = config.train;
  tc.validate();
  if (data.train.empty()) throw ParameterError("train: empty train split");
  if (!(data.config == config.task))
    throw ConfigError("train: dataset was generated from a different task config");

  TrainResult run{model::AcousticModel(effective_model_config(config), tc.seed),
                  {}, {}, resolve_bandwidth(tc, data.train)};
  auto& model = run.model;
  ParameterStore& params = model.params();
  run.adam = AdamState::for_params(params);
  const double lambda = tc.use_dc ? tc.lambda_dc : 0.0;

  std::ofstream log;
  if (!tc.log_path.empty()) {
    log.open(tc.log_path, std::ios::trunc);
    if (!log) throw LoadError("cannot open log " + tc.log_path);
  }

  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size(), epoch = 0;
  auto next_sample = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(derive(tc.seed, kShuffleStream, epoch++));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t n_valid = std::min(tc.valid_samples, data.valid.size());
  for (std::size_t step = 1; step <= tc.total_steps; ++step) {
    std::vector<std::size_t> batch;
    std::size_t frames = 0;
    while (frames < tc.batch_frames) {
      batch.push_back(next_sample());
      frames += data.train[batch.back()].frame_count();
    }

    // Per-sample graphs on private parameter copies, reduced in batch order.
    // Weighting by frame count reproduces a padded, length-masked batch.
    const std::size_t B = batch.size();
    std::vector<ParameterStore> grads(B);
    std::vector<LossTerms> terms(B);
    std::vector<std::exception_ptr> errors(B);
    const auto nb = static_cast<long>(B);
#pragma omp parallel for schedule(dynamic) num_threads(tc.threads) if (tc.threads > 1)
    for (long i = 0; i < nb; ++i) {
      try {
        const auto& s = data.train[batch[i]];
        ParameterStore local = params.clone(true);
        const auto out = model.forward(
            local, s.phonemes, s.frames, s.speaker,
            {true, derive(tc.seed, kDropoutStream, step * 4096 + i)});
        const auto band =
            alignment::DiagonalBand::for_lengths(run.bandwidth, s.frame_count(), s.tokens());
        LossTerms t = total_loss(out.mel, s.frames, out.stop_logits,
                                 stop_targets(s.frame_count()), out.attention,
                                 0.0, band, tc.mel_loss, tc.stop_pos_weight);
        const double w = static_cast<double>(s.frame_count()) /
                         static_cast<double>(frames);
        Tensor loss = scale(t.total, w);
        if (lambda > 0.0) {
          const Tensor dc = alignment::diagonal_constraint_loss(out.attention, band);
          t.dc = checked(dc, "diagonal");
          loss = add(loss, scale(dc, lambda / static_cast<double>(B)));
        }
        backward(loss);
        terms[i] = std::move(t);
        terms[i].total = Tensor();
        grads[i] = std::move(local);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (auto& e : errors) {
      if (!e) continue;
      try {
        std::rethrow_exception(e);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": " + err.what());
      }
    }

    params.zero_grad();
    auto& entries = params.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      auto dst = entries[p].value.mutable_grad();
      for (std::size_t i = 0; i < B; ++i) {
        const Tensor& src = grads[i].entries()[p].value;
        if (!src.has_grad()) continue;
        auto g = src.grad();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
      }
    }
    if (tc.grad_clip > 0.0) {
      const double norm = grad_norm(params);
      if (!std::isfinite(norm))
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": non-finite gradient norm");
      if (norm > tc.grad_clip) {
        const double f = tc.grad_clip / norm;
        for (auto& e : entries)
          for (double& g : e.value.mutable_grad()) g *= f;
      }
    }

    StepMetrics m;
    m.step = step;
    m.lr = tc.lr_scale * noam_lr(step, model.config().hidden_size, tc.warmup_steps);
    for (std::size_t i = 0; i < B; ++i) {
      const double w = static_cast<double>(data.train[batch[i]].frame_count()) /
                       static_cast<double>(frames);
      m.mel_loss += w * terms[i].mel;
      m.stop_loss += w * terms[i].stop;
      m.dc_loss += terms[i].dc / static_cast<double>(B);
    }
    adam_step(params, run.adam, m.lr);

    const bool last = step == tc.total_steps;
    if (n_valid > 0 && (last || (tc.valid_every > 0 && step % tc.valid_every == 0))) {
      EvalOptions vo;
      vo.teacher_forced = true;
      vo.bandwidth = run.bandwidth;
      vo.seed = derive(tc.seed, kValidStream);
      vo.max_samples = n_valid;
      vo.mel_loss = tc.mel_loss;
      m.r_valid = evaluate(model, data.valid, vo).r;
    }
    if (log) log << to_json_line(m) << '\n';
    run.history.push_back(m);
  }
  params.zero_grad();
  if (!tc.checkpoint_path.empty()) save_run(tc.checkpoint_path, run, config);
  return run;
}

EvalReport evaluate(const model::AcousticModel& model,
                    std::span<const synth::SyntheticSample> samples,
                    const EvalOptions& options) {
  const std::size_t n = options.max_samples == 0
                            ? samples.size()
                            : std::min(options.max_samples, samples.size());
  if (n == 0) throw ParameterError("evaluate: no samples");
  const auto& mc = model.config();

  EvalReport rep;
  rep.per_sample_r.assign(n, 0.0);
  std::vector<double> mel(n, 0.0), correct(n, 0.0), frames(n, 0.0);
  const model::EncoderInputMode modes[] = {model::EncoderInputMode::kBaseline,
                                           model::EncoderInputMode::kLearnableWeight,
                                           model::EncoderInputMode::kLayerNorm};
  std::vector<std::array<double, 3>> sim(n);
  std::vector<std::exception_ptr> errors(n);

  const auto nn = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < nn; ++i) {
    try {
      const auto& s = samples[i];
      const std::size_t S = s.frame_count(), T = s.tokens();
      const auto stop_true = stop_targets(S);
      const std::uint64_t seed = derive(options.seed, static_cast<std::uint64_t>(i));
      std::vector<double> stop_prob(S), pred;
      std::optional<alignment::AttentionMatrix> avg;
      if (options.teacher_forced) {
        const auto out = model.forward(s.phonemes, s.frames, s.speaker, {false, seed});
        avg = average_attention(out.attention);
        pred.assign(out.mel.data().begin(), out.mel.data().end());
        for (std::size_t f = 0; f < S; ++f)
          stop_prob[f] = 1.0 / (1.0 + std::exp(-out.stop_logits.at(f)));
      } else {
        model::InferenceOptions io;
        io.window_enabled = options.window_enabled;
        io.max_frames = S;
        io.ignore_stop = true;
        io.seed = seed;
        auto res = model.infer(s.phonemes, s.speaker, io);
        if (res.frames != S)
          throw NumericError("evaluate: generation stopped short");
        // Rows are renormalised: the averaged row sums to 1 only up to
        // rounding, and AttentionMatrix checks it.
        for (std::size_t f = 0; f < S; ++f) {
          double tot = 0.0;
          for (std::size_t t = 0; t < T; ++t) tot += res.mean_attention[f * T + t];
          for (std::size_t t = 0; t < T; ++t) res.mean_attention[f * T + t] /= tot;
        }
        avg.emplace(S, T, std::move(res.mean_attention));
        pred = std::move(res.mel);
        stop_prob = std::move(res.stop_probabilities);
      }
      rep.per_sample_r[i] = alignment::diagonal_rate(
          *avg, alignment::DiagonalBand::for_lengths(options.bandwidth, S, T));
      mel[i] = frame_error(pred, s.frames, options.mel_loss);
      for (std::size_t f = 0; f < S; ++f)
        correct[i] += ((stop_prob[f] > 0.5) == (stop_true[f] > 0.5)) ? 1.0 : 0.0;
      frames[i] = static_cast<double>(S);
      const Tensor p = model::positional_encoding(T, mc.hidden_size);
      for (std::size_t m = 0; m < 3; ++m)
        sim[i][m] = model::position_similarity(
            model.encoder_input_for(s.phonemes, modes[m]), p);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  rep.r = mean_of(rep.per_sample_r);
  rep.mel_loss = mean_of(mel);
  rep.stop_accuracy = std::accumulate(correct.begin(), correct.end(), 0.0) /
                      std::accumulate(frames.begin(), frames.end(), 0.0);
  for (std::size_t m = 0; m < 3; ++m) {
    double acc = 0.0;
    for (const auto& row : sim) acc += row[m];
    rep.position_similarity[model::to_string(modes[m])] =
        acc / static_cast<double>(n);
  }
  return rep;
}

void write_report(std::ostream& os, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["r"] = report.r;
  j["mel_loss"] = report.mel_loss;
  j["stop_accuracy"] = report.stop_accuracy;
  j["per_sample_r"] = report.per_sample_r;
  j["position_similarity"] = report.position_similarity;
  os << j.dump(2) << '\n';
}

void save_run(const std::filesystem::path& path, const TrainResult& run,
              const ExperimentConfig& config) {
  save_checkpoint(path, run.model.params(), run.adam, to_text(config));
}

LoadedRun load_run(const std::filesystem::path& path) {
  const CheckpointData data = load_checkpoint(path);
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment(data.config_text);
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint " + path.string() + " has a bad config: " + e.what());
  }
  LoadedRun out{cfg, model::AcousticModel(effective_model_config(cfg), cfg.train.seed),
                {}};
  restore(data, out.model.params(), out.adam);
  return out;
}

const std::vector<Arm>& ablation_arms() {
  static const std::vector<Arm> arms = {
      {"full", true, true, true},
      {"-DC", false, true, true},
      {"-LN", true, false, true},
      {"-PB", true, true, false},
      {"-DC-LN-PB", false, false, false},
  };
  return arms;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base,
                                const synth::Dataset& data,
                                const AblationOptions& options) {
  if (options.seeds.empty()) throw ParameterError("ablate: no seeds");
  const auto& arms = ablation_arms();
  const std::size_t jobs = arms.size() * options.seeds.size();
  std::vector<AblationRow> rows(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  if (!options.log_dir.empty()) std::filesystem::create_directories(options.log_dir);

  const auto nj = static_cast<long>(jobs);
  const int threads = static_cast<int>(std::max<std::size_t>(1, options.threads));
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (long j = 0; j < nj; ++j) {
    try {
      const Arm& arm = arms[j / options.seeds.size()];
      const std::uint64_t seed = options.seeds[j % options.seeds.size()];
      ExperimentConfig cfg = base;
      cfg.train.use_dc = arm.use_dc;
      cfg.train.use_ln = arm.use_ln;
      cfg.train.use_pb = arm.use_pb;
      cfg.train.seed = seed;
      cfg.train.checkpoint_path.clear();
      cfg.train.log_path =
          options.log_dir.empty()
              ? std::string()
              : (options.log_dir / (arm.name + "_seed" + std::to_string(seed) + ".jsonl"))
                    .string();
      const TrainResult run = train(cfg, data);
      EvalOptions eo;
      eo.teacher_forced = false;
      eo.window_enabled = arm.use_dc;
      eo.bandwidth = run.bandwidth;
      eo.seed = seed;
      eo.max_samples = options.eval_samples;
      eo.mel_loss = cfg.train.mel_loss;
      const EvalReport rep = evaluate(run.model, data.valid, eo);
      rows[j] = {arm.name, seed, rep.r, rep.mel_loss, rep.stop_accuracy};
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "arm,seed,r,mel_loss,stop_acc\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.17g\n", r.arm.c_str(),
                  static_cast<unsigned long long>(r.seed), r.r, r.mel_loss,
                  r.stop_acc);
    os << buf;
  }
}

std::vector<std::pair<std::string, double>> median_r_by_arm(
    std::span<const AblationRow> rows) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& arm : ablation_arms()) {
    std::vector<double> rs;
    for (const auto& r : rows)
      if (r.arm == arm.name) rs.push_back(r.r);
    if (rs.empty()) continue;
    std::sort(rs.begin(), rs.end());
    const std::size_t n = rs.size();
    out.emplace_back(arm.name,
                     n % 2 ? rs[n / 2] : 0.5 * (rs[n / 2 - 1] + rs[n / 2]));
  }
  return out;
}

}  // namespace atlab::train
