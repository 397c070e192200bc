#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "atlab/errors.hpp"
#include "atlab/trainer.hpp"
#include "support.hpp"

using namespace atlab;
using namespace atlab::train;
using testsupport::gradcheck;

namespace {

ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.task.train_size = 40;
  c.task.valid_size = 8;
  c.task.test_size = 8;
  c.model.num_layers = 1;
  c.model.hidden_size = 16;
  c.model.num_heads = 2;
  c.model.ffn_filter_size = 32;
  c.model.prenet_wide_size = 32;
  c.model.speaker_dim = 4;
  c.train.total_steps = 6;
  c.train.warmup_steps = 4;
  c.train.batch_frames = 64;
  c.train.valid_every = 3;
  c.train.valid_samples = 4;
  return c;
}

// Fraction of a uniform-row S x T matrix that falls inside the band,
// counted cell by cell in floating point.
double uniform_rate(std::size_t S, std::size_t T, std::size_t b) {
  const double k = static_cast<double>(S) / static_cast<double>(T);
  std::size_t in = 0;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < T; ++t)
      in += std::abs(static_cast<double>(s) - k * static_cast<double>(t)) <=
            static_cast<double>(b) + 1e-12;
  return static_cast<double>(in) / static_cast<double>(S * T);
}

std::vector<Tensor> one_hot_diagonal(std::size_t S, std::size_t T, std::size_t n) {
  std::vector<double> w(S * T, 0.0);
  for (std::size_t s = 0; s < S; ++s) w[s * T + s * T / S] = 1.0;
  return std::vector<Tensor>(n, Tensor::from({S, T}, w));
}

}  // namespace

TEST_CASE("total_loss with lambda 0 ignores attention") {
  std::mt19937_64 rng(5);
  const std::size_t S = 6, T = 3, F = 4;
  Tensor pred = testsupport::random_tensor({S, F}, rng);
  const auto truth = testsupport::random_weights(S * F, rng);
  Tensor logits = testsupport::random_tensor({S}, rng);
  const auto stop = stop_targets(S);
  const auto band = alignment::DiagonalBand::for_lengths(1, S, T);
  Tensor a1 = Tensor::from({S, T}, std::vector<double>(S * T, 1.0 / T), true);
  auto r2 = testsupport::random_attention(S, T, rng);
  std::vector<double> w2(r2.weights().begin(), r2.weights().end());
  Tensor a2 = Tensor::from({S, T}, w2, true);

  const auto l1 = total_loss(pred, truth, logits, stop, std::vector<Tensor>{a1}, 0.0, band);
  const auto l2 = total_loss(pred, truth, logits, stop, std::vector<Tensor>{a2}, 0.0, band);
  CHECK(l1.total.item() == l2.total.item());
  CHECK(l1.dc == 0.0);
  backward(l1.total);
  CHECK_FALSE(a1.has_grad());
}

TEST_CASE("perfect predictions with r = 1 give -lambda") {
  const std::size_t S = 8, T = 4, F = 3;
  std::vector<double> mel(S * F, 0.25);
  std::vector<double> logit(S, -60.0);
  logit.back() = 60.0;
  const auto attns = one_hot_diagonal(S, T, 3);
  const auto band = alignment::DiagonalBand::for_lengths(1, S, T);
  for (double lambda : {0.01, 0.5, 2.0}) {
    const auto l = total_loss(Tensor::from({S, F}, mel), mel, Tensor::from({S}, logit),
                              stop_targets(S), attns, lambda, band);
    CHECK(l.mel == 0.0);
    CHECK(l.stop < 1e-24);
    CHECK(l.dc == -1.0);
    CHECK(std::abs(l.total.item() + lambda) < 1e-15);
  }
}

TEST_CASE("lambda term gradient through attention logits") {
  std::mt19937_64 rng(11);
  const std::size_t S = 7, T = 4;
  std::vector<Tensor> leaves{testsupport::random_tensor({S, T}, rng),
                             testsupport::random_tensor({S, T}, rng)};
  const std::vector<double> mel(S * 2, 0.0);
  const auto stop = stop_targets(S);
  const auto band = alignment::DiagonalBand::for_lengths(1, S, T);
  auto f = [&] {
    std::vector<Tensor> attns{softmax_lastdim(leaves[0]), softmax_lastdim(leaves[1])};
    return total_loss(Tensor::from({S, 2}, mel), mel, Tensor::from({S}, std::vector<double>(S, 0.0)),
                      stop, attns, 0.7, band)
        .total;
  };
  CHECK(gradcheck(leaves, f) <= 1e-4);
}

TEST_CASE("total_loss errors") {
  const std::size_t S = 4, T = 2;
  std::vector<double> mel(S, 0.0);
  const auto band = alignment::DiagonalBand::for_lengths(0, S, T);
  const auto attns = one_hot_diagonal(S, T, 1);
  auto huge = mel;
  huge[2] = 1e300;  // squares to inf
  try {
    total_loss(Tensor::from({S, 1}, huge), mel, Tensor::from({S}, mel), stop_targets(S), attns,
               0.1, band, MelLoss::kMse);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("mel") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss(Tensor::from({S, 1}, mel), std::vector<double>(S + 1, 0.0),
                             Tensor::from({S}, mel), stop_targets(S), attns, 0.1, band),
                  ShapeError);
  CHECK_THROWS_AS(total_loss(Tensor::from({S, 1}, mel), mel, Tensor::from({S}, mel),
                             stop_targets(S), attns, -1.0, band),
                  ParameterError);
}

TEST_CASE("stop targets and averaged attention") {
  const auto st = stop_targets(4);
  CHECK(st == std::vector<double>{0, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor b = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  const auto m = average_attention(std::vector<Tensor>{a, b});
  CHECK(m(0, 0) == 0.75);
  CHECK(m(0, 1) == 0.25);
  CHECK(m(1, 1) == 0.75);
}

TEST_CASE("experiment config text round trip and rejection") {
  ExperimentConfig c = small_experiment();
  c.train.lambda_dc = 0.02;
  c.train.mel_loss = MelLoss::kMse;
  c.train.use_pb = false;
  c.train.log_path = "runs/x.jsonl";
  c.model.encoder_input_mode = model::EncoderInputMode::kLearnableWeight;
  CHECK(parse_experiment(to_text(c)) == c);
  CHECK(parse_experiment("") == ExperimentConfig{});
  CHECK_THROWS_AS(parse_experiment("[train]\nlamda_dc = 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("[optim]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("[train]\nlambda_dc = -0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("[train]\ntotal_steps = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("[train]\nmel_loss = huber\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("[model]\nframe_dim = 80\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment("/nonexistent/x.cfg"), LoadError);
}

TEST_CASE("ablation flags map onto the model config") {
  ExperimentConfig c;
  auto m = effective_model_config(c);
  CHECK(m.encoder_input_mode == model::EncoderInputMode::kLayerNorm);
  CHECK(m.prenet_bottleneck_enabled);
  c.train.use_ln = false;
  c.train.use_pb = false;
  m = effective_model_config(c);
  CHECK(m.encoder_input_mode == model::EncoderInputMode::kBaseline);
  CHECK_FALSE(m.prenet_bottleneck_enabled);
  CHECK(m.prenet_widths() == std::vector<std::size_t>{16, 256, 256, 32});

  const auto& arms = ablation_arms();
  REQUIRE(arms.size() == 5);
  CHECK(arms[0].name == "full");
  CHECK(arms[1].name == "-DC");
  CHECK(arms[2].name == "-LN");
  CHECK(arms[3].name == "-PB");
  CHECK(arms[4].name == "-DC-LN-PB");
  // full and -DC differ only in the DC flag.
  CHECK((arms[0].use_ln == arms[1].use_ln && arms[0].use_pb == arms[1].use_pb));
  CHECK(arms[0].use_dc != arms[1].use_dc);
  CHECK((!arms[4].use_dc && !arms[4].use_ln && !arms[4].use_pb));
}

TEST_CASE("bandwidth default scales with mean S") {
  const auto data = synth::make_dataset(small_experiment().task);
  double total = 0;
  for (const auto& s : data.train) total += static_cast<double>(s.frame_count());
  const auto expect = static_cast<std::size_t>(std::ceil(0.1 * total / data.train.size()));
  TrainConfig tc;
  CHECK(resolve_bandwidth(tc, data.train) == expect);
  tc.bandwidth = 50;
  CHECK(resolve_bandwidth(tc, data.train) == 50);
}

TEST_CASE("training is deterministic, thread-count independent and logs") {
  auto cfg = small_experiment();
  const auto data = synth::make_dataset(cfg.task);
  const auto dir = std::filesystem::temp_directory_path() / "atlab_test_trainer";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  cfg.train.log_path = (dir / "log.jsonl").string();

  const auto a = atlab::train::train(cfg, data);
  cfg.train.log_path.clear();
  const auto b = atlab::train::train(cfg, data);
  cfg.train.threads = 3;
  const auto c = atlab::train::train(cfg, data);
  REQUIRE(a.history.size() == 6);
  CHECK(a.history == b.history);
  CHECK(a.history == c.history);
  for (std::size_t p = 0; p < a.model.params().entries().size(); ++p) {
    const auto x = a.model.params().entries()[p].value.data();
    const auto y = c.model.params().entries()[p].value.data();
    REQUIRE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }

  for (const auto& m : a.history) {
    CHECK(std::isfinite(m.mel_loss));
    CHECK(std::isfinite(m.stop_loss));
    CHECK(m.dc_loss <= 0.0);
    CHECK(m.lr > 0.0);
  }
  CHECK(a.history[2].r_valid.has_value());
  CHECK_FALSE(a.history[3].r_valid.has_value());
  CHECK(a.history[5].r_valid.has_value());

  std::ifstream log(dir / "log.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "lr", "mel_loss", "stop_loss", "dc_loss", "r_valid"})
      CHECK(j.contains(k));
    CHECK(j["step"].get<std::size_t>() == ++n);
    CHECK(j["mel_loss"].get<double>() == a.history[n - 1].mel_loss);
  }
  CHECK(n == 6);

  auto other = small_experiment();
  other.train.seed = 2;
  CHECK_FALSE(atlab::train::train(other, data).history == a.history);
  std::filesystem::remove_all(dir);
}

TEST_CASE("DC off means lambda is 0") {
  auto cfg = small_experiment();
  const auto data = synth::make_dataset(cfg.task);
  cfg.train.use_dc = false;
  const auto off = atlab::train::train(cfg, data);
  for (const auto& m : off.history) CHECK(m.dc_loss == 0.0);
  cfg.train.use_dc = true;
  cfg.train.lambda_dc = 0.0;
  const auto zero = atlab::train::train(cfg, data);
  CHECK(off.history == zero.history);
  cfg.train.lambda_dc = 0.5;
  const auto on = atlab::train::train(cfg, data);
  CHECK(on.history[0].mel_loss == off.history[0].mel_loss);
  CHECK(on.history[0].dc_loss < 0.0);
  CHECK_FALSE(on.history.back().mel_loss == off.history.back().mel_loss);
}

TEST_CASE("train startup and divergence errors") {
  auto cfg = small_experiment();
  auto data = synth::make_dataset(cfg.task);
  auto wrong = cfg;
  wrong.task.seed += 1;
  CHECK_THROWS_AS(atlab::train::train(wrong, data), ConfigError);
  auto bad = cfg;
  bad.train.total_steps = 0;
  CHECK_THROWS_AS(atlab::train::train(bad, data), ConfigError);
  for (auto& s : data.train) s.frames[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    atlab::train::train(cfg, data);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip reproduces the report") {
  auto cfg = small_experiment();
  const auto data = synth::make_dataset(cfg.task);
  const auto run = atlab::train::train(cfg, data);
  const auto path = std::filesystem::temp_directory_path() / "atlab_test_run.ckpt";
  save_run(path, run, cfg);
  const LoadedRun back = load_run(path);
  CHECK(back.config == cfg);
  const auto& pa = run.model.params().entries();
  const auto& pb = back.model.params().entries();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    const auto x = pa[i].value.data(), y = pb[i].value.data();
    REQUIRE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
  CHECK(back.adam.step == run.adam.step);

  for (bool tf : {true, false}) {
    EvalOptions eo;
    eo.teacher_forced = tf;
    eo.bandwidth = run.bandwidth;
    eo.seed = 9;
    const auto r1 = evaluate(run.model, data.valid, eo);
    const auto r2 = evaluate(back.model, data.valid, eo);
    CHECK(r1 == r2);
    CHECK(r1.per_sample_r.size() == data.valid.size());
    CHECK(r1.r >= 0.0);
    CHECK(r1.r <= 1.0);
  }

  // A checkpoint whose parameter set does not match its config.
  auto other = cfg;
  other.model.hidden_size = 8;
  other.model.num_heads = 1;
  TrainResult fake{model::AcousticModel(effective_model_config(cfg), 1), {}, {}, 1};
  fake.adam = AdamState::for_params(fake.model.params());
  save_run(path, fake, other);
  CHECK_THROWS_AS(load_run(path), LoadError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_run(path), LoadError);
}

TEST_CASE("untrained model sits near the uniform-attention baseline") {
  ExperimentConfig cfg;
  cfg.task.valid_size = 40;
  const auto data = synth::make_dataset(cfg.task);
  const model::AcousticModel m(effective_model_config(cfg), 3);
  const std::size_t b = 2;
  double expect = 0.0;
  for (const auto& s : data.valid) expect += uniform_rate(s.frame_count(), s.tokens(), b);
  expect /= static_cast<double>(data.valid.size());
  for (bool tf : {true, false}) {
    EvalOptions eo;
    eo.teacher_forced = tf;
    eo.window_enabled = false;
    eo.bandwidth = b;
    const auto rep = evaluate(m, data.valid, eo);
    MESSAGE("tf=" << tf << " r=" << rep.r << " uniform=" << expect);
    CHECK(std::abs(rep.r - expect) < 0.05);
  }
}

TEST_CASE("evaluation report contents") {
  ExperimentConfig cfg = small_experiment();
  const auto data = synth::make_dataset(cfg.task);
  const model::AcousticModel m(effective_model_config(cfg), 1);
  EvalOptions eo;
  eo.max_samples = 3;
  const auto rep = evaluate(m, data.valid, eo);
  CHECK(rep.per_sample_r.size() == 3);
  REQUIRE(rep.position_similarity.size() == 3);
  for (const char* k : {"baseline", "learnable_weight", "layer_norm"}) {
    REQUIRE(rep.position_similarity.count(k) == 1);
    CHECK(rep.position_similarity.at(k) >= -1.0);
    CHECK(rep.position_similarity.at(k) <= 1.0);
  }
  CHECK(rep.stop_accuracy >= 0.0);
  CHECK(rep.stop_accuracy <= 1.0);
  std::ostringstream os;
  write_report(os, rep);
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j["per_sample_r"].size() == 3);
  CHECK(j["r"].get<double>() == rep.r);
  CHECK_THROWS_AS(evaluate(m, std::span<const synth::SyntheticSample>{}, eo), ParameterError);
}

TEST_CASE("ablation table") {
  auto cfg = small_experiment();
  cfg.train.total_steps = 2;
  cfg.train.valid_samples = 0;
  const auto data = synth::make_dataset(cfg.task);
  AblationOptions opt;
  opt.seeds = {4, 7};
  opt.eval_samples = 2;
  const auto rows = ablate(cfg, data, opt);
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].arm == ablation_arms()[i / 2].name);
    CHECK(rows[i].seed == opt.seeds[i % 2]);
    CHECK(rows[i].r >= 0.0);
    CHECK(rows[i].r <= 1.0);
  }
  opt.threads = 4;
  const auto again = ablate(cfg, data, opt);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].r == rows[i].r);
    CHECK(again[i].mel_loss == rows[i].mel_loss);
  }

  std::ostringstream os;
  write_ablation_csv(os, rows);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "arm,seed,r,mel_loss,stop_acc");
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    CHECK(line.substr(0, c1) == rows[n].arm);
    CHECK(std::stod(line.substr(c2 + 1, c3 - c2 - 1)) == rows[n].r);
    ++n;
  }
  CHECK(n == rows.size());
}

TEST_CASE("median per arm") {
  std::vector<AblationRow> rows = {
      {"full", 1, 0.5, 0, 0}, {"full", 2, 0.9, 0, 0}, {"full", 3, 0.7, 0, 0},
      {"-DC", 1, 0.2, 0, 0},  {"-DC", 2, 0.4, 0, 0},
  };
  const auto med = median_r_by_arm(rows);
  REQUIRE(med.size() == 2);
  CHECK(med[0].first == "full");
  CHECK(med[0].second == 0.7);
  CHECK(med[1].first == "-DC");
  CHECK(std::abs(med[1].second - 0.3) < 1e-15);
}
