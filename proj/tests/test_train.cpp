#include "mmer/checkpoint.hpp"
#include "mmer/config.hpp"
#include "mmer/loss.hpp"
#include "mmer/synth.hpp"
#include "mmer/train.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace mmer;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.synth.steps = 40;
  cfg.synth.train_samples = 3;
  cfg.synth.val_samples = 2;
  cfg.synth.test_samples = 2;
  cfg.model.d_model = 8;
  cfg.model.encoder_heads = 2;
  cfg.model.encoder_layers = 1;
  cfg.model.tcn_layers = 2;
  cfg.model.tcn_kernel = 3;
  cfg.model.ffn_width = 16;
  cfg.model.ern_hidden = 8;
  cfg.model.mask_length = 5;
  cfg.model.max_steps = 40;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = 3;
  cfg.train.learning_rate = 1e-3;
  cfg.train.segment_length = 20;
  cfg.train.segment_hop = 10;
  cfg.train.seeds = {0, 1};
  return cfg;
}

const DatasetSplits& tiny_data() {
  static const DatasetSplits data = synth_generate(tiny_run().synth);
  return data;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

TEST_CASE("adam with zero gradient") {
  Tensor w = Tensor::from_matrix(RowMatrix::Constant(1, 3, 0.5));
  AdamMoments moments;
  adam_step(w, RowMatrix::Zero(1, 3), moments, 1, {}, "w");
  CHECK(w.value() == RowMatrix::Constant(1, 3, 0.5));

  moments.first = RowMatrix::Constant(1, 3, 0.2);
  moments.second = RowMatrix::Constant(1, 3, 0.4);
  AdamConfig cfg;
  cfg.learning_rate = 0.0;
  adam_step(w, RowMatrix::Zero(1, 3), moments, 2, cfg, "w");
  CHECK(moments.first(0, 0) == doctest::Approx(0.2 * 0.9));
  CHECK(moments.second(0, 0) == doctest::Approx(0.4 * 0.999));
}

TEST_CASE("adam first step moves each entry by about lr") {
  Tensor w = Tensor::from_matrix(RowMatrix::Zero(1, 4));
  RowMatrix g(1, 4);
  g << 3.0, -0.01, 250.0, -7.0;
  AdamMoments moments;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(w, g, moments, 1, cfg, "w");
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(w.value()(0, j)) == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(w.value()(0, 0) < 0.0);
  CHECK(w.value()(0, 1) > 0.0);
}

TEST_CASE("adam minimises a scalar quadratic") {
  Tensor w = Tensor::from_matrix(RowMatrix::Zero(1, 1));
  AdamMoments moments;
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  for (Index t = 1; t <= 100; ++t) {
    RowMatrix g(1, 1);
    g(0, 0) = 2.0 * (w.value()(0, 0) - 3.0);
    adam_step(w, g, moments, t, cfg, "w");
  }
  // scalar Python simulation of the same update
  CHECK(w.value()(0, 0) == doctest::Approx(2.9806554375278123).epsilon(1e-12));
  CHECK(std::abs(w.value()(0, 0) - 3.0) < 0.05);
}

TEST_CASE("adam rejects non-finite gradients by name") {
  Tensor w = Tensor::from_matrix(RowMatrix::Zero(1, 2));
  AdamMoments moments;
  RowMatrix g(1, 2);
  g << 1.0, std::nan("");
  try {
    adam_step(w, g, moments, 1, {}, "decoder0.ffn.expand.weight");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("decoder0.ffn.expand.weight") != std::string::npos);
  }
}

TEST_CASE("adam optimiser treats missing gradients as zero and clears gradients") {
  Tensor a = Tensor::from_matrix(RowMatrix::Ones(1, 2));
  Tensor b = Tensor::from_matrix(RowMatrix::Ones(1, 2));
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Adam adam({{"a", a}, {"b", b}}, {});
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(mul(a, a)), tape);
  }
  adam.step();
  CHECK(adam.steps() == 1);
  CHECK(a.value()(0, 0) < 1.0);
  CHECK(b.value() == RowMatrix::Ones(1, 2));
  CHECK_FALSE(a.has_grad());
}

// ---------------------------------------------------------------------------
// Scheduling

TEST_CASE("scheduler with steady improvement never halves or stops") {
  PlateauScheduler s(5, 15);
  for (int e = 0; e < 40; ++e) CHECK(s.update(0.01 * e) == ScheduleDecision::Continue);
}

TEST_CASE("scheduler with a frozen metric halves at 5 and 10 and stops at 15") {
  PlateauScheduler s(5, 15);
  std::vector<int> halves;
  int stop = -1;
  for (int epoch = 0; epoch < 30 && stop < 0; ++epoch) {
    const auto d = s.update(0.5);
    if (d == ScheduleDecision::HalveLr) halves.push_back(epoch);
    if (d == ScheduleDecision::Stop) stop = epoch;
  }
  CHECK(halves == std::vector<int>{5, 10});
  CHECK(stop == 15);
}

TEST_CASE("scheduler counters reset on improvement") {
  PlateauScheduler s(5, 15);
  s.update(0.5);
  for (int i = 0; i < 4; ++i) CHECK(s.update(0.5) == ScheduleDecision::Continue);
  CHECK(s.update(0.6) == ScheduleDecision::Continue);
  CHECK(s.improved());
  for (int i = 0; i < 4; ++i) CHECK(s.update(0.6) == ScheduleDecision::Continue);
  CHECK(s.update(0.6) == ScheduleDecision::HalveLr);
  CHECK(s.best() == 0.6);
}

// ---------------------------------------------------------------------------
// Config

TEST_CASE("default config carries the published hyper-parameters") {
  const RunConfig cfg;
  CHECK(cfg.model.d_model == 64);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.learning_rate == 1e-4);
  CHECK(cfg.model.mask_length == 100);
  CHECK(cfg.train.seeds.size() == 30);
  const std::string text = to_text(cfg);
  CHECK(text.find("model.d_model = 64\n") != std::string::npos);
  CHECK(text.find("train.batch_size = 64\n") != std::string::npos);
  CHECK(text.find("train.learning_rate = 1e-04\n") != std::string::npos);
  CHECK(text.find("model.mask_length = 100\n") != std::string::npos);
}

TEST_CASE("config text round trip") {
  RunConfig cfg = tiny_run();
  cfg.train.elimination = {{{"video", 0.25}}};
  cfg.synth.modalities[0].snr = 0.75;
  const std::string text = to_text(cfg);
  CHECK(to_text(parse_config(text)) == text);
}

TEST_CASE("config parsing") {
  const RunConfig cfg = parse_config(
      "# comment\n"
      "model.d_model = 16\n"
      "target = valence\n"
      "train.seeds = 0-3, 9\n"
      "train.eliminate = audio:0.333, video:0.333\n");
  CHECK(cfg.model.d_model == 16);
  CHECK(cfg.model.target == "valence");
  CHECK(cfg.synth.target == "valence");
  CHECK(cfg.train.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 9});
  CHECK(cfg.train.elimination.entries.size() == 2);

  const auto error_for = [](const std::string& text) -> std::string {
    try {
      parse_config(text, "x.conf");
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(error_for("model.d_model = 16\nmodel.colour = red\n").find("x.conf:2") != std::string::npos);
  CHECK(error_for("model.d_model = 16\nmodel.d_model = 8\n").find("x.conf:2") != std::string::npos);
  CHECK(error_for("model.d_model = sixteen\n").find("x.conf:1") != std::string::npos);
  CHECK_FALSE(error_for("train.seeds = 1, 2, 1\n").empty());
  CHECK_FALSE(error_for("train.eliminate = smell:0.2\n").empty());
  CHECK_FALSE(error_for("model.encoder_heads = 3\n").empty());
  CHECK_FALSE(error_for("just words\n").empty());
  CHECK_THROWS_AS(parse_seed_list("3-1"), ConfigError);
  CHECK(parse_seed_list("4") == std::vector<std::uint64_t>{4});
}

TEST_CASE("missing config file names its path") {
  try {
    load_config("/nonexistent/run.conf");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run.conf") != std::string::npos);
  }
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"default.conf", "tiny.conf", "desk.conf", "valence.conf", "overfit.conf", "heldout.conf"}) {
    INFO(name);
    CHECK_NOTHROW(load_config(fs::path(MMER_SOURCE_DIR) / "configs" / name));
  }
  const RunConfig def = load_config(fs::path(MMER_SOURCE_DIR) / "configs" / "default.conf");
  CHECK(to_text(def).find("train.eliminate = video:0.25\n") != std::string::npos);
}

// ---------------------------------------------------------------------------
// Training

TEST_CASE("training is deterministic per seed and keeps the best epoch") {
  const RunConfig cfg = tiny_run();
  const TrainResult a = train_run(cfg.model, cfg.train, tiny_data(), 4, {});
  const TrainResult b = train_run(cfg.model, cfg.train, tiny_data(), 4, {});
  CHECK(to_json(a.history).dump() == to_json(b.history).dump());
  const auto pa = a.model.parameters();
  const auto pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.value() == pb[i].tensor.value());

  REQUIRE(a.history.epochs.size() == 3);
  double lr = cfg.train.learning_rate;
  for (const auto& e : a.history.epochs) {
    CHECK(a.history.best_val_ccc >= e.val_ccc);
    CHECK(e.learning_rate <= lr);
    lr = e.learning_rate;
    CHECK(e.availability.size() == 1);
    CHECK(e.availability.count("all") == 1);
  }
  const EvalResult val = evaluate(a.model, tiny_data().val, {});
  CHECK(val.ccc == doctest::Approx(a.history.best_val_ccc).epsilon(1e-12));

  const TrainResult c = train_run(cfg.model, cfg.train, tiny_data(), 5, {});
  CHECK(to_json(a.history).dump() != to_json(c.history).dump());
}

TEST_CASE("zero elimination probability matches standard training") {
  const RunConfig cfg = tiny_run();
  const TrainResult standard = train_run(cfg.model, cfg.train, tiny_data(), 2, {}, "standard");
  const TrainResult zero = train_run(cfg.model, cfg.train, tiny_data(), 2, {{{"video", 0.0}}}, "standard");
  CHECK(to_json(standard.history).dump() == to_json(zero.history).dump());
}

TEST_CASE("optimized training tallies eliminated batches") {
  RunConfig cfg = tiny_run();
  cfg.train.batch_size = 1;
  const TrainResult run = train_run(cfg.model, cfg.train, tiny_data(), 3, {{{"video", 0.5}}}, "optimized");
  Index all = 0, eliminated = 0;
  for (const auto& e : run.history.epochs) {
    for (const auto& [label, count] : e.availability) {
      CHECK((label == "all" || label == "-video"));
      (label == "all" ? all : eliminated) += count;
    }
  }
  CHECK(all > 0);
  CHECK(eliminated > 0);
  CHECK(run.history.variant == "optimized");
}

TEST_CASE("training loss decreases on a fixed batch") {
  RunConfig cfg = tiny_run();
  cfg.model.dropout = 0.0;
  Rng rng(3);
  Model model = Model::init(cfg.model, rng);
  Dataset train = tiny_data().train;
  apply_normalization(train, compute_normalization(train));
  const auto segs = segment(train.samples[0], 0, 20, 10);
  const Batch batch = make_batch(train, segs);
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = 1e-2;
  Adam adam(model.parameters(), adam_cfg);
  std::vector<double> losses;
  for (int step = 0; step < 10; ++step) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ccc_loss(model_forward(model, batch, batch.available, {}), batch.labels);
    losses.push_back(loss.item());
    backward(loss, tape);
    adam.step();
  }
  CHECK(losses.back() < losses.front());
}

TEST_CASE("run history json round trip") {
  const RunConfig cfg = tiny_run();
  const TrainResult run = train_run(cfg.model, cfg.train, tiny_data(), 1, {});
  const Json j = to_json(run.history);
  CHECK(j["schema"] == "mmer.run_history/1");
  CHECK(to_json(run_history_from_json(j)).dump() == j.dump());
}

TEST_CASE("evaluation contracts") {
  const RunConfig cfg = tiny_run();
  const TrainResult run = train_run(cfg.model, cfg.train, tiny_data(), 1, {});
  CHECK_THROWS_AS(evaluate(run.model, tiny_data().test, {0, 1, 2}), ConfigError);
  const EvalResult two = evaluate(run.model, tiny_data().test, {1});
  CHECK(two.missing == std::vector<std::string>{"video"});
  CHECK(two.traces.size() == 2);

  Dataset reversed = tiny_data().test;
  std::reverse(reversed.samples.begin(), reversed.samples.end());
  const EvalResult a = evaluate(run.model, tiny_data().test, {});
  const EvalResult b = evaluate(run.model, reversed, {});
  CHECK(a.ccc == b.ccc);
  CHECK(a.rmse == b.rmse);
  CHECK(a.traces.front().sample_id == b.traces.front().sample_id);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST_CASE("checkpoint round trip is bit exact") {
  RunConfig cfg = tiny_run();
  const TrainResult run = train_run(cfg.model, cfg.train, tiny_data(), 6, {});
  const fs::path dir = testing::scratch_dir("checkpoint");
  save_checkpoint(dir / "a.ckpt", cfg, run.model);
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.config, loaded.model);
  CHECK(testing::read_file(dir / "a.ckpt") == testing::read_file(dir / "b.ckpt"));
  CHECK(to_text(loaded.config) == to_text(cfg));
  const auto pa = run.model.parameters();
  const auto pb = loaded.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.value() == pb[i].tensor.value());
  CHECK(evaluate(run.model, tiny_data().test, {}).ccc == evaluate(loaded.model, tiny_data().test, {}).ccc);

  const std::string bytes = testing::read_file(dir / "a.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
  std::ofstream(dir / "long.ckpt", std::ios::binary) << bytes << "x";
  CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), CheckpointError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "NOTACKPT" << bytes.substr(8);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), CheckpointError);
}

// ---------------------------------------------------------------------------
// Experiments

TEST_CASE("experiment annotation and table rendering") {
  ExperimentReport report;
  report.target = "arousal";
  report.seeds = {0, 1, 2, 3};
  report.modalities = {"audio", "video"};
  const auto cond = [](const std::string& name, std::vector<double> ccc, std::vector<double> rmse) {
    return ConditionResult{name, std::move(ccc), std::move(rmse)};
  };
  report.variants = {
      {"standard",
       {cond("all", {0.50, 0.52, 0.51, 0.49}, {0.30, 0.31, 0.29, 0.30}),
        cond("missing_audio", {0.50, 0.51, 0.52, 0.49}, {0.30, 0.30, 0.31, 0.29}),
        cond("missing_video", {0.20, 0.22, 0.21, 0.19}, {0.40, 0.41, 0.42, 0.40})}},
      {"optimized",
       {cond("all", {0.50, 0.52, 0.51, 0.49}, {0.30, 0.31, 0.29, 0.30}),
        cond("missing_audio", {0.50, 0.51, 0.52, 0.49}, {0.30, 0.30, 0.31, 0.29}),
        cond("missing_video", {0.40, 0.42, 0.41, 0.39}, {0.33, 0.34, 0.32, 0.33})}}};
  annotate_experiment(report);

  const auto* drop = report.find_test("robustness", "standard", "missing_video", "ccc");
  REQUIRE(drop != nullptr);
  CHECK(drop->reject);
  CHECK(drop->alternative == "two-sided");
  const auto* flat = report.find_test("robustness", "standard", "missing_audio", "ccc");
  REQUIRE(flat != nullptr);
  CHECK_FALSE(flat->reject);
  const auto* gain = report.find_test("improvement", "optimized", "missing_video", "ccc");
  REQUIRE(gain != nullptr);
  CHECK(gain->reject);
  CHECK(gain->alternative == "greater");
  const auto* rmse_gain = report.find_test("improvement", "optimized", "missing_video", "rmse");
  REQUIRE(rmse_gain != nullptr);
  CHECK(rmse_gain->reject);
  const auto* same = report.find_test("improvement", "optimized", "all", "ccc");
  REQUIRE(same != nullptr);
  CHECK_FALSE(same->reject);
  CHECK(same->p == doctest::Approx(0.5));

  const std::string table = render_table(report);
  CHECK(table.find("0.5050 (0.0129)") != std::string::npos);
  CHECK(table.find("0.4050 (0.0129) ‡") != std::string::npos);
  CHECK(table.find("0.5050 (0.0129) ✓") != std::string::npos);

  const Json j = to_json(report);
  CHECK(j["schema"] == "mmer.experiment/1");
}

TEST_CASE("identical variants reject nothing") {
  ExperimentReport report;
  report.seeds = {0, 1, 2};
  report.modalities = {"audio", "video"};
  const ConditionResult all{"all", {0.5, 0.6, 0.55}, {0.3, 0.2, 0.25}};
  const ConditionResult ma{"missing_audio", {0.45, 0.62, 0.5}, {0.31, 0.2, 0.27}};
  const ConditionResult mv{"missing_video", {0.52, 0.58, 0.51}, {0.29, 0.21, 0.26}};
  report.variants = {{"standard", {all, ma, mv}}, {"optimized", {all, ma, mv}}};
  annotate_experiment(report);
  for (const auto& t : report.tests) {
    if (t.family == "improvement") CHECK_FALSE(t.reject);
  }
}

TEST_CASE("ablation and experiment argument contracts") {
  RunConfig cfg = tiny_run();
  CHECK_THROWS_AS(identify_important(cfg.model, cfg.train, tiny_data(), {1}), ConfigError);
  CHECK_THROWS_AS(identify_important(cfg.model, cfg.train, tiny_data(), {1, 1}), ConfigError);
  CHECK_THROWS_AS(multi_seed_experiment(cfg.model, cfg.train, tiny_data(), {1}), ConfigError);
  CHECK_THROWS_AS(multi_seed_experiment(cfg.model, cfg.train, tiny_data(), {1, 2}), ConfigError);

  ModelConfig single = cfg.model;
  single.modalities = {{"video", 6}};
  const AblationReport empty = identify_important(single, cfg.train, tiny_data(), {0, 1});
  CHECK(empty.important.empty());
  CHECK(empty.p_values.empty());
}
