// mmer: synthetic data generation, training, evaluation, ablation,
// multi-seed experiments and prediction traces.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include "mmer/checkpoint.hpp"
#include "mmer/config.hpp"
#include "mmer/metrics.hpp"
#include "mmer/synth.hpp"
#include "mmer/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#ifndef MMER_VERSION
#define MMER_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace mmer;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

Json config_json(const RunConfig& config) {
  Json j = Json::object();
  const std::string text = to_text(config);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = text.substr(pos, nl - pos);
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
    pos = nl + 1;
  }
  return j;
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& config,
                    const std::vector<std::uint64_t>& seeds, const Json& inputs, const Json& outputs) {
  Json m;
  m["schema"] = "mmer.manifest/1";
  m["command"] = command;
  m["tool_version"] = MMER_VERSION;
  m["started_at"] = utc_now();
  m["seeds"] = seeds;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["config"] = config_json(config);
  write_json(path, m);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

RunConfig read_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_config(path);
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed, bool force) {
  RunConfig config = read_config(config_path);
  if (seed) config.synth.seed = *seed;
  config.validate();
  prepare_out_dir(out_dir, force);
  write_manifest(fs::path(out_dir) / "manifest.json", "synth", config, {config.synth.seed}, {{"config", config_path}},
                 {{"data", out_dir}});
  const DatasetSplits splits = synth_generate(config.synth);
  write_splits(out_dir, splits);
  std::cout << "train " << splits.train.samples.size() << "\n";
  std::cout << "val " << splits.val.samples.size() << "\n";
  std::cout << "test " << splits.test.samples.size() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir, std::uint64_t seed,
              const std::string& variant, bool force) {
  RunConfig config = read_config(config_path);
  if (variant != "standard" && variant != "optimized") throw UsageError("variant must be standard or optimized");
  if (variant == "optimized" && config.train.elimination.empty()) {
    throw ConfigError("the optimized variant needs train.eliminate entries");
  }
  prepare_out_dir(out_dir, force);
  const fs::path out(out_dir);
  write_manifest(out / "manifest.json", "train", config, {seed},
                 {{"config", config_path}, {"data", data_dir}, {"variant", variant}},
                 {{"checkpoint", (out / "best.ckpt").string()}, {"history", (out / "history.json").string()}});
  const DatasetSplits data = load_splits(data_dir, config.model.modalities);
  const EliminationPolicy policy = variant == "optimized" ? config.train.elimination : EliminationPolicy{};
  TrainResult result = train_run(config.model, config.train, data, seed, policy, variant, [](const EpochRecord& e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %ld loss %.4f val_ccc %.4f val_rmse %.4f lr %g %s", static_cast<long>(e.epoch),
                  e.train_loss, e.val_ccc, e.val_rmse, e.learning_rate, to_string(e.decision));
    log_line(line);
  });
  result.history.checkpoint = "best.ckpt";
  save_checkpoint(out / "best.ckpt", config, result.model);
  write_json(out / "history.json", to_json(result.history));
  std::cout << "best epoch " << result.history.best_epoch << " val_ccc " << result.history.best_val_ccc << "\n";
  return 0;
}

const Dataset& pick_split(const DatasetSplits& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  if (split == "test") return data.test;
  throw UsageError("split must be train, val or test");
}

ModalitySet resolve_missing(const std::string& missing, const ModelConfig& cfg) {
  ModalitySet set = parse_modality_list(missing, cfg.modalities);
  if (set.size() >= cfg.modalities.size()) throw ConfigError("at least one modality is required");
  return set;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split, const std::string& missing,
             const std::string& out_path) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const ModalitySet miss = resolve_missing(missing, ck.config.model);
  if (split != "train" && split != "val" && split != "test") throw UsageError("split must be train, val or test");
  if (!out_path.empty()) {
    write_manifest(out_path + ".manifest.json", "eval", ck.config, {},
                   {{"checkpoint", checkpoint}, {"data", data_dir}, {"split", split}, {"missing", missing}},
                   {{"report", out_path}});
  }
  const Dataset data = load_dataset(data_dir, split, ck.config.model.modalities);
  const EvalResult r = evaluate(ck.model, data, miss);
  Json j = to_json(r);
  j["split"] = split;
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) write_json(out_path, j);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
               const std::string& seeds_text, bool force) {
  RunConfig config = read_config(config_path);
  const auto seeds = seeds_text.empty() ? config.train.seeds : parse_seed_list(seeds_text);
  if (seeds.size() < 2) throw ConfigError("ablation needs at least two seeds");
  prepare_out_dir(out_dir, force);
  const fs::path out(out_dir);
  write_manifest(out / "manifest.json", "ablate", config, seeds, {{"config", config_path}, {"data", data_dir}},
                 {{"report", (out / "ablation.json").string()}});
  const DatasetSplits data = load_splits(data_dir, config.model.modalities);
  const AblationReport report = identify_important(config.model, config.train, data, seeds, log_line);
  write_json(out / "ablation.json", to_json(report));
  std::cout << "important:";
  for (const auto& m : report.important) std::cout << " " << m;
  std::cout << "\n";
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
                   const std::string& seeds_text, const std::string& split, bool force) {
  RunConfig config = read_config(config_path);
  const auto seeds = seeds_text.empty() ? config.train.seeds : parse_seed_list(seeds_text);
  if (seeds.size() < 2) throw ConfigError("an experiment needs at least two seeds");
  if (config.train.elimination.empty()) throw ConfigError("the optimized variant needs train.eliminate entries");
  if (split != "val" && split != "test") throw UsageError("split must be val or test");
  prepare_out_dir(out_dir, force);
  const fs::path out(out_dir);
  write_manifest(out / "manifest.json", "experiment", config, seeds,
                 {{"config", config_path}, {"data", data_dir}, {"split", split}},
                 {{"report", (out / "report.json").string()}, {"table", (out / "table.txt").string()}});
  const DatasetSplits data = load_splits(data_dir, config.model.modalities);
  const ExperimentReport report = multi_seed_experiment(config.model, config.train, data, seeds, split, log_line);
  write_json(out / "report.json", to_json(report));
  const std::string table = render_table(report);
  write_text(out / "table.txt", table);
  std::cout << table;
  return 0;
}

int cmd_trace(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
              const std::string& sample_id, const std::string& missing, const std::string& out_csv) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const ModalitySet miss = resolve_missing(missing, ck.config.model);
  if (split != "train" && split != "val" && split != "test") throw UsageError("split must be train, val or test");
  write_manifest(out_csv + ".manifest.json", "trace", ck.config, {},
                 {{"checkpoint", checkpoint}, {"data", data_dir}, {"split", split}, {"sample", sample_id}, {"missing", missing}},
                 {{"trace", out_csv}});
  Dataset data = load_dataset(data_dir, split, ck.config.model.modalities);
  const auto it = std::find_if(data.samples.begin(), data.samples.end(),
                               [&](const MultimodalSample& s) { return s.id == sample_id; });
  if (it == data.samples.end()) throw ConfigError("unknown sample id '" + sample_id + "' in split " + split);
  Dataset one;
  one.modalities = data.modalities;
  one.samples.push_back(*it);
  const EvalResult r = evaluate(ck.model, one, miss);
  const SampleTrace& trace = r.traces.front();
  std::string text = "t,predicted,truth\n";
  for (Index t = 0; t < trace.truth.size(); ++t) {
    text += format_double(kFrameSeconds * static_cast<double>(t)) + "," + format_double(trace.predicted(t)) + "," +
            format_double(trace.truth(t)) + "\n";
  }
  text += "# ccc=" + format_double(trace.ccc) + " rmse=" + format_double(trace.rmse) + "\n";
  write_text(out_csv, text);
  std::cout << "ccc " << trace.ccc << " rmse " << trace.rmse << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal transformer emotion regression"};
  app.set_version_flag("--version", MMER_VERSION);
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, variant = "standard", checkpoint, split = "test", missing, seeds_text,
                                              sample_id, out_path;
  std::uint64_t seed = 0;
  bool force = false;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  synth->add_option("--config", config_path, "Config file (defaults when omitted)");
  synth->add_option("--out", out_dir, "Output dataset root")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "Override synth.seed");
  synth->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--config", config_path, "Config file");
  train->add_option("--data", data_dir, "Dataset root")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--variant", variant, "standard or optimized");
  train->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset root")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--missing", missing, "Comma-separated modalities to remove");
  eval->add_option("--out", out_path, "Also write the report to this file");

  auto* ablate = app.add_subcommand("ablate", "Identify important modalities");
  ablate->add_option("--config", config_path, "Config file");
  ablate->add_option("--data", data_dir, "Dataset root")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seeds", seeds_text, "Seed list, e.g. 0-9 or 1,4,7");
  ablate->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* experiment = app.add_subcommand("experiment", "Standard vs optimized multi-seed experiment");
  experiment->add_option("--config", config_path, "Config file");
  experiment->add_option("--data", data_dir, "Dataset root")->required();
  experiment->add_option("--out", out_dir, "Output directory")->required();
  experiment->add_option("--seeds", seeds_text, "Seed list, e.g. 0-9 or 1,4,7");
  experiment->add_option("--split", split, "val or test");
  experiment->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* trace = app.add_subcommand("trace", "Export a per-step prediction trace");
  trace->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  trace->add_option("--data", data_dir, "Dataset root")->required();
  trace->add_option("--split", split, "train, val or test");
  trace->add_option("--sample", sample_id, "Sample id")->required();
  trace->add_option("--missing", missing, "Comma-separated modalities to remove");
  trace->add_option("--out", out_path, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      return cmd_synth(config_path, out_dir, synth_seed->count() ? std::optional<std::uint64_t>(seed) : std::nullopt, force);
    }
    if (*train) return cmd_train(config_path, data_dir, out_dir, seed, variant, force);
    if (*eval) return cmd_eval(checkpoint, data_dir, split, missing, out_path);
    if (*ablate) return cmd_ablate(config_path, data_dir, out_dir, seeds_text, force);
    if (*experiment) return cmd_experiment(config_path, data_dir, out_dir, seeds_text, split, force);
    if (*trace) return cmd_trace(checkpoint, data_dir, split, sample_id, missing, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
