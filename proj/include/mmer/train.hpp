#ifndef MMER_TRAIN_HPP
#define MMER_TRAIN_HPP

// Optimisation and experiment protocol: Adam, plateau halving with early
// stopping, standard and optimized (modality-eliminating) training runs,
// evaluation under missing modalities, ablation and multi-seed experiments.

#include "mmer/elimination.hpp"
#include "mmer/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mmer {

using Json = nlohmann::ordered_json;

struct TrainConfig {
  Index batch_size = 64;
  Index max_epochs = 100;
  double learning_rate = 1e-4;
  Index plateau_patience = 5;
  double lr_factor = 0.5;
  Index early_stop_patience = 15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index segment_length = 250;
  Index segment_hop = 50;
  /// Policy used by the optimized variant; standard training ignores it.
  EliminationPolicy elimination;
  std::vector<std::uint64_t> seeds;
  double alpha = 0.05;

  void validate() const;
};

/// Seeds 0..n-1.
std::vector<std::uint64_t> default_seeds(std::size_t n = 30);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  RowMatrix first;
  RowMatrix second;
};

/// One bias-corrected Adam update of `param` at step t >= 1. Throws
/// NumericError naming `name` when the gradient is not finite.
void adam_step(Tensor& param, const RowMatrix& grad, AdamMoments& moments, Index t, const AdamConfig& cfg,
               const std::string& name);

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients (missing gradients
  /// count as zero) and clears them.
  void step();
  Index steps() const { return steps_; }
  double learning_rate() const { return cfg_.learning_rate; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig cfg_;
  Index steps_ = 0;
};

// ---------------------------------------------------------------------------
// Scheduling

enum class ScheduleDecision { Continue, HalveLr, Stop };

const char* to_string(ScheduleDecision decision);

/// Improvement means a strictly higher metric than the best so far. The
/// plateau counter resets on improvement and after each halving; the stop
/// counter resets only on improvement. Stop wins over halving.
class PlateauScheduler {
 public:
  PlateauScheduler(Index plateau_patience, Index stop_patience);

  ScheduleDecision update(double metric);
  double best() const { return best_; }
  bool improved() const { return improved_; }

 private:
  Index plateau_patience_;
  Index stop_patience_;
  double best_;
  Index plateau_count_ = 0;
  Index stop_count_ = 0;
  bool improved_ = false;
};

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_ccc = 0.0;
  double val_rmse = 0.0;
  double learning_rate = 0.0;
  /// Batches per availability label ("all", "-video", ...).
  std::map<std::string, Index> availability;
  ScheduleDecision decision = ScheduleDecision::Continue;
};

struct RunHistory {
  std::uint64_t seed = 0;
  std::string variant = "standard";
  std::vector<EpochRecord> epochs;
  Index best_epoch = -1;
  double best_val_ccc = 0.0;
  bool stopped_early = false;
  std::string checkpoint;
};

Json to_json(const RunHistory& history);
RunHistory run_history_from_json(const Json& j);

struct TrainResult {
  Model model;
  RunHistory history;
};

/// Trains one model from raw (unnormalised) splits. Normalisation statistics
/// come from the training split and are stored in the returned model, which
/// holds the parameters of the best validation epoch.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplits& data,
                      std::uint64_t seed, const EliminationPolicy& policy, const std::string& variant = "standard",
                      const EpochCallback& on_epoch = {});

struct SampleTrace {
  std::string sample_id;
  Vector predicted;
  Vector truth;
  double ccc = 0.0;
  double rmse = 0.0;
};

struct EvalResult {
  double ccc = 0.0;
  double rmse = 0.0;
  std::vector<std::string> missing;
  std::vector<SampleTrace> traces;
};

Json to_json(const EvalResult& result, bool with_traces = false);

/// Evaluation-mode prediction of every sample of a raw split with the
/// declared modalities minus `missing`; CCC and RMSE over the concatenation
/// of all predictions in sample-id order.
EvalResult evaluate(const Model& model, const Dataset& raw, const ModalitySet& missing);

// ---------------------------------------------------------------------------
// Ablation and experiments

struct AblationReport {
  std::vector<std::string> modalities;
  std::vector<std::uint64_t> seeds;
  std::vector<double> all_ccc;                        // per seed
  std::map<std::string, std::vector<double>> missing_ccc;  // per modality, per seed
  std::map<std::string, std::vector<double>> missing_rmse;
  std::map<std::string, double> p_values;  // one-sided all > missing
  std::vector<std::string> important;
  double alpha = 0.05;
};

Json to_json(const AblationReport& report);

/// Trains standard models per seed and evaluates each missing-one-modality
/// condition on the validation split.
AblationReport identify_important(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplits& data,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::function<void(const std::string&)>& log = {});

struct ConditionResult {
  std::string condition;  // "all" or "missing_<modality>"
  std::vector<double> ccc;   // per seed
  std::vector<double> rmse;  // per seed
};

struct VariantResult {
  std::string variant;
  std::vector<ConditionResult> conditions;
};

struct SignificanceTest {
  std::string family;
  std::string variant;
  std::string condition;
  std::string metric;
  std::string alternative;  // "greater" or "two-sided"
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  bool reject = false;
};

struct ExperimentReport {
  std::string target;
  std::string split = "test";
  double alpha = 0.05;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> modalities;
  std::vector<VariantResult> variants;
  std::vector<SignificanceTest> tests;
  std::vector<RunHistory> histories;

  const ConditionResult& cell(const std::string& variant, const std::string& condition) const;
  const SignificanceTest* find_test(const std::string& family, const std::string& variant, const std::string& condition,
                                    const std::string& metric) const;
};

Json to_json(const ExperimentReport& report);

/// Table-like text rendering: one row per variant, "mean (std)" per
/// condition and metric. "‡" marks a significant optimized improvement over
/// standard; "✓" marks a missing condition not significantly different from
/// all modalities.
std::string render_table(const ExperimentReport& report);

/// Standard and optimized training over every seed, evaluated on `split`
/// with all modalities and with each single modality missing. Tests:
///   improvement family: one-sided Welch optimized > standard per cell
///     (RMSE compared as standard > optimized), Holm within the family;
///   robustness family (per variant): two-sided Welch missing vs all, Holm
///     within each variant and metric.
ExperimentReport multi_seed_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                       const DatasetSplits& data, const std::vector<std::uint64_t>& seeds,
                                       const std::string& split = "test", const std::function<void(const std::string&)>& log = {});

/// Builds the significance tests and report from per-seed results alone.
void annotate_experiment(ExperimentReport& report);

}  // namespace mmer

#endif  // MMER_TRAIN_HPP
