#include "mmer/train.hpp"

#include "mmer/loss.hpp"
#include "mmer/metrics.hpp"
#include "mmer/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

namespace mmer {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be at least 1");
  if (early_stop_patience < plateau_patience) throw ConfigError("early_stop_patience must be at least plateau_patience");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr_factor must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (segment_length < 2) throw ConfigError("segment_length must be at least 2");
  if (segment_hop < 1) throw ConfigError("segment_hop must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("seed list contains duplicates");
}

std::vector<std::uint64_t> default_seeds(std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

// ---------------------------------------------------------------------------

void adam_step(Tensor& param, const RowMatrix& grad, AdamMoments& moments, Index t, const AdamConfig& cfg,
               const std::string& name) {
  if (t < 1) throw ContractError("Adam step index must start at 1");
  const RowMatrix& value = param.value();
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) throw ShapeError("gradient shape differs for " + name);
  if (!grad.allFinite()) throw NumericError("non-finite gradient for parameter " + name);
  if (moments.first.size() == 0) {
    moments.first = RowMatrix::Zero(value.rows(), value.cols());
    moments.second = RowMatrix::Zero(value.rows(), value.cols());
  }
  moments.first = cfg.beta1 * moments.first + (1.0 - cfg.beta1) * grad;
  moments.second = cfg.beta2 * moments.second + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  param.mutable_value().array() -=
      cfg.learning_rate * (moments.first.array() / c1) / ((moments.second.array() / c2).sqrt() + cfg.eps);
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {}

void Adam::step() {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.tensor.has_grad()) {
      adam_step(p.tensor, p.tensor.grad(), moments_[i], steps_, cfg_, p.name);
    } else {
      adam_step(p.tensor, RowMatrix::Zero(p.tensor.rows(), p.tensor.cols()), moments_[i], steps_, cfg_, p.name);
    }
    p.tensor.zero_grad();
  }
}

// ---------------------------------------------------------------------------

const char* to_string(ScheduleDecision decision) {
  switch (decision) {
    case ScheduleDecision::Continue: return "continue";
    case ScheduleDecision::HalveLr: return "halve_lr";
    case ScheduleDecision::Stop: return "stop";
  }
  return "continue";
}

PlateauScheduler::PlateauScheduler(Index plateau_patience, Index stop_patience)
    : plateau_patience_(plateau_patience),
      stop_patience_(stop_patience),
      best_(-std::numeric_limits<double>::infinity()) {
  if (plateau_patience < 1 || stop_patience < 1) throw ConfigError("scheduler patiences must be at least 1");
}

ScheduleDecision PlateauScheduler::update(double metric) {
  improved_ = metric > best_;
  if (improved_) {
    best_ = metric;
    plateau_count_ = 0;
    stop_count_ = 0;
    return ScheduleDecision::Continue;
  }
  ++plateau_count_;
  ++stop_count_;
  if (stop_count_ >= stop_patience_) return ScheduleDecision::Stop;
  if (plateau_count_ >= plateau_patience_) {
    plateau_count_ = 0;
    return ScheduleDecision::HalveLr;
  }
  return ScheduleDecision::Continue;
}

// ---------------------------------------------------------------------------

namespace {

ScheduleDecision decision_from_string(const std::string& s) {
  if (s == "halve_lr") return ScheduleDecision::HalveLr;
  if (s == "stop") return ScheduleDecision::Stop;
  return ScheduleDecision::Continue;
}

void check_modalities(const ModelConfig& cfg, const Dataset& ds) {
  if (ds.modalities.size() != cfg.modalities.size()) throw ConfigError("dataset and model declare different modalities");
  for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
    if (ds.modalities[i].name != cfg.modalities[i].name || ds.modalities[i].width != cfg.modalities[i].width) {
      throw ConfigError("dataset modality " + ds.modalities[i].name + ":" + std::to_string(ds.modalities[i].width) +
                        " differs from model modality " + cfg.modalities[i].name + ":" +
                        std::to_string(cfg.modalities[i].width));
    }
  }
}

double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

Json to_json(const RunHistory& h) {
  Json j;
  j["schema"] = "mmer.run_history/1";
  j["seed"] = h.seed;
  j["variant"] = h.variant;
  j["best_epoch"] = h.best_epoch;
  j["best_val_ccc"] = h.best_val_ccc;
  j["stopped_early"] = h.stopped_early;
  j["checkpoint"] = h.checkpoint;
  Json epochs = Json::array();
  for (const auto& e : h.epochs) {
    Json r;
    r["epoch"] = e.epoch;
    r["train_loss"] = e.train_loss;
    r["val_ccc"] = e.val_ccc;
    r["val_rmse"] = e.val_rmse;
    r["learning_rate"] = e.learning_rate;
    r["availability"] = Json::object();
    for (const auto& [k, v] : e.availability) r["availability"][k] = v;
    r["decision"] = to_string(e.decision);
    epochs.push_back(std::move(r));
  }
  j["epochs"] = std::move(epochs);
  return j;
}

RunHistory run_history_from_json(const Json& j) {
  RunHistory h;
  h.seed = j.at("seed").get<std::uint64_t>();
  h.variant = j.at("variant").get<std::string>();
  h.best_epoch = j.at("best_epoch").get<Index>();
  h.best_val_ccc = j.at("best_val_ccc").get<double>();
  h.stopped_early = j.at("stopped_early").get<bool>();
  h.checkpoint = j.at("checkpoint").get<std::string>();
  for (const auto& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<Index>();
    e.train_loss = r.at("train_loss").get<double>();
    e.val_ccc = r.at("val_ccc").get<double>();
    e.val_rmse = r.at("val_rmse").get<double>();
    e.learning_rate = r.at("learning_rate").get<double>();
    for (const auto& [k, v] : r.at("availability").items()) e.availability[k] = v.get<Index>();
    e.decision = decision_from_string(r.at("decision").get<std::string>());
    h.epochs.push_back(std::move(e));
  }
  return h;
}

TrainResult train_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplits& data,
                      std::uint64_t seed, const EliminationPolicy& policy, const std::string& variant,
                      const EpochCallback& on_epoch) {
  model_cfg.validate();
  train_cfg.validate();
  policy.validate(model_cfg.modalities);
  check_modalities(model_cfg, data.train);
  check_modalities(model_cfg, data.val);
  if (data.train.normalized || data.val.normalized) throw ContractError("train_run expects untransformed data");
  if (train_cfg.segment_length > model_cfg.max_steps) {
    throw ConfigError("segment_length exceeds the model's max_steps");
  }

  Dataset train = data.train;
  const NormalizationStats stats = compute_normalization(train);
  apply_normalization(train, stats);

  const Rng base(seed);
  Rng init_rng = base.fork("init");
  Rng shuffle_rng = base.fork("shuffle");
  Rng dropout_rng = base.fork("dropout");
  Rng elimination_rng = base.fork("eliminate");

  TrainResult result{Model::init(model_cfg, init_rng), {}};
  Model& model = result.model;
  model.normalization = stats;
  RunHistory& history = result.history;
  history.seed = seed;
  history.variant = variant;

  std::vector<Segment> segments;
  for (std::size_t i = 0; i < train.samples.size(); ++i) {
    auto s = segment(train.samples[i], i, train_cfg.segment_length, train_cfg.segment_hop);
    segments.insert(segments.end(), s.begin(), s.end());
  }

  const auto params = model.parameters();
  Adam adam(params, {train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps});
  PlateauScheduler scheduler(train_cfg.plateau_patience, train_cfg.early_stop_patience);
  std::vector<RowMatrix> best_values;
  const ForwardContext ctx{true, &dropout_rng};

  for (Index epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = adam.learning_rate();
    shuffle_rng.shuffle(std::span<Segment>(segments));
    double loss_sum = 0.0;
    Index batches = 0;
    for (std::size_t start = 0; start < segments.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t count = std::min(segments.size() - start, static_cast<std::size_t>(train_cfg.batch_size));
      Batch batch = make_batch(train, std::span<const Segment>(segments).subspan(start, count));
      const EliminationDraw draw = sample_elimination(policy, model_cfg.modalities, elimination_rng);
      ModalitySet available = intersect(batch.available, draw.available);
      std::string label = "all";
      if (available.empty()) {
        available = batch.available;
      } else if (draw.eliminated && available.size() < batch.available.size()) {
        label = "-" + model_cfg.modalities[*draw.eliminated].name;
      }
      ++record.availability[label];

      Tape tape;
      {
        TapeScope scope(tape);
        Tensor pred = model_forward(model, batch, available, ctx);
        Tensor loss = ccc_loss(pred, batch.labels);
        if (!std::isfinite(loss.item())) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches) + " (seed " + std::to_string(seed) + ")");
        }
        loss_sum += loss.item();
        backward(loss, tape);
      }
      adam.step();
      ++batches;
    }
    record.train_loss = loss_sum / static_cast<double>(std::max<Index>(batches, 1));

    const EvalResult val = evaluate(model, data.val, {});
    record.val_ccc = val.ccc;
    record.val_rmse = val.rmse;
    record.decision = scheduler.update(val.ccc);
    if (scheduler.improved()) {
      best_values.clear();
      for (const auto& p : params) best_values.push_back(p.tensor.value());
      history.best_epoch = epoch;
      history.best_val_ccc = val.ccc;
    }
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.decision == ScheduleDecision::Stop) {
      history.stopped_early = true;
      break;
    }
    if (record.decision == ScheduleDecision::HalveLr) adam.set_learning_rate(adam.learning_rate() * train_cfg.lr_factor);
  }

  for (std::size_t i = 0; i < params.size() && i < best_values.size(); ++i) {
    NamedTensor p = params[i];
    p.tensor.mutable_value() = best_values[i];
  }
  return result;
}

// ---------------------------------------------------------------------------

Json to_json(const EvalResult& r, bool with_traces) {
  Json j;
  j["schema"] = "mmer.eval/1";
  j["missing"] = r.missing;
  j["ccc"] = r.ccc;
  j["rmse"] = r.rmse;
  Json samples = Json::array();
  for (const auto& t : r.traces) {
    Json s;
    s["id"] = t.sample_id;
    s["steps"] = t.truth.size();
    s["ccc"] = t.ccc;
    s["rmse"] = t.rmse;
    if (with_traces) {
      s["predicted"] = std::vector<double>(t.predicted.begin(), t.predicted.end());
      s["truth"] = std::vector<double>(t.truth.begin(), t.truth.end());
    }
    samples.push_back(std::move(s));
  }
  j["samples"] = std::move(samples);
  return j;
}

EvalResult evaluate(const Model& model, const Dataset& raw, const ModalitySet& missing) {
  const auto& declared = model.config.modalities;
  check_modalities(model.config, raw);
  ModalitySet keep = all_modalities(declared.size());
  for (auto m : missing) keep = without(keep, m);
  if (keep.empty()) throw ConfigError("at least one modality is required");

  Dataset ds = raw;
  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const MultimodalSample& a, const MultimodalSample& b) { return a.id < b.id; });
  if (!ds.normalized && !model.normalization.empty()) apply_normalization(ds, model.normalization);

  EvalResult result;
  for (auto m : missing) result.missing.push_back(declared.at(m).name);
  Index total = 0;
  for (const auto& s : ds.samples) total += s.steps();
  Vector all_pred(total), all_truth(total);
  Index offset = 0;
  for (const auto& s : ds.samples) {
    const ModalitySet available = intersect(s.available, keep);
    if (available.empty()) throw ConfigError("sample '" + s.id + "' has no remaining modality");
    SampleTrace trace;
    trace.sample_id = s.id;
    trace.predicted = predict(model, s, available);
    trace.truth = s.labels;
    if (s.steps() >= 2) trace.ccc = ccc(trace.predicted, trace.truth).value;
    trace.rmse = rmse(trace.predicted, trace.truth).value;
    all_pred.segment(offset, s.steps()) = trace.predicted;
    all_truth.segment(offset, s.steps()) = trace.truth;
    offset += s.steps();
    result.traces.push_back(std::move(trace));
  }
  result.ccc = ccc(all_pred, all_truth).value;
  result.rmse = rmse(all_pred, all_truth).value;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

StatTestResult safe_welch(const std::vector<double>& a, const std::vector<double>& b, Sidedness side) {
  try {
    return welch_t_test(a, b, side);
  } catch (const DegenerateTestError&) {
    return {0.0, static_cast<double>(a.size() + b.size() - 2), 1.0, side};
  }
}

std::vector<double> metric_of(const ConditionResult& c, const std::string& metric) {
  return metric == "ccc" ? c.ccc : c.rmse;
}

}  // namespace

Json to_json(const AblationReport& r) {
  Json j;
  j["schema"] = "mmer.ablation/1";
  j["alpha"] = r.alpha;
  j["modalities"] = r.modalities;
  j["seeds"] = r.seeds;
  j["all_ccc"] = r.all_ccc;
  j["missing"] = Json::object();
  for (const auto& m : r.modalities) {
    if (!r.missing_ccc.count(m)) continue;
    Json e;
    e["ccc"] = r.missing_ccc.at(m);
    e["rmse"] = r.missing_rmse.at(m);
    e["p_value"] = r.p_values.at(m);
    e["important"] = std::find(r.important.begin(), r.important.end(), m) != r.important.end();
    j["missing"][m] = std::move(e);
  }
  j["important"] = r.important;
  return j;
}

AblationReport identify_important(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplits& data,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::function<void(const std::string&)>& log) {
  if (seeds.size() < 2) throw ConfigError("ablation needs at least two seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seed list contains duplicates");
  }
  AblationReport report;
  report.modalities = model_cfg.modality_names();
  report.seeds = seeds;
  report.alpha = train_cfg.alpha;
  if (model_cfg.modalities.size() < 2) return report;
  for (auto seed : seeds) {
    TrainResult run = train_run(model_cfg, train_cfg, data, seed, EliminationPolicy{}, "standard");
    report.all_ccc.push_back(evaluate(run.model, data.val, {}).ccc);
    for (std::size_t m = 0; m < model_cfg.modalities.size(); ++m) {
      const EvalResult r = evaluate(run.model, data.val, {m});
      report.missing_ccc[report.modalities[m]].push_back(r.ccc);
      report.missing_rmse[report.modalities[m]].push_back(r.rmse);
    }
    if (log) log("ablation seed " + std::to_string(seed) + " done");
  }
  std::vector<double> p;
  for (const auto& m : report.modalities) {
    const double pv = safe_welch(report.all_ccc, report.missing_ccc[m], Sidedness::OneSidedGreater).p;
    report.p_values[m] = pv;
    p.push_back(pv);
  }
  const auto reject = holm_bonferroni(p, train_cfg.alpha);
  for (std::size_t i = 0; i < reject.size(); ++i) {
    if (reject[i]) report.important.push_back(report.modalities[i]);
  }
  return report;
}

const ConditionResult& ExperimentReport::cell(const std::string& variant, const std::string& condition) const {
  for (const auto& v : variants) {
    if (v.variant != variant) continue;
    for (const auto& c : v.conditions) {
      if (c.condition == condition) return c;
    }
  }
  throw std::out_of_range("no cell " + variant + "/" + condition);
}

const SignificanceTest* ExperimentReport::find_test(const std::string& family, const std::string& variant,
                                                    const std::string& condition, const std::string& metric) const {
  for (const auto& t : tests) {
    if (t.family == family && t.variant == variant && t.condition == condition && t.metric == metric) return &t;
  }
  return nullptr;
}

void annotate_experiment(ExperimentReport& report) {
  report.tests.clear();
  auto run_family = [&](std::vector<SignificanceTest> family) {
    std::vector<double> p;
    for (const auto& t : family) p.push_back(t.p);
    const auto reject = holm_bonferroni(p, report.alpha);
    for (std::size_t i = 0; i < family.size(); ++i) {
      family[i].reject = reject[i];
      report.tests.push_back(family[i]);
    }
  };
  auto make = [](const std::string& family, const std::string& variant, const std::string& condition,
                 const std::string& metric, const StatTestResult& r) {
    return SignificanceTest{family, variant, condition, metric, r.sidedness == Sidedness::TwoSided ? "two-sided" : "greater",
                            r.t, r.dof, r.p, false};
  };

  const bool has_both = report.variants.size() == 2;
  if (has_both) {
    std::vector<SignificanceTest> family;
    const auto& standard = report.variants[0];
    const auto& optimized = report.variants[1];
    for (std::size_t c = 0; c < standard.conditions.size(); ++c) {
      const auto& s = standard.conditions[c];
      const auto& o = optimized.conditions[c];
      family.push_back(make("improvement", optimized.variant, s.condition, "ccc",
                            safe_welch(o.ccc, s.ccc, Sidedness::OneSidedGreater)));
      family.push_back(make("improvement", optimized.variant, s.condition, "rmse",
                            safe_welch(s.rmse, o.rmse, Sidedness::OneSidedGreater)));
    }
    run_family(std::move(family));
  }
  for (const auto& v : report.variants) {
    for (const std::string metric : {"ccc", "rmse"}) {
      std::vector<SignificanceTest> family;
      const auto all = metric_of(v.conditions.front(), metric);
      for (std::size_t c = 1; c < v.conditions.size(); ++c) {
        family.push_back(make("robustness", v.variant, v.conditions[c].condition, metric,
                              safe_welch(metric_of(v.conditions[c], metric), all, Sidedness::TwoSided)));
      }
      if (!family.empty()) run_family(std::move(family));
    }
  }
}

ExperimentReport multi_seed_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                       const DatasetSplits& data, const std::vector<std::uint64_t>& seeds,
                                       const std::string& split, const std::function<void(const std::string&)>& log) {
  if (seeds.size() < 2) throw ConfigError("an experiment needs at least two seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seed list contains duplicates");
  }
  if (train_cfg.elimination.empty()) throw ConfigError("the optimized variant needs a nonempty elimination policy");
  const Dataset* eval_split = split == "test" ? &data.test : split == "val" ? &data.val : nullptr;
  if (eval_split == nullptr) throw ConfigError("experiment split must be val or test");

  ExperimentReport report;
  report.target = model_cfg.target;
  report.split = split;
  report.alpha = train_cfg.alpha;
  report.seeds = seeds;
  report.modalities = model_cfg.modality_names();
  const std::vector<std::pair<std::string, EliminationPolicy>> variants{{"standard", EliminationPolicy{}},
                                                                         {"optimized", train_cfg.elimination}};
  for (const auto& [name, policy] : variants) {
    VariantResult v;
    v.variant = name;
    v.conditions.push_back({"all", {}, {}});
    for (const auto& m : report.modalities) v.conditions.push_back({"missing_" + m, {}, {}});
    report.variants.push_back(std::move(v));
  }
  for (auto seed : seeds) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      TrainResult run = train_run(model_cfg, train_cfg, data, seed, variants[vi].second, variants[vi].first);
      auto& v = report.variants[vi];
      for (std::size_t c = 0; c < v.conditions.size(); ++c) {
        const ModalitySet missing = c == 0 ? ModalitySet{} : ModalitySet{c - 1};
        const EvalResult r = evaluate(run.model, *eval_split, missing);
        v.conditions[c].ccc.push_back(r.ccc);
        v.conditions[c].rmse.push_back(r.rmse);
      }
      report.histories.push_back(std::move(run.history));
      if (log) {
        char line[160];
        std::snprintf(line, sizeof line, "seed %llu %s: all-modality ccc %.4f", static_cast<unsigned long long>(seed),
                      variants[vi].first.c_str(), v.conditions[0].ccc.back());
        log(line);
      }
    }
  }
  annotate_experiment(report);
  return report;
}

Json to_json(const ExperimentReport& r) {
  Json j;
  j["schema"] = "mmer.experiment/1";
  j["target"] = r.target;
  j["split"] = r.split;
  j["alpha"] = r.alpha;
  j["seeds"] = r.seeds;
  j["modalities"] = r.modalities;
  Json variants = Json::array();
  for (const auto& v : r.variants) {
    Json jv;
    jv["variant"] = v.variant;
    Json conds = Json::array();
    for (const auto& c : v.conditions) {
      Json jc;
      jc["condition"] = c.condition;
      jc["ccc"] = {{"mean", sample_mean(c.ccc)}, {"std", sample_std(c.ccc)}, {"per_seed", c.ccc}};
      jc["rmse"] = {{"mean", sample_mean(c.rmse)}, {"std", sample_std(c.rmse)}, {"per_seed", c.rmse}};
      conds.push_back(std::move(jc));
    }
    jv["conditions"] = std::move(conds);
    variants.push_back(std::move(jv));
  }
  j["variants"] = std::move(variants);
  Json tests = Json::array();
  for (const auto& t : r.tests) {
    tests.push_back({{"family", t.family},
                     {"variant", t.variant},
                     {"condition", t.condition},
                     {"metric", t.metric},
                     {"alternative", t.alternative},
                     {"t", std::isfinite(t.t) ? Json(t.t) : Json(t.t > 0 ? "inf" : "-inf")},
                     {"dof", t.dof},
                     {"p", t.p},
                     {"reject", t.reject}});
  }
  j["tests"] = std::move(tests);
  Json runs = Json::array();
  for (const auto& h : r.histories) {
    runs.push_back({{"seed", h.seed},
                    {"variant", h.variant},
                    {"best_epoch", h.best_epoch},
                    {"best_val_ccc", h.best_val_ccc},
                    {"epochs", h.epochs.size()}});
  }
  j["runs"] = std::move(runs);
  return j;
}

std::string render_table(const ExperimentReport& r) {
  std::string out;
  char buf[96];
  out += "variant";
  for (const auto& c : r.variants.front().conditions) out += " | " + c.condition + " rmse | " + c.condition + " ccc";
  out += "\n";
  for (const auto& v : r.variants) {
    out += v.variant;
    for (const auto& c : v.conditions) {
      for (const std::string metric : {"rmse", "ccc"}) {
        const auto values = metric_of(c, metric);
        std::snprintf(buf, sizeof buf, "%.4f (%.4f)", sample_mean(values), sample_std(values));
        std::string cell = buf;
        if (const auto* t = r.find_test("improvement", v.variant, c.condition, metric); t && t->reject) cell += " ‡";
        if (const auto* t = r.find_test("robustness", v.variant, c.condition, metric); t && !t->reject) cell += " ✓";
        out += " | " + cell;
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace mmer
