#include "mmer/synth.hpp"

#include "mmer/metrics.hpp"
#include "mmer/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

namespace mmer {

void SynthConfig::validate() const {
  if (modalities.empty()) throw ConfigError("synthetic config declares no modalities");
  std::set<std::string> names;
  for (const auto& m : modalities) {
    if (!names.insert(m.name).second) throw ConfigError("duplicate synthetic modality '" + m.name + "'");
    if (m.width < 1) throw ConfigError("synthetic modality '" + m.name + "' needs a positive width");
    if (!(m.snr > 0.0) || !std::isfinite(m.snr)) throw ConfigError("synthetic modality '" + m.name + "' needs a positive SNR");
  }
  if (steps < 2) throw ConfigError("synthetic sequences need at least two steps");
  if (train_samples < 1 || val_samples < 1 || test_samples < 1) throw ConfigError("every split needs at least one sample");
  if (components < 1) throw ConfigError("synthetic latent needs at least one component");
  if (distractors < 0) throw ConfigError("distractor count must be non-negative");
  if (!(freq_min > 0.0 && freq_max >= freq_min && freq_max <= 0.5)) {
    throw ConfigError("frequency band must satisfy 0 < freq_min <= freq_max <= 0.5");
  }
  if (target != "arousal" && target != "valence") throw ConfigError("synthetic target must be arousal or valence");
  dominant();
}

const SynthModality& SynthConfig::dominant() const {
  auto it = std::max_element(modalities.begin(), modalities.end(),
                             [](const SynthModality& a, const SynthModality& b) { return a.snr < b.snr; });
  const auto ties = std::count_if(modalities.begin(), modalities.end(), [&](const SynthModality& m) { return m.snr == it->snr; });
  if (ties != 1) throw ConfigError("exactly one synthetic modality must have the highest SNR");
  return *it;
}

const SynthModality& SynthConfig::weakest() const {
  return *std::min_element(modalities.begin(), modalities.end(),
                           [](const SynthModality& a, const SynthModality& b) { return a.snr < b.snr; });
}

std::vector<ModalitySpec> SynthConfig::specs() const {
  std::vector<ModalitySpec> out;
  for (const auto& m : modalities) out.push_back({m.name, m.width});
  return out;
}

namespace {

Vector smooth_signal(const SynthConfig& cfg, Rng& rng) {
  Vector s = Vector::Zero(cfg.steps);
  for (Index k = 0; k < cfg.components; ++k) {
    const double freq = rng.uniform(cfg.freq_min, cfg.freq_max);
    const double amp = rng.uniform(0.5, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (Index t = 0; t < cfg.steps; ++t) {
      s(t) += amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) + phase);
    }
  }
  const double peak = s.cwiseAbs().maxCoeff();
  if (peak > 0.0) s /= peak;
  return s;
}

RowMatrix mixing_matrix(const SynthConfig& cfg, const SynthModality& m) {
  Rng rng = Rng(m.mixing_seed).fork(cfg.target);
  RowMatrix a(cfg.distractors + 1, m.width);
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
  }
  for (Index j = 0; j < a.cols(); ++j) a.col(j).normalize();
  return a;
}

Dataset generate_split(const SynthConfig& cfg, const std::vector<RowMatrix>& mixing, const std::string& split, Index count) {
  Dataset ds;
  ds.modalities = cfg.specs();
  const Rng root(cfg.seed);
  for (Index i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sample_%03ld", static_cast<long>(i));
    Rng rng = root.fork(split + "/" + id);
    MultimodalSample sample;
    sample.id = id;
    RowMatrix sources(cfg.steps, cfg.distractors + 1);
    sources.col(0) = smooth_signal(cfg, rng);
    for (Index k = 0; k < cfg.distractors; ++k) sources.col(k + 1) = smooth_signal(cfg, rng);
    sample.labels = sources.col(0);
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      RowMatrix x = sources * mixing[m];
      const double power = (x.rowwise() - x.colwise().mean()).squaredNorm() / static_cast<double>(x.size());
      const double noise_std = std::sqrt(power / cfg.modalities[m].snr);
      for (Index t = 0; t < x.rows(); ++t) {
        for (Index j = 0; j < x.cols(); ++j) x(t, j) += noise_std * rng.normal();
      }
      sample.features.push_back(std::move(x));
      sample.available.push_back(m);
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace

DatasetSplits synth_generate(const SynthConfig& config) {
  config.validate();
  std::vector<RowMatrix> mixing;
  for (const auto& m : config.modalities) mixing.push_back(mixing_matrix(config, m));
  return {generate_split(config, mixing, "train", config.train_samples),
          generate_split(config, mixing, "val", config.val_samples),
          generate_split(config, mixing, "test", config.test_samples)};
}

double ridge_oracle_ccc(const Dataset& train, const Dataset& test, std::size_t modality, double lambda) {
  const Index width = train.modalities.at(modality).width;
  auto design = [&](const Dataset& ds, RowMatrix& x, Vector& y) {
    Index rows = 0;
    for (const auto& s : ds.samples) rows += s.features[modality].rows();
    x.resize(rows, width + 1);
    y.resize(rows);
    Index r = 0;
    for (const auto& s : ds.samples) {
      const auto& f = s.features[modality];
      if (f.rows() == 0) continue;
      x.block(r, 0, f.rows(), width) = f;
      x.block(r, width, f.rows(), 1).setOnes();
      y.segment(r, f.rows()) = s.labels;
      r += f.rows();
    }
  };
  RowMatrix x;
  Vector y;
  design(train, x, y);
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().head(width).array() += lambda;
  const Vector w = gram.ldlt().solve(x.transpose() * y);
  design(test, x, y);
  const Vector pred = x * w;
  return ccc(pred, y).value;
}

}  // namespace mmer
