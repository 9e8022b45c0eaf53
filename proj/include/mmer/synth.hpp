#ifndef MMER_SYNTH_HPP
#define MMER_SYNTH_HPP

// Synthetic multimodal benchmark. A latent z_t (normalised sum of random
// sinusoids, rescaled to [-1, 1]) is the label; every modality observes a
// fixed random linear mixture of z and smooth distractor signals plus white
// noise at the modality's signal-to-noise ratio.

#include "mmer/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmer {

struct SynthModality {
  std::string name;
  Index width = 1;
  double snr = 1.0;
  std::uint64_t mixing_seed = 0;
};

struct SynthConfig {
  std::vector<SynthModality> modalities{
      {"audio", 8, 0.5, 11}, {"video", 6, 4.0, 23}, {"physio", 3, 0.001, 37}};
  Index steps = 600;
  Index train_samples = 20;
  Index val_samples = 5;
  Index test_samples = 5;
  Index components = 6;
  /// Frequency band of the latent and distractor sinusoids, in cycles per
  /// step (2 Hz sampling, so 0.01 is one cycle per 50 s).
  double freq_min = 0.004;
  double freq_max = 0.03;
  Index distractors = 2;
  std::uint64_t seed = 7;
  /// arousal or valence; selects the mixing stream so the two targets differ.
  std::string target = "arousal";

  /// Throws ConfigError on invalid values or when the highest SNR is shared.
  void validate() const;
  const SynthModality& dominant() const;
  const SynthModality& weakest() const;
  std::vector<ModalitySpec> specs() const;
};

/// Fully determined by the config (including its seed).
DatasetSplits synth_generate(const SynthConfig& config);

/// Ridge regression from one modality's features to the labels, fitted on
/// `train` (raw features with an intercept) and scored by global CCC on
/// `test`. Diagnostic oracle for the generator's information ordering.
double ridge_oracle_ccc(const Dataset& train, const Dataset& test, std::size_t modality, double lambda = 1.0);

}  // namespace mmer

#endif  // MMER_SYNTH_HPP
