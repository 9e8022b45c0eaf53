#ifndef MMER_CONFIG_HPP
#define MMER_CONFIG_HPP

// Flat `key = value` run configuration. Lines starting with '#' are
// comments; unknown keys are errors. Lists are comma separated and per
// modality values use `name:value`.
//
//   modalities            audio:8, video:6, physio:3   (name:width, declared order)
//   target                arousal | valence            (model and synthetic data)
//   synth.seed            generator seed
//   synth.steps           sequence length T
//   synth.train_samples / synth.val_samples / synth.test_samples
//   synth.snr             name:snr per modality (the highest must be unique)
//   synth.mixing_seed     name:seed per modality
//   synth.components      sinusoids per smooth signal
//   synth.freq_min / synth.freq_max   band in cycles per step
//   synth.distractors     smooth nuisance sources mixed into every modality
//   model.d_model, model.encoder_heads, model.encoder_layers,
//   model.decoder_layers, model.decoder_heads, model.tcn_layers,
//   model.tcn_kernel, model.ffn_width, model.ern_hidden,
//   model.mask_length, model.max_steps, model.dropout
//   train.batch_size, train.max_epochs, train.learning_rate,
//   train.plateau_patience, train.lr_factor, train.early_stop_patience,
//   train.beta1, train.beta2, train.adam_eps,
//   train.segment_length, train.segment_hop
//   train.eliminate       name:rho per modality (optimized variant policy)
//   train.seeds           list of seeds; `a-b` expands to a..b inclusive
//   train.alpha           significance level

#include "mmer/synth.hpp"
#include "mmer/train.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace mmer {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  RunConfig();
  /// Cross-section checks plus every section's own validation.
  void validate() const;
};

RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
/// Throws ConfigError naming the path when the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its resolved value, in documented order. Parsing the result
/// reproduces the same configuration.
std::string to_text(const RunConfig& config);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace mmer

#endif  // MMER_CONFIG_HPP
