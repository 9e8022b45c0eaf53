#ifndef MMER_MODEL_HPP
#define MMER_MODEL_HPP

// Multimodal transformer encoder followed by an autoregressive multimodal
// transformer decoder and the emotion regression head.
//
// Encoder: each available modality runs through its own TCN, receives
// positional and modality encodings, and the results are concatenated in
// modality-major order (token m*T + t) for band-masked self-attention.
//
// Decoder: step t feeds i_{t-1} = d_{t-1} + p'_{t-1} (d_0 learned), attends
// causally over i_0..i_{t-1} through a key/value cache, cross-attends to the
// encoder outputs r^m_t of the available modalities at step t only, and emits
// d_t. The head maps d_t to the prediction y_t. Decoding is free-running: the
// decoder never sees ground-truth labels.

#include "mmer/dataset.hpp"
#include "mmer/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmer {

struct ModelConfig {
  std::vector<ModalitySpec> modalities{{"audio", 8}, {"video", 6}, {"physio", 3}};
  Index d_model = 64;
  Index encoder_heads = 2;
  Index encoder_layers = 2;
  Index decoder_layers = 1;
  Index decoder_heads = 1;
  Index tcn_layers = 6;
  Index tcn_kernel = 9;
  Index ffn_width = 256;
  Index ern_hidden = 32;
  Index mask_length = 100;
  Index max_steps = 600;
  double dropout = 0.2;
  std::string target = "arousal";

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  std::vector<std::string> modality_names() const;
  std::size_t modality_index(std::string_view name) const;
};

struct Model {
  ModelConfig config;
  std::vector<TcnStack> tcn;  // one per declared modality
  EncodingTable encodings;
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Tensor start;  // d_0, [d_model]
  ErnHead ern;
  NormalizationStats normalization;

  static Model init(const ModelConfig& config, Rng& rng);
  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedTensor> parameters() const;
};

struct EncoderOutput {
  ModalitySet available;
  Index batch = 0;
  Index steps = 0;
  Tensor sequence;                  // [B, |available| * T, d]
  std::vector<Tensor> per_modality;  // [B, T, d], in `available` order
};

/// Encoded, concatenated input tokens f with the band mask they use.
struct InputSequence {
  ModalitySet available;
  Index steps = 0;
  Tensor tokens;  // [B, |available| * T, d]
  AdditiveMask mask;
};

/// Throws ConfigError when `available` is empty or names a modality the
/// batch lacks, and CapacityError when T exceeds max_steps.
InputSequence build_input_sequence(const Model& model, const Batch& batch, const ModalitySet& available,
                                   const ForwardContext& ctx);
EncoderOutput mmte_forward(const Model& model, const Batch& batch, const ModalitySet& available, const ForwardContext& ctx);

struct DecoderState {
  struct LayerCache {
    std::vector<Tensor> keys;    // [B, d] per decoded step
    std::vector<Tensor> values;  // [B, d] per decoded step
    std::vector<Tensor> cross_keys;    // [B, T, d] per available modality
    std::vector<Tensor> cross_values;  // [B, T, d] per available modality
  };
  Index next_step = 1;
  Index batch = 0;
  Index steps = 0;
  Tensor previous;  // d_{t-1}, [B, d]
  std::vector<LayerCache> layers;
};

struct StepOutput {
  Tensor feature;     // d_t, [B, d]
  Tensor prediction;  // y_t, [B, 1]
  /// Top-layer cross-attention weights averaged over heads, B x |available|.
  RowMatrix modality_weights;
};

DecoderState start_decoding(const Model& model, const EncoderOutput& encoded);
/// Decodes step t (1-based). Throws ContractError unless t is the next step.
StepOutput ammtd_step(const Model& model, DecoderState& state, Index t, const ForwardContext& ctx);

struct DecodeOutput {
  Tensor predictions;  // [B, T]
  std::vector<RowMatrix> modality_weights;  // per step, B x |available|
};

DecodeOutput ammtd_decode(const Model& model, const EncoderOutput& encoded, const ForwardContext& ctx);

/// Full forward pass; returns [B, T] predictions.
Tensor model_forward(const Model& model, const Batch& batch, const ModalitySet& available, const ForwardContext& ctx);
/// Evaluation-mode prediction for one sample restricted to `available`.
Vector predict(const Model& model, const MultimodalSample& sample, const ModalitySet& available);

/// Copies values (not graph state) from `source` into `target` by name.
/// Throws ShapeError on any name or shape mismatch.
void copy_parameters(const Model& source, Model& target);

}  // namespace mmer

#endif  // MMER_MODEL_HPP
