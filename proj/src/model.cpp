#include "mmer/model.hpp"

#include <algorithm>
#include <set>

namespace mmer {

void ModelConfig::validate() const {
  if (modalities.empty()) throw ConfigError("at least one modality must be declared");
  std::set<std::string> seen;
  for (const auto& m : modalities) {
    if (m.name.empty() || m.name.find_first_of(",:= /\\") != std::string::npos) {
      throw ConfigError("invalid modality name '" + m.name + "'");
    }
    if (!seen.insert(m.name).second) throw ConfigError("duplicate modality '" + m.name + "'");
    if (m.width < 1) throw ConfigError("modality '" + m.name + "' needs a positive feature width");
  }
  if (d_model < 2) throw ConfigError("d_model must be at least 2");
  if (encoder_heads < 1 || d_model % encoder_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by encoder_heads " +
                      std::to_string(encoder_heads));
  }
  if (decoder_heads < 1 || d_model % decoder_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by decoder_heads " +
                      std::to_string(decoder_heads));
  }
  if (encoder_layers < 1) throw ConfigError("encoder_layers must be positive");
  if (decoder_layers < 1) throw ConfigError("decoder_layers must be positive");
  if (tcn_layers < 1) throw ConfigError("tcn_layers must be positive");
  if (tcn_kernel < 1) throw ConfigError("tcn_kernel must be positive");
  if (ffn_width < 1) throw ConfigError("ffn_width must be positive");
  if (ern_hidden < 1) throw ConfigError("ern_hidden must be positive");
  if (mask_length < 0) throw ConfigError("mask_length must be non-negative");
  if (max_steps < 1) throw ConfigError("max_steps must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (target != "arousal" && target != "valence") throw ConfigError("target must be arousal or valence");
}

std::vector<std::string> ModelConfig::modality_names() const {
  std::vector<std::string> out;
  for (const auto& m : modalities) out.push_back(m.name);
  return out;
}

std::size_t ModelConfig::modality_index(std::string_view name) const {
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (modalities[i].name == name) return i;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

Model Model::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.config = config;
  for (const auto& spec : config.modalities) {
    m.tcn.push_back(TcnStack::init(spec.width, config.d_model, config.tcn_layers, config.tcn_kernel, config.dropout, rng));
  }
  m.encodings = EncodingTable::init(config.max_steps, config.d_model, config.modality_names(), rng);
  for (Index i = 0; i < config.encoder_layers; ++i) {
    m.encoder.push_back(EncoderLayer::init(config.d_model, config.encoder_heads, config.ffn_width, config.dropout, rng));
  }
  for (Index i = 0; i < config.decoder_layers; ++i) {
    m.decoder.push_back(DecoderLayer::init(config.d_model, config.decoder_heads, config.ffn_width, config.dropout, rng));
  }
  m.start = init_tensor({config.d_model}, Normal{0.0, kEncodingInitStd}, rng);
  m.ern = ErnHead::init(config.d_model, config.ern_hidden, config.dropout, rng);
  for (auto& p : m.parameters()) p.tensor.set_requires_grad(true);
  return m;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < tcn.size(); ++i) collect_parameters(tcn[i], "tcn." + config.modalities[i].name, out);
  collect_parameters(encodings, "encodings", out);
  for (std::size_t i = 0; i < encoder.size(); ++i) collect_parameters(encoder[i], "encoder" + std::to_string(i), out);
  for (std::size_t i = 0; i < decoder.size(); ++i) collect_parameters(decoder[i], "decoder" + std::to_string(i), out);
  out.push_back({"start", start});
  collect_parameters(ern, "ern", out);
  return out;
}

InputSequence build_input_sequence(const Model& model, const Batch& batch, const ModalitySet& available,
                                   const ForwardContext& ctx) {
  if (available.empty()) throw ConfigError("no modality available for the forward pass");
  const Index steps = batch.steps();
  if (steps > model.config.max_steps) {
    throw CapacityError("sequence of " + std::to_string(steps) + " steps exceeds max_steps " +
                        std::to_string(model.config.max_steps));
  }
  std::vector<Tensor> parts;
  for (auto m : available) {
    if (m >= model.config.modalities.size()) throw ConfigError("modality index out of range");
    const auto& name = model.config.modalities[m].name;
    if (m >= batch.features.size() || !batch.features[m].defined()) {
      throw ConfigError("modality '" + name + "' is not present in the input");
    }
    const Tensor& x = batch.features[m];
    if (x.rank() != 3 || x.dim(1) != steps) throw ShapeError("modality '" + name + "' has shape " + to_string(x.shape()));
    parts.push_back(add_encodings(tcn_forward(model.tcn[m], x, ctx), name, model.encodings));
  }
  InputSequence seq;
  seq.available = available;
  seq.steps = steps;
  seq.tokens = parts.size() == 1 ? parts.front() : concat(parts, 1);
  seq.mask = build_band_mask(steps, static_cast<Index>(available.size()), model.config.mask_length);
  return seq;
}

EncoderOutput mmte_forward(const Model& model, const Batch& batch, const ModalitySet& available, const ForwardContext& ctx) {
  InputSequence seq = build_input_sequence(model, batch, available, ctx);
  Tensor h = seq.tokens;
  for (const auto& layer : model.encoder) h = encoder_layer_forward(layer, h, &seq.mask, ctx);
  EncoderOutput out;
  out.available = available;
  out.batch = batch.size();
  out.steps = seq.steps;
  out.sequence = h;
  for (std::size_t k = 0; k < available.size(); ++k) {
    out.per_modality.push_back(available.size() == 1 ? h : slice(h, 1, static_cast<Index>(k) * seq.steps, seq.steps));
  }
  return out;
}

DecoderState start_decoding(const Model& model, const EncoderOutput& encoded) {
  DecoderState state;
  state.batch = encoded.batch;
  state.steps = encoded.steps;
  const Index d = model.config.d_model;
  state.previous = Tensor(Shape{encoded.batch, d}) + model.start;
  for (const auto& layer : model.decoder) {
    DecoderState::LayerCache cache;
    for (const auto& r : encoded.per_modality) {
      cache.cross_keys.push_back(layer.cross_attention.key(r));
      cache.cross_values.push_back(layer.cross_attention.value(r));
    }
    state.layers.push_back(std::move(cache));
  }
  return state;
}

StepOutput ammtd_step(const Model& model, DecoderState& state, Index t, const ForwardContext& ctx) {
  if (t != state.next_step) {
    throw ContractError("decoder expected step " + std::to_string(state.next_step) + ", got " + std::to_string(t));
  }
  if (t > state.steps) throw ContractError("decoder step " + std::to_string(t) + " beyond sequence end");
  StepOutput out;
  Tensor x = state.previous + slice(model.encodings.decoder_positional, 0, t - 1, 1);
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    const DecoderLayer& layer = model.decoder[l];
    auto& cache = state.layers[l];

    cache.keys.push_back(layer.self_attention.key(x));
    cache.values.push_back(layer.self_attention.value(x));
    std::vector<Slot> ks, vs;
    ks.reserve(cache.keys.size());
    vs.reserve(cache.values.size());
    for (std::size_t j = 0; j < cache.keys.size(); ++j) {
      ks.push_back({cache.keys[j]});
      vs.push_back({cache.values[j]});
    }
    Tensor self = attend_slots(layer.self_attention.query(x), ks, vs, layer.self_attention.heads).output;
    Tensor h = layer.norm1(x + ctx.drop(layer.self_attention.output(self), layer.dropout));

    std::vector<Slot> ck, cv;
    for (std::size_t k = 0; k < cache.cross_keys.size(); ++k) {
      ck.push_back({cache.cross_keys[k], t - 1});
      cv.push_back({cache.cross_values[k], t - 1});
    }
    AttentionResult cross = attend_slots(layer.cross_attention.query(h), ck, cv, layer.cross_attention.heads);
    Tensor h2 = layer.norm2(h + ctx.drop(layer.cross_attention.output(cross.output), layer.dropout));
    x = layer.norm3(h2 + ctx.drop(layer.ffn.forward(h2, ctx), layer.dropout));

    if (l + 1 == model.decoder.size()) {
      const Index heads = layer.cross_attention.heads;
      out.modality_weights = RowMatrix::Zero(state.batch, cross.weights.cols());
      for (Index b = 0; b < state.batch; ++b) {
        for (Index hd = 0; hd < heads; ++hd) out.modality_weights.row(b) += cross.weights.row(b * heads + hd);
      }
      out.modality_weights /= static_cast<double>(heads);
    }
  }
  out.feature = x;
  out.prediction = ern_forward(model.ern, x, ctx);
  state.previous = x;
  ++state.next_step;
  return out;
}

DecodeOutput ammtd_decode(const Model& model, const EncoderOutput& encoded, const ForwardContext& ctx) {
  DecoderState state = start_decoding(model, encoded);
  std::vector<Tensor> preds;
  DecodeOutput out;
  preds.reserve(static_cast<std::size_t>(encoded.steps));
  for (Index t = 1; t <= encoded.steps; ++t) {
    StepOutput step = ammtd_step(model, state, t, ctx);
    preds.push_back(step.prediction);
    out.modality_weights.push_back(std::move(step.modality_weights));
  }
  out.predictions = preds.size() == 1 ? preds.front() : concat(preds, 1);
  return out;
}

Tensor model_forward(const Model& model, const Batch& batch, const ModalitySet& available, const ForwardContext& ctx) {
  return ammtd_decode(model, mmte_forward(model, batch, available, ctx), ctx).predictions;
}

Vector predict(const Model& model, const MultimodalSample& sample, const ModalitySet& available) {
  Batch batch = make_batch(sample, model.config.modalities);
  Tensor y = model_forward(model, batch, available, ForwardContext{});
  return y.value().row(0).transpose();
}

void copy_parameters(const Model& source, Model& target) {
  auto src = source.parameters();
  auto dst = target.parameters();
  if (src.size() != dst.size()) throw ShapeError("parameter counts differ");
  for (auto& p : dst) {
    auto it = std::find_if(src.begin(), src.end(), [&](const NamedTensor& s) { return s.name == p.name; });
    if (it == src.end()) throw ShapeError("no source parameter '" + p.name + "'");
    if (it->tensor.shape() != p.tensor.shape()) throw ShapeError("shape mismatch for '" + p.name + "'");
    p.tensor.mutable_value() = it->tensor.value();
  }
}

}  // namespace mmer
