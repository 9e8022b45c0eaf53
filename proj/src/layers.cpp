#include "mmer/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmer {

Tensor ForwardContext::drop(const Tensor& x, double rate) const {
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ContractError("training-mode forward needs a dropout generator");
  return dropout(x, rate, *rng, true);
}

Linear Linear::init(Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {init_tensor({in, out}, Uniform{-bound, bound}, rng), Tensor(Shape{out})};
}

LayerNorm LayerNorm::init(Index width) {
  LayerNorm ln;
  ln.gain = Tensor(Shape{width}, RowMatrix::Ones(1, width));
  ln.bias = Tensor(Shape{width});
  return ln;
}

FeedForward FeedForward::init(Index width, Index hidden, double dropout, Rng& rng) {
  FeedForward f;
  f.expand = Linear::init(width, hidden, rng);
  f.project = Linear::init(hidden, width, rng);
  f.dropout = dropout;
  return f;
}

Tensor FeedForward::forward(const Tensor& x, const ForwardContext& ctx) const {
  return project(ctx.drop(gelu(expand(x)), dropout));
}

TcnStack TcnStack::init(Index input_width, Index output_width, Index num_layers, Index kernel_size, double dropout, Rng& rng) {
  if (num_layers < 1 || kernel_size < 1) throw ConfigError("TCN needs at least one layer and a positive kernel size");
  TcnStack stack;
  stack.dropout = dropout;
  Index width = input_width;
  for (Index i = 0; i < num_layers; ++i) {
    Layer layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(kernel_size * width));
    layer.kernel = init_tensor({kernel_size, width, output_width}, Uniform{-bound, bound}, rng);
    layer.bias = Tensor(Shape{output_width});
    layer.dilation = Index{1} << i;
    if (width != output_width) layer.projection = Linear::init(width, output_width, rng);
    stack.layers.push_back(std::move(layer));
    width = output_width;
  }
  return stack;
}

Index TcnStack::receptive_field() const {
  Index field = 1;
  for (const auto& layer : layers) field += (layer.kernel.dim(0) - 1) * layer.dilation;
  return field;
}

Tensor tcn_forward(const TcnStack& stack, const Tensor& x, const ForwardContext& ctx) {
  if (x.cols() != stack.input_width()) {
    throw ShapeError("TCN expects " + std::to_string(stack.input_width()) + " input features, got " + std::to_string(x.cols()));
  }
  Tensor h = x;
  for (const auto& layer : stack.layers) {
    Tensor branch = ctx.drop(relu(causal_conv1d(h, layer.kernel, layer.bias, layer.dilation)), stack.dropout);
    Tensor residual = layer.projection ? (*layer.projection)(h) : h;
    h = relu(branch + residual);
  }
  return h;
}

EncodingTable EncodingTable::init(Index capacity, Index width, const std::vector<std::string>& modalities, Rng& rng) {
  if (capacity < 1) throw ConfigError("encoding capacity must be positive");
  EncodingTable t;
  t.positional = init_tensor({capacity, width}, Normal{0.0, kEncodingInitStd}, rng);
  t.decoder_positional = init_tensor({capacity + 1, width}, Normal{0.0, kEncodingInitStd}, rng);
  t.modality_names = modalities;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    t.modality.push_back(init_tensor({width}, Normal{0.0, kEncodingInitStd}, rng));
  }
  return t;
}

const Tensor& EncodingTable::modality_encoding(std::string_view name) const {
  const auto it = std::find(modality_names.begin(), modality_names.end(), name);
  if (it == modality_names.end()) throw ConfigError("unknown modality '" + std::string(name) + "'");
  return modality[static_cast<std::size_t>(it - modality_names.begin())];
}

Tensor add_encodings(const Tensor& a, std::string_view modality, const EncodingTable& tables) {
  const Tensor& e = tables.modality_encoding(modality);
  const Index steps = a.dim(-2);
  if (steps > tables.capacity()) {
    throw CapacityError("sequence of " + std::to_string(steps) + " steps exceeds encoding capacity " +
                        std::to_string(tables.capacity()));
  }
  return (a + slice(tables.positional, 0, 0, steps)) + e;
}

AdditiveMask build_band_mask(Index steps, Index modalities, Index mask_length) {
  if (steps < 1 || modalities < 1 || mask_length < 0) throw ConfigError("band mask needs T >= 1, M >= 1, mask_length >= 0");
  const Index n = steps * modalities;
  AdditiveMask mask(n, n);
  constexpr double hidden = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const Index ti = i % steps;
    for (Index j = 0; j < n; ++j) {
      const Index tj = j % steps;
      mask(i, j) = std::abs(ti - tj) <= mask_length ? 0.0 : hidden;
    }
  }
  return mask;
}

MhaBlock MhaBlock::init(Index width, Index heads, Rng& rng) {
  if (heads < 1 || width % heads != 0) {
    throw ConfigError("model width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  MhaBlock b;
  b.heads = heads;
  b.query = Linear::init(width, width, rng);
  b.key = Linear::init(width, width, rng);
  b.value = Linear::init(width, width, rng);
  b.output = Linear::init(width, width, rng);
  return b;
}

MhaOutput mha_forward(const MhaBlock& block, const Tensor& q, const Tensor& k, const Tensor& v, const AdditiveMask* mask,
                      bool keep_weights) {
  AttentionResult r = attention(block.query(q), block.key(k), block.value(v), block.heads, mask, keep_weights);
  return {block.output(r.output), std::move(r.weights)};
}

EncoderLayer EncoderLayer::init(Index width, Index heads, Index ffn_width, double dropout, Rng& rng) {
  EncoderLayer l;
  l.self_attention = MhaBlock::init(width, heads, rng);
  l.norm1 = LayerNorm::init(width);
  l.ffn = FeedForward::init(width, ffn_width, dropout, rng);
  l.norm2 = LayerNorm::init(width);
  l.dropout = dropout;
  return l;
}

Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& x, const AdditiveMask* mask, const ForwardContext& ctx) {
  Tensor attended = mha_forward(layer.self_attention, x, x, x, mask).output;
  Tensor h = layer.norm1(x + ctx.drop(attended, layer.dropout));
  return layer.norm2(h + ctx.drop(layer.ffn.forward(h, ctx), layer.dropout));
}

DecoderLayer DecoderLayer::init(Index width, Index heads, Index ffn_width, double dropout, Rng& rng) {
  DecoderLayer l;
  l.self_attention = MhaBlock::init(width, heads, rng);
  l.norm1 = LayerNorm::init(width);
  l.cross_attention = MhaBlock::init(width, heads, rng);
  l.norm2 = LayerNorm::init(width);
  l.ffn = FeedForward::init(width, ffn_width, dropout, rng);
  l.norm3 = LayerNorm::init(width);
  l.dropout = dropout;
  return l;
}

ErnHead ErnHead::init(Index width, Index hidden_width, double dropout, Rng& rng) {
  return {Linear::init(width, hidden_width, rng), Linear::init(hidden_width, 1, rng), dropout};
}

Tensor ern_forward(const ErnHead& head, const Tensor& d, const ForwardContext& ctx) {
  return head.out(ctx.drop(relu(head.hidden(d)), head.dropout));
}

void collect_parameters(const Linear& layer, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

void collect_parameters(const LayerNorm& layer, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".gain", layer.gain});
  out.push_back({prefix + ".bias", layer.bias});
}

void collect_parameters(const FeedForward& layer, const std::string& prefix, std::vector<NamedTensor>& out) {
  collect_parameters(layer.expand, prefix + ".expand", out);
  collect_parameters(layer.project, prefix + ".project", out);
}

void collect_parameters(const TcnStack& stack, const std::string& prefix, std::vector<NamedTensor>& out) {
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    const auto& layer = stack.layers[i];
    const std::string p = prefix + ".layer" + std::to_string(i);
    out.push_back({p + ".kernel", layer.kernel});
    out.push_back({p + ".bias", layer.bias});
    if (layer.projection) collect_parameters(*layer.projection, p + ".projection", out);
  }
}

void collect_parameters(const EncodingTable& tables, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".positional", tables.positional});
  out.push_back({prefix + ".decoder_positional", tables.decoder_positional});
  for (std::size_t i = 0; i < tables.modality.size(); ++i) {
    out.push_back({prefix + ".modality." + tables.modality_names[i], tables.modality[i]});
  }
}

void collect_parameters(const MhaBlock& block, const std::string& prefix, std::vector<NamedTensor>& out) {
  collect_parameters(block.query, prefix + ".query", out);
  collect_parameters(block.key, prefix + ".key", out);
  collect_parameters(block.value, prefix + ".value", out);
  collect_parameters(block.output, prefix + ".output", out);
}

void collect_parameters(const EncoderLayer& layer, const std::string& prefix, std::vector<NamedTensor>& out) {
  collect_parameters(layer.self_attention, prefix + ".self_attention", out);
  collect_parameters(layer.norm1, prefix + ".norm1", out);
  collect_parameters(layer.ffn, prefix + ".ffn", out);
  collect_parameters(layer.norm2, prefix + ".norm2", out);
}

void collect_parameters(const DecoderLayer& layer, const std::string& prefix, std::vector<NamedTensor>& out) {
  collect_parameters(layer.self_attention, prefix + ".self_attention", out);
  collect_parameters(layer.norm1, prefix + ".norm1", out);
  collect_parameters(layer.cross_attention, prefix + ".cross_attention", out);
  collect_parameters(layer.norm2, prefix + ".norm2", out);
  collect_parameters(layer.ffn, prefix + ".ffn", out);
  collect_parameters(layer.norm3, prefix + ".norm3", out);
}

void collect_parameters(const ErnHead& head, const std::string& prefix, std::vector<NamedTensor>& out) {
  collect_parameters(head.hidden, prefix + ".hidden", out);
  collect_parameters(head.out, prefix + ".out", out);
}

}  // namespace mmer
