#ifndef MMER_LAYERS_HPP
#define MMER_LAYERS_HPP

// Building blocks of the encoder and decoder: per-modality TCN front-end,
// learned positional and modality encodings, masked multi-head attention,
// post-norm encoder and decoder layers, and the regression head.

#include "mmer/gradcheck.hpp"
#include "mmer/ops.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmer {

/// Dropout switch and randomness for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;

  Tensor drop(const Tensor& x, double rate) const;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kEncodingInitStd = 0.02;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(Index in, Index out, Rng& rng);
  Index in_width() const { return weight.dim(0); }
  Index out_width() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = kLayerNormEps;

  static LayerNorm init(Index width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
};

/// Position-wise GELU feed-forward network.
struct FeedForward {
  Linear expand;
  Linear project;
  double dropout = 0.0;

  static FeedForward init(Index width, Index hidden, double dropout, Rng& rng);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
};

// ---------------------------------------------------------------------------
// TCN

/// Stack of dilated causal convolutions; layer i uses dilation 2^i. Each layer
/// computes relu(dropout(relu(conv(x))) + residual(x)) where the residual is a
/// 1x1 projection when the width changes and the identity otherwise.
struct TcnStack {
  struct Layer {
    Tensor kernel;  // [k, c_in, c_out]
    Tensor bias;    // [c_out]
    Index dilation = 1;
    std::optional<Linear> projection;
  };
  std::vector<Layer> layers;
  double dropout = 0.0;

  static TcnStack init(Index input_width, Index output_width, Index num_layers, Index kernel_size, double dropout, Rng& rng);
  Index input_width() const { return layers.front().kernel.dim(1); }
  Index output_width() const { return layers.back().kernel.dim(2); }
  /// Number of past steps (including the current one) an output can see.
  Index receptive_field() const;
};

/// x: [T, d_in] or [B, T, d_in] -> same leading shape with d_model columns.
Tensor tcn_forward(const TcnStack& stack, const Tensor& x, const ForwardContext& ctx);

// ---------------------------------------------------------------------------
// Encodings

struct CapacityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Learned encoder positions p_1..p_Tmax (row t-1 holds p_t), decoder
/// positions p'_0..p'_Tmax (row t holds p'_t) and one encoding per modality.
struct EncodingTable {
  Tensor positional;          // [Tmax, d]
  Tensor decoder_positional;  // [Tmax + 1, d]
  std::vector<std::string> modality_names;
  std::vector<Tensor> modality;  // [d] each

  static EncodingTable init(Index capacity, Index width, const std::vector<std::string>& modalities, Rng& rng);
  Index capacity() const { return positional.dim(0); }
  /// Throws ConfigError for an undeclared modality.
  const Tensor& modality_encoding(std::string_view name) const;
};

/// f_t = a_t + p_t + e^m for every step of a [T, d] or [B, T, d] input.
/// Throws CapacityError when T exceeds the table capacity.
Tensor add_encodings(const Tensor& a, std::string_view modality, const EncodingTable& tables);

/// Band mask over the modality-major token sequence (token m*T + t): tokens
/// (m, t) and (m', t') see each other iff |t - t'| <= mask_length.
AdditiveMask build_band_mask(Index steps, Index modalities, Index mask_length);

// ---------------------------------------------------------------------------
// Attention

struct MhaBlock {
  Index heads = 1;
  Linear query;
  Linear key;
  Linear value;
  Linear output;

  static MhaBlock init(Index width, Index heads, Rng& rng);
};

struct MhaOutput {
  Tensor output;
  /// [B, heads, Nq, Nk] (or [heads, Nq, Nk]) as a row-major matrix; only
  /// filled when requested.
  RowMatrix weights;
};

MhaOutput mha_forward(const MhaBlock& block, const Tensor& q, const Tensor& k, const Tensor& v, const AdditiveMask* mask,
                      bool keep_weights = false);

struct EncoderLayer {
  MhaBlock self_attention;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;
  double dropout = 0.0;

  static EncoderLayer init(Index width, Index heads, Index ffn_width, double dropout, Rng& rng);
};

/// x -> LN(x + MHSA(x)) -> LN(. + FFN(.)). x is [N, d] or [B, N, d].
Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& x, const AdditiveMask* mask, const ForwardContext& ctx);

/// Transformer decoder layer: MHSA, MHCA and FFN, each with a residual
/// connection followed by layer normalisation.
struct DecoderLayer {
  MhaBlock self_attention;
  LayerNorm norm1;
  MhaBlock cross_attention;
  LayerNorm norm2;
  FeedForward ffn;
  LayerNorm norm3;
  double dropout = 0.0;

  static DecoderLayer init(Index width, Index heads, Index ffn_width, double dropout, Rng& rng);
};

/// Regression head d -> hidden (ReLU) -> 1, applied per position.
struct ErnHead {
  Linear hidden;
  Linear out;
  double dropout = 0.0;

  static ErnHead init(Index width, Index hidden_width, double dropout, Rng& rng);
};

/// d: [T, d_model] or [B, T, d_model] -> [T, 1] or [B, T, 1].
Tensor ern_forward(const ErnHead& head, const Tensor& d, const ForwardContext& ctx);

// ---------------------------------------------------------------------------
// Parameter enumeration, in a fixed order with dotted names.

void collect_parameters(const Linear& layer, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const LayerNorm& layer, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const FeedForward& layer, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const TcnStack& stack, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const EncodingTable& tables, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const MhaBlock& block, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const EncoderLayer& layer, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const DecoderLayer& layer, const std::string& prefix, std::vector<NamedTensor>& out);
void collect_parameters(const ErnHead& head, const std::string& prefix, std::vector<NamedTensor>& out);

}  // namespace mmer

#endif  // MMER_LAYERS_HPP
