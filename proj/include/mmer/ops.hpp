#ifndef MMER_OPS_HPP
#define MMER_OPS_HPP

#include "mmer/rng.hpp"
#include "mmer/tensor.hpp"

#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace mmer {

// ---------------------------------------------------------------------------
// Construction

struct Zeros {};
struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
using InitScheme = std::variant<Zeros, Normal, Uniform>;

/// Values are drawn in row-major order. Throws ShapeError on a zero extent.
Tensor init_tensor(const Shape& shape, const InitScheme& scheme, Rng& rng);

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic
//
// Binary ops accept equal shapes, or a right operand whose (rows x cols)
// view tiles the left operand row-wise: cols must match and rows(a) must be a
// multiple of rows(b). This covers [d] onto [N, d] and [T, d] onto [B, T, d].

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor relu(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

/// Normalises over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1 / (1 - rate). Identity otherwise.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---------------------------------------------------------------------------
// Linear algebra

/// [.., n, k] x [k, m] -> [.., n, m]; or batched [B, n, k] x [B, k, m] where
/// a batch extent of 1 (or a missing batch axis) broadcasts.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x W + b over the last axis; W is [in, out], b is [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, Index axis, Index start, Index length);
Tensor concat(std::span<const Tensor> parts, Index axis);

// ---------------------------------------------------------------------------
// Softmax and attention

/// Additive attention mask: 0 where attention is allowed, -inf where hidden.
using AdditiveMask = RowMatrix;

/// Softmax along `axis`. `mask`, when given, is added before normalisation and
/// must have the same number of elements as one (axis, trailing) block: for
/// axis = rank-1 it is [rows_in_block, extent] broadcast over leading blocks,
/// i.e. its last extent equals the softmax extent and it tiles row-wise.
/// Throws DegenerateAttentionError on a fully masked slice.
Tensor softmax(const Tensor& x, Index axis, const AdditiveMask* mask = nullptr);

struct AttentionResult {
  Tensor output;
  /// [B, heads, Nq, Nk] for batched inputs, [heads, Nq, Nk] otherwise;
  /// empty unless requested.
  RowMatrix weights;
};

/// Multi-head scaled dot-product attention on already projected inputs.
/// q: [B, Nq, d] or [Nq, d]; k, v: [B, Nk, d] or [Nk, d]. Heads split the
/// last axis into contiguous blocks of d / heads; scores scale by
/// 1 / sqrt(d / heads). mask is [Nq, Nk], shared across batch and heads.
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads,
                          const AdditiveMask* mask = nullptr, bool keep_weights = false);

/// A key or value row source for single-query attention: a [B, d] tensor, or
/// one time step of a [B, T, d] tensor.
struct Slot {
  Tensor source;
  Index step = -1;
};

/// Single-position multi-head attention of q [B, d] over n slots per batch
/// row, without masking. Returns the attended [B, d] output and, in
/// `weights`, a (B * heads) x n matrix of attention weights.
AttentionResult attend_slots(const Tensor& q, std::span<const Slot> keys, std::span<const Slot> values,
                             Index heads);

// ---------------------------------------------------------------------------
// Convolution

/// Causal dilated 1-D convolution with left zero padding of
/// (k - 1) * dilation. x: [T, c_in] or [B, T, c_in]; kernel: [k, c_in, c_out];
/// bias: [c_out]. Output tap j reads input time t - (k - 1 - j) * dilation.
Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Index dilation);

}  // namespace mmer

#endif  // MMER_OPS_HPP
