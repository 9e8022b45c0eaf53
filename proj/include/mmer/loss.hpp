#ifndef MMER_LOSS_HPP
#define MMER_LOSS_HPP

#include "mmer/tensor.hpp"

namespace mmer {

/// 1 - mean over segments of the per-segment CCC. `pred` is [B, T] (or [T]
/// for a single segment) and `truth` holds the matching B x T labels. Each
/// segment uses population moments and the kCccEpsilon denominator guard.
Tensor ccc_loss(const Tensor& pred, const RowMatrix& truth);

}  // namespace mmer

#endif  // MMER_LOSS_HPP
