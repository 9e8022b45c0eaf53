#include "mmer/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <unordered_map>

namespace mmer {

namespace {

using FlatMap = Eigen::Map<RowMatrix>;
using ConstFlatMap = Eigen::Map<const RowMatrix>;

Shape with_last(Shape shape, Index last) {
  shape.back() = last;
  return shape;
}

Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

// (outer, extent, inner) decomposition around `axis`.
struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisView axis_view(const Shape& shape, Index axis) {
  AxisView v;
  for (Index i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.extent = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) v.inner *= shape[static_cast<std::size_t>(i)];
  return v;
}

void check_tiles(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (b.rank() > a.rank() || a.cols() != b.cols() || a.rows() % b.rows() != 0) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  }
}

// Sums the row-blocks of g (rows(g) = k * rows) into a rows x cols matrix.
RowMatrix fold_rows(const RowMatrix& g, Index rows) {
  if (g.rows() == rows) return g;
  RowMatrix acc = RowMatrix::Zero(rows, g.cols());
  for (Index start = 0; start < g.rows(); start += rows) acc += g.middleRows(start, rows);
  return acc;
}

// Repeats b row-wise until it has `rows` rows.
RowMatrix tile_rows(const RowMatrix& b, Index rows) {
  if (b.rows() == rows) return b;
  return b.replicate(rows / b.rows(), 1);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

Tensor init_tensor(const Shape& shape, const InitScheme& scheme, Rng& rng) {
  Tensor t(shape);
  RowMatrix& v = t.mutable_value();
  double* data = v.data();
  const Index n = v.size();
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Normal>) {
          if (s.stddev < 0.0) throw ConfigError("normal init needs stddev >= 0");
          for (Index i = 0; i < n; ++i) data[i] = rng.normal(s.mean, s.stddev);
        } else if constexpr (std::is_same_v<S, Uniform>) {
          if (s.hi < s.lo) throw ConfigError("uniform init needs lo <= hi");
          for (Index i = 0; i < n; ++i) data[i] = rng.uniform(s.lo, s.hi);
        }
      },
      scheme);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_tiles(a, b, "add");
  RowMatrix out = a.value() + tile_rows(b.value(), a.rows());
  const Index b_rows = b.rows();
  return record_op("add", a.shape(), std::move(out), {a, b}, [b_rows](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] += fold_rows(g, b_rows);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_tiles(a, b, "sub");
  RowMatrix out = a.value() - tile_rows(b.value(), a.rows());
  const Index b_rows = b.rows();
  return record_op("sub", a.shape(), std::move(out), {a, b}, [b_rows](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] -= fold_rows(g, b_rows);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_tiles(a, b, "mul");
  RowMatrix out = a.value().cwiseProduct(tile_rows(b.value(), a.rows()));
  return record_op("mul", a.shape(), std::move(out), {a, b}, [a, b](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += g.cwiseProduct(tile_rows(b.value(), g.rows()));
    if (grads[1]) *grads[1] += fold_rows(g.cwiseProduct(a.value()), b.rows());
  });
}

Tensor scale(const Tensor& a, double factor) {
  RowMatrix out = a.value() * factor;
  return record_op("scale", a.shape(), std::move(out), {a}, [factor](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += g * factor;
  });
}

Tensor relu(const Tensor& x) {
  RowMatrix out = x.value().cwiseMax(0.0);
  return record_op("relu", x.shape(), std::move(out), {x}, [x](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += (x.value().array() > 0.0).select(g, 0.0);
  });
}

Tensor gelu(const Tensor& x) {
  RowMatrix out = x.value().unaryExpr([](double v) { return v * normal_cdf(v); });
  return record_op("gelu", x.shape(), std::move(out), {x}, [x](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (!grads[0]) return;
    *grads[0] += g.cwiseProduct(x.value().unaryExpr([](double v) { return normal_cdf(v) + v * normal_pdf(v); }));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm eps must be positive");
  const Index d = x.cols();
  if (gain.numel() != d || bias.numel() != d) throw ShapeError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
  const RowMatrix& xv = x.value();
  auto normed = std::make_shared<RowMatrix>(xv.rows(), d);
  auto inv_std = std::make_shared<Vector>(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    normed->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
  }
  RowMatrix out = normed->array().rowwise() * gain.value().array().row(0);
  out.array().rowwise() += bias.value().array().row(0);
  return record_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                   [normed, inv_std, gain](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (grads[1]) *grads[1] += g.cwiseProduct(*normed).colwise().sum();
                     if (grads[2]) *grads[2] += g.colwise().sum();
                     if (!grads[0]) return;
                     const Index d = g.cols();
                     RowMatrix gx = g.array().rowwise() * gain.value().array().row(0);
                     for (Index r = 0; r < g.rows(); ++r) {
                       const double m1 = gx.row(r).mean();
                       const double m2 = gx.row(r).dot(normed->row(r)) / static_cast<double>(d);
                       grads[0]->row(r).array() +=
                           (*inv_std)(r) * (gx.row(r).array() - m1 - normed->row(r).array() * m2);
                     }
                   });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  auto keep = std::make_shared<RowMatrix>(x.rows(), x.cols());
  const double survivor_scale = 1.0 / (1.0 - rate);
  double* data = keep->data();
  for (Index i = 0; i < keep->size(); ++i) data[i] = rng.uniform() >= rate ? survivor_scale : 0.0;
  RowMatrix out = x.value().cwiseProduct(*keep);
  return record_op("dropout", x.shape(), std::move(out), {x}, [keep](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) *grads[0] += g.cwiseProduct(*keep);
  });
}

Tensor sum(const Tensor& x) {
  RowMatrix out(1, 1);
  out(0, 0) = x.value().sum();
  return record_op("sum", Shape{}, std::move(out), {x}, [](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) grads[0]->array() += g(0, 0);
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  RowMatrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return record_op("mean", Shape{}, std::move(out), {x}, [n](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (grads[0]) grads[0]->array() += g(0, 0) / n;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() < 2) throw ShapeError("matmul needs a rank >= 1 left operand and rank >= 2 right operand");
  const Index k = a.cols();
  if (b.dim(-2) != k) {
    throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = b.cols();

  if (b.rank() == 2) {
    RowMatrix out = a.value() * b.value();
    return record_op("matmul", with_last(a.shape(), m), std::move(out), {a, b},
                     [a, b](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                       if (grads[0]) grads[0]->noalias() += g * b.value().transpose();
                       if (grads[1]) grads[1]->noalias() += a.value().transpose() * g;
                     });
  }

  if (b.rank() != 3 || a.rank() > 3 || a.rank() < 2) throw ShapeError("batched matmul supports rank-3 operands only");
  const Index batch_a = a.rank() == 3 ? a.dim(0) : 1;
  const Index batch_b = b.dim(0);
  const Index batch = std::max(batch_a, batch_b);
  if ((batch_a != 1 && batch_a != batch) || (batch_b != 1 && batch_b != batch)) {
    throw ShapeError("matmul batch extents are not broadcast-compatible: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index n = a.dim(-2);
  RowMatrix out(batch * n, m);
  for (Index i = 0; i < batch; ++i) {
    const Index ia = batch_a == 1 ? 0 : i;
    const Index ib = batch_b == 1 ? 0 : i;
    out.middleRows(i * n, n).noalias() = a.value().middleRows(ia * n, n) * b.value().middleRows(ib * k, k);
  }
  return record_op("matmul", Shape{batch, n, m}, std::move(out), {a, b},
                   [a, b, batch, batch_a, batch_b, n, k](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     for (Index i = 0; i < batch; ++i) {
                       const Index ia = batch_a == 1 ? 0 : i;
                       const Index ib = batch_b == 1 ? 0 : i;
                       const auto gi = g.middleRows(i * n, n);
                       if (grads[0]) grads[0]->middleRows(ia * n, n).noalias() += gi * b.value().middleRows(ib * k, k).transpose();
                       if (grads[1]) grads[1]->middleRows(ib * k, k).noalias() += a.value().middleRows(ia * n, n).transpose() * gi;
                     }
                   });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || weight.dim(0) != x.cols()) {
    throw ShapeError("linear: weight " + to_string(weight.shape()) + " does not accept input " + to_string(x.shape()));
  }
  if (bias.numel() != weight.dim(1)) throw ShapeError("linear: bias size does not match weight output width");
  RowMatrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return record_op("linear", with_last(x.shape(), weight.dim(1)), std::move(out), {x, weight, bias},
                   [x, weight](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (grads[0]) grads[0]->noalias() += g * weight.value().transpose();
                     if (grads[1]) grads[1]->noalias() += x.value().transpose() * g;
                     if (grads[2]) *grads[2] += g.colwise().sum();
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  const Index cols = shape.empty() ? 1 : shape.back();
  RowMatrix out = ConstFlatMap(x.value().data(), x.numel() / cols, cols);
  const Index rows = x.rows();
  const Index old_cols = x.cols();
  return record_op("reshape", std::move(shape), std::move(out), {x},
                   [rows, old_cols](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (grads[0]) *grads[0] += ConstFlatMap(g.data(), rows, old_cols);
                   });
}

Tensor slice(const Tensor& x, Index axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), axis);
  if (start < 0 || length < 1 || start + length > v.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for axis extent " +
                     std::to_string(v.extent));
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  const ConstFlatMap src(x.value().data(), v.outer, v.extent * v.inner);
  RowMatrix flat = src.middleCols(start * v.inner, length * v.inner);
  const Index cols = shape.back();
  RowMatrix out = ConstFlatMap(flat.data(), flat.size() / cols, cols);
  return record_op("slice", std::move(shape), std::move(out), {x},
                   [v, start, length](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (!grads[0]) return;
                     FlatMap dst(grads[0]->data(), v.outer, v.extent * v.inner);
                     dst.middleCols(start * v.inner, length * v.inner) += ConstFlatMap(g.data(), v.outer, length * v.inner);
                   });
}

Tensor concat(std::span<const Tensor> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Tensor& first = parts.front();
  axis = normalize_axis(axis, first.rank());
  const AxisView base = axis_view(first.shape(), axis);
  Index total = 0;
  std::vector<Index> extents;
  extents.reserve(parts.size());
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) throw ShapeError("concat rank mismatch");
    for (Index i = 0; i < first.rank(); ++i) {
      if (i != axis && p.shape()[static_cast<std::size_t>(i)] != first.shape()[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat extent mismatch: " + to_string(p.shape()) + " vs " + to_string(first.shape()));
      }
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape shape = first.shape();
  shape[static_cast<std::size_t>(axis)] = total;
  RowMatrix flat(base.outer, total * base.inner);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    flat.middleCols(offset * base.inner, extents[i] * base.inner) =
        ConstFlatMap(parts[i].value().data(), base.outer, extents[i] * base.inner);
    offset += extents[i];
  }
  const Index cols = shape.back();
  RowMatrix out = ConstFlatMap(flat.data(), flat.size() / cols, cols);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record_op("concat", std::move(shape), std::move(out), std::move(inputs),
                   [extents, base, total](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     const ConstFlatMap src(g.data(), base.outer, total * base.inner);
                     Index offset = 0;
                     for (std::size_t i = 0; i < extents.size(); ++i) {
                       if (grads[i]) {
                         FlatMap dst(grads[i]->data(), base.outer, extents[i] * base.inner);
                         dst += src.middleCols(offset * base.inner, extents[i] * base.inner);
                       }
                       offset += extents[i];
                     }
                   });
}

namespace {

// In-place masked softmax of each row of `scores`; throws on fully masked rows.
void softmax_rows(RowMatrix& scores) {
  for (Index r = 0; r < scores.rows(); ++r) {
    const double top = scores.row(r).maxCoeff();
    if (top == -std::numeric_limits<double>::infinity()) {
      throw DegenerateAttentionError("softmax slice " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    double* row = scores.row(r).data();
    for (Index j = 0; j < scores.cols(); ++j) {
      const double v = row[j] == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(row[j] - top);
      row[j] = v;
      total += v;
    }
    scores.row(r) /= total;
  }
}

}  // namespace

Tensor softmax(const Tensor& x, Index axis, const AdditiveMask* mask) {
  axis = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), axis);
  RowMatrix out;
  if (v.inner == 1) {
    out = x.value();
    if (mask != nullptr) {
      if (mask->cols() != v.extent || out.rows() % mask->rows() != 0) {
        throw ShapeError("softmax mask of size " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                         " cannot broadcast onto " + to_string(x.shape()));
      }
      out += tile_rows(*mask, out.rows());
    }
    softmax_rows(out);
  } else {
    if (mask != nullptr) throw ShapeError("softmax masks are supported on the last axis only");
    // Move the axis last, normalise, move it back.
    const ConstFlatMap src(x.value().data(), v.outer * v.extent, v.inner);
    RowMatrix moved(v.outer * v.inner, v.extent);
    for (Index o = 0; o < v.outer; ++o) moved.middleRows(o * v.inner, v.inner) = src.middleRows(o * v.extent, v.extent).transpose();
    softmax_rows(moved);
    RowMatrix flat(v.outer * v.extent, v.inner);
    for (Index o = 0; o < v.outer; ++o) flat.middleRows(o * v.extent, v.extent) = moved.middleRows(o * v.inner, v.inner).transpose();
    out = ConstFlatMap(flat.data(), x.rows(), x.cols());
  }
  auto y = std::make_shared<RowMatrix>(out);
  return record_op("softmax", x.shape(), std::move(out), {x}, [y, v](const RowMatrix& g, std::span<RowMatrix* const> grads) {
    if (!grads[0]) return;
    if (v.inner == 1) {
      const Vector dots = g.cwiseProduct(*y).rowwise().sum();
      *grads[0] += y->cwiseProduct(g - dots.replicate(1, g.cols()));
      return;
    }
    const ConstFlatMap gy(g.data(), v.outer * v.extent, v.inner);
    const ConstFlatMap yy(y->data(), v.outer * v.extent, v.inner);
    FlatMap dst(grads[0]->data(), v.outer * v.extent, v.inner);
    for (Index o = 0; o < v.outer; ++o) {
      const auto gb = gy.middleRows(o * v.extent, v.extent);
      const auto yb = yy.middleRows(o * v.extent, v.extent);
      const Eigen::RowVectorXd dots = gb.cwiseProduct(yb).colwise().sum();
      dst.middleRows(o * v.extent, v.extent) += yb.cwiseProduct(gb - dots.replicate(v.extent, 1));
    }
  });
}

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, Index heads, const AdditiveMask* mask,
                          bool keep_weights) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3)) {
    throw ShapeError("attention expects q, k, v of equal rank 2 or 3");
  }
  const bool batched = q.rank() == 3;
  const Index batch = batched ? q.dim(0) : 1;
  if (batched && (k.dim(0) != batch || v.dim(0) != batch)) throw ShapeError("attention batch extents differ");
  const Index nq = q.dim(-2);
  const Index nk = k.dim(-2);
  if (v.dim(-2) != nk) throw ShapeError("attention keys and values must have the same length");
  const Index d = q.cols();
  if (k.cols() != d) throw ShapeError("attention query and key widths differ");
  if (heads < 1 || d % heads != 0 || v.cols() % heads != 0) {
    throw ShapeError("attention width is not divisible by " + std::to_string(heads) + " heads");
  }
  if (mask != nullptr && (mask->rows() != nq || mask->cols() != nk)) {
    throw ShapeError("attention mask must be " + std::to_string(nq) + "x" + std::to_string(nk));
  }
  const Index dh = d / heads;
  const Index dv = v.cols() / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(batch * heads));
  RowMatrix out(batch * nq, v.cols());
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      RowMatrix s = q.value().block(b * nq, h * dh, nq, dh) * k.value().block(b * nk, h * dh, nk, dh).transpose();
      s *= scale_factor;
      if (mask != nullptr) s += *mask;
      softmax_rows(s);
      out.block(b * nq, h * dv, nq, dv).noalias() = s * v.value().block(b * nk, h * dv, nk, dv);
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }

  AttentionResult result;
  if (keep_weights) {
    result.weights.resize(batch * heads * nq, nk);
    for (Index i = 0; i < batch * heads; ++i) result.weights.middleRows(i * nq, nq) = (*probs)[static_cast<std::size_t>(i)];
  }
  Shape shape = q.shape();
  shape.back() = v.cols();
  result.output = record_op(
      "attention", std::move(shape), std::move(out), {q, k, v},
      [q, k, v, probs, batch, heads, nq, nk, dh, dv, scale_factor](const RowMatrix& g, std::span<RowMatrix* const> grads) {
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const RowMatrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
            const auto gb = g.block(b * nq, h * dv, nq, dv);
            if (grads[2]) grads[2]->block(b * nk, h * dv, nk, dv).noalias() += p.transpose() * gb;
            if (!grads[0] && !grads[1]) continue;
            RowMatrix dp = gb * v.value().block(b * nk, h * dv, nk, dv).transpose();
            const Vector dots = dp.cwiseProduct(p).rowwise().sum();
            RowMatrix ds = p.cwiseProduct(dp - dots.replicate(1, nk)) * scale_factor;
            if (grads[0]) grads[0]->block(b * nq, h * dh, nq, dh).noalias() += ds * k.value().block(b * nk, h * dh, nk, dh);
            if (grads[1]) grads[1]->block(b * nk, h * dh, nk, dh).noalias() += ds.transpose() * q.value().block(b * nq, h * dh, nq, dh);
          }
        }
      });
  return result;
}

AttentionResult attend_slots(const Tensor& q, std::span<const Slot> keys, std::span<const Slot> values, Index heads) {
  if (q.rank() != 2) throw ShapeError("attend_slots expects a [B, d] query");
  if (keys.empty() || keys.size() != values.size()) throw ShapeError("attend_slots needs equally many (>= 1) keys and values");
  const Index batch = q.dim(0);
  const Index d = q.cols();
  if (heads < 1 || d % heads != 0) throw ShapeError("attend_slots width is not divisible by heads");
  const Index dh = d / heads;
  const Index n = static_cast<Index>(keys.size());
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  // Distinct source tensors become op inputs 1..; slots refer to them by index.
  std::vector<Tensor> inputs{q};
  std::unordered_map<const detail::Node*, std::size_t> input_of;
  struct Ref {
    std::size_t input;
    Index row0;   // row of batch 0
    Index stride; // row step between batch entries
  };
  auto resolve = [&](const Slot& s) {
    const Tensor& src = s.source;
    if (src.cols() != d) throw ShapeError("attend_slots slot width differs from query width");
    Ref ref{};
    if (src.rank() == 2) {
      if (src.dim(0) != batch) throw ShapeError("attend_slots slot batch differs from query batch");
      ref.row0 = 0;
      ref.stride = 1;
    } else if (src.rank() == 3) {
      if (src.dim(0) != batch || s.step < 0 || s.step >= src.dim(1)) throw ShapeError("attend_slots slot step out of range");
      ref.row0 = s.step;
      ref.stride = src.dim(1);
    } else {
      throw ShapeError("attend_slots slots must be rank 2 or 3");
    }
    auto [it, inserted] = input_of.try_emplace(src.node(), inputs.size());
    if (inserted) inputs.push_back(src);
    ref.input = it->second;
    return ref;
  };
  auto key_refs = std::make_shared<std::vector<Ref>>();
  auto value_refs = std::make_shared<std::vector<Ref>>();
  key_refs->reserve(keys.size());
  value_refs->reserve(values.size());
  for (const Slot& s : keys) key_refs->push_back(resolve(s));
  for (const Slot& s : values) value_refs->push_back(resolve(s));

  auto probs = std::make_shared<RowMatrix>(batch * heads, n);
  RowMatrix out = RowMatrix::Zero(batch, d);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto prow = probs->row(b * heads + h);
      const auto qh = q.value().row(b).segment(h * dh, dh);
      for (Index j = 0; j < n; ++j) {
        const Ref& r = (*key_refs)[static_cast<std::size_t>(j)];
        prow(j) = scale_factor * qh.dot(inputs[r.input].value().row(r.row0 + b * r.stride).segment(h * dh, dh));
      }
      prow = (prow.array() - prow.maxCoeff()).exp();
      prow /= prow.sum();
      for (Index j = 0; j < n; ++j) {
        const Ref& r = (*value_refs)[static_cast<std::size_t>(j)];
        out.row(b).segment(h * dh, dh) += prow(j) * inputs[r.input].value().row(r.row0 + b * r.stride).segment(h * dh, dh);
      }
    }
  }

  AttentionResult result;
  result.weights = *probs;
  std::vector<Tensor> held = inputs;
  result.output = record_op(
      "attend_slots", Shape{batch, d}, std::move(out), std::move(inputs),
      [held = std::move(held), key_refs, value_refs, probs, batch, heads, n, dh, scale_factor](
          const RowMatrix& g, std::span<RowMatrix* const> grads) {
        Vector dp(n);
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const auto prow = probs->row(b * heads + h);
            const auto gh = g.row(b).segment(h * dh, dh);
            for (Index j = 0; j < n; ++j) {
              const Ref& r = (*value_refs)[static_cast<std::size_t>(j)];
              const Index row = r.row0 + b * r.stride;
              dp(j) = gh.dot(held[r.input].value().row(row).segment(h * dh, dh));
              if (grads[r.input]) grads[r.input]->row(row).segment(h * dh, dh) += prow(j) * gh;
            }
            const double dot = dp.dot(prow.transpose());
            const auto qh = held[0].value().row(b).segment(h * dh, dh);
            for (Index j = 0; j < n; ++j) {
              const double ds = prow(j) * (dp(j) - dot) * scale_factor;
              if (ds == 0.0) continue;
              const Ref& r = (*key_refs)[static_cast<std::size_t>(j)];
              const Index row = r.row0 + b * r.stride;
              if (grads[0]) grads[0]->row(b).segment(h * dh, dh) += ds * held[r.input].value().row(row).segment(h * dh, dh);
              if (grads[r.input]) grads[r.input]->row(row).segment(h * dh, dh) += ds * qh;
            }
          }
        }
      });
  return result;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Index dilation) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("causal_conv1d expects [T, c] or [B, T, c] input");
  if (kernel.rank() != 3) throw ShapeError("causal_conv1d kernel must be [k, c_in, c_out]");
  if (dilation < 1) throw ConfigError("causal_conv1d dilation must be positive");
  const Index taps = kernel.dim(0);
  const Index c_in = kernel.dim(1);
  const Index c_out = kernel.dim(2);
  if (x.cols() != c_in) {
    throw ShapeError("causal_conv1d channel mismatch: input has " + std::to_string(x.cols()) + ", kernel expects " + std::to_string(c_in));
  }
  if (bias.numel() != c_out) throw ShapeError("causal_conv1d bias must have c_out entries");
  const Index batch = x.rank() == 3 ? x.dim(0) : 1;
  const Index steps = x.dim(-2);

  RowMatrix out(batch * steps, c_out);
  out.rowwise() = bias.value().row(0);
  for (Index j = 0; j < taps; ++j) {
    const Index shift = (taps - 1 - j) * dilation;
    if (shift >= steps) continue;
    const auto w = kernel.value().middleRows(j * c_in, c_in);
    for (Index b = 0; b < batch; ++b) {
      out.middleRows(b * steps + shift, steps - shift).noalias() += x.value().middleRows(b * steps, steps - shift) * w;
    }
  }
  return record_op("causal_conv1d", with_last(x.shape(), c_out), std::move(out), {x, kernel, bias},
                   [x, kernel, taps, c_in, batch, steps, dilation](const RowMatrix& g, std::span<RowMatrix* const> grads) {
                     if (grads[2]) *grads[2] += g.colwise().sum();
                     for (Index j = 0; j < taps; ++j) {
                       const Index shift = (taps - 1 - j) * dilation;
                       if (shift >= steps) continue;
                       const auto w = kernel.value().middleRows(j * c_in, c_in);
                       for (Index b = 0; b < batch; ++b) {
                         const auto gb = g.middleRows(b * steps + shift, steps - shift);
                         if (grads[0]) grads[0]->middleRows(b * steps, steps - shift).noalias() += gb * w.transpose();
                         if (grads[1]) {
                           grads[1]->middleRows(j * c_in, c_in).noalias() +=
                               x.value().middleRows(b * steps, steps - shift).transpose() * gb;
                         }
                       }
                     }
                   });
}

}  // namespace mmer
