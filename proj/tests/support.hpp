#ifndef MMER_TESTS_SUPPORT_HPP
#define MMER_TESTS_SUPPORT_HPP

#include "mmer/model.hpp"
#include "mmer/ops.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace mmer::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  return init_tensor(shape, Normal{0.0, stddev}, rng);
}

inline Tensor random_param(const Shape& shape, Rng& rng, double stddev = 1.0) {
  Tensor t = random_tensor(shape, rng, stddev);
  t.set_requires_grad(true);
  return t;
}

/// Dense batch of random features for every declared modality.
inline Batch random_batch(const ModelConfig& cfg, Index batch, Index steps, Rng& rng) {
  Batch b;
  for (const auto& m : cfg.modalities) b.features.push_back(random_tensor({batch, steps, m.width}, rng));
  b.labels = RowMatrix::Zero(batch, steps);
  b.available = all_modalities(cfg.modalities.size());
  return b;
}

inline ModelConfig small_config(Index modalities = 2, Index d_model = 8) {
  ModelConfig cfg;
  cfg.modalities.clear();
  const char* names[] = {"audio", "video", "physio", "text"};
  const Index widths[] = {3, 2, 4, 2};
  for (Index m = 0; m < modalities; ++m) cfg.modalities.push_back({names[m], widths[m]});
  cfg.d_model = d_model;
  cfg.encoder_heads = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.decoder_heads = 1;
  cfg.tcn_layers = 2;
  cfg.tcn_kernel = 3;
  cfg.ffn_width = 2 * d_model;
  cfg.ern_hidden = 4;
  cfg.mask_length = 3;
  cfg.max_steps = 32;
  cfg.dropout = 0.1;
  return cfg;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Plain Eigen reference decoder: recomputes every layer over the whole prefix
// at every step, with no cache and no tape.

namespace ref {

using M = Eigen::MatrixXd;
using RV = Eigen::RowVectorXd;

inline M affine(const M& x, const Tensor& w, const Tensor& b) {
  M y = x * M(w.value());
  y.rowwise() += RV(b.value().row(0));
  return y;
}

inline M norm(const M& x, const LayerNorm& ln) {
  M y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    y.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + ln.eps)).matrix();
    y.row(r) = y.row(r).cwiseProduct(RV(ln.gain.value().row(0))) + RV(ln.bias.value().row(0));
  }
  return y;
}

inline M gelu(const M& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

/// Multi-head attention of each query row over the key rows allowed by
/// `visible(q, k)`.
template <typename Visible>
M attend(const M& q, const M& k, const M& v, Index heads, Visible visible) {
  const Index d = q.cols();
  const Index dh = d / heads;
  M out = M::Zero(q.rows(), d);
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      Eigen::VectorXd s = Eigen::VectorXd::Constant(k.rows(), -INFINITY);
      for (Index j = 0; j < k.rows(); ++j) {
        if (visible(i, j)) s(j) = q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(double(dh));
      }
      const double top = s.maxCoeff();
      Eigen::VectorXd w = (s.array() - top).exp();
      w /= w.sum();
      for (Index j = 0; j < k.rows(); ++j) {
        if (w(j) != 0.0) out.row(i).segment(h * dh, dh) += w(j) * v.row(j).segment(h * dh, dh);
      }
    }
  }
  return out;
}

/// Predictions y_1..y_T for batch row `b` from per-modality encoder outputs.
inline Eigen::VectorXd decode(const Model& model, const EncoderOutput& enc, Index b) {
  const Index T = enc.steps;
  const Index d = model.config.d_model;
  std::vector<M> banks;
  for (const auto& r : enc.per_modality) banks.push_back(M(r.value().middleRows(b * T, T)));
  Eigen::VectorXd y(T);
  M outputs(0, d);  // d_1..d_{t-1}
  for (Index t = 1; t <= T; ++t) {
    M x(t, d);
    for (Index s = 0; s < t; ++s) {
      const RV prev = s == 0 ? RV(model.start.value().row(0)) : RV(outputs.row(s - 1));
      x.row(s) = prev + RV(model.encodings.decoder_positional.value().row(s));
    }
    for (const auto& layer : model.decoder) {
      const auto& sa = layer.self_attention;
      M a = attend(affine(x, sa.query.weight, sa.query.bias), affine(x, sa.key.weight, sa.key.bias),
                   affine(x, sa.value.weight, sa.value.bias), sa.heads, [](Index i, Index j) { return j <= i; });
      M h = norm(x + affine(a, sa.output.weight, sa.output.bias), layer.norm1);
      const auto& ca = layer.cross_attention;
      M q = affine(h, ca.query.weight, ca.query.bias);
      M c(t, d);
      for (Index s = 0; s < t; ++s) {
        M k(banks.size(), d), v(banks.size(), d);
        for (std::size_t m = 0; m < banks.size(); ++m) {
          k.row(m) = affine(banks[m].row(s), ca.key.weight, ca.key.bias);
          v.row(m) = affine(banks[m].row(s), ca.value.weight, ca.value.bias);
        }
        c.row(s) = attend(q.row(s), k, v, ca.heads, [](Index, Index) { return true; });
      }
      M h2 = norm(h + affine(c, ca.output.weight, ca.output.bias), layer.norm2);
      M f = affine(gelu(affine(h2, layer.ffn.expand.weight, layer.ffn.expand.bias)), layer.ffn.project.weight,
                   layer.ffn.project.bias);
      x = norm(h2 + f, layer.norm3);
    }
    outputs.conservativeResize(t, d);
    outputs.row(t - 1) = x.row(t - 1);
    M hidden = affine(x.row(t - 1), model.ern.hidden.weight, model.ern.hidden.bias).cwiseMax(0.0);
    y(t - 1) = affine(hidden, model.ern.out.weight, model.ern.out.bias)(0, 0);
  }
  return y;
}

}  // namespace ref
}  // namespace mmer::testing

#endif  // MMER_TESTS_SUPPORT_HPP
