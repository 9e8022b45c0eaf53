#ifndef MMER_TESTS_INVARIANTS_HPP
#define MMER_TESTS_INVARIANTS_HPP

// Architecture invariant probes shared by the unit tests and the acceptance
// binary. Each returns the largest observed deviation over its configurations.

#include "mmer/gradcheck.hpp"
#include "mmer/loss.hpp"
#include "support.hpp"

#include <algorithm>

namespace mmer::testing {

inline Index pick(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

inline ModelConfig random_config(Rng& rng) {
  ModelConfig cfg = small_config(pick(rng, 1, 3), 4 * pick(rng, 1, 2));
  cfg.encoder_heads = pick(rng, 1, 2);
  cfg.decoder_heads = pick(rng, 1, 2);
  cfg.encoder_layers = pick(rng, 1, 2);
  cfg.decoder_layers = pick(rng, 1, 2);
  cfg.tcn_layers = pick(rng, 1, 2);
  cfg.tcn_kernel = pick(rng, 2, 3);
  cfg.mask_length = pick(rng, 1, 3);
  cfg.ffn_width = 2 * cfg.d_model;
  return cfg;
}

inline double max_abs_diff(const RowMatrix& a, const RowMatrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Perturbs raw inputs at one time step s and measures how encoder outputs
/// change at times u outside the reachable window
/// [s - L * mask_length, s + (RF - 1) + L * mask_length].
inline double encoder_reachability(int configs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    ModelConfig cfg = random_config(rng);
    Rng init(rng.next_u64());
    Model model = Model::init(cfg, init);
    const Index reach = cfg.encoder_layers * cfg.mask_length;
    const Index rf = model.tcn.front().receptive_field();
    const Index T = std::min<Index>(cfg.max_steps, 2 * (reach + rf) + pick(rng, 4, 8));
    Batch batch = random_batch(cfg, pick(rng, 1, 2), T, rng);
    const ModalitySet all = all_modalities(cfg.modalities.size());
    const Index s = pick(rng, 0, T - 1);
    const EncoderOutput base = mmte_forward(model, batch, all, {});
    const std::size_t m = rng.below(cfg.modalities.size());
    for (Index b = 0; b < batch.size(); ++b) batch.features[m].mutable_value().row(b * T + s).array() += 3.0;
    const EncoderOutput moved = mmte_forward(model, batch, all, {});
    for (std::size_t k = 0; k < all.size(); ++k) {
      for (Index b = 0; b < batch.size(); ++b) {
        for (Index u = 0; u < T; ++u) {
          if (u >= s - reach && u <= s + rf - 1 + reach) continue;
          const Index row = b * T + u;
          worst = std::max(worst, (base.per_modality[k].value().row(row) - moved.per_modality[k].value().row(row))
                                      .cwiseAbs()
                                      .maxCoeff());
        }
      }
    }
  }
  return worst;
}

/// Perturbs inputs at s and checks predictions y_t for t < s - L * mask_length
/// (1-based t reads encoder time t - 1, so every such step precedes the
/// perturbation's reach).
inline double model_future_reachability(int configs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    ModelConfig cfg = random_config(rng);
    Rng init(rng.next_u64());
    Model model = Model::init(cfg, init);
    const Index reach = cfg.encoder_layers * cfg.mask_length;
    const Index T = std::min<Index>(cfg.max_steps, reach + pick(rng, 4, 10));
    Batch batch = random_batch(cfg, pick(rng, 1, 2), T, rng);
    const ModalitySet all = all_modalities(cfg.modalities.size());
    const Index s = pick(rng, reach + 1, T - 1);
    const RowMatrix base = model_forward(model, batch, all, {}).value();
    for (auto& f : batch.features) {
      for (Index b = 0; b < batch.size(); ++b) f.mutable_value().row(b * T + s).array() -= 2.0;
    }
    const RowMatrix moved = model_forward(model, batch, all, {}).value();
    const Index unaffected = s - reach;  // y_1..y_{s-reach} use encoder times < s - reach
    worst = std::max(worst, max_abs_diff(base.leftCols(unaffected), moved.leftCols(unaffected)));
  }
  return worst;
}

/// Perturbs encoder outputs at times >= t (0-based, i.e. steps after t in
/// 1-based terms) and compares the first t decoded predictions.
inline double decoder_future_blindness(int configs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    ModelConfig cfg = random_config(rng);
    Rng init(rng.next_u64());
    Model model = Model::init(cfg, init);
    const Index T = pick(rng, 3, 12);
    Batch batch = random_batch(cfg, pick(rng, 1, 2), T, rng);
    const EncoderOutput enc = mmte_forward(model, batch, all_modalities(cfg.modalities.size()), {});
    const RowMatrix base = ammtd_decode(model, enc, {}).predictions.value();
    const Index t = pick(rng, 1, T - 1);
    EncoderOutput moved = enc;
    for (auto& r : moved.per_modality) {
      RowMatrix v = r.value();
      for (Index b = 0; b < enc.batch; ++b) {
        for (Index u = t; u < T; ++u) v.row(b * T + u) = testing::random_tensor({v.cols()}, rng).value();
      }
      r = Tensor(r.shape(), v);
    }
    const RowMatrix after = ammtd_decode(model, moved, {}).predictions.value();
    worst = std::max(worst, max_abs_diff(base.leftCols(t), after.leftCols(t)));
  }
  return worst;
}

/// Declares the modalities in a shuffled order, copies parameters by name and
/// compares predictions on identically permuted inputs.
inline double permutation_invariance(int configs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    ModelConfig cfg = random_config(rng);
    if (cfg.modalities.size() < 2) cfg = small_config(3, cfg.d_model);
    Rng init(rng.next_u64());
    Model model = Model::init(cfg, init);
    std::vector<std::size_t> order(cfg.modalities.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::rotate(order.begin(), order.begin() + 1, order.end());
    ModelConfig permuted_cfg = cfg;
    for (std::size_t i = 0; i < order.size(); ++i) permuted_cfg.modalities[i] = cfg.modalities[order[i]];
    Rng other = Rng(seed + 1000).fork("init");
    Model permuted = Model::init(permuted_cfg, other);
    copy_parameters(model, permuted);

    const Index T = pick(rng, 3, 10);
    Batch batch = random_batch(cfg, pick(rng, 1, 2), T, rng);
    Batch shuffled = batch;
    for (std::size_t i = 0; i < order.size(); ++i) shuffled.features[i] = batch.features[order[i]];
    const RowMatrix a = model_forward(model, batch, all_modalities(order.size()), {}).value();
    const RowMatrix b = model_forward(permuted, shuffled, all_modalities(order.size()), {}).value();
    worst = std::max(worst, max_abs_diff(a, b));
  }
  return worst;
}

/// Incremental cached decoding against the plain reference decoder that
/// recomputes the full prefix at every step.
inline double cached_vs_uncached(int configs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    ModelConfig cfg = random_config(rng);
    Rng init(rng.next_u64());
    Model model = Model::init(cfg, init);
    const Index T = pick(rng, 2, 10);
    Batch batch = random_batch(cfg, pick(rng, 1, 2), T, rng);
    const EncoderOutput enc = mmte_forward(model, batch, all_modalities(cfg.modalities.size()), {});
    const RowMatrix cached = ammtd_decode(model, enc, {}).predictions.value();
    for (Index b = 0; b < enc.batch; ++b) {
      const Eigen::VectorXd ref = ref::decode(model, enc, b);
      worst = std::max(worst, (cached.row(b).transpose() - ref).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

/// Finite-difference check of the whole model (training mode, fixed dropout
/// stream) through the CCC loss.
inline RelativeErrorReport full_model_gradcheck(std::uint64_t seed) {
  ModelConfig cfg = small_config(2, 8);
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.mask_length = 2;
  Rng rng(seed);
  Rng init = rng.fork("init");
  Model model = Model::init(cfg, init);
  const Index T = 4;
  Batch batch = random_batch(cfg, 2, T, rng);
  batch.labels = testing::random_tensor({2, T}, rng).value();
  const auto params = model.parameters();
  const std::uint64_t dropout_seed = rng.next_u64();
  return finite_difference_check(
      [&] {
        Rng drop(dropout_seed);
        ForwardContext ctx{true, &drop};
        return ccc_loss(model_forward(model, batch, all_modalities(2), ctx), batch.labels);
      },
      params);
}

}  // namespace mmer::testing

#endif  // MMER_TESTS_INVARIANTS_HPP
