#ifndef MMER_ELIMINATION_HPP
#define MMER_ELIMINATION_HPP

// Per-batch modality elimination for optimized training. Each listed modality
// is removed with its own probability; with the remaining mass every modality
// is kept. At most one modality is removed per draw.

#include "mmer/dataset.hpp"
#include "mmer/rng.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mmer {

struct EliminationPolicy {
  std::vector<std::pair<std::string, double>> entries;

  bool empty() const { return entries.empty(); }
  double keep_all_probability() const;
  /// Throws ConfigError on unknown or repeated names, rho outside [0, 1] or
  /// a total above 1.
  void validate(const std::vector<ModalitySpec>& declared) const;
};

struct EliminationDraw {
  ModalitySet available;
  std::optional<std::size_t> eliminated;
};

/// Consumes exactly one uniform draw from `rng`.
EliminationDraw sample_elimination(const EliminationPolicy& policy, const std::vector<ModalitySpec>& declared, Rng& rng);

}  // namespace mmer

#endif  // MMER_ELIMINATION_HPP
