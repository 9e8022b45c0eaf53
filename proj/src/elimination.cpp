#include "mmer/elimination.hpp"

#include <algorithm>
#include <set>

namespace mmer {

namespace {
constexpr double kMassTolerance = 1e-9;
}

double EliminationPolicy::keep_all_probability() const {
  double total = 0.0;
  for (const auto& [name, rho] : entries) total += rho;
  return std::max(0.0, 1.0 - total);
}

void EliminationPolicy::validate(const std::vector<ModalitySpec>& declared) const {
  std::set<std::string> seen;
  double total = 0.0;
  for (const auto& [name, rho] : entries) {
    if (std::none_of(declared.begin(), declared.end(), [&](const ModalitySpec& s) { return s.name == name; })) {
      throw ConfigError("elimination policy names unknown modality '" + name + "'");
    }
    if (!seen.insert(name).second) throw ConfigError("elimination policy repeats modality '" + name + "'");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("elimination probability for '" + name + "' must lie in [0, 1]");
    total += rho;
  }
  if (total > 1.0 + kMassTolerance) throw ConfigError("elimination probabilities sum to more than 1");
}

EliminationDraw sample_elimination(const EliminationPolicy& policy, const std::vector<ModalitySpec>& declared, Rng& rng) {
  policy.validate(declared);
  EliminationDraw draw;
  draw.available = all_modalities(declared.size());
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (const auto& [name, rho] : policy.entries) {
    cumulative += rho;
    if (u < cumulative) {
      const auto it = std::find_if(declared.begin(), declared.end(), [&](const ModalitySpec& s) { return s.name == name; });
      const auto index = static_cast<std::size_t>(it - declared.begin());
      draw.eliminated = index;
      draw.available = without(draw.available, index);
      break;
    }
  }
  return draw;
}

}  // namespace mmer
