#ifndef MMER_DATASET_HPP
#define MMER_DATASET_HPP

// Multimodal feature/label streams aligned at 2 Hz.
//
// On-disk layout:
//   <root>/<split>/<sample_id>/<modality>.csv   header timestamp,f0,...,f{d-1}
//   <root>/<split>/<sample_id>/labels.csv       header timestamp,value
// Timestamps are seconds, strictly increasing with 0.5 s spacing, and every
// modality file repeats the label timestamps. A missing or empty modality
// file marks that modality unavailable for the sample.

#include "mmer/tensor.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmer {

inline constexpr double kFrameSeconds = 0.5;
inline constexpr double kStdFloor = 1e-6;

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModalitySpec {
  std::string name;
  Index width = 0;
};

/// Sorted indices into a declared modality list.
using ModalitySet = std::vector<std::size_t>;

ModalitySet all_modalities(std::size_t count);
ModalitySet without(const ModalitySet& set, std::size_t modality);
ModalitySet intersect(const ModalitySet& a, const ModalitySet& b);
/// Resolves comma-separated names (empty string -> empty set). Throws
/// ConfigError on unknown names.
ModalitySet parse_modality_list(std::string_view names, const std::vector<ModalitySpec>& declared);
std::string describe(const ModalitySet& set, const std::vector<ModalitySpec>& declared);

struct MultimodalSample {
  std::string id;
  /// One [T, width] matrix per declared modality; 0 x width when absent.
  std::vector<RowMatrix> features;
  Vector labels;
  ModalitySet available;

  Index steps() const { return labels.size(); }
};

struct Dataset {
  std::vector<ModalitySpec> modalities;
  /// Sorted by sample id.
  std::vector<MultimodalSample> samples;
  bool normalized = false;

  const MultimodalSample& find(std::string_view id) const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

Dataset load_dataset(const std::filesystem::path& root, std::string_view split, const std::vector<ModalitySpec>& declared);
DatasetSplits load_splits(const std::filesystem::path& root, const std::vector<ModalitySpec>& declared);
void write_dataset(const std::filesystem::path& root, std::string_view split, const Dataset& dataset);
void write_splits(const std::filesystem::path& root, const DatasetSplits& splits);

/// Per-modality, per-feature z-normalisation statistics.
struct NormalizationStats {
  std::vector<Vector> mean;
  std::vector<Vector> stddev;

  bool empty() const { return mean.empty(); }
};

/// Statistics over every present frame of the training split; standard
/// deviations are floored at kStdFloor.
NormalizationStats compute_normalization(const Dataset& train);
/// Throws ContractError when the dataset was already normalised.
void apply_normalization(Dataset& dataset, const NormalizationStats& stats);

struct Segment {
  std::size_t sample = 0;
  Index start = 0;
  Index length = 0;
};

/// Windows starting at 0, hop, 2*hop, ... that fit entirely inside the sample.
/// Throws ConfigError when length > T or hop < 1.
std::vector<Segment> segment(const MultimodalSample& sample, std::size_t sample_index, Index length, Index hop);

/// Equal-length windows stacked along a leading batch axis.
struct Batch {
  /// [B, T, width] per declared modality; undefined when absent in any row.
  std::vector<Tensor> features;
  RowMatrix labels;
  ModalitySet available;

  Index size() const { return labels.rows(); }
  Index steps() const { return labels.cols(); }
};

Batch make_batch(const Dataset& dataset, std::span<const Segment> segments);
/// Whole-sequence batch of one sample.
Batch make_batch(const MultimodalSample& sample, const std::vector<ModalitySpec>& declared);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace mmer

#endif  // MMER_DATASET_HPP
