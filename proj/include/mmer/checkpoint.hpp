#ifndef MMER_CHECKPOINT_HPP
#define MMER_CHECKPOINT_HPP

// Binary model container, little-endian throughout:
//   "MMERCKPT"                      8-byte magic
//   u32 version                     currently 1
//   u64 n, n bytes                  materialised config text
//   u32 modalities, then per modality:
//     u32 n, n bytes name; u64 width; width f64 means; width f64 stddevs
//   u32 parameters, then per parameter:
//     u32 n, n bytes name; u32 rank; rank x i64 extents; numel f64 values
// Doubles are stored as their IEEE-754 bit patterns, so a round trip is
// bit-exact.

#include "mmer/config.hpp"
#include "mmer/model.hpp"

#include <filesystem>
#include <stdexcept>

namespace mmer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  Model model;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const Model& model);
/// Throws CheckpointError on a bad magic, unsupported version, truncation, or
/// a parameter set that does not match the stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mmer

#endif  // MMER_CHECKPOINT_HPP
