#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mristage/model.hpp"

namespace mristage {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Weights archive: every named layer array plus a JSON metadata record
/// (head spec, backbone description, D, K, seed, input size, epoch).
///
/// Layout, little-endian: "MRSCKPT1", u32 format version, u64 metadata
/// length, metadata JSON bytes, u32 array count, then per array: u32 name
/// length, name bytes, u32 rank, rank x u64 dims, product(dims) x f32.
struct Checkpoint {
  std::vector<Tensor> arrays;
  nlohmann::json metadata;
  std::size_t epoch = 0;
  double monitored_value = 0.0;
};

Checkpoint make_checkpoint(const ModelGraph& graph, std::size_t epoch, std::string_view monitor,
                           double monitored_value);
void save_checkpoint(const Checkpoint& checkpoint, const fs::path& file);
Checkpoint load_checkpoint(const fs::path& file);

/// Rebuild the full graph (backbone included) from an archive.
ModelGraph restore_model(const Checkpoint& checkpoint);

}  // namespace mristage
