#pragma once

// Checkpoint archive, format version 1 (little-endian):
//
//   bytes 0..7   magic "VPTSCKPT"
//   u32          format version
//   u64          header length N
//   N bytes      JSON header: {"format_version", "encoder", "decoder",
//                "meta", "tensors": [{"name", "rows", "cols", "trainable",
//                "offset"}]}
//   payload      float64 values of every tensor, row-major, at "offset"
//                (counted in values from the start of the payload)
//
// The freeze mask is the per-tensor "trainable" flag.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vptsurv/model.hpp"

namespace vptsurv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string mode;               // "end_to_end" or "two_stage"
  std::vector<double> bin_edges;  // time discretisation used in training
  std::uint64_t seed = 0;
};

struct Checkpoint {
  ModelState state;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const CheckpointMeta& meta);

/// Throws FormatError on bad magic, unknown version or truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every `encoder.*` tensor from an archive into `state` (shapes
/// must match). Lets externally trained backbone weights replace the
/// seeded initialisation.
void import_encoder_weights(ModelState& state, const std::filesystem::path& path);

}  // namespace vptsurv
