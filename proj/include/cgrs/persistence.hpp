#pragma once

#include "cgrs/config.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cgrs {

struct TrainState;

// Single-file checkpoint container, little-endian throughout:
//
//   offset  size  field
//   0       8     magic "CGRSCKPT"
//   8       4     u32 format version
//   12      4     u32 reserved (0)
//   16      8     u64 index length in bytes (multiple of 64, space padded)
//   24      8     u64 payload length in bytes
//   32      32    SHA-256 of (index || payload)
//   64      ...   UTF-8 JSON index
//   ...     ...   payload: float32 tensors, each starting on a 64-byte boundary
//
// Index keys: format_version, config (flat key/value map), step, tensors
// [{name, shape, offset, count}] with offsets relative to the payload start,
// adam_steps {optimizer/parameter: step}.
// Tensor names: param/<module path>, buffer/<module path>,
// <optimizer>/<module path>/exp_avg and .../exp_avg_sq for optimizer in
// {opt_vae, opt_disc, opt_gen}.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderSize = 64;
inline constexpr std::size_t kCheckpointAlignment = 64;

struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t count = 0;
};

struct CheckpointIndex {
    std::uint32_t format_version = kCheckpointVersion;
    std::map<std::string, std::string> config;
    std::int64_t step = 0;
    std::vector<TensorRecord> tensors;
    std::map<std::string, std::int64_t> adam_steps;
    std::string digest;  // "sha256:<hex>"
};

// Atomic write (temporary sibling file, then rename). Returns the digest.
std::string save_checkpoint(const TrainState& state, const std::filesystem::path& path);

// Rebuilds the full training state. With expected_config, the scenario and
// split must agree and every tensor shape must match the architecture it
// describes; the returned state then carries expected_config.
TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ExperimentConfig>& expected_config = std::nullopt);

// Header and index only; the digest is still verified.
CheckpointIndex read_checkpoint_index(const std::filesystem::path& path);
// Pretty-printed JSON rendering of the index, for `inspect`.
std::string describe_checkpoint(const std::filesystem::path& path);

}  // namespace cgrs
