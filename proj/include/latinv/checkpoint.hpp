#pragma once

// Binary named-tensor archive with a JSON manifest.
//
// Layout (little-endian):
//   magic "LATINVCK" | u32 format version | u64 manifest bytes | manifest JSON
//   u32 tensor count | per tensor:
//     u32 name bytes | name | u8 dtype (1 = f64) | u32 rank | u32 dims[rank]
//     u64 payload bytes | payload | u32 crc32(payload)

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latinv/models.hpp"

namespace latinv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct CheckpointBundle {
  nlohmann::json manifest;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& bundle);
/// Parses and validates the whole buffer before returning anything.
CheckpointBundle parse_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const CheckpointBundle& bundle, const std::string& path);
CheckpointBundle load_checkpoint(const std::string& path);

CheckpointBundle bundle_from_models(const Models& models);
/// Every configured parameter must appear exactly once; extras are rejected.
Models models_from_bundle(const CheckpointBundle& bundle);

}  // namespace latinv
