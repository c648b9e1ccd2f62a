#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcan/tensor.hpp"

namespace tcan {

inline constexpr std::string_view kCheckpointMagic = "TCAN1";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// On-disk layout: a JSON manifest at `manifest_path` listing each tensor's
// name, shape, byte offset and byte length, plus a sibling blob (same stem,
// ".bin") of little-endian IEEE-754 doubles in manifest order.
//
//   {"magic": "TCAN1", "dtype": "f64le", "blob": "best.bin",
//    "tensors": [{"name": ..., "shape": [...], "offset": 0, "bytes": 96}, ...],
//    "meta": {...}}
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor& get(std::string_view name) const;  // throws DataError if absent
  bool contains(std::string_view name) const;
};

void save_checkpoint(const std::filesystem::path& manifest_path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace tcan
