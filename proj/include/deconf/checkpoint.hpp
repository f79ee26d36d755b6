#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "deconf/layers.hpp"

namespace deconf::io {

// Checkpoint layout: <dir>/manifest.json declaring tensor names and shapes,
// plus <dir>/weights.bin with the tensors' float64 payloads concatenated in
// manifest order (little endian).
void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<numkit::TensorRef>& tensors,
                     nlohmann::ordered_json manifest_extra);

nlohmann::ordered_json load_checkpoint_manifest(
    const std::filesystem::path& dir);

// Loads weights into pre-built tensors; shape and name order must match the
// manifest exactly.
void load_checkpoint_weights(const std::filesystem::path& dir,
                             const std::vector<numkit::TensorRef>& tensors);

}  // namespace deconf::io
