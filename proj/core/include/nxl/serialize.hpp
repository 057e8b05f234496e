#pragma once

#include <string>

#include "nxl/model.hpp"

namespace nxl {

std::string sha256_hex(const std::string& bytes);

// Canonical form: compact JSON with lexicographically sorted keys and
// shortest round-trip number formatting, sha256 field excluded. The stored
// hash is computed over exactly these bytes.
std::string canonical_model_json(const ModelSnapshot& snapshot);

void save_model(const ModelSnapshot& snapshot, const std::string& path);
ModelSnapshot load_model(const std::string& path);

inline constexpr int kModelFileVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

} // namespace nxl
