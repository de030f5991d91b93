#pragma once

#include <string>

#include "invpt/layers.hpp"

namespace invpt {

// Checkpoint file = u64 little-endian manifest length, UTF-8 JSON manifest
// listing (name, shape, byte-offset), then the flat payload of little-endian
// IEEE-754 float64 values. Offsets are relative to the payload start.
void save_checkpoint(const ParamStore& params, const std::string& path);

// Loads into an already-constructed ParamStore; names and shapes must match
// exactly. Throws DataError with the failing byte offset on malformed files.
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace invpt
