#pragma once

#include <string>
#include <vector>

#include "mcst/tensor.hpp"

namespace mcst {

/// Versioned binary parameter store. Layout: magic "MCST", format version
/// u32, parameter count u32, then per parameter: name length u16, UTF-8
/// name, rank u8, extents as u64, values as f64. All integers and floats
/// little-endian. Loading rejects unknown versions and truncated files.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<Parameter>& params);

std::vector<Parameter> load_checkpoint(const std::string& path);

}  // namespace mcst
