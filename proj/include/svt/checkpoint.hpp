#pragma once

#include <string>

#include "svt/params.hpp"

namespace svt {

/// Flat binary checkpoint: magic "SVTCKPT1", u64 tensor count, then per
/// tensor u32 name length, name bytes, u32 ndim, u64 dims, and the raw
/// little-endian 64-bit float payload. Order follows ParamStore order.
void save_checkpoint(const ParamStore& params, const std::string& path);

/// Strict: every stored tensor must exist with an identical shape, and
/// every model parameter must be present.
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace svt
