#include "svt/macs.hpp"

namespace svt {

std::atomic<bool> MacCounter::enabled_{false};
std::array<std::atomic<uint64_t>, static_cast<size_t>(MacKind::kCount)> MacCounter::counts_{};

}  // namespace svt
