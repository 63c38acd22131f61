#include "svt/tape.hpp"

namespace svt {

thread_local Tape* Tape::current_ = nullptr;

namespace {
bool g_check_finite = false;
}

void set_debug_check_finite(bool enabled) { g_check_finite = enabled; }
bool debug_check_finite() { return g_check_finite; }

}  // namespace svt
