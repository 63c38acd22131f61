#pragma once

#include <array>
#include <atomic>
#include <cstdint>

namespace svt {

/// Kinds of multiply-accumulate work tracked by the instrumented
/// kernels. "Pool" covers the data-dependent SPM pooling sums.
enum class MacKind : int { Matmul = 0, Linear = 1, Conv = 2, Pool = 3, kCount = 4 };

/// Process-wide MAC counter. Each kernel adds its exact integer MAC
/// count once per call, so totals are deterministic under any thread
/// count. Used by tests to cross-check the analytical FLOP auditor.
class MacCounter {
public:
    static void enable(bool on) { enabled_.store(on, std::memory_order_relaxed); }
    static bool enabled() { return enabled_.load(std::memory_order_relaxed); }

    static void add(MacKind kind, uint64_t macs) {
        if (enabled()) counts_[static_cast<size_t>(kind)].fetch_add(macs, std::memory_order_relaxed);
    }

    static void reset() {
        for (auto& c : counts_) c.store(0, std::memory_order_relaxed);
    }

    static uint64_t total(MacKind kind) { return counts_[static_cast<size_t>(kind)].load(std::memory_order_relaxed); }

    static uint64_t total_all() {
        uint64_t t = 0;
        for (auto& c : counts_) t += c.load(std::memory_order_relaxed);
        return t;
    }

private:
    static std::atomic<bool> enabled_;
    static std::array<std::atomic<uint64_t>, static_cast<size_t>(MacKind::kCount)> counts_;
};

}  // namespace svt
