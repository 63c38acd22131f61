#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "svt/mvit.hpp"
#include "svt/vit.hpp"

namespace svt {

using AnyModelConfig = std::variant<ViTConfig, MViTConfig>;

/// One ledger row. `kind` matches the kernel MAC-counter buckets so the
/// analytic totals can be cross-checked against an instrumented forward
/// pass (matmul / linear / conv exactly; pool is data-dependent).
struct FlopRow {
    std::string layer;
    std::string kind;  // matmul | linear | conv | pool | other
    int64_t tokens_in = 0;
    int64_t tokens_out = 0;
    uint64_t macs = 0;
    uint64_t params = 0;
};

struct FlopReport {
    std::string model_name;
    std::vector<FlopRow> rows;
    int64_t views_space = 1;
    int64_t views_time = 1;

    uint64_t total_macs() const;
    uint64_t total_params() const;
    uint64_t total_macs_of_kind(const std::string& kind) const;
    double gflops() const { return static_cast<double>(total_macs()) / 1e9; }
    double gflops_with_views() const {
        return gflops() * static_cast<double>(views_space) * static_cast<double>(views_time);
    }

    void write_csv(std::ostream& os) const;
    void write_text(std::ostream& os) const;
};

/// Analytic MAC audit (1 MAC = 1 FLOP; softmax/LN/GELU excluded).
FlopReport audit_vit(const ViTConfig& cfg);
FlopReport audit_mvit(const MViTConfig& cfg);
FlopReport audit_model(const AnyModelConfig& cfg);

std::array<int64_t, 4> input_of(const AnyModelConfig& cfg);
int64_t final_token_count(const AnyModelConfig& cfg);

struct Reduction {
    uint64_t baseline_macs = 0;
    uint64_t variant_macs = 0;
    /// 1 - variant/baseline
    double fraction = 0.0;
};

/// Requires identical input sizes (argument error otherwise).
Reduction compare_models(const AnyModelConfig& cfg, const AnyModelConfig& baseline);

}  // namespace svt
