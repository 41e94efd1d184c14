#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsecot/masking.hpp"

namespace sparsecot {

struct CostRow {
    std::size_t seq_len = 0;
    std::string pattern;
    std::uint64_t allowed_pairs = 0; // mask-allowed (query, key) pairs
    std::uint64_t active_pairs = 0;  // strictly positive sparsemax weights
    std::uint64_t flops_est = 0;
    std::uint64_t wall_ns = 0;
    std::string run_id;
};

struct CostReport {
    std::vector<CostRow> rows;
};

/// Number of allowed (zero) entries in the mask.
std::uint64_t count_attended_pairs(const AttentionMask &mask);

/// Analytic pair count for a pattern at sequence length n. Cross-checks
/// count_attended_pairs without materializing the mask.
std::uint64_t closed_form_pairs(const PatternSpec &spec, std::size_t n);

struct FlopsBreakdown {
    std::uint64_t score_flops = 0;      // pairs * d_k * 2 per head
    std::uint64_t context_flops = 0;    // pairs * d_v * 2 per head
    std::uint64_t projection_flops = 0; // Q, K, V and output projections
    std::uint64_t total() const { return score_flops + context_flops + projection_flops; }
};

/// Multiply-add count for one multi-head attention call with the given pair
/// count; pairs is per head (the same mask applies to every head).
FlopsBreakdown flops_estimate(std::size_t d_model, std::size_t heads, std::size_t n,
                              std::uint64_t pairs);

/// Least-squares slope of log(pairs) against log(seq_len) over rows that
/// share a pattern. Requires >= 4 distinct lengths.
double scaling_fit(const CostReport &report, const std::string &pattern);

/// CSV with the mandatory header
/// seq_len,pattern,allowed_pairs,active_pairs,flops_est,wall_ns,run_id.
std::string cost_report_to_csv(const CostReport &report);

} // namespace sparsecot
