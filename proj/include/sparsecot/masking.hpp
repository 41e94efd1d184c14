#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparsecot/sparsemax.hpp"
#include "sparsecot/tensor.hpp"

namespace sparsecot {

enum class DimSelect { Prefix, SeededRandom, Magnitude };

/// Binary mask over embedding dimensions with sparsity factor alpha.
/// popcount(bits) == max(1, round(alpha * D)).
struct DimensionMask {
    std::vector<std::uint8_t> bits;
    double alpha = 1.0;
    DimSelect strategy = DimSelect::Magnitude;

    std::size_t popcount() const;
    std::size_t size() const { return bits.size(); }
};

std::size_t dimension_mask_target(std::size_t d, double alpha);

DimensionMask make_dimension_mask(std::size_t d, double alpha, DimSelect strategy,
                                  std::uint64_t seed = 0,
                                  const Tensor *importance = nullptr);

enum class PatternKind { Full, Causal, Window, Strided, TopK };

/// Pattern spec mini-grammar used by the CLI and config files:
///   full | causal | window:w=8[+causal] | strided:s=4[+causal] | topk:k=8[+causal]
/// A trailing ",causal" is accepted as a synonym for "+causal".
struct PatternSpec {
    PatternKind kind = PatternKind::Full;
    std::size_t param = 0; // w, s or k
    bool causal = false;

    std::string to_string() const;
    static PatternSpec parse(const std::string &text);
};

/// Additive score-space mask: entries are exactly 0 (allowed) or the
/// kMaskSentinel (forbidden). Every query row keeps at least one allowed key.
struct AttentionMask {
    Tensor values; // n_q x n_k
    PatternSpec pattern;

    std::size_t n_q() const { return values.rows(); }
    std::size_t n_k() const { return values.cols(); }
    bool allowed(std::size_t i, std::size_t j) const { return values(i, j) == 0.0; }
};

AttentionMask make_full_mask(std::size_t n_q, std::size_t n_k);
AttentionMask make_causal_mask(std::size_t n);
AttentionMask make_window_mask(std::size_t n, std::size_t w, bool causal);
AttentionMask make_strided_mask(std::size_t n, std::size_t s, bool causal);

/// Per query row, keep the k highest-scoring keys among base-allowed ones
/// (ties to the lower index). Rows whose base allows fewer than k keys keep
/// everything the base allows.
AttentionMask make_topk_dynamic_mask(const Tensor &scores, std::size_t k,
                                     const AttentionMask *base = nullptr);

/// Elementwise minimum: forbidden dominates.
AttentionMask compose(const AttentionMask &a, const AttentionMask &b);

/// Materialize a static pattern spec at the given shape. TopK specs need
/// scores and are resolved by the attention layer instead.
AttentionMask build_pattern_mask(const PatternSpec &spec, std::size_t n_q, std::size_t n_k);

} // namespace sparsecot
