#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "sparsecot/masking.hpp"
#include "sparsecot/tensor.hpp"

namespace sparsecot {

struct AttentionOutput {
    Tensor context; // n_q x d_v
    Tensor weights; // n_q x n_k, each row on the simplex
    std::size_t pairs_attended = 0; // strictly positive weight entries
    double min_margin = 0.0;        // smallest sparsemax boundary margin seen
};

/// sparsemax(Q K^T / sqrt(d_k) + mask) V, row-wise per query.
AttentionOutput sparse_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                                 const AttentionMask &mask);

/// Gradients of sparse_attention given the forward weights. Accumulates into
/// dq/dk/dv, which must be pre-sized like q/k/v.
void sparse_attention_backward(const Tensor &q, const Tensor &k, const Tensor &v,
                               const Tensor &weights, const Tensor &dcontext,
                               Tensor &dq, Tensor &dk, Tensor &dv);

/// Combined projections for H heads: each matrix is D x D, head h owning the
/// column block [h*d_k, (h+1)*d_k).
struct MultiHeadParams {
    Tensor wq, wk, wv, wo;
    std::size_t heads = 1;
};

MultiHeadParams identity_heads(std::size_t d);

/// Forward intermediates kept for the backward pass and for cost traces.
struct MultiHeadCache {
    Tensor qf, kf, vf;                 // projected inputs, n x D
    std::vector<Tensor> head_weights;  // per head, n_q x n_k
    Tensor concat;                     // n_q x D
    std::size_t pairs_attended = 0;
    double min_margin = 0.0;
    double mean_support = 0.0; // mean sparsemax support size per query row
};

/// Multi-head sparse attention; the same mask applies to every head.
Tensor multi_head_sparse_attention(const Tensor &x_q, const Tensor &x_kv,
                                   const MultiHeadParams &params, const AttentionMask &mask,
                                   MultiHeadCache *cache = nullptr);

struct MultiHeadGrads {
    Tensor dwq, dwk, dwv, dwo;
};

MultiHeadGrads zero_grads_like(const MultiHeadParams &params);

/// Backward through multi-head attention. dx_q and dx_kv are accumulated
/// (pass the same tensor twice for self-attention).
void multi_head_backward(const Tensor &x_q, const Tensor &x_kv, const MultiHeadParams &params,
                         const MultiHeadCache &cache, const Tensor &dout, Tensor &dx_q,
                         Tensor &dx_kv, MultiHeadGrads &grads);

/// Decoder-style causal self-attention: mask = compose(causal, extra_pattern).
Tensor self_attention(const Tensor &x, const MultiHeadParams &params,
                      const AttentionMask *extra_pattern = nullptr,
                      MultiHeadCache *cache = nullptr);

/// Cross attention: queries from x_dec, keys and values projected from h_e.
Tensor cross_attention(const Tensor &x_dec, const Tensor &h_e, const MultiHeadParams &params,
                       const AttentionMask &pattern, MultiHeadCache *cache = nullptr);

/// Head-averaged pre-mask scores Q K^T / sqrt(d_k), used to materialize
/// dynamic top-k patterns before sparsemax runs.
Tensor head_averaged_scores(const Tensor &x_q, const Tensor &x_kv,
                            const MultiHeadParams &params);

} // namespace sparsecot
