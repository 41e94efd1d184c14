#pragma once

#include <string>
#include <vector>

#include "sparsecot/blocks.hpp"
#include "sparsecot/masking.hpp"
#include "sparsecot/tensor.hpp"

namespace sparsecot {

struct CotStepRecord {
    std::size_t step = 0;
    double mean_support_size = 0.0;
    std::size_t mask_popcount = 0;
    double state_norm = 0.0;
};

using CotTrace = std::vector<CotStepRecord>;

/// Iterative reasoning state: R is the current (masked) state, C the context
/// handed to the next step.
struct ReasoningState {
    Tensor r; // B x N x D
    Tensor c; // B x N x D
    std::size_t t = 0;
    CotTrace trace;
};

ReasoningState cot_init(const Tensor &x_sparse);

struct CotStepCache {
    std::vector<TransformBlockCache> per_batch; // one block cache per batch item
    Tensor combined;                            // x_sparse + C_prev, B x N x D
    Tensor r_new;                               // pre-mask state
    DimensionMask step_mask;
    double min_importance_gap = 0.0; // smallest gap at the mask selection cut
};

/// One reasoning update: run the block transform on x_sparse + C_prev, then
/// re-sparsify the state with a mask picked from per-dimension mean |R|.
ReasoningState cot_step(const ReasoningState &state, const Tensor &x_sparse,
                        const TransformBlockParams &params, const AttentionMask &mask,
                        double alpha, CotStepCache *cache = nullptr);

/// Gradient of one step. d_r is the gradient w.r.t. the step's masked output;
/// accumulates into dx_sparse and grads and returns dC_prev.
Tensor cot_step_backward(const TransformBlockParams &params, const CotStepCache &cache,
                         const Tensor &d_r, Tensor &dx_sparse, TransformBlockGrads &grads);

/// T sequential steps; T = 0 returns the init state unchanged.
ReasoningState run_cot(const Tensor &x_sparse, std::size_t t_steps,
                       const std::vector<TransformBlockParams> &step_params,
                       const AttentionMask &mask, double alpha,
                       std::vector<CotStepCache> *caches = nullptr);

/// CSV rows: step,mean_support_size,mask_popcount,state_norm.
std::string trace_to_csv(const CotTrace &trace);

} // namespace sparsecot
