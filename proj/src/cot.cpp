#include "sparsecot/cot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "sparsecot/errors.hpp"

namespace sparsecot {

namespace {

void check_state_input(const Tensor &x) {
    if (x.rank() != 3) {
        throw DimensionError("cot: state tensors must be B x N x D, got " + x.shape_str());
    }
    if (!x.all_finite()) {
        throw ArgumentError("cot: non-finite entry in reasoning input");
    }
}

Tensor slice_batch(const Tensor &x, std::size_t b) {
    const std::size_t n = x.dim(1), d = x.dim(2);
    Tensor out({n, d});
    for (std::size_t i = 0; i < n * d; ++i) {
        out(i) = x.data()[b * n * d + i];
    }
    return out;
}

void store_batch(Tensor &x, std::size_t b, const Tensor &slice) {
    const std::size_t n = x.dim(1), d = x.dim(2);
    for (std::size_t i = 0; i < n * d; ++i) {
        x.data()[b * n * d + i] = slice(i);
    }
}

double frobenius_norm(const Tensor &x) {
    double acc = 0.0;
    for (double v : x.data()) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

} // namespace

ReasoningState cot_init(const Tensor &x_sparse) {
    check_state_input(x_sparse);
    ReasoningState s;
    s.r = x_sparse;
    s.c = Tensor::zeros(x_sparse.shape());
    s.t = 0;
    return s;
}

ReasoningState cot_step(const ReasoningState &state, const Tensor &x_sparse,
                        const TransformBlockParams &params, const AttentionMask &mask,
                        double alpha, CotStepCache *cache) {
    check_state_input(x_sparse);
    if (!state.c.same_shape(x_sparse)) {
        throw DimensionError("cot_step: context " + state.c.shape_str() +
                             " does not match input " + x_sparse.shape_str());
    }
    if (!(alpha > 0.0) || alpha > 1.0) {
        throw ConfigError("cot_step: alpha must be in (0, 1], got " + std::to_string(alpha));
    }
    const std::size_t b = x_sparse.dim(0), n = x_sparse.dim(1), d = x_sparse.dim(2);

    CotStepCache local;
    CotStepCache &c = cache != nullptr ? *cache : local;
    c.combined = add(x_sparse, state.c);
    c.r_new = Tensor({b, n, d});
    c.per_batch.assign(b, TransformBlockCache{});

    double support_acc = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor xb = slice_batch(c.combined, bi);
        Tensor out = transform_block_forward(xb, params, mask, &c.per_batch[bi]);
        store_batch(c.r_new, bi, out);
        support_acc += c.per_batch[bi].attn.mean_support;
    }

    // Importance of each dimension: mean |R| over batch and positions.
    Tensor importance({d});
    const std::size_t rows = b * n;
    for (std::size_t r = 0; r < rows; ++r) {
        const double *p = c.r_new.data().data() + r * d;
        for (std::size_t di = 0; di < d; ++di) {
            importance(di) += std::fabs(p[di]);
        }
    }
    for (std::size_t di = 0; di < d; ++di) {
        importance(di) /= static_cast<double>(rows);
    }
    c.step_mask = make_dimension_mask(d, alpha, DimSelect::Magnitude, 0, &importance);

    // Gap between the weakest kept dimension and the strongest dropped one;
    // zero-ish gaps mean the selection is about to flip under perturbation.
    double weakest_kept = std::numeric_limits<double>::infinity();
    double strongest_dropped = -std::numeric_limits<double>::infinity();
    for (std::size_t di = 0; di < d; ++di) {
        if (c.step_mask.bits[di]) {
            weakest_kept = std::min(weakest_kept, importance(di));
        } else {
            strongest_dropped = std::max(strongest_dropped, importance(di));
        }
    }
    c.min_importance_gap = c.step_mask.popcount() == d
                               ? std::numeric_limits<double>::infinity()
                               : weakest_kept - strongest_dropped;

    ReasoningState next;
    next.r = apply_dimension_mask(c.r_new, c.step_mask);
    next.c = next.r;
    next.t = state.t + 1;
    next.trace = state.trace;
    next.trace.push_back({next.t, support_acc / static_cast<double>(b),
                          c.step_mask.popcount(), frobenius_norm(next.r)});
    return next;
}

Tensor cot_step_backward(const TransformBlockParams &params, const CotStepCache &cache,
                         const Tensor &d_r, Tensor &dx_sparse, TransformBlockGrads &grads) {
    const std::size_t b = cache.combined.dim(0);
    Tensor d_rnew = apply_dimension_mask(d_r, cache.step_mask);
    Tensor d_combined = Tensor::zeros(cache.combined.shape());
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor dout = slice_batch(d_rnew, bi);
        Tensor dxb = transform_block_backward(params, cache.per_batch[bi], dout, grads);
        store_batch(d_combined, bi, dxb);
    }
    for (std::size_t i = 0; i < dx_sparse.size(); ++i) {
        dx_sparse(i) += d_combined(i);
    }
    return d_combined; // dC_prev
}

ReasoningState run_cot(const Tensor &x_sparse, std::size_t t_steps,
                       const std::vector<TransformBlockParams> &step_params,
                       const AttentionMask &mask, double alpha,
                       std::vector<CotStepCache> *caches) {
    ReasoningState state = cot_init(x_sparse);
    if (caches != nullptr) {
        caches->assign(t_steps, CotStepCache{});
    }
    for (std::size_t t = 0; t < t_steps; ++t) {
        const TransformBlockParams &p =
            step_params.size() == 1 ? step_params[0] : step_params.at(t);
        state = cot_step(state, x_sparse, p, mask, alpha,
                         caches != nullptr ? &(*caches)[t] : nullptr);
    }
    return state;
}

std::string trace_to_csv(const CotTrace &trace) {
    std::ostringstream os;
    os << "step,mean_support_size,mask_popcount,state_norm\n";
    for (const CotStepRecord &r : trace) {
        os << r.step << "," << r.mean_support_size << "," << r.mask_popcount << ","
           << r.state_norm << "\n";
    }
    return os.str();
}

} // namespace sparsecot
