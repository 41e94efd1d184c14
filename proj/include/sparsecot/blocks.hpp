#pragma once

#include "sparsecot/attention.hpp"
#include "sparsecot/layers.hpp"
#include "sparsecot/tensor.hpp"

namespace sparsecot {

struct LayerNormParams {
    Tensor gamma, beta;
};

struct LayerNormGrads {
    Tensor dgamma, dbeta;
};

LayerNormGrads zero_grads_like(const LayerNormParams &p);

/// One attention + feed-forward block with residual Add & Norm wrappers.
/// Encoder layers and the per-step CoT transform share this shape.
struct TransformBlockParams {
    MultiHeadParams attn;
    LayerNormParams norm1;
    FeedForwardParams ffn;
    LayerNormParams norm2;
};

struct TransformBlockGrads {
    MultiHeadGrads attn;
    LayerNormGrads norm1;
    FeedForwardGrads ffn;
    LayerNormGrads norm2;
};

TransformBlockGrads zero_grads_like(const TransformBlockParams &p);

struct TransformBlockCache {
    MultiHeadCache attn;
    Tensor x_in, attn_out, x1, ffn_out;
};

/// add_norm(x1, ffn(x1)) where x1 = add_norm(x, attn(x)).
Tensor transform_block_forward(const Tensor &x, const TransformBlockParams &p,
                               const AttentionMask &mask, TransformBlockCache *cache = nullptr);

/// Backward through transform_block_forward; returns dx.
Tensor transform_block_backward(const TransformBlockParams &p, const TransformBlockCache &cache,
                                const Tensor &dout, TransformBlockGrads &grads);

} // namespace sparsecot
