#include "sparsecot/blocks.hpp"

namespace sparsecot {

LayerNormGrads zero_grads_like(const LayerNormParams &p) {
    return {Tensor::zeros(p.gamma.shape()), Tensor::zeros(p.beta.shape())};
}

TransformBlockGrads zero_grads_like(const TransformBlockParams &p) {
    return {zero_grads_like(p.attn), zero_grads_like(p.norm1), zero_grads_like(p.ffn),
            zero_grads_like(p.norm2)};
}

Tensor transform_block_forward(const Tensor &x, const TransformBlockParams &p,
                               const AttentionMask &mask, TransformBlockCache *cache) {
    TransformBlockCache local;
    TransformBlockCache &c = cache != nullptr ? *cache : local;
    c.x_in = x;
    c.attn_out = multi_head_sparse_attention(x, x, p.attn, mask, &c.attn);
    c.x1 = add_norm(x, c.attn_out, p.norm1.gamma, p.norm1.beta);
    c.ffn_out = feed_forward(c.x1, p.ffn);
    return add_norm(c.x1, c.ffn_out, p.norm2.gamma, p.norm2.beta);
}

Tensor transform_block_backward(const TransformBlockParams &p, const TransformBlockCache &cache,
                                const Tensor &dout, TransformBlockGrads &grads) {
    Tensor sum2 = add(cache.x1, cache.ffn_out);
    Tensor dsum2 =
        layer_norm_backward(sum2, p.norm2.gamma, dout, grads.norm2.dgamma, grads.norm2.dbeta);

    // dsum2 reaches x1 directly and through the feed-forward branch.
    Tensor dx1 = dsum2;
    Tensor dffn_in = feed_forward_backward(cache.x1, p.ffn, dsum2, grads.ffn);
    for (std::size_t i = 0; i < dx1.size(); ++i) {
        dx1(i) += dffn_in(i);
    }

    Tensor sum1 = add(cache.x_in, cache.attn_out);
    Tensor dsum1 =
        layer_norm_backward(sum1, p.norm1.gamma, dx1, grads.norm1.dgamma, grads.norm1.dbeta);

    Tensor dx = dsum1;
    multi_head_backward(cache.x_in, cache.x_in, p.attn, cache.attn, dsum1, dx, dx, grads.attn);
    return dx;
}

} // namespace sparsecot
