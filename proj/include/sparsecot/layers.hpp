#pragma once

#include <cstddef>
#include <vector>

#include "sparsecot/masking.hpp"
#include "sparsecot/tensor.hpp"

namespace sparsecot {

using TokenRow = std::vector<int>;
using TokenBatch = std::vector<TokenRow>;

struct EmbeddingTable {
    Tensor e; // V x D
    std::size_t vocab() const { return e.rows(); }
    std::size_t dim() const { return e.cols(); }
};

/// Row lookup: tokens[B][N] -> B x N x D.
Tensor embed(const TokenBatch &tokens, const EmbeddingTable &table);

/// embed() with masked dimensions zeroed; the mask broadcasts over batch and
/// sequence.
Tensor sparse_embed(const TokenBatch &tokens, const EmbeddingTable &table,
                    const DimensionMask &dmask);

/// Sinusoidal additive positional encodings, N x D.
Tensor positional_encoding(std::size_t n, std::size_t d);

struct FeedForwardParams {
    Tensor w1; // D x D_ff
    Tensor b1; // D_ff
    Tensor w2; // D_ff x D
    Tensor b2; // D
};

/// Two-layer position-wise network: W2 * relu(W1 x + b1) + b2.
Tensor feed_forward(const Tensor &x, const FeedForwardParams &p);

struct FeedForwardGrads {
    Tensor dw1, db1, dw2, db2;
};

FeedForwardGrads zero_grads_like(const FeedForwardParams &p);

/// Backward through feed_forward on a 2D input; accumulates into grads and
/// returns dx.
Tensor feed_forward_backward(const Tensor &x, const FeedForwardParams &p, const Tensor &dy,
                             FeedForwardGrads &grads);

/// layer_norm(x + sublayer_out).
Tensor add_norm(const Tensor &x, const Tensor &sublayer_out, const Tensor &gamma,
                const Tensor &beta, double eps = 1e-5);

/// sparsemax(h W_out + b_out): a sparse probability distribution over the
/// vocabulary; exact zeros permitted.
Tensor output_distribution(const Tensor &h, const Tensor &w_out, const Tensor &b_out);

/// Apply a dimension mask along the last axis.
Tensor apply_dimension_mask(const Tensor &x, const DimensionMask &dmask);

} // namespace sparsecot
