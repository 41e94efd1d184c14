#include "sparsecot/layers.hpp"

#include <cmath>

#include "sparsecot/errors.hpp"
#include "sparsecot/sparsemax.hpp"

namespace sparsecot {

Tensor embed(const TokenBatch &tokens, const EmbeddingTable &table) {
    if (tokens.empty() || tokens.front().empty()) {
        throw ArgumentError("embed: empty token batch");
    }
    const std::size_t b = tokens.size();
    const std::size_t n = tokens.front().size();
    const std::size_t d = table.dim();
    Tensor out({b, n, d});
    for (std::size_t bi = 0; bi < b; ++bi) {
        if (tokens[bi].size() != n) {
            throw ArgumentError("embed: ragged token batch");
        }
        for (std::size_t ni = 0; ni < n; ++ni) {
            const int t = tokens[bi][ni];
            if (t < 0 || static_cast<std::size_t>(t) >= table.vocab()) {
                throw VocabularyError("embed: token id " + std::to_string(t) +
                                      " outside vocabulary of size " +
                                      std::to_string(table.vocab()));
            }
            for (std::size_t di = 0; di < d; ++di) {
                out(bi, ni, di) = table.e(static_cast<std::size_t>(t), di);
            }
        }
    }
    return out;
}

Tensor sparse_embed(const TokenBatch &tokens, const EmbeddingTable &table,
                    const DimensionMask &dmask) {
    if (dmask.size() != table.dim()) {
        throw DimensionError("sparse_embed: mask length " + std::to_string(dmask.size()) +
                             " does not match embedding dim " + std::to_string(table.dim()));
    }
    Tensor out = embed(tokens, table);
    const std::size_t d = table.dim();
    const std::size_t positions = out.size() / d;
    for (std::size_t p = 0; p < positions; ++p) {
        double *row = out.data().data() + p * d;
        for (std::size_t di = 0; di < d; ++di) {
            row[di] *= static_cast<double>(dmask.bits[di]);
        }
    }
    return out;
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
    Tensor pe({n, d});
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe(pos, i) = std::sin(angle);
            if (i + 1 < d) {
                pe(pos, i + 1) = std::cos(angle);
            }
        }
    }
    return pe;
}

namespace {

void check_ffn(const Tensor &x, const FeedForwardParams &p) {
    const std::size_t d = x.shape().back();
    if (p.w1.rank() != 2 || p.w1.rows() != d) {
        throw DimensionError("feed_forward: W1 " + p.w1.shape_str() +
                             " does not match input dim " + std::to_string(d));
    }
    const std::size_t d_ff = p.w1.cols();
    if (p.b1.size() != d_ff || p.w2.rows() != d_ff || p.w2.cols() != d || p.b2.size() != d) {
        throw DimensionError("feed_forward: inconsistent parameter shapes");
    }
}

} // namespace

Tensor feed_forward(const Tensor &x, const FeedForwardParams &p) {
    check_ffn(x, p);
    const std::size_t d = x.shape().back();
    const std::size_t d_ff = p.w1.cols();
    const std::size_t rows = x.size() / d;

    Tensor flat({rows, d}, x.data());
    Tensor h = matmul(flat, p.w1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d_ff; ++j) {
            const double v = h(r, j) + p.b1(j);
            h(r, j) = v > 0.0 ? v : 0.0;
        }
    }
    Tensor y = matmul(h, p.w2);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            y(r, j) += p.b2(j);
        }
    }
    return Tensor(x.shape(), std::move(y.data()));
}

FeedForwardGrads zero_grads_like(const FeedForwardParams &p) {
    FeedForwardGrads g;
    g.dw1 = Tensor::zeros(p.w1.shape());
    g.db1 = Tensor::zeros(p.b1.shape());
    g.dw2 = Tensor::zeros(p.w2.shape());
    g.db2 = Tensor::zeros(p.b2.shape());
    return g;
}

Tensor feed_forward_backward(const Tensor &x, const FeedForwardParams &p, const Tensor &dy,
                             FeedForwardGrads &grads) {
    check_ffn(x, p);
    if (!x.same_shape(dy)) {
        throw DimensionError("feed_forward_backward: x " + x.shape_str() + " vs dy " +
                             dy.shape_str());
    }
    const std::size_t d = x.shape().back();
    const std::size_t d_ff = p.w1.cols();
    const std::size_t rows = x.size() / d;

    Tensor flat({rows, d}, x.data());
    Tensor dflat({rows, d}, dy.data());

    // Recompute the hidden activations.
    Tensor pre = matmul(flat, p.w1);
    Tensor h = pre;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d_ff; ++j) {
            pre(r, j) += p.b1(j);
            h(r, j) = pre(r, j) > 0.0 ? pre(r, j) : 0.0;
        }
    }

    Tensor dw2 = matmul(transpose(h), dflat);
    for (std::size_t i = 0; i < dw2.size(); ++i) {
        grads.dw2(i) += dw2(i);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            grads.db2(j) += dflat(r, j);
        }
    }

    Tensor dh = matmul(dflat, transpose(p.w2));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d_ff; ++j) {
            if (pre(r, j) <= 0.0) {
                dh(r, j) = 0.0;
            }
            grads.db1(j) += dh(r, j);
        }
    }

    Tensor dw1 = matmul(transpose(flat), dh);
    for (std::size_t i = 0; i < dw1.size(); ++i) {
        grads.dw1(i) += dw1(i);
    }
    Tensor dx = matmul(dh, transpose(p.w1));
    return Tensor(x.shape(), std::move(dx.data()));
}

Tensor add_norm(const Tensor &x, const Tensor &sublayer_out, const Tensor &gamma,
                const Tensor &beta, double eps) {
    return layer_norm(add(x, sublayer_out), gamma, beta, eps);
}

Tensor output_distribution(const Tensor &h, const Tensor &w_out, const Tensor &b_out) {
    if (h.rank() != 1) {
        throw DimensionError("output_distribution expects a 1D hidden state, got " +
                             h.shape_str());
    }
    if (w_out.rank() != 2 || w_out.rows() != h.size() || b_out.size() != w_out.cols()) {
        throw DimensionError("output_distribution: W " + w_out.shape_str() + " / b " +
                             b_out.shape_str() + " do not match hidden " + h.shape_str());
    }
    Tensor logits({w_out.cols()});
    for (std::size_t j = 0; j < w_out.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) {
            acc += h(i) * w_out(i, j);
        }
        logits(j) = acc + b_out(j);
    }
    return sparsemax(logits).p;
}

Tensor apply_dimension_mask(const Tensor &x, const DimensionMask &dmask) {
    const std::size_t d = x.shape().back();
    if (dmask.size() != d) {
        throw DimensionError("apply_dimension_mask: mask length " +
                             std::to_string(dmask.size()) + " vs last dim " + std::to_string(d));
    }
    Tensor out = x;
    const std::size_t rows = x.size() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        double *row = out.data().data() + r * d;
        for (std::size_t di = 0; di < d; ++di) {
            row[di] *= static_cast<double>(dmask.bits[di]);
        }
    }
    return out;
}

} // namespace sparsecot
