#include "sparsecot/attention.hpp"

#include <cmath>

#include "sparsecot/errors.hpp"
#include "sparsecot/sparsemax.hpp"

namespace sparsecot {

namespace {

Tensor column_block(const Tensor &m, std::size_t offset, std::size_t width) {
    Tensor out({m.rows(), width});
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            out(i, j) = m(i, offset + j);
        }
    }
    return out;
}

void add_column_block(Tensor &m, const Tensor &block, std::size_t offset) {
    for (std::size_t i = 0; i < block.rows(); ++i) {
        for (std::size_t j = 0; j < block.cols(); ++j) {
            m(i, offset + j) += block(i, j);
        }
    }
}

void check_heads(const Tensor &x_q, const Tensor &x_kv, const MultiHeadParams &p) {
    if (x_q.rank() != 2 || x_kv.rank() != 2) {
        throw DimensionError("multi-head attention expects 2D inputs, got " + x_q.shape_str() +
                             " and " + x_kv.shape_str());
    }
    const std::size_t d = x_q.cols();
    if (x_kv.cols() != d) {
        throw DimensionError("multi-head attention: model dims differ: " + x_q.shape_str() +
                             " vs " + x_kv.shape_str());
    }
    if (p.heads == 0 || d % p.heads != 0) {
        throw ConfigError("multi-head attention: D = " + std::to_string(d) +
                          " not divisible by H = " + std::to_string(p.heads));
    }
}

} // namespace

AttentionOutput sparse_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                                 const AttentionMask &mask) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw DimensionError("sparse_attention expects 2D tensors");
    }
    if (q.cols() != k.cols()) {
        throw DimensionError("sparse_attention: d_k mismatch: " + q.shape_str() + " vs " +
                             k.shape_str());
    }
    if (k.rows() != v.rows()) {
        throw DimensionError("sparse_attention: K rows " + k.shape_str() + " vs V rows " +
                             v.shape_str());
    }
    if (mask.n_q() != q.rows() || mask.n_k() != k.rows()) {
        throw DimensionError("sparse_attention: mask " + mask.values.shape_str() +
                             " does not match Q " + q.shape_str() + " / K " + k.shape_str());
    }

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = matmul(q, transpose(k));
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores(i) *= inv_scale;
    }
    scores = add(scores, mask.values);

    AttentionOutput out;
    out.weights = Tensor({q.rows(), k.rows()});
    out.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < q.rows(); ++i) {
        SparsemaxResult r = sparsemax(scores.row(i));
        for (std::size_t j = 0; j < k.rows(); ++j) {
            out.weights(i, j) = r.p(j);
        }
        out.pairs_attended += r.support.indices.size();
        out.min_margin = std::min(out.min_margin, r.boundary_margin);
    }
    out.context = matmul(out.weights, v);
    return out;
}

void sparse_attention_backward(const Tensor &q, const Tensor &k, const Tensor &v,
                               const Tensor &weights, const Tensor &dcontext,
                               Tensor &dq, Tensor &dk, Tensor &dv) {
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));

    // dV = P^T dC
    Tensor dv_add = matmul(transpose(weights), dcontext);
    for (std::size_t i = 0; i < dv.size(); ++i) {
        dv(i) += dv_add(i);
    }
    // dP = dC V^T, then through sparsemax row-wise.
    Tensor dp = matmul(dcontext, transpose(v));
    Tensor dscores({weights.rows(), weights.cols()});
    for (std::size_t i = 0; i < weights.rows(); ++i) {
        const std::vector<double> dz = sparsemax_vjp(weights.row(i), dp.row(i));
        for (std::size_t j = 0; j < weights.cols(); ++j) {
            dscores(i, j) = dz[j] * inv_scale;
        }
    }
    Tensor dq_add = matmul(dscores, k);
    for (std::size_t i = 0; i < dq.size(); ++i) {
        dq(i) += dq_add(i);
    }
    Tensor dk_add = matmul(transpose(dscores), q);
    for (std::size_t i = 0; i < dk.size(); ++i) {
        dk(i) += dk_add(i);
    }
}

MultiHeadParams identity_heads(std::size_t d) {
    MultiHeadParams p;
    p.heads = 1;
    p.wq = Tensor::identity(d);
    p.wk = Tensor::identity(d);
    p.wv = Tensor::identity(d);
    p.wo = Tensor::identity(d);
    return p;
}

Tensor multi_head_sparse_attention(const Tensor &x_q, const Tensor &x_kv,
                                   const MultiHeadParams &params, const AttentionMask &mask,
                                   MultiHeadCache *cache) {
    check_heads(x_q, x_kv, params);
    if (mask.n_q() != x_q.rows() || mask.n_k() != x_kv.rows()) {
        throw DimensionError("multi-head attention: mask " + mask.values.shape_str() +
                             " does not match inputs " + x_q.shape_str() + " / " +
                             x_kv.shape_str());
    }
    const std::size_t d = x_q.cols();
    const std::size_t h = params.heads;
    const std::size_t d_head = d / h;

    MultiHeadCache local;
    MultiHeadCache &c = cache != nullptr ? *cache : local;
    c.qf = matmul(x_q, params.wq);
    c.kf = matmul(x_kv, params.wk);
    c.vf = matmul(x_kv, params.wv);
    c.head_weights.clear();
    c.head_weights.reserve(h);
    c.concat = Tensor({x_q.rows(), d});
    c.pairs_attended = 0;
    c.min_margin = std::numeric_limits<double>::infinity();

    for (std::size_t hi = 0; hi < h; ++hi) {
        const std::size_t off = hi * d_head;
        Tensor qh = column_block(c.qf, off, d_head);
        Tensor kh = column_block(c.kf, off, d_head);
        Tensor vh = column_block(c.vf, off, d_head);
        AttentionOutput head = sparse_attention(qh, kh, vh, mask);
        c.pairs_attended += head.pairs_attended;
        c.min_margin = std::min(c.min_margin, head.min_margin);
        add_column_block(c.concat, head.context, off);
        c.head_weights.push_back(std::move(head.weights));
    }
    c.mean_support = static_cast<double>(c.pairs_attended) /
                     static_cast<double>(h * x_q.rows());
    return matmul(c.concat, params.wo);
}

MultiHeadGrads zero_grads_like(const MultiHeadParams &params) {
    MultiHeadGrads g;
    g.dwq = Tensor::zeros(params.wq.shape());
    g.dwk = Tensor::zeros(params.wk.shape());
    g.dwv = Tensor::zeros(params.wv.shape());
    g.dwo = Tensor::zeros(params.wo.shape());
    return g;
}

void multi_head_backward(const Tensor &x_q, const Tensor &x_kv, const MultiHeadParams &params,
                         const MultiHeadCache &cache, const Tensor &dout, Tensor &dx_q,
                         Tensor &dx_kv, MultiHeadGrads &grads) {
    const std::size_t d = x_q.cols();
    const std::size_t h = params.heads;
    const std::size_t d_head = d / h;

    // out = concat * wo
    Tensor dwo = matmul(transpose(cache.concat), dout);
    for (std::size_t i = 0; i < dwo.size(); ++i) {
        grads.dwo(i) += dwo(i);
    }
    Tensor dconcat = matmul(dout, transpose(params.wo));

    Tensor dqf = Tensor::zeros(cache.qf.shape());
    Tensor dkf = Tensor::zeros(cache.kf.shape());
    Tensor dvf = Tensor::zeros(cache.vf.shape());

    for (std::size_t hi = 0; hi < h; ++hi) {
        const std::size_t off = hi * d_head;
        Tensor qh = column_block(cache.qf, off, d_head);
        Tensor kh = column_block(cache.kf, off, d_head);
        Tensor vh = column_block(cache.vf, off, d_head);
        Tensor dctx = column_block(dconcat, off, d_head);

        Tensor dqh = Tensor::zeros(qh.shape());
        Tensor dkh = Tensor::zeros(kh.shape());
        Tensor dvh = Tensor::zeros(vh.shape());
        sparse_attention_backward(qh, kh, vh, cache.head_weights[hi], dctx, dqh, dkh, dvh);
        add_column_block(dqf, dqh, off);
        add_column_block(dkf, dkh, off);
        add_column_block(dvf, dvh, off);
    }

    Tensor dwq = matmul(transpose(x_q), dqf);
    Tensor dwk = matmul(transpose(x_kv), dkf);
    Tensor dwv = matmul(transpose(x_kv), dvf);
    for (std::size_t i = 0; i < dwq.size(); ++i) {
        grads.dwq(i) += dwq(i);
        grads.dwk(i) += dwk(i);
        grads.dwv(i) += dwv(i);
    }

    Tensor dxq_add = matmul(dqf, transpose(params.wq));
    for (std::size_t i = 0; i < dx_q.size(); ++i) {
        dx_q(i) += dxq_add(i);
    }
    Tensor dxkv_add = add(matmul(dkf, transpose(params.wk)), matmul(dvf, transpose(params.wv)));
    for (std::size_t i = 0; i < dx_kv.size(); ++i) {
        dx_kv(i) += dxkv_add(i);
    }
}

Tensor self_attention(const Tensor &x, const MultiHeadParams &params,
                      const AttentionMask *extra_pattern, MultiHeadCache *cache) {
    AttentionMask mask = make_causal_mask(x.rows());
    if (extra_pattern != nullptr) {
        mask = compose(mask, *extra_pattern);
    }
    return multi_head_sparse_attention(x, x, params, mask, cache);
}

Tensor cross_attention(const Tensor &x_dec, const Tensor &h_e, const MultiHeadParams &params,
                       const AttentionMask &pattern, MultiHeadCache *cache) {
    return multi_head_sparse_attention(x_dec, h_e, params, pattern, cache);
}

Tensor head_averaged_scores(const Tensor &x_q, const Tensor &x_kv,
                            const MultiHeadParams &params) {
    check_heads(x_q, x_kv, params);
    const std::size_t d = x_q.cols();
    const std::size_t h = params.heads;
    const std::size_t d_head = d / h;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_head));

    Tensor qf = matmul(x_q, params.wq);
    Tensor kf = matmul(x_kv, params.wk);
    Tensor acc = Tensor::zeros({x_q.rows(), x_kv.rows()});
    for (std::size_t hi = 0; hi < h; ++hi) {
        const std::size_t off = hi * d_head;
        Tensor s = matmul(column_block(qf, off, d_head), transpose(column_block(kf, off, d_head)));
        for (std::size_t i = 0; i < acc.size(); ++i) {
            acc(i) += s(i) * inv_scale;
        }
    }
    return scale(acc, 1.0 / static_cast<double>(h));
}

} // namespace sparsecot
