#include "sparsecot/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "sparsecot/errors.hpp"
#include "sparsecot/sparsemax.hpp"

namespace sparsecot {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (V < 2) {
        throw ConfigError("config: V must be >= 2");
    }
    if (D < 2 || H < 1 || L_enc < 1 || L_dec < 1) {
        throw ConfigError("config: D >= 2 and H, L_enc, L_dec >= 1 required");
    }
    if (D % H != 0) {
        throw ConfigError("config: D = " + std::to_string(D) + " not divisible by H = " +
                          std::to_string(H));
    }
    if (!(alpha > 0.0) || alpha > 1.0) {
        throw ConfigError("config: alpha must be in (0, 1], got " + std::to_string(alpha));
    }
    PatternSpec::parse(enc_pattern);
    PatternSpec::parse(dec_self_pattern);
    PatternSpec::parse(cross_pattern);
}

ModelConfig ModelConfig::parse(const std::string &text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "V") cfg.V = std::stoul(value);
            else if (key == "D") cfg.D = std::stoul(value);
            else if (key == "H") cfg.H = std::stoul(value);
            else if (key == "D_ff") cfg.D_ff = std::stoul(value);
            else if (key == "L_enc") cfg.L_enc = std::stoul(value);
            else if (key == "L_dec") cfg.L_dec = std::stoul(value);
            else if (key == "T") cfg.T = std::stoul(value);
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "enc_pattern") cfg.enc_pattern = value;
            else if (key == "dec_self_pattern") cfg.dec_self_pattern = value;
            else if (key == "cross_pattern") cfg.cross_pattern = value;
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "share_cot_weights") cfg.share_cot_weights = value == "1" || value == "true";
            else throw ConfigError("config: unknown key '" + key + "'");
        } catch (const ConfigError &) {
            throw;
        } catch (const std::exception &) {
            throw ConfigError("config: bad value for key '" + key + "': '" + value + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("config: cannot open '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "V=" << V << "\nD=" << D << "\nH=" << H << "\nD_ff=" << D_ff
       << "\nL_enc=" << L_enc << "\nL_dec=" << L_dec << "\nT=" << T << "\nalpha=" << alpha
       << "\nenc_pattern=" << enc_pattern << "\ndec_self_pattern=" << dec_self_pattern
       << "\ncross_pattern=" << cross_pattern << "\nseed=" << seed
       << "\nshare_cot_weights=" << (share_cot_weights ? 1 : 0) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

class ParamRng {
  public:
    explicit ParamRng(std::uint64_t seed) : rng_(seed), dist_(-0.1, 0.1) {}
    void fill(Tensor &t) {
        for (double &v : t.data()) {
            v = dist_(rng_);
        }
    }

  private:
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> dist_;
};

MultiHeadParams init_heads(ParamRng &rng, std::size_t d, std::size_t h) {
    MultiHeadParams p;
    p.heads = h;
    p.wq = Tensor({d, d});
    p.wk = Tensor({d, d});
    p.wv = Tensor({d, d});
    p.wo = Tensor({d, d});
    rng.fill(p.wq);
    rng.fill(p.wk);
    rng.fill(p.wv);
    rng.fill(p.wo);
    return p;
}

LayerNormParams init_norm(std::size_t d) {
    return {Tensor::full({d}, 1.0), Tensor::zeros({d})};
}

FeedForwardParams init_ffn(ParamRng &rng, std::size_t d, std::size_t d_ff) {
    FeedForwardParams p;
    p.w1 = Tensor({d, d_ff});
    p.b1 = Tensor::zeros({d_ff});
    p.w2 = Tensor({d_ff, d});
    p.b2 = Tensor::zeros({d});
    rng.fill(p.w1);
    rng.fill(p.w2);
    return p;
}

TransformBlockParams init_block(ParamRng &rng, const ModelConfig &cfg) {
    return {init_heads(rng, cfg.D, cfg.H), init_norm(cfg.D), init_ffn(rng, cfg.D, cfg.d_ff()),
            init_norm(cfg.D)};
}

DecoderLayerParams init_decoder_layer(ParamRng &rng, const ModelConfig &cfg) {
    return {init_heads(rng, cfg.D, cfg.H), init_norm(cfg.D), init_heads(rng, cfg.D, cfg.H),
            init_norm(cfg.D), init_ffn(rng, cfg.D, cfg.d_ff()), init_norm(cfg.D)};
}

} // namespace

ModelParams init_params(const ModelConfig &config) {
    config.validate();
    ParamRng rng(config.seed);
    ModelParams p;
    p.embedding.e = Tensor({config.V, config.D});
    rng.fill(p.embedding.e);

    for (std::size_t i = 0; i < config.L_enc; ++i) {
        p.encoder.push_back(init_block(rng, config));
    }
    const std::size_t cot_count = config.T == 0 ? 0 : (config.share_cot_weights ? 1 : config.T);
    for (std::size_t t = 0; t < cot_count; ++t) {
        p.cot_steps.push_back(init_block(rng, config));
    }
    for (std::size_t i = 0; i < config.L_dec; ++i) {
        p.decoder.push_back(init_decoder_layer(rng, config));
    }
    p.w_out = Tensor({config.D, config.V});
    rng.fill(p.w_out);
    p.b_out = Tensor::zeros({config.V});

    // Dimension mask by mean |E| per dimension over the vocabulary.
    Tensor importance({config.D});
    for (std::size_t v = 0; v < config.V; ++v) {
        for (std::size_t d = 0; d < config.D; ++d) {
            importance(d) += std::fabs(p.embedding.e(v, d));
        }
    }
    for (std::size_t d = 0; d < config.D; ++d) {
        importance(d) /= static_cast<double>(config.V);
    }
    p.dim_mask =
        make_dimension_mask(config.D, config.alpha, DimSelect::Magnitude, 0, &importance);
    return p;
}

ModelGrads zero_grads_like(const ModelParams &params) {
    ModelGrads g;
    g.d_embedding = Tensor::zeros(params.embedding.e.shape());
    for (const auto &b : params.encoder) {
        g.encoder.push_back(zero_grads_like(b));
    }
    for (const auto &b : params.cot_steps) {
        g.cot_steps.push_back(zero_grads_like(b));
    }
    for (const auto &d : params.decoder) {
        g.decoder.push_back({zero_grads_like(d.self_attn), zero_grads_like(d.norm1),
                             zero_grads_like(d.cross_attn), zero_grads_like(d.norm2),
                             zero_grads_like(d.ffn), zero_grads_like(d.norm3)});
    }
    g.dw_out = Tensor::zeros(params.w_out.shape());
    g.db_out = Tensor::zeros(params.b_out.shape());
    return g;
}

namespace {

using NamedList = std::vector<std::pair<std::string, Tensor *>>;

void add_heads(NamedList &out, const std::string &prefix, Tensor &wq, Tensor &wk, Tensor &wv,
               Tensor &wo) {
    out.emplace_back(prefix + ".wq", &wq);
    out.emplace_back(prefix + ".wk", &wk);
    out.emplace_back(prefix + ".wv", &wv);
    out.emplace_back(prefix + ".wo", &wo);
}

void add_norm_params(NamedList &out, const std::string &prefix, Tensor &gamma, Tensor &beta) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
}

void add_ffn(NamedList &out, const std::string &prefix, Tensor &w1, Tensor &b1, Tensor &w2,
             Tensor &b2) {
    out.emplace_back(prefix + ".w1", &w1);
    out.emplace_back(prefix + ".b1", &b1);
    out.emplace_back(prefix + ".w2", &w2);
    out.emplace_back(prefix + ".b2", &b2);
}

} // namespace

NamedList named_tensors(ModelParams &p) {
    NamedList out;
    out.emplace_back("embedding", &p.embedding.e);
    for (std::size_t i = 0; i < p.encoder.size(); ++i) {
        const std::string pre = "enc." + std::to_string(i);
        auto &b = p.encoder[i];
        add_heads(out, pre + ".attn", b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo);
        add_norm_params(out, pre + ".norm1", b.norm1.gamma, b.norm1.beta);
        add_ffn(out, pre + ".ffn", b.ffn.w1, b.ffn.b1, b.ffn.w2, b.ffn.b2);
        add_norm_params(out, pre + ".norm2", b.norm2.gamma, b.norm2.beta);
    }
    for (std::size_t i = 0; i < p.cot_steps.size(); ++i) {
        const std::string pre = "cot." + std::to_string(i);
        auto &b = p.cot_steps[i];
        add_heads(out, pre + ".attn", b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo);
        add_norm_params(out, pre + ".norm1", b.norm1.gamma, b.norm1.beta);
        add_ffn(out, pre + ".ffn", b.ffn.w1, b.ffn.b1, b.ffn.w2, b.ffn.b2);
        add_norm_params(out, pre + ".norm2", b.norm2.gamma, b.norm2.beta);
    }
    for (std::size_t i = 0; i < p.decoder.size(); ++i) {
        const std::string pre = "dec." + std::to_string(i);
        auto &d = p.decoder[i];
        add_heads(out, pre + ".self", d.self_attn.wq, d.self_attn.wk, d.self_attn.wv,
                  d.self_attn.wo);
        add_norm_params(out, pre + ".norm1", d.norm1.gamma, d.norm1.beta);
        add_heads(out, pre + ".cross", d.cross_attn.wq, d.cross_attn.wk, d.cross_attn.wv,
                  d.cross_attn.wo);
        add_norm_params(out, pre + ".norm2", d.norm2.gamma, d.norm2.beta);
        add_ffn(out, pre + ".ffn", d.ffn.w1, d.ffn.b1, d.ffn.w2, d.ffn.b2);
        add_norm_params(out, pre + ".norm3", d.norm3.gamma, d.norm3.beta);
    }
    out.emplace_back("out.w", &p.w_out);
    out.emplace_back("out.b", &p.b_out);
    return out;
}

NamedList named_tensors(ModelGrads &g) {
    NamedList out;
    out.emplace_back("embedding", &g.d_embedding);
    for (std::size_t i = 0; i < g.encoder.size(); ++i) {
        const std::string pre = "enc." + std::to_string(i);
        auto &b = g.encoder[i];
        add_heads(out, pre + ".attn", b.attn.dwq, b.attn.dwk, b.attn.dwv, b.attn.dwo);
        add_norm_params(out, pre + ".norm1", b.norm1.dgamma, b.norm1.dbeta);
        add_ffn(out, pre + ".ffn", b.ffn.dw1, b.ffn.db1, b.ffn.dw2, b.ffn.db2);
        add_norm_params(out, pre + ".norm2", b.norm2.dgamma, b.norm2.dbeta);
    }
    for (std::size_t i = 0; i < g.cot_steps.size(); ++i) {
        const std::string pre = "cot." + std::to_string(i);
        auto &b = g.cot_steps[i];
        add_heads(out, pre + ".attn", b.attn.dwq, b.attn.dwk, b.attn.dwv, b.attn.dwo);
        add_norm_params(out, pre + ".norm1", b.norm1.dgamma, b.norm1.dbeta);
        add_ffn(out, pre + ".ffn", b.ffn.dw1, b.ffn.db1, b.ffn.dw2, b.ffn.db2);
        add_norm_params(out, pre + ".norm2", b.norm2.dgamma, b.norm2.dbeta);
    }
    for (std::size_t i = 0; i < g.decoder.size(); ++i) {
        const std::string pre = "dec." + std::to_string(i);
        auto &d = g.decoder[i];
        add_heads(out, pre + ".self", d.self_attn.dwq, d.self_attn.dwk, d.self_attn.dwv,
                  d.self_attn.dwo);
        add_norm_params(out, pre + ".norm1", d.norm1.dgamma, d.norm1.dbeta);
        add_heads(out, pre + ".cross", d.cross_attn.dwq, d.cross_attn.dwk, d.cross_attn.dwv,
                  d.cross_attn.dwo);
        add_norm_params(out, pre + ".norm2", d.norm2.dgamma, d.norm2.dbeta);
        add_ffn(out, pre + ".ffn", d.ffn.dw1, d.ffn.db1, d.ffn.dw2, d.ffn.db2);
        add_norm_params(out, pre + ".norm3", d.norm3.dgamma, d.norm3.dbeta);
    }
    out.emplace_back("out.w", &g.dw_out);
    out.emplace_back("out.b", &g.db_out);
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward plumbing
// ---------------------------------------------------------------------------

namespace {

Tensor slice_batch(const Tensor &x, std::size_t b) {
    const std::size_t n = x.dim(1), d = x.dim(2);
    Tensor out({n, d});
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(b * n * d), n * d,
                out.data().begin());
    return out;
}

void store_batch(Tensor &x, std::size_t b, const Tensor &slice) {
    const std::size_t n = x.dim(1), d = x.dim(2);
    std::copy_n(slice.data().begin(), n * d,
                x.data().begin() + static_cast<std::ptrdiff_t>(b * n * d));
}

/// Materialize the mask for one attention call. Static patterns ignore the
/// inputs; top-k patterns pull head-averaged scores first.
AttentionMask resolve_mask(const PatternSpec &spec, const Tensor &x_q, const Tensor &x_kv,
                           const MultiHeadParams &attn, bool force_causal_base) {
    const std::size_t n_q = x_q.rows(), n_k = x_kv.rows();
    if (spec.kind == PatternKind::TopK) {
        const Tensor scores = head_averaged_scores(x_q, x_kv, attn);
        const AttentionMask base = (spec.causal || force_causal_base)
                                       ? build_pattern_mask({PatternKind::Causal, 0, false}, n_q, n_k)
                                       : make_full_mask(n_q, n_k);
        return make_topk_dynamic_mask(scores, spec.param, &base);
    }
    AttentionMask mask = build_pattern_mask(spec, n_q, n_k);
    if (force_causal_base && spec.kind != PatternKind::Causal) {
        mask = compose(build_pattern_mask({PatternKind::Causal, 0, false}, n_q, n_k), mask);
    }
    return mask;
}

Tensor embed_with_positions(const TokenBatch &tokens, const ModelParams &params) {
    Tensor x = sparse_embed(tokens, params.embedding, params.dim_mask);
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    const Tensor pe = positional_encoding(n, d);
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t di = 0; di < d; ++di) {
                x(bi, ni, di) += pe(ni, di);
            }
        }
    }
    return x;
}

void embedding_backward(const TokenBatch &tokens, const Tensor &d_emb,
                        const DimensionMask &dmask, Tensor &d_e) {
    const std::size_t b = d_emb.dim(0), n = d_emb.dim(1), d = d_emb.dim(2);
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t ni = 0; ni < n; ++ni) {
            const auto t = static_cast<std::size_t>(tokens[bi][ni]);
            for (std::size_t di = 0; di < d; ++di) {
                if (dmask.bits[di]) {
                    d_e(t, di) += d_emb(bi, ni, di);
                }
            }
        }
    }
}

struct EncoderCaches {
    Tensor enc_x;                                     // B x N x D after embed + positions
    std::vector<std::vector<TransformBlockCache>> per_layer; // [B][L_enc]
    Tensor enc_out;                                   // before the reasoning module
    std::vector<CotStepCache> cot;
    double min_margin = std::numeric_limits<double>::infinity();
    double min_cot_gap = std::numeric_limits<double>::infinity();
    CotTrace trace;
};

Tensor encode_internal(const TokenBatch &tokens, const ModelParams &params,
                       const ModelConfig &config, EncoderCaches *caches) {
    EncoderCaches local;
    EncoderCaches &c = caches != nullptr ? *caches : local;

    c.enc_x = embed_with_positions(tokens, params);
    const std::size_t b = c.enc_x.dim(0), n = c.enc_x.dim(1);
    const PatternSpec enc_spec = PatternSpec::parse(config.enc_pattern);

    c.enc_out = Tensor(c.enc_x.shape());
    c.per_layer.assign(b, {});
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor x = slice_batch(c.enc_x, bi);
        c.per_layer[bi].assign(config.L_enc, TransformBlockCache{});
        for (std::size_t l = 0; l < config.L_enc; ++l) {
            const AttentionMask mask =
                resolve_mask(enc_spec, x, x, params.encoder[l].attn, false);
            x = transform_block_forward(x, params.encoder[l], mask, &c.per_layer[bi][l]);
            c.min_margin = std::min(c.min_margin, c.per_layer[bi][l].attn.min_margin);
        }
        store_batch(c.enc_out, bi, x);
    }

    if (config.T == 0) {
        c.trace.clear();
        return c.enc_out;
    }

    // Reasoning steps use the encoder pattern when it is static; a dynamic
    // top-k pattern falls back to full attention here (the per-step
    // sparsification is the dimension mask M_t).
    const AttentionMask cot_mask = enc_spec.kind == PatternKind::TopK
                                       ? make_full_mask(n, n)
                                       : build_pattern_mask(enc_spec, n, n);
    ReasoningState final = run_cot(c.enc_out, config.T, params.cot_steps, cot_mask, config.alpha,
                                   caches != nullptr ? &c.cot : nullptr);
    for (const CotStepCache &sc : c.cot) {
        c.min_cot_gap = std::min(c.min_cot_gap, sc.min_importance_gap);
        for (const TransformBlockCache &tb : sc.per_batch) {
            c.min_margin = std::min(c.min_margin, tb.attn.min_margin);
        }
    }
    c.trace = final.trace;
    return final.r;
}

struct DecLayerCache {
    MultiHeadCache self_attn;
    Tensor x_in, s_out, x1;
    MultiHeadCache cross_attn;
    Tensor c_out, u, f_out, fm;
};

struct DecoderCaches {
    Tensor dec_x; // B x N_d x D
    std::vector<std::vector<DecLayerCache>> per_layer; // [B][L_dec]
    Tensor hidden; // B x N_d x D
    double min_margin = std::numeric_limits<double>::infinity();
};

Tensor decoder_layer_forward(const Tensor &x, const Tensor &h_e, const DecoderLayerParams &p,
                             const DimensionMask &dmask, const PatternSpec &self_spec,
                             const PatternSpec &cross_spec, DecLayerCache &c) {
    c.x_in = x;
    const AttentionMask self_mask = resolve_mask(self_spec, x, x, p.self_attn, true);
    c.s_out = multi_head_sparse_attention(x, x, p.self_attn, self_mask, &c.self_attn);
    c.x1 = add_norm(x, c.s_out, p.norm1.gamma, p.norm1.beta);

    const AttentionMask cross_mask = resolve_mask(cross_spec, c.x1, h_e, p.cross_attn, false);
    c.c_out = multi_head_sparse_attention(c.x1, h_e, p.cross_attn, cross_mask, &c.cross_attn);
    c.u = add_norm(c.x1, c.c_out, p.norm2.gamma, p.norm2.beta);

    c.f_out = feed_forward(c.u, p.ffn);
    c.fm = apply_dimension_mask(c.f_out, dmask);
    return add_norm(c.u, c.fm, p.norm3.gamma, p.norm3.beta);
}

Tensor decoder_layer_backward(const DecoderLayerParams &p, const DecLayerCache &c,
                              const Tensor &h_e, const DimensionMask &dmask, const Tensor &dout,
                              Tensor &dh_e, DecoderLayerGrads &g) {
    Tensor dsum3 = layer_norm_backward(add(c.u, c.fm), p.norm3.gamma, dout, g.norm3.dgamma,
                                       g.norm3.dbeta);
    Tensor du = dsum3;
    Tensor df = apply_dimension_mask(dsum3, dmask);
    Tensor dffn_in = feed_forward_backward(c.u, p.ffn, df, g.ffn);
    for (std::size_t i = 0; i < du.size(); ++i) {
        du(i) += dffn_in(i);
    }

    Tensor dsum2 =
        layer_norm_backward(add(c.x1, c.c_out), p.norm2.gamma, du, g.norm2.dgamma, g.norm2.dbeta);
    Tensor dx1 = dsum2;
    multi_head_backward(c.x1, h_e, p.cross_attn, c.cross_attn, dsum2, dx1, dh_e, g.cross_attn);

    Tensor dsum1 =
        layer_norm_backward(add(c.x_in, c.s_out), p.norm1.gamma, dx1, g.norm1.dgamma,
                            g.norm1.dbeta);
    Tensor dx = dsum1;
    multi_head_backward(c.x_in, c.x_in, p.self_attn, c.self_attn, dsum1, dx, dx, g.self_attn);
    return dx;
}

Tensor decoder_internal(const TokenBatch &prefix, const Tensor &h_e, const ModelParams &params,
                        const ModelConfig &config, DecoderCaches *caches) {
    if (prefix.empty() || prefix.front().empty()) {
        throw ArgumentError("decode: empty prefix");
    }
    DecoderCaches local;
    DecoderCaches &c = caches != nullptr ? *caches : local;
    c.dec_x = embed_with_positions(prefix, params);
    const std::size_t b = c.dec_x.dim(0);
    const PatternSpec self_spec = PatternSpec::parse(config.dec_self_pattern);
    const PatternSpec cross_spec = PatternSpec::parse(config.cross_pattern);

    c.hidden = Tensor(c.dec_x.shape());
    c.per_layer.assign(b, {});
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor x = slice_batch(c.dec_x, bi);
        const Tensor he_b = slice_batch(h_e, bi);
        c.per_layer[bi].assign(config.L_dec, DecLayerCache{});
        for (std::size_t l = 0; l < config.L_dec; ++l) {
            x = decoder_layer_forward(x, he_b, params.decoder[l], params.dim_mask, self_spec,
                                      cross_spec, c.per_layer[bi][l]);
            c.min_margin = std::min({c.min_margin, c.per_layer[bi][l].self_attn.min_margin,
                                     c.per_layer[bi][l].cross_attn.min_margin});
        }
        store_batch(c.hidden, bi, x);
    }
    return c.hidden;
}

Tensor logits_for_row(const Tensor &hidden_row, const ModelParams &params) {
    Tensor z({params.b_out.size()});
    for (std::size_t j = 0; j < z.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hidden_row.size(); ++i) {
            acc += hidden_row(i) * params.w_out(i, j);
        }
        z(j) = acc + params.b_out(j);
    }
    return z;
}

} // namespace

EncodeResult encode(const TokenBatch &tokens, const ModelParams &params,
                    const ModelConfig &config) {
    EncoderCaches caches;
    EncodeResult out;
    out.h_e = encode_internal(tokens, params, config, &caches);
    out.trace = caches.trace;
    out.min_margin = caches.min_margin;
    return out;
}

Tensor decode_step(const TokenBatch &prefix, const Tensor &h_e, const ModelParams &params,
                   const ModelConfig &config) {
    const Tensor hidden = decoder_internal(prefix, h_e, params, config, nullptr);
    const std::size_t b = hidden.dim(0), n = hidden.dim(1), d = hidden.dim(2);
    Tensor dist({b, config.V});
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor row({d});
        for (std::size_t di = 0; di < d; ++di) {
            row(di) = hidden(bi, n - 1, di);
        }
        const Tensor p = output_distribution(row, params.w_out, params.b_out);
        for (std::size_t j = 0; j < config.V; ++j) {
            dist(bi, j) = p(j);
        }
    }
    return dist;
}

std::vector<int> greedy_decode(const TokenRow &src_tokens, std::size_t max_len,
                               const ModelParams &params, const ModelConfig &config) {
    if (max_len < 1) {
        throw ArgumentError("greedy_decode: max_len must be >= 1");
    }
    if (src_tokens.empty()) {
        throw ArgumentError("greedy_decode: empty source");
    }
    const EncodeResult enc = encode({src_tokens}, params, config);
    TokenRow prefix{static_cast<int>(config.end_token())};
    std::vector<int> out;
    while (out.size() < max_len) {
        const Tensor dist = decode_step({prefix}, enc.h_e, params, config);
        std::size_t best = 0;
        for (std::size_t j = 1; j < config.V; ++j) {
            if (dist(0, j) > dist(0, best)) {
                best = j;
            }
        }
        out.push_back(static_cast<int>(best));
        if (best == config.end_token()) {
            break;
        }
        prefix.push_back(static_cast<int>(best));
    }
    return out;
}

ForwardStats forward_backward(const TokenBatch &src, const TokenBatch &dec_in,
                              const TokenBatch &targets, const ModelParams &params,
                              const ModelConfig &config, ModelGrads *grads) {
    const bool want_grads = grads != nullptr;
    EncoderCaches enc_caches;
    const Tensor h_e = encode_internal(src, params, config, &enc_caches);
    DecoderCaches dec_caches;
    const Tensor hidden = decoder_internal(dec_in, h_e, params, config, &dec_caches);

    const std::size_t b = hidden.dim(0), n_d = hidden.dim(1), d = hidden.dim(2);
    if (targets.size() != b || targets.front().size() != n_d) {
        throw ArgumentError("forward_backward: targets do not match decoder prefix shape");
    }
    const double inv_count = 1.0 / static_cast<double>(b * n_d);

    ForwardStats stats;
    stats.min_attn_margin = std::min(enc_caches.min_margin, dec_caches.min_margin);
    stats.min_cot_gap = enc_caches.min_cot_gap;
    stats.trace = enc_caches.trace;

    Tensor d_hidden = Tensor::zeros(hidden.shape());
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t ni = 0; ni < n_d; ++ni) {
            Tensor row({d});
            for (std::size_t di = 0; di < d; ++di) {
                row(di) = hidden(bi, ni, di);
            }
            const Tensor z = logits_for_row(row, params);
            const auto target = static_cast<std::size_t>(targets[bi][ni]);
            if (target >= config.V) {
                throw VocabularyError("forward_backward: target id out of range");
            }
            const SparsemaxResult r = sparsemax(z);
            stats.min_attn_margin = std::min(stats.min_attn_margin, r.boundary_margin);
            const double tau2 = r.support.tau * r.support.tau;
            double acc = 0.0;
            for (std::size_t j : r.support.indices) {
                acc += z(j) * z(j) - tau2;
            }
            stats.loss += (-z(target) + 0.5 * acc + 0.5) * inv_count;

            if (want_grads) {
                Tensor dz = r.p;
                dz(target) -= 1.0;
                for (std::size_t j = 0; j < dz.size(); ++j) {
                    dz(j) *= inv_count;
                }
                // dW_out, db_out, and the hidden-state gradient.
                for (std::size_t i = 0; i < d; ++i) {
                    double acc_dh = 0.0;
                    for (std::size_t j = 0; j < config.V; ++j) {
                        grads->dw_out(i, j) += row(i) * dz(j);
                        acc_dh += dz(j) * params.w_out(i, j);
                    }
                    d_hidden(bi, ni, i) += acc_dh;
                }
                for (std::size_t j = 0; j < config.V; ++j) {
                    grads->db_out(j) += dz(j);
                }
            }
        }
    }
    if (!want_grads) {
        return stats;
    }

    // Decoder stack backward; accumulates the encoder-side gradient.
    Tensor dh_e = Tensor::zeros(h_e.shape());
    Tensor d_dec_emb = Tensor::zeros(dec_caches.dec_x.shape());
    for (std::size_t bi = 0; bi < b; ++bi) {
        Tensor dx = slice_batch(d_hidden, bi);
        const Tensor he_b = slice_batch(h_e, bi);
        Tensor dhe_b = Tensor::zeros(he_b.shape());
        for (std::size_t l = config.L_dec; l-- > 0;) {
            dx = decoder_layer_backward(params.decoder[l], dec_caches.per_layer[bi][l], he_b,
                                        params.dim_mask, dx, dhe_b, grads->decoder[l]);
        }
        store_batch(d_dec_emb, bi, dx);
        for (std::size_t i = 0; i < dhe_b.size(); ++i) {
            dh_e.data()[bi * dhe_b.size() + i] += dhe_b(i);
        }
    }
    embedding_backward(dec_in, d_dec_emb, params.dim_mask, grads->d_embedding);

    // Reasoning module backward.
    Tensor d_enc_out = Tensor::zeros(enc_caches.enc_out.shape());
    if (config.T == 0) {
        d_enc_out = dh_e;
    } else {
        Tensor d_r = dh_e;
        for (std::size_t t = config.T; t-- > 0;) {
            const std::size_t pi = config.share_cot_weights ? 0 : t;
            Tensor d_c_prev = cot_step_backward(params.cot_steps[pi], enc_caches.cot[t], d_r,
                                                d_enc_out, grads->cot_steps[pi]);
            d_r = d_c_prev; // C_{t-1} = R_{t-1}
        }
        // d_r now targets R_0, which nothing else consumes.
    }

    // Encoder stack backward.
    Tensor d_enc_emb = Tensor::zeros(enc_caches.enc_x.shape());
    for (std::size_t bi = 0; bi < src.size(); ++bi) {
        Tensor dx = slice_batch(d_enc_out, bi);
        for (std::size_t l = config.L_enc; l-- > 0;) {
            dx = transform_block_backward(params.encoder[l], enc_caches.per_layer[bi][l], dx,
                                          grads->encoder[l]);
        }
        store_batch(d_enc_emb, bi, dx);
    }
    embedding_backward(src, d_enc_emb, params.dim_mask, grads->d_embedding);
    return stats;
}

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

TokenRow sample_source(std::mt19937_64 &rng, const ModelConfig &config, std::size_t n) {
    std::uniform_int_distribution<int> dist(0, static_cast<int>(config.V) - 2);
    TokenRow row(n);
    for (int &t : row) {
        t = dist(rng);
    }
    return row;
}

TokenRow task_target(ToyTask task, const TokenRow &src) {
    TokenRow target = src;
    if (task == ToyTask::Reverse) {
        std::reverse(target.begin(), target.end());
    }
    return target;
}

} // namespace

ToyTask parse_toy_task(const std::string &name) {
    if (name == "copy") {
        return ToyTask::Copy;
    }
    if (name == "reverse") {
        return ToyTask::Reverse;
    }
    throw ConfigError("unknown toy task '" + name + "' (expected copy or reverse)");
}

void make_toy_batch(ToyTask task, const ModelConfig &config, std::uint64_t seed,
                    std::size_t step, std::size_t batch_size, TokenBatch &src,
                    TokenBatch &dec_in, TokenBatch &targets, std::size_t seq_len) {
    const std::size_t n = seq_len;
    std::mt19937_64 rng(mix_seed(seed, step));
    src.clear();
    dec_in.clear();
    targets.clear();
    for (std::size_t bi = 0; bi < batch_size; ++bi) {
        TokenRow s = sample_source(rng, config, n);
        TokenRow t = task_target(task, s);
        TokenRow d(n);
        d[0] = static_cast<int>(config.end_token());
        for (std::size_t i = 1; i < n; ++i) {
            d[i] = t[i - 1];
        }
        src.push_back(std::move(s));
        dec_in.push_back(std::move(d));
        targets.push_back(std::move(t));
    }
}

TrainResult train_toy(ToyTask task, const ModelConfig &config, std::size_t steps, double lr,
                      std::size_t batch_size, const ModelParams *resume_from,
                      std::size_t start_step) {
    if (lr < 0.0) {
        throw ConfigError("train_toy: negative learning rate");
    }
    if (batch_size == 0) {
        throw ConfigError("train_toy: batch_size must be >= 1");
    }
    TrainResult result;
    result.params = resume_from != nullptr ? *resume_from : init_params(config);
    result.start_step = start_step;

    TokenBatch src, dec_in, targets;
    for (std::size_t step = start_step; step < start_step + steps; ++step) {
        make_toy_batch(task, config, config.seed, step, batch_size, src, dec_in, targets);
        ModelGrads grads = zero_grads_like(result.params);
        ForwardStats stats;
        try {
            stats = forward_backward(src, dec_in, targets, result.params, config, &grads);
        } catch (const AdmissibilityError &e) {
            // blown-up activations push every score below the sentinel
            throw TrainingError("train_toy: diverged at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        } catch (const ArgumentError &e) {
            throw TrainingError("train_toy: diverged at step " + std::to_string(step) + " (" +
                                e.what() + ")");
        }
        if (!std::isfinite(stats.loss)) {
            throw TrainingError("train_toy: loss diverged at step " + std::to_string(step));
        }
        result.losses.push_back(stats.loss);
        if (lr != 0.0) {
            auto pt = named_tensors(result.params);
            auto gt = named_tensors(grads);
            for (std::size_t i = 0; i < pt.size(); ++i) {
                Tensor &p = *pt[i].second;
                const Tensor &g = *gt[i].second;
                for (std::size_t j = 0; j < p.size(); ++j) {
                    p(j) -= lr * g(j);
                }
            }
        }
    }
    return result;
}

double decode_token_accuracy(const ModelParams &params, const ModelConfig &config, ToyTask task,
                             std::size_t n_sequences, std::uint64_t seed,
                             std::size_t seq_len) {
    const std::size_t n = seq_len;
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < n_sequences; ++i) {
        std::mt19937_64 rng(mix_seed(seed, 0x10000000ULL + i));
        const TokenRow s = sample_source(rng, config, n);
        const TokenRow t = task_target(task, s);
        const std::vector<int> generated = greedy_decode(s, n, params, config);
        for (std::size_t j = 0; j < n; ++j) {
            total += 1;
            if (j < generated.size() && generated[j] == t[j]) {
                hits += 1;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

double rel_error(double a, double f) {
    const double denom = std::max({std::fabs(a), std::fabs(f), 1e-6});
    return std::fabs(a - f) / denom;
}

Tensor random_tensor(std::mt19937_64 &rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double &v : t.data()) {
        v = dist(rng);
    }
    return t;
}

} // namespace

GradCheckReport grad_check_ffn(std::uint64_t seed, std::size_t probes) {
    constexpr double h = 1e-6;
    GradCheckReport report;
    report.path = "ffn";

    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(mix_seed(seed, attempt));
        const std::size_t d = 6, d_ff = 12, rows = 3;
        FeedForwardParams p{random_tensor(rng, {d, d_ff}), random_tensor(rng, {d_ff}),
                            random_tensor(rng, {d_ff, d}), random_tensor(rng, {d})};
        Tensor x = random_tensor(rng, {rows, d});
        Tensor cvec = random_tensor(rng, {rows, d});

        // Resample when a hidden pre-activation sits on the rectifier kink.
        Tensor pre = matmul(x, p.w1);
        bool near_kink = false;
        for (std::size_t r = 0; r < rows && !near_kink; ++r) {
            for (std::size_t j = 0; j < d_ff; ++j) {
                if (std::fabs(pre(r, j) + p.b1(j)) < 1e-4) {
                    near_kink = true;
                    break;
                }
            }
        }
        if (near_kink) {
            ++report.resamples;
            continue;
        }

        auto loss_of = [&](const FeedForwardParams &q, const Tensor &xs) {
            const Tensor y = feed_forward(xs, q);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                acc += cvec(i) * y(i);
            }
            return acc;
        };

        FeedForwardGrads grads = zero_grads_like(p);
        Tensor dx = feed_forward_backward(x, p, cvec, grads);

        std::vector<std::pair<Tensor *, Tensor *>> pairs = {
            {&p.w1, &grads.dw1}, {&p.b1, &grads.db1}, {&p.w2, &grads.dw2},
            {&p.b2, &grads.db2}, {&x, &dx}};
        std::mt19937_64 pick(mix_seed(seed, 777 + attempt));
        for (std::size_t k = 0; k < probes; ++k) {
            auto &[tensor, grad] = pairs[k % pairs.size()];
            std::uniform_int_distribution<std::size_t> idx(0, tensor->size() - 1);
            const std::size_t i = idx(pick);
            const double saved = (*tensor)(i);
            (*tensor)(i) = saved + h;
            const double lp = loss_of(p, x);
            (*tensor)(i) = saved - h;
            const double lm = loss_of(p, x);
            (*tensor)(i) = saved;
            const double fd = (lp - lm) / (2.0 * h);
            report.max_rel_error = std::max(report.max_rel_error, rel_error((*grad)(i), fd));
            ++report.probes;
        }
        return report;
    }
}

GradCheckReport grad_check_attention(std::uint64_t seed, std::size_t probes) {
    constexpr double h = 1e-6;
    GradCheckReport report;
    report.path = "attention";

    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(mix_seed(seed, 0xA11 + attempt));
        const std::size_t n = 4, d = 3;
        Tensor q = random_tensor(rng, {n, d});
        Tensor k = random_tensor(rng, {n, d});
        Tensor v = random_tensor(rng, {n, d});
        Tensor cvec = random_tensor(rng, {n, d});
        const AttentionMask mask = make_window_mask(n, 3, true);

        const AttentionOutput out = sparse_attention(q, k, v, mask);
        if (out.min_margin < 1e-4) {
            ++report.resamples;
            continue;
        }

        auto loss_of = [&]() {
            const AttentionOutput o = sparse_attention(q, k, v, mask);
            double acc = 0.0;
            for (std::size_t i = 0; i < o.context.size(); ++i) {
                acc += cvec(i) * o.context(i);
            }
            return acc;
        };

        Tensor dq = Tensor::zeros(q.shape());
        Tensor dk = Tensor::zeros(k.shape());
        Tensor dv = Tensor::zeros(v.shape());
        sparse_attention_backward(q, k, v, out.weights, cvec, dq, dk, dv);

        std::vector<std::pair<Tensor *, Tensor *>> pairs = {{&q, &dq}, {&k, &dk}, {&v, &dv}};
        std::mt19937_64 pick(mix_seed(seed, 0xB22 + attempt));
        bool boundary_hit = false;
        for (std::size_t p = 0; p < probes; ++p) {
            auto &[tensor, grad] = pairs[p % pairs.size()];
            std::uniform_int_distribution<std::size_t> idx(0, tensor->size() - 1);
            const std::size_t i = idx(pick);
            const double saved = (*tensor)(i);
            (*tensor)(i) = saved + h;
            const double lp = loss_of();
            (*tensor)(i) = saved - h;
            const double lm = loss_of();
            (*tensor)(i) = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double err = rel_error((*grad)(i), fd);
            if (err > 1e-3) {
                boundary_hit = true; // support flip inside the stencil
                break;
            }
            report.max_rel_error = std::max(report.max_rel_error, err);
            ++report.probes;
        }
        if (boundary_hit) {
            ++report.resamples;
            report.max_rel_error = 0.0;
            report.probes = 0;
            continue;
        }
        return report;
    }
}

GradCheckReport grad_check_model(const ModelConfig &config, std::size_t probes,
                                 std::size_t seq_len) {
    constexpr double h = 1e-6;
    GradCheckReport report;
    report.path = "model";

    for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 200) {
            throw TrainingError("grad_check_model: no non-boundary probe batch found");
        }
        ModelParams params = init_params(config);
        TokenBatch src, dec_in, targets;
        make_toy_batch(ToyTask::Copy, config, mix_seed(config.seed, attempt), 0, 2, src, dec_in,
                       targets, seq_len);

        ModelGrads grads = zero_grads_like(params);
        const ForwardStats stats = forward_backward(src, dec_in, targets, params, config, &grads);
        if (stats.min_attn_margin < 1e-3 || stats.min_cot_gap < 1e-3) {
            ++report.resamples;
            continue;
        }

        auto loss_of = [&]() {
            return forward_backward(src, dec_in, targets, params, config, nullptr).loss;
        };

        auto pt = named_tensors(params);
        auto gt = named_tensors(grads);
        std::mt19937_64 pick(mix_seed(config.seed, 0xC33 + attempt));
        std::uniform_int_distribution<std::size_t> tensor_idx(0, pt.size() - 1);
        std::size_t done = 0, tries = 0;
        while (done < probes && tries < probes * 400) {
            ++tries;
            const std::size_t ti = tensor_idx(pick);
            Tensor &tensor = *pt[ti].second;
            const Tensor &grad = *gt[ti].second;
            std::uniform_int_distribution<std::size_t> idx(0, tensor.size() - 1);
            const std::size_t i = idx(pick);
            if (std::fabs(grad(i)) < 1e-7) {
                continue; // probe coordinates that actually carry gradient
            }
            const double saved = tensor(i);
            tensor(i) = saved + h;
            const double lp = loss_of();
            tensor(i) = saved - h;
            const double lm = loss_of();
            tensor(i) = saved;
            const double fd = (lp - lm) / (2.0 * h);
            report.max_rel_error = std::max(report.max_rel_error, rel_error(grad(i), fd));
            ++report.probes;
            ++done;
        }
        return report;
    }
}

} // namespace sparsecot
