#include "sparsecot/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sparsecot/errors.hpp"

namespace sparsecot {

std::size_t DimensionMask::popcount() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) {
        n += b;
    }
    return n;
}

std::size_t dimension_mask_target(std::size_t d, double alpha) {
    if (!(alpha > 0.0) || alpha > 1.0) {
        throw ConfigError("dimension mask: alpha must be in (0, 1], got " +
                          std::to_string(alpha));
    }
    const auto rounded = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(d) + 0.5));
    return std::max<std::size_t>(1, std::min(rounded, d));
}

DimensionMask make_dimension_mask(std::size_t d, double alpha, DimSelect strategy,
                                  std::uint64_t seed, const Tensor *importance) {
    if (d == 0) {
        throw SizeError("dimension mask: D must be >= 1");
    }
    const std::size_t m = dimension_mask_target(d, alpha);
    DimensionMask mask;
    mask.alpha = alpha;
    mask.strategy = strategy;
    mask.bits.assign(d, 0);

    switch (strategy) {
    case DimSelect::Prefix:
        for (std::size_t i = 0; i < m; ++i) {
            mask.bits[i] = 1;
        }
        break;
    case DimSelect::SeededRandom: {
        std::vector<std::size_t> idx(d);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < m; ++i) {
            mask.bits[idx[i]] = 1;
        }
        break;
    }
    case DimSelect::Magnitude: {
        if (importance == nullptr) {
            throw ConfigError("dimension mask: magnitude strategy needs an importance vector");
        }
        if (importance->rank() != 1 || importance->size() != d) {
            throw DimensionError("dimension mask: importance " + importance->shape_str() +
                                 " does not match D = " + std::to_string(d));
        }
        std::vector<std::size_t> idx(d);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if ((*importance)(a) != (*importance)(b)) {
                return (*importance)(a) > (*importance)(b);
            }
            return a < b;
        });
        for (std::size_t i = 0; i < m; ++i) {
            mask.bits[idx[i]] = 1;
        }
        break;
    }
    }
    return mask;
}

std::string PatternSpec::to_string() const {
    std::string s;
    switch (kind) {
    case PatternKind::Full:
        return "full";
    case PatternKind::Causal:
        return "causal";
    case PatternKind::Window:
        s = "window:w=" + std::to_string(param);
        break;
    case PatternKind::Strided:
        s = "strided:s=" + std::to_string(param);
        break;
    case PatternKind::TopK:
        s = "topk:k=" + std::to_string(param);
        break;
    }
    if (causal) {
        s += "+causal";
    }
    return s;
}

PatternSpec PatternSpec::parse(const std::string &text) {
    if (text.empty()) {
        throw ConfigError("pattern spec: empty string");
    }
    PatternSpec spec;
    std::string body = text;

    // Strip a trailing causal modifier, joined by '+' or ','.
    for (const char *suffix : {"+causal", ",causal"}) {
        const std::string suf(suffix);
        if (body.size() > suf.size() && body.ends_with(suf)) {
            spec.causal = true;
            body = body.substr(0, body.size() - suf.size());
            break;
        }
    }

    if (body == "full") {
        spec.kind = PatternKind::Full;
        if (spec.causal) {
            spec.kind = PatternKind::Causal;
            spec.causal = false;
        }
        return spec;
    }
    if (body == "causal") {
        spec.kind = PatternKind::Causal;
        spec.causal = false;
        return spec;
    }

    const auto colon = body.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("pattern spec: unknown pattern '" + text + "'");
    }
    const std::string name = body.substr(0, colon);
    const std::string arg = body.substr(colon + 1);
    char expected_key = 0;
    if (name == "window") {
        spec.kind = PatternKind::Window;
        expected_key = 'w';
    } else if (name == "strided") {
        spec.kind = PatternKind::Strided;
        expected_key = 's';
    } else if (name == "topk") {
        spec.kind = PatternKind::TopK;
        expected_key = 'k';
    } else {
        throw ConfigError("pattern spec: unknown pattern '" + name + "'");
    }
    if (arg.size() < 3 || arg[0] != expected_key || arg[1] != '=') {
        throw ConfigError("pattern spec: expected '" + std::string(1, expected_key) +
                          "=<N>' in '" + text + "'");
    }
    std::size_t pos = 0;
    unsigned long value = 0;
    try {
        value = std::stoul(arg.substr(2), &pos);
    } catch (const std::exception &) {
        throw ConfigError("pattern spec: bad integer in '" + text + "'");
    }
    if (pos != arg.size() - 2 || value == 0) {
        throw ConfigError("pattern spec: bad parameter value in '" + text + "'");
    }
    spec.param = value;
    return spec;
}

namespace {

void check_no_forbidden_row(const AttentionMask &mask) {
    for (std::size_t i = 0; i < mask.n_q(); ++i) {
        bool any = false;
        for (std::size_t j = 0; j < mask.n_k(); ++j) {
            if (mask.values(i, j) == 0.0) {
                any = true;
                break;
            }
        }
        if (!any) {
            throw AdmissibilityError("attention mask: query row " + std::to_string(i) +
                                     " has no allowed key");
        }
    }
}

AttentionMask from_predicate(std::size_t n_q, std::size_t n_k, PatternSpec spec,
                             auto &&allowed) {
    if (n_q == 0 || n_k == 0) {
        throw SizeError("attention mask: size must be >= 1");
    }
    AttentionMask mask;
    mask.pattern = spec;
    mask.values = Tensor({n_q, n_k});
    for (std::size_t i = 0; i < n_q; ++i) {
        for (std::size_t j = 0; j < n_k; ++j) {
            mask.values(i, j) = allowed(i, j) ? 0.0 : kMaskSentinel;
        }
    }
    check_no_forbidden_row(mask);
    return mask;
}

} // namespace

AttentionMask make_full_mask(std::size_t n_q, std::size_t n_k) {
    return from_predicate(n_q, n_k, PatternSpec{PatternKind::Full, 0, false},
                          [](std::size_t, std::size_t) { return true; });
}

AttentionMask make_causal_mask(std::size_t n) {
    return from_predicate(n, n, PatternSpec{PatternKind::Causal, 0, false},
                          [](std::size_t i, std::size_t j) { return j <= i; });
}

AttentionMask make_window_mask(std::size_t n, std::size_t w, bool causal) {
    if (w == 0) {
        throw ConfigError("window mask: w must be >= 1");
    }
    return from_predicate(n, n, PatternSpec{PatternKind::Window, w, causal},
                          [w, causal](std::size_t i, std::size_t j) {
                              if (causal) {
                                  return j <= i && i - j < w;
                              }
                              return (i >= j ? i - j : j - i) < w;
                          });
}

AttentionMask make_strided_mask(std::size_t n, std::size_t s, bool causal) {
    if (s == 0) {
        throw ConfigError("strided mask: s must be >= 1");
    }
    return from_predicate(n, n, PatternSpec{PatternKind::Strided, s, causal},
                          [s, causal](std::size_t i, std::size_t j) {
                              if (causal && j > i) {
                                  return false;
                              }
                              const std::size_t gap = i >= j ? i - j : j - i;
                              return gap % s == 0;
                          });
}

AttentionMask make_topk_dynamic_mask(const Tensor &scores, std::size_t k,
                                     const AttentionMask *base) {
    if (k == 0) {
        throw ConfigError("topk mask: k must be >= 1");
    }
    if (scores.rank() != 2) {
        throw DimensionError("topk mask: scores must be 2D, got " + scores.shape_str());
    }
    const std::size_t n_q = scores.rows(), n_k = scores.cols();
    if (base != nullptr && (base->n_q() != n_q || base->n_k() != n_k)) {
        throw DimensionError("topk mask: base shape " + base->values.shape_str() +
                             " does not match scores " + scores.shape_str());
    }
    AttentionMask mask;
    mask.pattern = PatternSpec{PatternKind::TopK, k,
                               base != nullptr && base->pattern.kind == PatternKind::Causal};
    mask.values = Tensor::full({n_q, n_k}, kMaskSentinel);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n_q; ++i) {
        candidates.clear();
        for (std::size_t j = 0; j < n_k; ++j) {
            if (base == nullptr || base->allowed(i, j)) {
                candidates.push_back(j);
            }
        }
        if (candidates.size() > k) {
            std::stable_sort(candidates.begin(), candidates.end(),
                             [&](std::size_t a, std::size_t b) {
                                 if (scores(i, a) != scores(i, b)) {
                                     return scores(i, a) > scores(i, b);
                                 }
                                 return a < b;
                             });
            candidates.resize(k);
        }
        for (std::size_t j : candidates) {
            mask.values(i, j) = 0.0;
        }
    }
    check_no_forbidden_row(mask);
    return mask;
}

AttentionMask compose(const AttentionMask &a, const AttentionMask &b) {
    if (!a.values.same_shape(b.values)) {
        throw DimensionError("compose: mask shapes differ: " + a.values.shape_str() + " vs " +
                             b.values.shape_str());
    }
    AttentionMask out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values(i) = std::min(a.values(i), b.values(i));
    }
    check_no_forbidden_row(out);
    return out;
}

AttentionMask build_pattern_mask(const PatternSpec &spec, std::size_t n_q, std::size_t n_k) {
    switch (spec.kind) {
    case PatternKind::Full:
        return make_full_mask(n_q, n_k);
    case PatternKind::Causal:
        return from_predicate(n_q, n_k, spec,
                              [](std::size_t i, std::size_t j) { return j <= i; });
    case PatternKind::Window:
        if (n_q == n_k) {
            return make_window_mask(n_q, spec.param, spec.causal);
        }
        return from_predicate(n_q, n_k, spec, [&](std::size_t i, std::size_t j) {
            if (spec.causal && j > i) {
                return false;
            }
            const std::size_t gap = i >= j ? i - j : j - i;
            return gap < spec.param;
        });
    case PatternKind::Strided:
        if (n_q == n_k) {
            return make_strided_mask(n_q, spec.param, spec.causal);
        }
        return from_predicate(n_q, n_k, spec, [&](std::size_t i, std::size_t j) {
            if (spec.causal && j > i) {
                return false;
            }
            const std::size_t gap = i >= j ? i - j : j - i;
            return gap % spec.param == 0;
        });
    case PatternKind::TopK:
        throw ConfigError("pattern '" + spec.to_string() +
                          "' is dynamic; it needs attention scores to materialize");
    }
    throw ConfigError("pattern spec: unknown kind");
}

} // namespace sparsecot
