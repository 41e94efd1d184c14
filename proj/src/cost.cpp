#include "sparsecot/cost.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "sparsecot/errors.hpp"

namespace sparsecot {

std::uint64_t count_attended_pairs(const AttentionMask &mask) {
    std::uint64_t n = 0;
    for (double v : mask.values.data()) {
        if (v == 0.0) {
            ++n;
        }
    }
    return n;
}

std::uint64_t closed_form_pairs(const PatternSpec &spec, std::size_t n) {
    if (n == 0) {
        throw SizeError("closed_form_pairs: n must be >= 1");
    }
    const auto nn = static_cast<std::uint64_t>(n);
    switch (spec.kind) {
    case PatternKind::Full:
        return nn * nn;
    case PatternKind::Causal:
        return nn * (nn + 1) / 2;
    case PatternKind::Window: {
        const std::uint64_t w = spec.param;
        if (w == 0) {
            throw ConfigError("closed_form_pairs: window needs w >= 1");
        }
        std::uint64_t acc = 0;
        if (spec.causal) {
            // sum_i min(i + 1, w)
            for (std::uint64_t i = 0; i < nn; ++i) {
                acc += std::min(i + 1, w);
            }
        } else {
            for (std::uint64_t i = 0; i < nn; ++i) {
                const std::uint64_t lo = i >= w - 1 ? i - (w - 1) : 0;
                const std::uint64_t hi = std::min(nn - 1, i + w - 1);
                acc += hi - lo + 1;
            }
        }
        return acc;
    }
    case PatternKind::Strided: {
        const std::uint64_t s = spec.param;
        if (s == 0) {
            throw ConfigError("closed_form_pairs: strided needs s >= 1");
        }
        std::uint64_t acc = 0;
        for (std::uint64_t i = 0; i < nn; ++i) {
            acc += i / s + 1; // backward reach including self
            if (!spec.causal) {
                acc += (nn - 1 - i) / s;
            }
        }
        return acc;
    }
    case PatternKind::TopK: {
        const std::uint64_t k = spec.param;
        if (k == 0) {
            throw ConfigError("closed_form_pairs: topk needs k >= 1");
        }
        std::uint64_t acc = 0;
        for (std::uint64_t i = 0; i < nn; ++i) {
            const std::uint64_t base = spec.causal ? i + 1 : nn;
            acc += std::min(base, k);
        }
        return acc;
    }
    }
    throw ConfigError("closed_form_pairs: unknown pattern");
}

FlopsBreakdown flops_estimate(std::size_t d_model, std::size_t heads, std::size_t n,
                              std::uint64_t pairs) {
    if (heads == 0 || d_model % heads != 0) {
        throw ConfigError("flops_estimate: D = " + std::to_string(d_model) +
                          " not divisible by H = " + std::to_string(heads));
    }
    const std::uint64_t d_head = d_model / heads;
    FlopsBreakdown f;
    f.score_flops = static_cast<std::uint64_t>(heads) * pairs * d_head * 2;
    f.context_flops = static_cast<std::uint64_t>(heads) * pairs * d_head * 2;
    // x W for Q, K, V plus the output projection: 4 matrices of D x D.
    f.projection_flops = 4ULL * n * d_model * d_model * 2;
    return f;
}

double scaling_fit(const CostReport &report, const std::string &pattern) {
    std::map<std::size_t, std::uint64_t> by_len;
    for (const CostRow &row : report.rows) {
        if (row.pattern == pattern) {
            by_len[row.seq_len] = row.allowed_pairs;
        }
    }
    if (by_len.size() < 4) {
        throw ConfigError("scaling_fit: need >= 4 distinct sequence lengths for pattern '" +
                          pattern + "', got " + std::to_string(by_len.size()));
    }
    double mx = 0.0, my = 0.0;
    for (const auto &[n, pairs] : by_len) {
        mx += std::log(static_cast<double>(n));
        my += std::log(static_cast<double>(pairs));
    }
    const double count = static_cast<double>(by_len.size());
    mx /= count;
    my /= count;
    double sxx = 0.0, sxy = 0.0;
    for (const auto &[n, pairs] : by_len) {
        const double x = std::log(static_cast<double>(n)) - mx;
        const double y = std::log(static_cast<double>(pairs)) - my;
        sxx += x * x;
        sxy += x * y;
    }
    if (sxx == 0.0) {
        throw ConfigError("scaling_fit: degenerate sweep (single length)");
    }
    return sxy / sxx;
}

std::string cost_report_to_csv(const CostReport &report) {
    std::ostringstream os;
    os << "seq_len,pattern,allowed_pairs,active_pairs,flops_est,wall_ns,run_id\n";
    for (const CostRow &r : report.rows) {
        os << r.seq_len << "," << r.pattern << "," << r.allowed_pairs << "," << r.active_pairs
           << "," << r.flops_est << "," << r.wall_ns << "," << r.run_id << "\n";
    }
    return os.str();
}

} // namespace sparsecot
