#include "sparsecot/sparsemax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sparsecot/errors.hpp"

namespace sparsecot {

namespace {

constexpr double kBoundaryTol = 1e-9;

void check_input(std::span<const double> z) {
    if (z.empty()) {
        throw ArgumentError("sparsemax: empty input");
    }
    bool any_admissible = false;
    for (double v : z) {
        if (std::isnan(v)) {
            throw ArgumentError("sparsemax: NaN in input");
        }
        if (v > kSentinelThreshold) {
            any_admissible = true;
        }
    }
    if (!any_admissible) {
        throw AdmissibilityError("sparsemax: no admissible position (all entries sentinel)");
    }
}

} // namespace

SparsemaxResult sparsemax(std::span<const double> z) {
    check_input(z);
    const std::size_t n = z.size();

    // Descending sort; ties broken by lower original index.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (z[a] != z[b]) {
            return z[a] > z[b];
        }
        return a < b;
    });

    // Largest k with 1 + k*z_(k) > sum_{j<=k} z_(j).
    std::size_t k = 0;
    double cumsum = 0.0, support_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double zj = z[order[j]];
        cumsum += zj;
        const double kk = static_cast<double>(j + 1);
        if (1.0 + kk * zj > cumsum) {
            k = j + 1;
            support_sum = cumsum;
        }
    }
    const double tau = (support_sum - 1.0) / static_cast<double>(k);

    SparsemaxResult res;
    res.p = Tensor({n});
    res.support.tau = tau;
    res.support.indices.reserve(k);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = order[j];
        res.p(i) = z[i] - tau;
        res.support.indices.push_back(i);
        margin = std::min(margin, z[i] - tau);
    }
    for (std::size_t j = k; j < n; ++j) {
        const double zi = z[order[j]];
        if (zi > kSentinelThreshold) {
            margin = std::min(margin, tau - zi);
        }
    }
    std::sort(res.support.indices.begin(), res.support.indices.end());
    res.boundary_margin = margin;
    return res;
}

SparsemaxResult sparsemax(const Tensor &z) {
    if (z.rank() != 1) {
        throw DimensionError("sparsemax expects a 1D tensor, got " + z.shape_str());
    }
    return sparsemax(std::span<const double>(z.data()));
}

Tensor sparsemax_jacobian(const Tensor &z) {
    const SparsemaxResult r = sparsemax(z);
    const std::size_t n = z.size();
    std::vector<char> in_support(n, 0);
    for (std::size_t i : r.support.indices) {
        in_support[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!in_support[i] && z(i) > kSentinelThreshold &&
            std::fabs(z(i) - r.support.tau) < kBoundaryTol) {
            throw NondifferentiableError("sparsemax_jacobian: nondifferentiable point (z_" +
                                         std::to_string(i) + " at support boundary)");
        }
    }
    const double inv_s = 1.0 / static_cast<double>(r.support.indices.size());
    Tensor jac({n, n});
    for (std::size_t i : r.support.indices) {
        for (std::size_t j : r.support.indices) {
            jac(i, j) = (i == j ? 1.0 : 0.0) - inv_s;
        }
    }
    return jac;
}

std::vector<double> sparsemax_vjp(std::span<const double> p, std::span<const double> dp) {
    if (p.size() != dp.size()) {
        throw DimensionError("sparsemax_vjp: length mismatch");
    }
    double sum = 0.0;
    std::size_t support = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            sum += dp[i];
            ++support;
        }
    }
    std::vector<double> dz(p.size(), 0.0);
    if (support == 0) {
        return dz;
    }
    const double mean = sum / static_cast<double>(support);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            dz[i] = dp[i] - mean;
        }
    }
    return dz;
}

SparsemaxLoss sparsemax_loss(const Tensor &z, std::size_t target) {
    if (z.rank() != 1) {
        throw DimensionError("sparsemax_loss expects a 1D tensor, got " + z.shape_str());
    }
    if (target >= z.size()) {
        throw IndexError("sparsemax_loss: target " + std::to_string(target) +
                         " out of range [0, " + std::to_string(z.size()) + ")");
    }
    const SparsemaxResult r = sparsemax(z);
    const double tau2 = r.support.tau * r.support.tau;
    double acc = 0.0;
    for (std::size_t i : r.support.indices) {
        acc += z(i) * z(i) - tau2;
    }
    SparsemaxLoss out;
    out.loss = -z(target) + 0.5 * acc + 0.5;
    out.grad = r.p;
    out.grad(target) -= 1.0;
    return out;
}

Tensor simplex_project_oracle(const Tensor &z) {
    if (z.rank() != 1) {
        throw DimensionError("simplex_project_oracle expects a 1D tensor, got " + z.shape_str());
    }
    const std::size_t n = z.size();
    if (n == 0) {
        throw ArgumentError("simplex_project_oracle: empty input");
    }
    if (n > 16) {
        throw SizeError("simplex_project_oracle: n = " + std::to_string(n) +
                        " exceeds the brute-force limit of 16");
    }

    Tensor best;
    double best_dist = std::numeric_limits<double>::infinity();
    const std::uint32_t subsets = 1u << n;
    for (std::uint32_t mask = 1; mask < subsets; ++mask) {
        // Projection restricted to support S: p_i = z_i - tau_S on S, 0 off S,
        // with tau_S = (sum_S z - 1) / |S|.
        double sum = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                sum += z(i);
                ++count;
            }
        }
        const double tau = (sum - 1.0) / count;
        bool feasible = true;
        Tensor cand({n});
        for (std::size_t i = 0; i < n && feasible; ++i) {
            if (mask & (1u << i)) {
                cand(i) = z(i) - tau;
                if (cand(i) < 0.0) {
                    feasible = false;
                }
            }
        }
        if (!feasible) {
            continue;
        }
        double dist = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = cand(i) - z(i);
            dist += d * d;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = cand;
        }
    }
    return best;
}

} // namespace sparsecot
