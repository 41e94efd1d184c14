#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sparsecot/tensor.hpp"

namespace sparsecot {

/// Score-space value marking a forbidden position. Finite so IEEE arithmetic
/// stays clean; sparsemax maps anything this low to an exact zero.
inline constexpr double kMaskSentinel = -1e30;

/// Threshold below which an input entry is treated as sentinel-forbidden.
inline constexpr double kSentinelThreshold = -1e29;

/// Positions with strictly positive probability, plus the projection
/// threshold tau.
struct SupportSet {
    std::vector<std::size_t> indices; // sorted ascending, never empty
    double tau = 0.0;
};

struct SparsemaxResult {
    Tensor p;
    SupportSet support;
    /// Smallest |z_i - tau| over non-sentinel entries. Small values mean the
    /// support set is about to change; gradient probes should resample.
    double boundary_margin = 0.0;
};

/// Euclidean projection of z onto the probability simplex (sort-based).
/// Entries at sentinel positions come out exactly zero.
SparsemaxResult sparsemax(std::span<const double> z);
SparsemaxResult sparsemax(const Tensor &z);

/// Closed-form Jacobian diag(s) - s s^T / |S| with s the support indicator.
/// Throws NondifferentiableError at support boundaries.
Tensor sparsemax_jacobian(const Tensor &z);

/// Vector-Jacobian product: given p = sparsemax(z) and upstream dp, returns
/// dz. Cheap form of the Jacobian used by the training path.
std::vector<double> sparsemax_vjp(std::span<const double> p, std::span<const double> dp);

struct SparsemaxLoss {
    double loss = 0.0;
    Tensor grad; // p - onehot(target)
};

/// Squared-margin sparsemax loss; well-defined even when the target receives
/// exactly zero probability.
SparsemaxLoss sparsemax_loss(const Tensor &z, std::size_t target);

/// Brute-force simplex projection: solves the equality-constrained projection
/// on every non-empty support subset and keeps the feasible minimizer.
/// Exponential in n; refuses n > 16.
Tensor simplex_project_oracle(const Tensor &z);

} // namespace sparsecot
