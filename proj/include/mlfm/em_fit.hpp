#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mlfm/mlr_matrix.hpp"
#include "mlfm/partition.hpp"
#include "mlfm/smw_inverse.hpp"

namespace mlfm {

/// Observed samples (rows) over features already permuted to contiguous
/// order, with optional covariates.
struct Dataset {
    Matrix y;                 // N x n
    std::optional<Matrix> x;  // N x p covariates

    int samples() const { return static_cast<int>(y.rows()); }
    int features() const { return static_cast<int>(y.cols()); }
    void validate() const;
};

enum class InitKind { FrobeniusSweep, Random, Warm };

struct EmOptions {
    int max_iters = 300;
    double rel_tol = 1e-8;
    // Variance floor = d_floor_scale * mean sample variance (Heywood guard).
    double d_floor_scale = 1e-8;
    InitKind init = InitKind::FrobeniusSweep;
    std::shared_ptr<const PsdMlr> warm;  // required when init == Warm
    std::uint64_t seed = 0;
    int dense_cap = kDenseCap;

    void validate() const;
};

struct FitTrace {
    enum class Status { Converged, MaxIters };
    struct Row {
        int iter;
        double loglik;
        double rel_change;  // vs previous loglik; +inf on the first row
        double seconds;     // wall time of the iteration
    };
    std::vector<Row> rows;
    Status status = Status::MaxIters;
    bool d_floor_hit = false;         // some M-step drove a variance to the floor
    bool init_fell_back = false;      // Frobenius sweep refused, random used

    /// CSV rows `iter,loglik,rel_change,seconds` with a header.
    void write_csv(std::ostream& os) const;
};

/// Observed-data log-likelihood
///   l(F, D; Y) = -(nN/2) log 2pi - (N/2) log det Sigma - 1/2 sum_i y_i^T Sigma^{-1} y_i.
/// The trace term never materializes Y^T Y.
double log_likelihood(const PsdMlr& m, const Dataset& data);
double log_likelihood(const InverseMlr& inv, const Dataset& data);

/// Reduced E-step moments for one row sparsity pattern:
///   vred = S_c V S_r^T   ((r-1) x |s_i|)
///   wred = S_c W S_c^T   ((r-1) x (r-1), symmetric positive definite)
struct PatternMoments {
    Matrix vred;
    Matrix wred;
};

struct EStepResult {
    std::vector<PatternMoments> patterns;
    double trace_w = 0.0;  // Tr(W) over the full s x s moment matrix
    Vector ynorm2;         // per-feature sum of squares of Y (for the D update)
};

/// Factored E-step pipeline: applies Sigma^{-1} to F S_c^T and to Y^T per
/// pattern, then assembles the reduced moments. `inv` must be the inverse of
/// `m0`.
EStepResult e_step(const PsdMlr& m0, const InverseMlr& inv, const Dataset& data,
                   const std::vector<SparsityGroup>& groups);

/// Per-pattern least squares update F^1 = vred^T wred^{-1} (rows scattered
/// back into factor blocks) followed by the diagonal update
///   d_j = (1/N) (Y^T Y - 2 F^1 V + F^1 W F^1T)_{jj}, floored at d_floor.
PsdMlr m_step(const EStepResult& moments, const Dataset& data, const PsdMlr& m0,
              const std::vector<SparsityGroup>& groups, double d_floor, bool* floored);

/// Top-to-bottom single sweep of block coordinate descent on the sample
/// covariance: per block, the best rank-r_l PSD approximation of the running
/// residual (negative eigenvalues clipped), final level d = max(residual
/// diagonal, floor). Only per-top-block dense residuals are formed; refuses
/// (falls back to nothing) when a top-level block exceeds `cap` unless the
/// caller handles the flag.
PsdMlr init_frobenius_sweep(const Dataset& data, const HierarchicalPartition& partition,
                            const RankAllocation& ranks, double d_floor_scale = 1e-8,
                            int cap = kDenseCap);

/// EM loop: alternate e_step/m_step until the relative log-likelihood change
/// drops below rel_tol or max_iters is reached. The stopping likelihood
/// reuses the E-step's inverse.
std::pair<PsdMlr, FitTrace> fit(const Dataset& data, const HierarchicalPartition& partition,
                                const RankAllocation& ranks, const EmOptions& opts = {});

struct CovariateFit {
    PsdMlr model;
    Matrix b;  // n x p regression coefficients
    FitTrace trace;
};

/// EM for y_i = B x_i + F z_i + e_i: the M-step solves the augmented
/// per-pattern least squares over [B F]; B rows are dense in the covariates.
CovariateFit fit_with_covariates(const Dataset& data, const HierarchicalPartition& partition,
                                 const RankAllocation& ranks, const EmOptions& opts = {});

}  // namespace mlfm
