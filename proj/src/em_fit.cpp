#include "mlfm/em_fit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mlfm/rng.hpp"

namespace mlfm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kWredEigFloor = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// F^0 S_c^T for one pattern: the selected factor columns as a sparse-by-rows
// n x (r-1) matrix.
Matrix selected_columns(const PsdMlr& m, const SparsityGroup& g) {
    Matrix fc = Matrix::Zero(m.n(), m.ranks().mlr_rank() - 1);
    for (const auto& lc : g.level_cols) {
        const auto& f = m.factor(lc.level, lc.block);
        fc.block(m.partition().group_offset(lc.level, lc.block), lc.fbar_offset,
                 f.rows(), lc.width) = f;
    }
    return fc;
}

// Leaves below each block, for de-duplicating Tr(W) contributions.
std::vector<std::vector<int>> leaf_counts(const HierarchicalPartition& p) {
    const int leaf_level = p.levels() - 2;
    std::vector<std::vector<int>> counts(leaf_level + 1);
    for (int l = 0; l <= leaf_level; ++l) counts[l].assign(p.num_groups(l), 0);
    for (int i = 0; i < p.num_groups(leaf_level); ++i)
        for (int l = 0; l <= leaf_level; ++l) ++counts[l][p.ancestor(leaf_level, i, l)];
    return counts;
}

void check_wred(const Matrix& wred, int pattern) {
    if (wred.size() == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix> es(wred, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, wred.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -kWredEigFloor * scale)
        throw NumericalError("reduced W block of pattern " + std::to_string(pattern) +
                             " is not positive definite (min eig " +
                             std::to_string(es.eigenvalues().minCoeff()) + ")");
}

double variance_floor(const Dataset& data, double scale) {
    const double mean_var = data.y.squaredNorm() / (static_cast<double>(data.samples()) *
                                                    static_cast<double>(data.features()));
    return std::max(scale * mean_var, 1e-300);
}

PsdMlr random_init(const Dataset& data, const HierarchicalPartition& partition,
                   const RankAllocation& ranks, std::uint64_t seed) {
    const int rm1 = ranks.mlr_rank() - 1;
    Vector var = data.y.colwise().squaredNorm().transpose() / data.samples();
    CounterRng rng(seed, CounterRng::kModelStream ^ 0x696e6974ULL);  // "init"
    std::vector<std::vector<Matrix>> factors(partition.levels() - 1);
    for (int l = 0; l + 1 < partition.levels(); ++l) {
        factors[l].resize(partition.num_groups(l));
        for (int k = 0; k < partition.num_groups(l); ++k) {
            Matrix f(partition.group_size(l, k), ranks.level_rank(l));
            for (int i = 0; i < f.rows(); ++i) {
                const double v = var[partition.group_offset(l, k) + i];
                const double sd = rm1 > 0 ? std::sqrt(v / rm1 / 2.0) : 0.0;
                for (int j = 0; j < f.cols(); ++j) f(i, j) = sd * rng.normal();
            }
            factors[l][k] = std::move(f);
        }
    }
    Vector d = rm1 > 0 ? Vector(var / 2.0) : var;
    d = d.cwiseMax(1e-300);
    return PsdMlr(partition, ranks, std::move(factors), std::move(d));
}

}  // namespace

void Dataset::validate() const {
    if (samples() < 1) throw StructuralError("N must be >= 1");
    if (features() < 1) throw StructuralError("dataset has no features");
    if (x && x->rows() != samples())
        throw StructuralError("covariate row count does not match sample count");
}

void EmOptions::validate() const {
    if (max_iters < 1) throw StructuralError("max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw StructuralError("rel_tol must be positive");
    if (!(d_floor_scale > 0.0)) throw StructuralError("d_floor_scale must be positive");
    if (init == InitKind::Warm && !warm) throw StructuralError("warm init requires a model");
}

void FitTrace::write_csv(std::ostream& os) const {
    os << "iter,loglik,rel_change,seconds\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.6f\n", row.iter, row.loglik,
                      row.rel_change, row.seconds);
        os << buf;
    }
}

double log_likelihood(const InverseMlr& inv, const Dataset& data) {
    if (data.features() != inv.n())
        throw StructuralError("log_likelihood: dataset feature count does not match model");
    const double n = inv.n();
    const double nsamp = data.samples();
    Matrix yt = data.y.transpose();
    Matrix z = inv.apply(yt);  // n x N
    const double quad = yt.cwiseProduct(z).sum();
    return -0.5 * (n * nsamp * kLog2Pi + nsamp * inv.logdet() + quad);
}

double log_likelihood(const PsdMlr& m, const Dataset& data) {
    return log_likelihood(invert(m), data);
}

EStepResult e_step(const PsdMlr& m0, const InverseMlr& inv, const Dataset& data,
                   const std::vector<SparsityGroup>& groups) {
    data.validate();
    if (data.features() != m0.n())
        throw StructuralError("e_step: dataset feature count does not match model");
    const double nsamp = data.samples();
    const int rm1 = m0.ranks().mlr_rank() - 1;

    EStepResult res;
    res.ynorm2 = data.y.colwise().squaredNorm().transpose();
    res.patterns.resize(groups.size());

    const auto counts = leaf_counts(m0.partition());
    // N*s term of Tr(W); the rest is collected from reduced blocks below.
    res.trace_w = nsamp * m0.ranks().factor_cols(m0.partition());

    for (const auto& g : groups) {
        Matrix fc = selected_columns(m0, g);
        Matrix gsol = inv.apply(fc);                      // Sigma^{-1} F S_c^T
        Matrix a = fc.transpose() * gsol;                 // S_c F^T Sigma^{-1} F S_c^T
        Matrix t = (data.y * gsol).transpose();           // S_c F^T Sigma^{-1} Y^T
        PatternMoments& pm = res.patterns[g.index];
        pm.vred.noalias() = t * data.y.middleCols(g.row_offset, g.row_count);
        pm.wred.noalias() = nsamp * (Matrix::Identity(rm1, rm1) - a);
        pm.wred.noalias() += t * t.transpose();
        pm.wred = 0.5 * (pm.wred + pm.wred.transpose()).eval();
        check_wred(pm.wred, g.index);
        // Each level block's diagonal contribution enters once, not once per
        // leaf below it.
        for (const auto& lc : g.level_cols) {
            const double tr_block =
                pm.wred.block(lc.fbar_offset, lc.fbar_offset, lc.width, lc.width).trace();
            res.trace_w += (tr_block - nsamp * lc.width) / counts[lc.level][lc.block];
        }
    }
    return res;
}

PsdMlr m_step(const EStepResult& moments, const Dataset& data, const PsdMlr& m0,
              const std::vector<SparsityGroup>& groups, double d_floor, bool* floored) {
    const HierarchicalPartition& part = m0.partition();
    const RankAllocation& ranks = m0.ranks();
    const double nsamp = data.samples();
    if (floored) *floored = false;

    std::vector<std::vector<Matrix>> factors(part.levels() - 1);
    for (int l = 0; l + 1 < part.levels(); ++l) {
        factors[l].resize(part.num_groups(l));
        for (int k = 0; k < part.num_groups(l); ++k)
            factors[l][k].setZero(part.group_size(l, k), ranks.level_rank(l));
    }
    Vector d(part.n());
    Vector ynorm2 = moments.ynorm2;

    for (const auto& g : groups) {
        const PatternMoments& pm = moments.patterns[g.index];
        // S_r F S_c^T = (S_c V S_r^T)^T (S_c W S_c^T)^{-1}, solved as
        // wred * X = vred with X^T the new pattern rows.
        Matrix x = pm.wred.ldlt().solve(pm.vred);  // (r-1) x |s_i|
        for (const auto& lc : g.level_cols) {
            const int local = g.row_offset - part.group_offset(lc.level, lc.block);
            factors[lc.level][lc.block].middleRows(local, g.row_count) =
                x.middleRows(lc.fbar_offset, lc.width).transpose();
        }
        for (int j = 0; j < g.row_count; ++j) {
            const int feature = g.row_offset + j;
            const double quad = x.col(j).dot(pm.wred * x.col(j));
            double dj = (ynorm2[feature] - 2.0 * x.col(j).dot(pm.vred.col(j)) + quad) / nsamp;
            if (dj < d_floor) {
                dj = d_floor;
                if (floored) *floored = true;
            }
            d[feature] = dj;
        }
    }
    return PsdMlr(part, ranks, std::move(factors), std::move(d));
}

PsdMlr init_frobenius_sweep(const Dataset& data, const HierarchicalPartition& partition,
                            const RankAllocation& ranks, double d_floor_scale, int cap) {
    data.validate();
    if (data.features() != partition.n())
        throw StructuralError("init: dataset feature count does not match partition");
    const double nsamp = data.samples();
    const double floor = variance_floor(data, d_floor_scale);
    const int nlev = partition.levels() - 1;

    for (int k = 0; k < partition.num_groups(0); ++k)
        check_dense_cap(partition.group_size(0, k), cap, "init_frobenius_sweep top-level block");

    std::vector<std::vector<Matrix>> factors(nlev);
    for (int l = 0; l < nlev; ++l) factors[l].resize(partition.num_groups(l));
    Vector d(partition.n());

    for (int top = 0; top < partition.num_groups(0); ++top) {
        const int off0 = partition.group_offset(0, top);
        const int sz0 = partition.group_size(0, top);
        // Per-top-block sample covariance; deeper levels only ever touch
        // sub-blocks of this residual.
        Matrix resid = data.y.middleCols(off0, sz0).transpose() * data.y.middleCols(off0, sz0) /
                       nsamp;
        for (int l = 0; l < nlev; ++l) {
            const int rl = ranks.level_rank(l);
            for (int k = 0; k < partition.num_groups(l); ++k) {
                if (partition.ancestor(l, k, 0) != top) continue;
                const int local = partition.group_offset(l, k) - off0;
                const int sz = partition.group_size(l, k);
                if (rl == 0) {
                    factors[l][k] = Matrix::Zero(sz, 0);
                    continue;
                }
                Matrix sub = resid.block(local, local, sz, sz);
                sub = 0.5 * (sub + sub.transpose()).eval();
                Eigen::SelfAdjointEigenSolver<Matrix> es(sub);
                const int take = std::min(rl, sz);
                Matrix f = Matrix::Zero(sz, rl);
                // Eigenvalues ascend; fill descending with negative parts clipped.
                for (int j = 0; j < take; ++j) {
                    const double lam = std::max(es.eigenvalues()[sz - 1 - j], 0.0);
                    Vector v = es.eigenvectors().col(sz - 1 - j);
                    for (int i = 0; i < v.size(); ++i) {
                        if (v[i] != 0.0) {
                            if (v[i] < 0.0) v = -v;
                            break;
                        }
                    }
                    f.col(j) = std::sqrt(lam) * v;
                }
                factors[l][k] = f;
                resid.block(local, local, sz, sz).noalias() -= f * f.transpose();
            }
        }
        d.segment(off0, sz0) = resid.diagonal().cwiseMax(floor);
    }
    return PsdMlr(partition, ranks, std::move(factors), std::move(d));
}

namespace {

PsdMlr initial_model(const Dataset& data, const HierarchicalPartition& partition,
                     const RankAllocation& ranks, const EmOptions& opts, bool* fell_back) {
    *fell_back = false;
    switch (opts.init) {
        case InitKind::Warm:
            if (!opts.warm->partition().same_shape(partition) ||
                opts.warm->ranks().ranks() != ranks.ranks())
                throw StructuralError("warm start model has a different structure");
            return *opts.warm;
        case InitKind::Random:
            return random_init(data, partition, ranks, opts.seed);
        case InitKind::FrobeniusSweep:
            try {
                return init_frobenius_sweep(data, partition, ranks, opts.d_floor_scale,
                                            opts.dense_cap);
            } catch (const DenseCapError&) {
                *fell_back = true;
                return random_init(data, partition, ranks, opts.seed);
            }
    }
    throw StructuralError("unknown init kind");
}

}  // namespace

std::pair<PsdMlr, FitTrace> fit(const Dataset& data, const HierarchicalPartition& partition,
                                const RankAllocation& ranks, const EmOptions& opts) {
    opts.validate();
    data.validate();
    if (data.features() != partition.n())
        throw StructuralError("fit: dataset feature count does not match partition");

    const double floor = variance_floor(data, opts.d_floor_scale);
    const auto groups = sparsity_groups(partition, ranks);

    FitTrace trace;
    PsdMlr model = initial_model(data, partition, ranks, opts, &trace.init_fell_back);

    double prev_ll = std::numeric_limits<double>::quiet_NaN();
    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        const auto t0 = Clock::now();
        InverseMlr inv = invert(model);
        const double ll = log_likelihood(inv, data);
        if (std::isnan(ll))
            throw NumericalError("NaN log-likelihood at iteration " + std::to_string(iter));
        const double rel = std::isnan(prev_ll)
                               ? std::numeric_limits<double>::infinity()
                               : std::abs(ll - prev_ll) / std::max(1.0, std::abs(prev_ll));
        if (rel < opts.rel_tol) {
            trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
            trace.status = FitTrace::Status::Converged;
            return {std::move(model), std::move(trace)};
        }
        if (iter == opts.max_iters) {
            trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
            break;
        }
        EStepResult moments = e_step(model, inv, data, groups);
        bool floored = false;
        model = m_step(moments, data, model, groups, floor, &floored);
        trace.d_floor_hit = trace.d_floor_hit || floored;
        trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
        prev_ll = ll;
    }
    trace.status = FitTrace::Status::MaxIters;
    return {std::move(model), std::move(trace)};
}

CovariateFit fit_with_covariates(const Dataset& data, const HierarchicalPartition& partition,
                                 const RankAllocation& ranks, const EmOptions& opts) {
    opts.validate();
    data.validate();
    if (data.features() != partition.n())
        throw StructuralError("fit: dataset feature count does not match partition");
    const int p = data.x ? static_cast<int>(data.x->cols()) : 0;
    if (p == 0) {
        auto [model, trace] = fit(data, partition, ranks, opts);
        return {std::move(model), Matrix::Zero(partition.n(), 0), std::move(trace)};
    }
    const Matrix& xmat = *data.x;
    const double nsamp = data.samples();
    const int n = partition.n();
    const int rm1 = ranks.mlr_rank() - 1;

    Matrix gram = xmat.transpose() * xmat;
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || hi / lo > 1e12)
            throw DomainError("covariate matrix is rank deficient; remove collinear covariates");
    }

    // Start B at ordinary least squares and the factor model at the usual
    // init applied to the regression residual.
    Matrix b = gram.ldlt().solve(xmat.transpose() * data.y).transpose();  // n x p
    Dataset resid_data{data.y - xmat * b.transpose(), std::nullopt};

    const double floor = variance_floor(data, opts.d_floor_scale);
    const auto groups = sparsity_groups(partition, ranks);

    FitTrace trace;
    PsdMlr model = initial_model(resid_data, partition, ranks, opts, &trace.init_fell_back);

    Vector ynorm2 = data.y.colwise().squaredNorm().transpose();

    double prev_ll = std::numeric_limits<double>::quiet_NaN();
    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        const auto t0 = Clock::now();
        Matrix resid = data.y - xmat * b.transpose();  // N x n
        InverseMlr inv = invert(model);
        const double ll = log_likelihood(inv, Dataset{resid, std::nullopt});
        if (std::isnan(ll))
            throw NumericalError("NaN log-likelihood at iteration " + std::to_string(iter));
        const double rel = std::isnan(prev_ll)
                               ? std::numeric_limits<double>::infinity()
                               : std::abs(ll - prev_ll) / std::max(1.0, std::abs(prev_ll));
        if (rel < opts.rel_tol) {
            trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
            trace.status = FitTrace::Status::Converged;
            return {std::move(model), std::move(b), std::move(trace)};
        }
        if (iter == opts.max_iters) {
            trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
            break;
        }

        // Augmented M-step over [B F]: every pattern's columns are the p
        // covariates followed by its r-1 factor columns.
        std::vector<std::vector<Matrix>> factors(partition.levels() - 1);
        for (int l = 0; l + 1 < partition.levels(); ++l) {
            factors[l].resize(partition.num_groups(l));
            for (int k = 0; k < partition.num_groups(l); ++k)
                factors[l][k].setZero(partition.group_size(l, k), ranks.level_rank(l));
        }
        Matrix bnew = Matrix::Zero(n, p);
        Vector d(n);
        bool floored = false;

        for (const auto& g : groups) {
            Matrix fc = selected_columns(model, g);
            Matrix gsol = inv.apply(fc);
            Matrix a = fc.transpose() * gsol;
            Matrix t = (resid * gsol).transpose();  // S_c Vtilde, (r-1) x N

            Matrix vaug(p + rm1, g.row_count);
            vaug.topRows(p) = xmat.transpose() * data.y.middleCols(g.row_offset, g.row_count);
            vaug.bottomRows(rm1) = t * data.y.middleCols(g.row_offset, g.row_count);

            Matrix waug(p + rm1, p + rm1);
            waug.topLeftCorner(p, p) = gram;
            Matrix tx = t * xmat;  // (r-1) x p
            waug.bottomLeftCorner(rm1, p) = tx;
            waug.topRightCorner(p, rm1) = tx.transpose();
            waug.bottomRightCorner(rm1, rm1) =
                nsamp * (Matrix::Identity(rm1, rm1) - a) + t * t.transpose();
            waug = 0.5 * (waug + waug.transpose()).eval();
            check_wred(waug, g.index);

            Matrix x = waug.ldlt().solve(vaug);  // (p+r-1) x |s_i|
            bnew.middleRows(g.row_offset, g.row_count) = x.topRows(p).transpose();
            for (const auto& lc : g.level_cols) {
                const int local = g.row_offset - partition.group_offset(lc.level, lc.block);
                factors[lc.level][lc.block].middleRows(local, g.row_count) =
                    x.middleRows(p + lc.fbar_offset, lc.width).transpose();
            }
            for (int j = 0; j < g.row_count; ++j) {
                const int feature = g.row_offset + j;
                const double quad = x.col(j).dot(waug * x.col(j));
                double dj = (ynorm2[feature] - 2.0 * x.col(j).dot(vaug.col(j)) + quad) / nsamp;
                if (dj < floor) {
                    dj = floor;
                    floored = true;
                }
                d[feature] = dj;
            }
        }
        model = PsdMlr(partition, ranks, std::move(factors), std::move(d));
        b = std::move(bnew);
        trace.d_floor_hit = trace.d_floor_hit || floored;
        trace.rows.push_back({iter, ll, rel, seconds_since(t0)});
        prev_ll = ll;
    }
    trace.status = FitTrace::Status::MaxIters;
    return {std::move(model), std::move(b), std::move(trace)};
}

}  // namespace mlfm
