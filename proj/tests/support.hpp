#pragma once

// Shared generators and dense oracles for the test suites. Everything here is
// independent of the structured implementation paths it checks: oracles go
// through explicit dense algebra only.

#include <Eigen/Dense>
#include <vector>

#include "mlfm/em_fit.hpp"
#include "mlfm/mlr_matrix.hpp"
#include "mlfm/partition.hpp"
#include "mlfm/rng.hpp"

namespace mlfm::test {

using mlfm::Matrix;
using mlfm::Vector;

// Random nested partition with uneven contiguous blocks; every level splits
// each parent into 1..3 pieces, bottom level singletons.
inline HierarchicalPartition random_partition(CounterRng& rng, int n, int levels) {
    std::vector<std::vector<int>> sizes{{n}};
    // Random first level with 1..3 groups.
    auto split = [&rng](int len, int parts) {
        std::vector<int> out;
        int left = len;
        for (int i = parts; i >= 1; --i) {
            if (i == 1) {
                out.push_back(left);
                break;
            }
            int hi = left - (i - 1);
            int take = 1 + static_cast<int>(rng.uniform() * std::min(hi, (2 * left) / i));
            take = std::min(take, hi);
            out.push_back(take);
            left -= take;
        }
        return out;
    };
    for (int l = 1; l + 1 < levels; ++l) {
        std::vector<int> next;
        for (int parent : sizes.back()) {
            int parts = 1 + static_cast<int>(rng.uniform() * 3);
            parts = std::min(parts, parent);
            for (int v : split(parent, parts)) next.push_back(v);
        }
        sizes.push_back(std::move(next));
    }
    sizes.push_back(std::vector<int>(n, 1));
    return HierarchicalPartition(n, std::move(sizes));
}

inline RankAllocation random_ranks(CounterRng& rng, int levels, int rmax, int rmin = 0) {
    std::vector<int> ranks(levels, 1);
    for (int l = 0; l + 1 < levels; ++l)
        ranks[l] = rmin + static_cast<int>(rng.uniform() * (rmax - rmin + 1));
    ranks[levels - 1] = 1;
    return RankAllocation(std::move(ranks));
}

inline PsdMlr random_model(CounterRng& rng, const HierarchicalPartition& part,
                           const RankAllocation& ranks, double d_lo = 0.5, double d_hi = 1.5) {
    std::vector<std::vector<Matrix>> factors(part.levels() - 1);
    for (int l = 0; l + 1 < part.levels(); ++l) {
        factors[l].resize(part.num_groups(l));
        for (int k = 0; k < part.num_groups(l); ++k) {
            Matrix f(part.group_size(l, k), ranks.level_rank(l));
            for (int j = 0; j < f.cols(); ++j)
                for (int i = 0; i < f.rows(); ++i) f(i, j) = rng.normal();
            factors[l][k] = std::move(f);
        }
    }
    Vector d(part.n());
    for (int i = 0; i < part.n(); ++i) d[i] = d_lo + (d_hi - d_lo) * rng.uniform();
    return PsdMlr(part, ranks, std::move(factors), std::move(d));
}

// Global F column offset of (level, block) in the n x s factor form.
inline int factor_col_offset(const HierarchicalPartition& part, const RankAllocation& ranks,
                             int level, int block) {
    int off = 0;
    for (int l = 0; l < level; ++l) off += part.num_groups(l) * ranks.level_rank(l);
    return off + block * ranks.level_rank(level);
}

// Dense n x s structured factor matrix (level-major columns).
inline Matrix dense_f(const PsdMlr& m) {
    const auto& part = m.partition();
    Matrix f = Matrix::Zero(m.n(), m.ranks().factor_cols(part));
    for (int l = 0; l + 1 < part.levels(); ++l)
        for (int k = 0; k < part.num_groups(l); ++k)
            f.block(part.group_offset(l, k), factor_col_offset(part, m.ranks(), l, k),
                    part.group_size(l, k), m.ranks().level_rank(l)) = m.factor(l, k);
    return f;
}

// 0/1 support mask of the structured factor matrix.
inline Matrix factor_mask(const HierarchicalPartition& part, const RankAllocation& ranks) {
    Matrix mask = Matrix::Zero(part.n(), ranks.factor_cols(part));
    for (int l = 0; l + 1 < part.levels(); ++l)
        for (int k = 0; k < part.num_groups(l); ++k)
            mask.block(part.group_offset(l, k), factor_col_offset(part, ranks, l, k),
                       part.group_size(l, k), ranks.level_rank(l)).setOnes();
    return mask;
}

// Global F column indices selected by one sparsity pattern, level-major.
inline std::vector<int> pattern_global_cols(const HierarchicalPartition& part,
                                            const RankAllocation& ranks,
                                            const SparsityGroup& g) {
    std::vector<int> cols;
    for (const auto& lc : g.level_cols) {
        const int base = factor_col_offset(part, ranks, lc.level, lc.block);
        for (int j = 0; j < lc.width; ++j) cols.push_back(base + j);
    }
    return cols;
}

// Naive dense EM reference: full V and W by the textbook formulas, explicit
// per-pattern selections, dense solves, dense D update.
struct DenseEmStep {
    Matrix v;   // s x n
    Matrix w;   // s x s
    Matrix f1;  // n x s
    Vector d1;  // length n (unfloored)
};

inline DenseEmStep dense_em_step(const PsdMlr& m0, const Matrix& y) {
    const auto& part = m0.partition();
    const auto& ranks = m0.ranks();
    const double nsamp = y.rows();
    DenseEmStep out;
    Matrix f0 = dense_f(m0);
    Matrix si = m0.to_dense().inverse();
    Matrix yty = y.transpose() * y;
    const int s = static_cast<int>(f0.cols());
    out.v = f0.transpose() * si * yty;
    out.w = nsamp * (Matrix::Identity(s, s) - f0.transpose() * si * f0) +
            f0.transpose() * si * yty * si * f0;
    out.f1 = Matrix::Zero(part.n(), s);
    for (const auto& g : sparsity_groups(part, ranks)) {
        const auto cols = pattern_global_cols(part, ranks, g);
        const int c = static_cast<int>(cols.size());
        Matrix wred(c, c);
        Matrix vred(c, g.row_count);
        for (int a = 0; a < c; ++a) {
            for (int b = 0; b < c; ++b) wred(a, b) = out.w(cols[a], cols[b]);
            for (int j = 0; j < g.row_count; ++j) vred(a, j) = out.v(cols[a], g.row_offset + j);
        }
        Matrix x = wred.ldlt().solve(vred);
        for (int j = 0; j < g.row_count; ++j)
            for (int a = 0; a < c; ++a) out.f1(g.row_offset + j, cols[a]) = x(a, j);
    }
    out.d1 = (yty - 2.0 * out.f1 * out.v + out.f1 * out.w * out.f1.transpose()).diagonal() / nsamp;
    return out;
}

// Expected complete-data objective Q(F, D; F0, D0) evaluated densely from the
// moment matrices of the reference step (up to the constant -(n+s)N/2 log 2pi,
// which cancels in comparisons).
inline double dense_q_value(const Matrix& f, const Vector& d, const Matrix& v, const Matrix& w,
                            const Matrix& y) {
    const double nsamp = y.rows();
    Matrix yty = y.transpose() * y;
    Matrix inner = yty - 2.0 * f * v + f * w * f.transpose();
    return -0.5 * nsamp * d.array().log().sum() - 0.5 * w.trace() -
           0.5 * (inner * d.cwiseInverse().asDiagonal()).trace();
}

inline Dataset gaussian_dataset(CounterRng& rng, const PsdMlr& truth, int nsamp) {
    // Direct dense sampling against the truth's dense Cholesky; independent of
    // the library's sampler.
    Matrix chol = Eigen::LLT<Matrix>(truth.to_dense()).matrixL();
    Matrix y(nsamp, truth.n());
    Vector z(truth.n());
    for (int i = 0; i < nsamp; ++i) {
        for (int j = 0; j < truth.n(); ++j) z[j] = rng.normal();
        y.row(i) = (chol * z).transpose();
    }
    return Dataset{std::move(y), std::nullopt};
}

}  // namespace mlfm::test
