#pragma once

#include <cstddef>
#include <vector>

#include "mlfm/mlr_matrix.hpp"

namespace mlfm {

/// The inverse of a PSD MLR matrix, itself MLR with the same partition:
///   Sigma^{-1} = -H_1 H_1^T - ... - H_{L-1} H_{L-1}^T + D^{-1},
/// where each H_l has exactly the sparsity of F_l. Carries the log
/// determinant (a byproduct of the recursion) and the per-level eigenvalues
/// of I + F_l^T Sigma_{(l+1)+}^{-1} F_l, all of which are >= 1.
class InverseMlr {
public:
    const HierarchicalPartition& partition() const { return partition_; }
    const RankAllocation& ranks() const { return ranks_; }
    int n() const { return partition_.n(); }
    const Matrix& hfactor(int level, int block) const { return hfactors_[level][block]; }
    const std::vector<std::vector<Matrix>>& hfactors() const { return hfactors_; }
    const Vector& dinv() const { return dinv_; }
    double logdet() const { return logdet_; }

    /// Eigenvalues of I + F_l^T Sigma_{(l+1)+}^{-1} F_l, concatenated over the
    /// p_l blocks of level `level` (empty for levels with r_l = 0).
    const Vector& level_eigs(int level) const { return level_eigs_[level]; }

    /// Sigma^{-1} X = diag(dinv) X - sum_l H_l (H_l^T X), O(n r m).
    Matrix apply(const Matrix& x) const;
    Vector apply(const Vector& x) const;

    /// diag(Sigma^{-1}) = dinv - sum_l rowsq(H_l).
    Vector diagonal() const;

    /// Dense Sigma^{-1} for oracle testing (cap-guarded).
    Matrix to_dense(int cap = kDenseCap) const;

private:
    friend class SmwSweep;
    InverseMlr(HierarchicalPartition partition, RankAllocation ranks)
        : partition_(std::move(partition)), ranks_(std::move(ranks)) {}

    HierarchicalPartition partition_;
    RankAllocation ranks_;
    std::vector<std::vector<Matrix>> hfactors_;
    Vector dinv_;
    double logdet_ = 0.0;
    std::vector<Vector> level_eigs_;
};

/// Instrumentation for the recursion's auxiliary storage (counts scalars of
/// the running state and per-level temporaries; eigensolver workspace is not
/// folded in).
struct SmwStats {
    std::size_t peak_workspace_scalars = 0;
};

/// Recursive Sherman-Morrison-Woodbury inversion, bottom level to top.
/// O(n r^2 + p_{L-1} r_max r^2) time; the running state never materializes
/// anything of size n x n.
InverseMlr invert(const PsdMlr& m, SmwStats* stats = nullptr);

}  // namespace mlfm
