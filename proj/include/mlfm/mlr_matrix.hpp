#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mlfm/partition.hpp"

namespace mlfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense materialization guard: oracle-only operations refuse above this
/// unless the caller raises the cap explicitly.
inline constexpr int kDenseCap = 5000;

/// Factors packed into one dense n x (r-1) matrix (levels side by side, each
/// level's blocks stacked vertically) plus the diagonal. This is the
/// interchange representation used by model files.
struct CompressedForm {
    Matrix fbar;  // n x (r-1)
    Vector d;     // length n
};

/// Symmetric PSD multilevel low rank covariance
///   Sigma = F_1 F_1^T + ... + F_{L-1} F_{L-1}^T + D,
/// with per-level block-diagonal factors F_l (blocks n_{l,k} x r_l following
/// the hierarchical partition) and positive diagonal D. Immutable after
/// construction; concurrent reads are safe.
class PsdMlr {
public:
    /// Validating constructor: factor block shapes must match the partition
    /// and ranks exactly, and every d_i must be strictly positive.
    PsdMlr(HierarchicalPartition partition, RankAllocation ranks,
           std::vector<std::vector<Matrix>> factors, Vector d);

    const HierarchicalPartition& partition() const { return partition_; }
    const RankAllocation& ranks() const { return ranks_; }
    int n() const { return partition_.n(); }
    int factor_levels() const { return partition_.levels() - 1; }
    const Matrix& factor(int level, int block) const { return factors_[level][block]; }
    const std::vector<std::vector<Matrix>>& factors() const { return factors_; }
    const Vector& d() const { return d_; }

    /// Sigma * x in O(n r).
    Vector matvec(const Vector& x) const;

    /// Sigma * X columnwise, O(n r m).
    Matrix matmat(const Matrix& x) const;

    /// diag(Sigma) = sum_l rowsq(F_l) + d.
    Vector diagonal() const;

    /// Dense Sigma for oracle testing; refuses when n exceeds cap.
    Matrix to_dense(int cap = kDenseCap) const;

    /// Relative Frobenius error ||Sigma - S||_F / ||S||_F (dense, cap-guarded).
    double frobenius_error(const Matrix& s, int cap = kDenseCap) const;

    CompressedForm pack_compressed() const;
    static PsdMlr unpack_compressed(HierarchicalPartition partition, RankAllocation ranks,
                                    const CompressedForm& c);

    /// All factors zero with the given diagonal.
    static PsdMlr diagonal_model(HierarchicalPartition partition, RankAllocation ranks, Vector d);

private:
    HierarchicalPartition partition_;
    RankAllocation ranks_;
    std::vector<std::vector<Matrix>> factors_;  // [level][block], level < L-1
    Vector d_;
};

/// Shared guard for dense materialization of an m x m object.
void check_dense_cap(int m, int cap, const char* what);

}  // namespace mlfm
