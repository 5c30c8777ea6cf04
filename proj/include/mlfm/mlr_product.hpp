#pragma once

#include <vector>

#include "mlfm/mlr_matrix.hpp"
#include "mlfm/smw_inverse.hpp"

namespace mlfm {

/// MLR matrix without symmetry or PSD requirements: per level l and block k a
/// left factor B_{l,k} and right factor C_{l,k} of width w_l, the block being
/// B C^T. The last level has 1 x 1 blocks (the diagonal level). Used as the
/// carrier for MLR-MLR products.
class GeneralMlr {
public:
    GeneralMlr(HierarchicalPartition partition, std::vector<int> widths,
               std::vector<std::vector<Matrix>> left, std::vector<std::vector<Matrix>> right);

    const HierarchicalPartition& partition() const { return partition_; }
    int n() const { return partition_.n(); }
    int width(int level) const { return widths_[level]; }
    const std::vector<int>& widths() const { return widths_; }
    const Matrix& left(int level, int block) const { return left_[level][block]; }
    const Matrix& right(int level, int block) const { return right_[level][block]; }

    /// Dense materialization for oracle testing (cap-guarded).
    Matrix to_dense(int cap = kDenseCap) const;

    /// Trace = sum over levels and blocks of <left, right>.
    double trace() const;

private:
    HierarchicalPartition partition_;
    std::vector<int> widths_;
    std::vector<std::vector<Matrix>> left_, right_;
};

/// Lossless embeddings: dense forms are equal to the source's.
GeneralMlr as_general(const PsdMlr& m);
GeneralMlr as_general(const InverseMlr& inv);

/// Product of two MLR matrices on the same hierarchical partition. The result
/// has per-level width w_l + w'_l (MLR-rank r + r'), computed in
/// O(n max(r, r')^2) without forming anything dense.
GeneralMlr multiply(const GeneralMlr& a, const GeneralMlr& b);

/// || Sigma Sigma^{-1} - I ||_F at desk scale, from the dense form of the
/// structured product.
double identity_residual(const PsdMlr& m, const InverseMlr& inv, int cap = kDenseCap);

}  // namespace mlfm
