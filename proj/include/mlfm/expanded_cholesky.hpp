#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mlfm/mlr_matrix.hpp"
#include "mlfm/smw_inverse.hpp"

namespace mlfm {

/// LDL^T factorization of the (n+s) x (n+s) expanded arrow matrix
///   E = [ D      F_{L-1} ...  F_1 ]
///       [ F_{L-1}^T  -I            ]
///       [ ...            ...       ]
///       [ F_1^T              -I    ]
/// whose Schur complement with respect to the -I_s block is Sigma. L is unit
/// lower triangular with supp(L) = supp(L^{-1}); the signed diagonal D^E has
/// d in its first n entries and the negated per-block LDL pivots -V_l in the
/// remaining s. Strips are stored sparsely by level; dense forms exist only
/// for oracles.
class ExpandedCholesky {
public:
    struct LevelStrip {
        // Row block of L for factor level l: p_l blocks of r_l rows each.
        std::vector<Matrix> a;      // per block k: r_l x n_{l,k} at the block's feature columns (= F_{l,k}^T D_k^{-1})
        std::vector<Matrix> r;      // per block k: unit lower triangular r_l x r_l diagonal block
        std::vector<Vector> v;      // per block k: positive LDL pivots; D^E carries -v
        // Pieces in the strips of finer levels lt > l: per level-lt block kt a
        // r_l x r_lt block, sitting at rows of kt's ancestor at level l.
        std::map<int, std::vector<Matrix>> cross;
    };

    int n() const { return partition_.n(); }
    int s() const { return s_; }
    int dim() const { return n() + s_; }
    const HierarchicalPartition& partition() const { return partition_; }
    const RankAllocation& ranks() const { return ranks_; }
    const LevelStrip& strip(int level) const { return strips_[level]; }

    /// Row offset of factor level `level`'s strip inside E (finest level
    /// first, matching [D, F_{L-1}, ..., F_1]).
    int strip_offset(int level) const { return strip_offsets_[level]; }

    /// log det Sigma = sum log d_i + sum_l sum log(V_l pivots); agrees with
    /// the SMW recursion's log determinant.
    double logdet() const;

    /// The signed diagonal of D^E: n positive entries d, then s negative.
    Vector dsigned() const;

    /// Stored nonzero count of L (unit diagonal included).
    std::size_t lfactor_nnz() const;

    /// Dense unit-lower L for oracle testing (cap-guarded on n+s).
    Matrix dense_l(int cap = kDenseCap) const;

    /// Little-endian debug dump: header (n, s, L, ranks as int64), then d,
    /// then per level l = L-2..0: per block k: a row-major, r row-major, v,
    /// then per finer level lt = L-2..l+1: cross blocks row-major in block order.
    void dump_binary(const std::string& path) const;

private:
    friend class SmwSweep;
    ExpandedCholesky(HierarchicalPartition partition, RankAllocation ranks)
        : partition_(std::move(partition)), ranks_(std::move(ranks)) {}

    HierarchicalPartition partition_;
    RankAllocation ranks_;
    int s_ = 0;
    Vector d_;
    std::vector<LevelStrip> strips_;      // [level], level < L-1
    std::vector<int> strip_offsets_;      // [level]
};

/// Factorize E level by level, reusing the SMW recursion state.
ExpandedCholesky factorize(const PsdMlr& m);

/// One fused sweep producing both outputs.
std::pair<InverseMlr, ExpandedCholesky> invert_and_factorize(const PsdMlr& m);

/// Dense E for oracle testing (cap-guarded on n+s).
Matrix build_expanded_dense(const PsdMlr& m, int cap = kDenseCap);

/// Relative residual || (E / -I_s) - Sigma ||_F / ||Sigma||_F via dense block
/// elimination of the expanded matrix.
double schur_complement_check(const PsdMlr& m, int cap = kDenseCap);

}  // namespace mlfm
