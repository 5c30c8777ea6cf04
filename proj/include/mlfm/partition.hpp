#pragma once

#include <string>
#include <vector>

#include "mlfm/errors.hpp"

namespace mlfm {

/// An explicit partition of {0..n-1}: ordered blocks of ordered indices.
using IndexBlocks = std::vector<std::vector<int>>;

/// L nested partitions of the feature index set, stored in contiguous form:
/// level 0 is the coarsest, level L-1 is the singleton (diagonal) level.
/// Every level tiles {0..n-1} with contiguous ranges and each level refines
/// the one above it. `perm` records how raw feature order was rearranged to
/// reach contiguous order: contiguous position of raw feature i is perm[i].
class HierarchicalPartition {
public:
    /// Sizes-form constructor: sizes[l] lists the group sizes of level l in
    /// order. Validates tiling, nesting, and that the bottom level is all
    /// singletons. An empty perm means identity.
    HierarchicalPartition(int n, std::vector<std::vector<int>> sizes,
                          std::vector<int> perm = {});

    int n() const { return n_; }
    int levels() const { return static_cast<int>(sizes_.size()); }
    int num_groups(int level) const { return static_cast<int>(sizes_[level].size()); }
    int group_size(int level, int k) const { return sizes_[level][k]; }
    int group_offset(int level, int k) const { return offsets_[level][k]; }
    const std::vector<std::vector<int>>& group_sizes() const { return sizes_; }

    /// Block index at `level` containing contiguous index i.
    int group_containing(int level, int i) const;

    /// Ancestor block at a coarser level of block k_fine at level_fine.
    int ancestor(int level_fine, int k_fine, int level_coarse) const;

    /// perm[raw] = contiguous position; identity when no reordering happened.
    const std::vector<int>& perm() const { return perm_; }

    /// Materialize level `level` as explicit index blocks (contiguous indices).
    IndexBlocks blocks(int level) const;

    /// Same level structure (n, L, group sizes); ignores perm.
    bool same_shape(const HierarchicalPartition& other) const;

private:
    int n_ = 0;
    std::vector<std::vector<int>> sizes_;    // [level][k]
    std::vector<std::vector<int>> offsets_;  // [level][k], prefix sums
    std::vector<int> perm_;
};

/// Build a contiguous partition from per-level group labels given in raw
/// feature order: assignments[l][i] is the label of raw feature i at level l.
/// Levels must be listed coarse to fine and be nested; if the finest given
/// level is not all singletons, a singleton level is appended. Group order
/// after contiguization is by first appearance in raw order, recursively
/// within parents.
HierarchicalPartition build_partition(int n, const std::vector<std::vector<std::string>>& assignments);

/// True iff every block of `a` is contained in some block of `b`. Both must
/// partition the same index set.
bool refines(const IndexBlocks& a, const IndexBlocks& b);

/// Per-level factor ranks (r_1, ..., r_{L-1}, 1). r_l = 0 is legal for l < L
/// (that level contributes no factors); the last entry must be 1.
class RankAllocation {
public:
    explicit RankAllocation(std::vector<int> ranks);

    int levels() const { return static_cast<int>(ranks_.size()); }
    int level_rank(int level) const { return ranks_[level]; }
    const std::vector<int>& ranks() const { return ranks_; }

    /// MLR-rank r = r_1 + ... + r_{L-1} + 1.
    int mlr_rank() const;

    /// Total factor column count s = sum_{l<L} p_l r_l.
    int factor_cols(const HierarchicalPartition& p) const;

    /// Column offset of level `level` inside the compressed n x (r-1) form.
    int compressed_offset(int level) const;

    bool compatible(const HierarchicalPartition& p) const { return levels() == p.levels(); }

private:
    std::vector<int> ranks_;
};

/// Rows of F sharing one sparsity pattern (one group at level L-2, i.e. the
/// level above the singletons) together with the factor columns that pattern
/// selects, in level-major order.
struct SparsityGroup {
    int index = 0;       // pattern index i in 0..p_{L-2}-1
    int row_offset = 0;  // first contiguous feature of the pattern
    int row_count = 0;   // |s_i|

    struct LevelCols {
        int level;        // factor level l (0-based, l < L-1)
        int block;        // ancestor block of this pattern at level l
        int fbar_offset;  // column offset of level l in the compressed form
        int width;        // r_l
    };
    std::vector<LevelCols> level_cols;  // one entry per level with r_l > 0

    /// Selected column count, always r - 1.
    int col_count() const;
};

/// The p_{L-2} row sparsity patterns of F in leaf order.
std::vector<SparsityGroup> sparsity_groups(const HierarchicalPartition& p, const RankAllocation& ranks);

}  // namespace mlfm
