#include "mlfm/partition.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace mlfm {

namespace {

std::string level_group_name(int level, int k) {
    std::ostringstream os;
    os << "level " << level << " group " << k;
    return os.str();
}

}  // namespace

HierarchicalPartition::HierarchicalPartition(int n, std::vector<std::vector<int>> sizes,
                                             std::vector<int> perm)
    : n_(n), sizes_(std::move(sizes)), perm_(std::move(perm)) {
    if (n_ <= 0) throw StructuralError("partition requires n >= 1");
    if (sizes_.size() < 2) throw StructuralError("partition requires at least 2 levels");

    offsets_.resize(sizes_.size());
    for (int l = 0; l < levels(); ++l) {
        if (sizes_[l].empty()) throw StructuralError("empty level " + std::to_string(l));
        offsets_[l].resize(sizes_[l].size());
        int off = 0;
        for (int k = 0; k < num_groups(l); ++k) {
            if (sizes_[l][k] <= 0)
                throw StructuralError("empty group: " + level_group_name(l, k));
            offsets_[l][k] = off;
            off += sizes_[l][k];
        }
        if (off != n_)
            throw StructuralError("level " + std::to_string(l) + " group sizes sum to " +
                                  std::to_string(off) + ", expected n = " + std::to_string(n_));
    }

    // Nesting: every boundary of level l must also be a boundary of level l+1.
    // For contiguous tilings this is equivalent to J_{l+1} refining J_l.
    for (int l = 0; l + 1 < levels(); ++l) {
        std::set<int> fine(offsets_[l + 1].begin(), offsets_[l + 1].end());
        for (int k = 0; k < num_groups(l); ++k) {
            if (!fine.count(offsets_[l][k]))
                throw StructuralError("level " + std::to_string(l + 1) +
                                      " does not refine level " + std::to_string(l) +
                                      " at " + level_group_name(l, k));
        }
    }

    if (num_groups(levels() - 1) != n_)
        throw StructuralError("bottom level must be singletons (p_L = n)");

    if (perm_.empty()) {
        perm_.resize(n_);
        std::iota(perm_.begin(), perm_.end(), 0);
    } else {
        if (static_cast<int>(perm_.size()) != n_)
            throw StructuralError("perm length does not match n");
        std::vector<char> seen(n_, 0);
        for (int v : perm_) {
            if (v < 0 || v >= n_ || seen[v]) throw StructuralError("perm is not a bijection");
            seen[v] = 1;
        }
    }
}

int HierarchicalPartition::group_containing(int level, int i) const {
    const auto& off = offsets_[level];
    auto it = std::upper_bound(off.begin(), off.end(), i);
    return static_cast<int>(it - off.begin()) - 1;
}

int HierarchicalPartition::ancestor(int level_fine, int k_fine, int level_coarse) const {
    if (level_coarse > level_fine)
        throw StructuralError("ancestor level must be at or above the block's level");
    return group_containing(level_coarse, offsets_[level_fine][k_fine]);
}

IndexBlocks HierarchicalPartition::blocks(int level) const {
    IndexBlocks out(num_groups(level));
    for (int k = 0; k < num_groups(level); ++k) {
        out[k].resize(sizes_[level][k]);
        std::iota(out[k].begin(), out[k].end(), offsets_[level][k]);
    }
    return out;
}

bool HierarchicalPartition::same_shape(const HierarchicalPartition& other) const {
    return n_ == other.n_ && sizes_ == other.sizes_;
}

namespace {

// A node in the raw grouping tree: the ordered raw features of one group plus
// its subgroup split at the next level.
struct RawGroup {
    std::vector<int> features;  // raw indices, in first-appearance order
};

// Groups of one level in first-appearance order, each mapped to its parent.
std::vector<RawGroup> group_level(int n, const std::vector<std::string>& labels,
                                  const std::vector<int>& parent_of_feature, int level,
                                  std::vector<int>* group_of_feature) {
    std::map<std::pair<int, std::string>, int> ids;  // (parent group, label) -> group id
    std::vector<RawGroup> groups;
    group_of_feature->assign(n, -1);
    // Detect a label straddling two parents before assigning ids.
    std::map<std::string, int> label_parent;
    for (int i = 0; i < n; ++i) {
        auto it = label_parent.find(labels[i]);
        if (it == label_parent.end()) {
            label_parent[labels[i]] = parent_of_feature[i];
        } else if (it->second != parent_of_feature[i]) {
            throw StructuralError("group '" + labels[i] + "' at level " + std::to_string(level) +
                                  " straddles two groups of the level above");
        }
    }
    for (int i = 0; i < n; ++i) {
        auto key = std::make_pair(parent_of_feature[i], labels[i]);
        auto it = ids.find(key);
        int g;
        if (it == ids.end()) {
            g = static_cast<int>(groups.size());
            ids[key] = g;
            groups.emplace_back();
        } else {
            g = it->second;
        }
        groups[g].features.push_back(i);
        (*group_of_feature)[i] = g;
    }
    return groups;
}

}  // namespace

HierarchicalPartition build_partition(int n,
                                      const std::vector<std::vector<std::string>>& assignments) {
    if (n <= 0) throw StructuralError("partition requires n >= 1");
    if (assignments.empty()) throw StructuralError("at least one level of assignments required");
    for (std::size_t l = 0; l < assignments.size(); ++l) {
        if (static_cast<int>(assignments[l].size()) != n)
            throw StructuralError("level " + std::to_string(l) +
                                  " assigns " + std::to_string(assignments[l].size()) +
                                  " features, expected " + std::to_string(n));
    }

    // Peel levels coarse to fine; ordering is first appearance within parents.
    std::vector<int> parent(n, 0);
    std::vector<std::vector<RawGroup>> tree;
    for (std::size_t l = 0; l < assignments.size(); ++l) {
        std::vector<int> gof;
        tree.push_back(group_level(n, assignments[l], parent, static_cast<int>(l), &gof));
        parent = std::move(gof);
    }

    // Parent-major ordering is implied by keying groups on (parent, label) and
    // walking features in raw order, except that raw order inside a parent can
    // interleave groups. Rebuild each level's feature order by walking the
    // level above group by group.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<int>> level_group_order;  // group ids per level, contiguous order
    {
        std::vector<int> prev_order;  // group ids of previous level in contiguous order
        for (std::size_t l = 0; l < tree.size(); ++l) {
            std::vector<int> gorder;
            if (l == 0) {
                for (std::size_t g = 0; g < tree[0].size(); ++g) gorder.push_back(static_cast<int>(g));
            } else {
                // For each parent group in contiguous order, list child groups by
                // first appearance.
                std::vector<int> parent_of_group(tree[l].size(), -1);
                std::vector<int> gof(n);
                for (std::size_t g = 0; g < tree[l].size(); ++g)
                    for (int f : tree[l][g].features) gof[f] = static_cast<int>(g);
                std::vector<int> pof(n);
                for (std::size_t g = 0; g < tree[l - 1].size(); ++g)
                    for (int f : tree[l - 1][g].features) pof[f] = static_cast<int>(g);
                for (std::size_t g = 0; g < tree[l].size(); ++g)
                    parent_of_group[g] = pof[tree[l][g].features.front()];
                std::vector<char> emitted(tree[l].size(), 0);
                for (int pg : prev_order) {
                    for (int f : tree[l - 1][pg].features) {
                        int g = gof[f];
                        if (!emitted[g]) {
                            emitted[g] = 1;
                            gorder.push_back(g);
                        }
                    }
                }
            }
            level_group_order.push_back(gorder);
            prev_order = gorder;
        }
    }

    // Contiguous feature order: walk the finest provided level's groups in
    // contiguous order, features in raw order inside each group.
    const auto& finest = tree.back();
    const auto& finest_order = level_group_order.back();
    std::vector<int> contiguous;  // raw index at each contiguous position
    contiguous.reserve(n);
    for (int g : finest_order)
        for (int f : finest[g].features) contiguous.push_back(f);

    std::vector<int> perm(n);  // perm[raw] = contiguous position
    for (int pos = 0; pos < n; ++pos) perm[contiguous[pos]] = pos;

    // Group sizes per level in contiguous order.
    std::vector<std::vector<int>> sizes;
    for (std::size_t l = 0; l < tree.size(); ++l) {
        std::vector<int> sz;
        for (int g : level_group_order[l]) sz.push_back(static_cast<int>(tree[l][g].features.size()));
        sizes.push_back(std::move(sz));
    }

    // Bottom level must be singletons; append one if the input stopped short.
    bool singleton = static_cast<int>(sizes.back().size()) == n;
    if (!singleton) sizes.emplace_back(n, 1);

    return HierarchicalPartition(n, std::move(sizes), std::move(perm));
}

bool refines(const IndexBlocks& a, const IndexBlocks& b) {
    std::map<int, int> owner;
    for (std::size_t k = 0; k < b.size(); ++k)
        for (int i : b[k])
            if (!owner.emplace(i, static_cast<int>(k)).second)
                throw StructuralError("b is not a partition: duplicate index " + std::to_string(i));

    // Both must partition the same index set before refinement is meaningful.
    std::set<int> seen;
    for (const auto& block : a) {
        if (block.empty()) throw StructuralError("a contains an empty block");
        for (int i : block) {
            if (!seen.insert(i).second)
                throw StructuralError("a is not a partition: duplicate index " + std::to_string(i));
            if (!owner.count(i)) throw StructuralError("partitions cover different index sets");
        }
    }
    if (seen.size() != owner.size())
        throw StructuralError("partitions cover different index sets");

    for (const auto& block : a) {
        const int target = owner.at(block.front());
        for (int i : block)
            if (owner.at(i) != target) return false;
    }
    return true;
}

RankAllocation::RankAllocation(std::vector<int> ranks) : ranks_(std::move(ranks)) {
    if (ranks_.size() < 2) throw StructuralError("rank allocation requires at least 2 levels");
    if (ranks_.back() != 1) throw StructuralError("last rank must be 1 (diagonal level)");
    for (std::size_t l = 0; l + 1 < ranks_.size(); ++l)
        if (ranks_[l] < 0) throw StructuralError("negative rank at level " + std::to_string(l));
}

int RankAllocation::mlr_rank() const {
    int r = 1;
    for (std::size_t l = 0; l + 1 < ranks_.size(); ++l) r += ranks_[l];
    return r;
}

int RankAllocation::factor_cols(const HierarchicalPartition& p) const {
    if (!compatible(p)) throw StructuralError("rank allocation level count does not match partition");
    int s = 0;
    for (int l = 0; l + 1 < levels(); ++l) s += p.num_groups(l) * ranks_[l];
    return s;
}

int RankAllocation::compressed_offset(int level) const {
    int off = 0;
    for (int l = 0; l < level; ++l) off += ranks_[l];
    return off;
}

int SparsityGroup::col_count() const {
    int c = 0;
    for (const auto& lc : level_cols) c += lc.width;
    return c;
}

std::vector<SparsityGroup> sparsity_groups(const HierarchicalPartition& p,
                                           const RankAllocation& ranks) {
    if (!ranks.compatible(p)) throw StructuralError("rank allocation level count does not match partition");
    const int leaf_level = p.levels() - 2;  // level above the singletons
    std::vector<SparsityGroup> out(p.num_groups(leaf_level));
    for (int i = 0; i < p.num_groups(leaf_level); ++i) {
        SparsityGroup& g = out[i];
        g.index = i;
        g.row_offset = p.group_offset(leaf_level, i);
        g.row_count = p.group_size(leaf_level, i);
        for (int l = 0; l <= leaf_level; ++l) {
            if (ranks.level_rank(l) == 0) continue;
            SparsityGroup::LevelCols lc;
            lc.level = l;
            lc.block = p.ancestor(leaf_level, i, l);
            lc.fbar_offset = ranks.compressed_offset(l);
            lc.width = ranks.level_rank(l);
            g.level_cols.push_back(lc);
        }
    }
    return out;
}

}  // namespace mlfm
