#include "mlfm/mlr_product.hpp"

#include <cmath>

namespace mlfm {

GeneralMlr::GeneralMlr(HierarchicalPartition partition, std::vector<int> widths,
                       std::vector<std::vector<Matrix>> left,
                       std::vector<std::vector<Matrix>> right)
    : partition_(std::move(partition)), widths_(std::move(widths)),
      left_(std::move(left)), right_(std::move(right)) {
    const int nlev = partition_.levels();
    if (static_cast<int>(widths_.size()) != nlev || static_cast<int>(left_.size()) != nlev ||
        static_cast<int>(right_.size()) != nlev)
        throw StructuralError("GeneralMlr: per-level containers must cover all levels");
    for (int l = 0; l < nlev; ++l) {
        if (static_cast<int>(left_[l].size()) != partition_.num_groups(l) ||
            static_cast<int>(right_[l].size()) != partition_.num_groups(l))
            throw StructuralError("GeneralMlr: block count mismatch at level " + std::to_string(l));
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const int rows = partition_.group_size(l, k);
            if (left_[l][k].rows() != rows || right_[l][k].rows() != rows ||
                left_[l][k].cols() != widths_[l] || right_[l][k].cols() != widths_[l])
                throw StructuralError("GeneralMlr: factor shape mismatch at level " +
                                      std::to_string(l) + " block " + std::to_string(k));
        }
    }
}

Matrix GeneralMlr::to_dense(int cap) const {
    check_dense_cap(n(), cap, "GeneralMlr::to_dense");
    Matrix out = Matrix::Zero(n(), n());
    for (int l = 0; l < partition_.levels(); ++l) {
        if (widths_[l] == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const int off = partition_.group_offset(l, k);
            const int sz = partition_.group_size(l, k);
            out.block(off, off, sz, sz).noalias() += left_[l][k] * right_[l][k].transpose();
        }
    }
    return out;
}

double GeneralMlr::trace() const {
    double t = 0.0;
    for (int l = 0; l < partition_.levels(); ++l)
        for (int k = 0; k < partition_.num_groups(l); ++k)
            t += left_[l][k].cwiseProduct(right_[l][k]).sum();
    return t;
}

GeneralMlr as_general(const PsdMlr& m) {
    const HierarchicalPartition& part = m.partition();
    const int nlev = part.levels();
    std::vector<int> widths(nlev);
    std::vector<std::vector<Matrix>> left(nlev), right(nlev);
    for (int l = 0; l + 1 < nlev; ++l) {
        widths[l] = m.ranks().level_rank(l);
        left[l] = m.factors()[l];
        right[l] = m.factors()[l];
    }
    widths[nlev - 1] = 1;
    left[nlev - 1].resize(part.n());
    right[nlev - 1].resize(part.n());
    for (int i = 0; i < part.n(); ++i) {
        Matrix root(1, 1);
        root(0, 0) = std::sqrt(m.d()[i]);
        left[nlev - 1][i] = root;
        right[nlev - 1][i] = root;
    }
    return GeneralMlr(part, std::move(widths), std::move(left), std::move(right));
}

GeneralMlr as_general(const InverseMlr& inv) {
    const HierarchicalPartition& part = inv.partition();
    const int nlev = part.levels();
    std::vector<int> widths(nlev);
    std::vector<std::vector<Matrix>> left(nlev), right(nlev);
    for (int l = 0; l + 1 < nlev; ++l) {
        widths[l] = inv.ranks().level_rank(l);
        left[l].resize(part.num_groups(l));
        right[l].resize(part.num_groups(l));
        for (int k = 0; k < part.num_groups(l); ++k) {
            left[l][k] = -inv.hfactor(l, k);  // factors enter negatively
            right[l][k] = inv.hfactor(l, k);
        }
    }
    widths[nlev - 1] = 1;
    left[nlev - 1].resize(part.n());
    right[nlev - 1].resize(part.n());
    for (int i = 0; i < part.n(); ++i) {
        Matrix root(1, 1);
        root(0, 0) = std::sqrt(inv.dinv()[i]);
        left[nlev - 1][i] = root;
        right[nlev - 1][i] = root;
    }
    return GeneralMlr(part, std::move(widths), std::move(left), std::move(right));
}

GeneralMlr multiply(const GeneralMlr& a, const GeneralMlr& b) {
    const HierarchicalPartition& part = a.partition();
    if (!part.same_shape(b.partition()))
        throw StructuralError("multiply: operands must share one hierarchical partition");
    const int nlev = part.levels();

    std::vector<int> widths(nlev);
    std::vector<std::vector<Matrix>> left(nlev), right(nlev);

    // Level l of the product collects A_l B_{l+} + A_{(l+1)+} B_l as
    // [ A.left_l | sum_{lt>l} Abar ] [ sum_{lt>=l} Cbar | B.right_l ]^T,
    // with each bar term assembled child-block by child-block.
    for (int l = 0; l < nlev; ++l) {
        const int wa = a.width(l);
        const int wb = b.width(l);
        widths[l] = wa + wb;
        left[l].resize(part.num_groups(l));
        right[l].resize(part.num_groups(l));
        for (int k = 0; k < part.num_groups(l); ++k) {
            const int rows = part.group_size(l, k);
            const int off = part.group_offset(l, k);
            Matrix lk(rows, wa + wb);
            Matrix rk(rows, wa + wb);
            lk.leftCols(wa) = a.left(l, k);
            rk.rightCols(wb) = b.right(l, k);
            auto abar = lk.rightCols(wb);
            auto cbar = rk.leftCols(wa);
            abar.setZero();
            cbar.setZero();
            for (int lt = l; lt < nlev; ++lt) {
                if (lt == l) {
                    // Same-level term A_l B_l folds into cbar.
                    cbar.noalias() += b.right(l, k) * (b.left(l, k).transpose() * a.right(l, k));
                    continue;
                }
                // Children of block k at the finer level lt.
                const int first = part.group_containing(lt, off);
                const int last = part.group_containing(lt, off + rows - 1);
                for (int kt = first; kt <= last; ++kt) {
                    const int local = part.group_offset(lt, kt) - off;
                    const int sz = part.group_size(lt, kt);
                    cbar.middleRows(local, sz).noalias() +=
                        b.right(lt, kt) *
                        (b.left(lt, kt).transpose() * a.right(l, k).middleRows(local, sz));
                    abar.middleRows(local, sz).noalias() +=
                        a.left(lt, kt) *
                        (a.right(lt, kt).transpose() * b.left(l, k).middleRows(local, sz));
                }
            }
            left[l][k] = std::move(lk);
            right[l][k] = std::move(rk);
        }
    }
    return GeneralMlr(part, std::move(widths), std::move(left), std::move(right));
}

double identity_residual(const PsdMlr& m, const InverseMlr& inv, int cap) {
    if (!m.partition().same_shape(inv.partition()))
        throw StructuralError("identity_residual: partitions differ");
    GeneralMlr prod = multiply(as_general(m), as_general(inv));
    Matrix dense = prod.to_dense(cap);
    dense.diagonal().array() -= 1.0;
    return dense.norm();
}

}  // namespace mlfm
