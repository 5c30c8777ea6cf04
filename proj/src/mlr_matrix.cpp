#include "mlfm/mlr_matrix.hpp"

#include <string>

namespace mlfm {

void check_dense_cap(int m, int cap, const char* what) {
    if (m > cap)
        throw DenseCapError(std::string(what) + ": dimension " + std::to_string(m) +
                            " exceeds dense cap " + std::to_string(cap));
}

PsdMlr::PsdMlr(HierarchicalPartition partition, RankAllocation ranks,
               std::vector<std::vector<Matrix>> factors, Vector d)
    : partition_(std::move(partition)), ranks_(std::move(ranks)),
      factors_(std::move(factors)), d_(std::move(d)) {
    if (!ranks_.compatible(partition_))
        throw StructuralError("rank allocation level count does not match partition");
    const int nlev = partition_.levels() - 1;
    if (static_cast<int>(factors_.size()) != nlev)
        throw StructuralError("expected " + std::to_string(nlev) + " factor levels, got " +
                              std::to_string(factors_.size()));
    for (int l = 0; l < nlev; ++l) {
        if (static_cast<int>(factors_[l].size()) != partition_.num_groups(l))
            throw StructuralError("level " + std::to_string(l) + " has " +
                                  std::to_string(factors_[l].size()) + " factor blocks, expected " +
                                  std::to_string(partition_.num_groups(l)));
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& f = factors_[l][k];
            if (f.rows() != partition_.group_size(l, k) || f.cols() != ranks_.level_rank(l))
                throw StructuralError("factor block (" + std::to_string(l) + "," + std::to_string(k) +
                                      ") has shape " + std::to_string(f.rows()) + "x" +
                                      std::to_string(f.cols()) + ", expected " +
                                      std::to_string(partition_.group_size(l, k)) + "x" +
                                      std::to_string(ranks_.level_rank(l)));
        }
    }
    if (d_.size() != partition_.n())
        throw StructuralError("diagonal length does not match n");
    for (int i = 0; i < d_.size(); ++i)
        if (!(d_[i] > 0.0))
            throw DomainError("diagonal entry d[" + std::to_string(i) + "] = " +
                              std::to_string(d_[i]) + " is not positive");
}

Vector PsdMlr::matvec(const Vector& x) const {
    if (x.size() != n()) throw StructuralError("matvec: vector length does not match n");
    Vector y = d_.cwiseProduct(x);
    for (int l = 0; l < factor_levels(); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& f = factors_[l][k];
            auto seg = x.segment(partition_.group_offset(l, k), partition_.group_size(l, k));
            y.segment(partition_.group_offset(l, k), partition_.group_size(l, k)).noalias() +=
                f * (f.transpose() * seg);
        }
    }
    return y;
}

Matrix PsdMlr::matmat(const Matrix& x) const {
    if (x.rows() != n()) throw StructuralError("matmat: row count does not match n");
    Matrix y = d_.asDiagonal() * x;
    for (int l = 0; l < factor_levels(); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& f = factors_[l][k];
            auto rows = x.middleRows(partition_.group_offset(l, k), partition_.group_size(l, k));
            y.middleRows(partition_.group_offset(l, k), partition_.group_size(l, k)).noalias() +=
                f * (f.transpose() * rows);
        }
    }
    return y;
}

Vector PsdMlr::diagonal() const {
    Vector diag = d_;
    for (int l = 0; l < factor_levels(); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k)
            diag.segment(partition_.group_offset(l, k), partition_.group_size(l, k)) +=
                factors_[l][k].rowwise().squaredNorm();
    }
    return diag;
}

Matrix PsdMlr::to_dense(int cap) const {
    check_dense_cap(n(), cap, "PsdMlr::to_dense");
    Matrix sigma = Matrix::Zero(n(), n());
    sigma.diagonal() = d_;
    for (int l = 0; l < factor_levels(); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& f = factors_[l][k];
            sigma.block(partition_.group_offset(l, k), partition_.group_offset(l, k),
                        f.rows(), f.rows()).noalias() += f * f.transpose();
        }
    }
    return sigma;
}

double PsdMlr::frobenius_error(const Matrix& s, int cap) const {
    if (s.rows() != n() || s.cols() != n())
        throw StructuralError("frobenius_error: matrix shape does not match n");
    Matrix sigma = to_dense(cap);
    double denom = s.norm();
    if (denom == 0.0) return sigma.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (sigma - s).norm() / denom;
}

CompressedForm PsdMlr::pack_compressed() const {
    CompressedForm c;
    c.fbar = Matrix::Zero(n(), ranks_.mlr_rank() - 1);
    c.d = d_;
    for (int l = 0; l < factor_levels(); ++l) {
        const int w = ranks_.level_rank(l);
        if (w == 0) continue;
        const int col = ranks_.compressed_offset(l);
        for (int k = 0; k < partition_.num_groups(l); ++k)
            c.fbar.block(partition_.group_offset(l, k), col,
                         partition_.group_size(l, k), w) = factors_[l][k];
    }
    return c;
}

PsdMlr PsdMlr::unpack_compressed(HierarchicalPartition partition, RankAllocation ranks,
                                 const CompressedForm& c) {
    if (c.fbar.rows() != partition.n())
        throw StructuralError("compressed form row count does not match n");
    if (c.fbar.cols() != ranks.mlr_rank() - 1)
        throw StructuralError("compressed form has " + std::to_string(c.fbar.cols()) +
                              " columns, expected r-1 = " + std::to_string(ranks.mlr_rank() - 1));
    std::vector<std::vector<Matrix>> factors(partition.levels() - 1);
    for (int l = 0; l + 1 < partition.levels(); ++l) {
        const int w = ranks.level_rank(l);
        const int col = ranks.compressed_offset(l);
        factors[l].resize(partition.num_groups(l));
        for (int k = 0; k < partition.num_groups(l); ++k)
            factors[l][k] = c.fbar.block(partition.group_offset(l, k), col,
                                         partition.group_size(l, k), w);
    }
    return PsdMlr(std::move(partition), std::move(ranks), std::move(factors), c.d);
}

PsdMlr PsdMlr::diagonal_model(HierarchicalPartition partition, RankAllocation ranks, Vector d) {
    std::vector<std::vector<Matrix>> factors(partition.levels() - 1);
    for (int l = 0; l + 1 < partition.levels(); ++l) {
        factors[l].resize(partition.num_groups(l));
        for (int k = 0; k < partition.num_groups(l); ++k)
            factors[l][k] = Matrix::Zero(partition.group_size(l, k), ranks.level_rank(l));
    }
    return PsdMlr(std::move(partition), std::move(ranks), std::move(factors), std::move(d));
}

}  // namespace mlfm
