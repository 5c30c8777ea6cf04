#include "mlfm/expanded_cholesky.hpp"

#include <Eigen/LU>
#include <cstdint>
#include <fstream>

namespace mlfm {

double ExpandedCholesky::logdet() const {
    double out = d_.array().log().sum();
    for (const auto& strip : strips_)
        for (const auto& v : strip.v) out += v.array().log().sum();
    return out;
}

Vector ExpandedCholesky::dsigned() const {
    Vector out(dim());
    out.head(n()) = d_;
    for (int l = 0; l < static_cast<int>(strips_.size()); ++l) {
        const int rl = ranks_.level_rank(l);
        if (rl == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k)
            out.segment(strip_offsets_[l] + k * rl, rl) = -strips_[l].v[k];
    }
    return out;
}

std::size_t ExpandedCholesky::lfactor_nnz() const {
    std::size_t nnz = static_cast<std::size_t>(n());  // unit top-left block
    for (const auto& strip : strips_) {
        for (const auto& a : strip.a) nnz += static_cast<std::size_t>(a.size());
        for (const auto& r : strip.r)
            nnz += static_cast<std::size_t>(r.rows() * (r.rows() + 1) / 2);
        for (const auto& [lt, pieces] : strip.cross)
            for (const auto& piece : pieces) nnz += static_cast<std::size_t>(piece.size());
    }
    return nnz;
}

Matrix ExpandedCholesky::dense_l(int cap) const {
    check_dense_cap(dim(), cap, "ExpandedCholesky::dense_l");
    Matrix out = Matrix::Identity(dim(), dim());
    for (int l = 0; l < static_cast<int>(strips_.size()); ++l) {
        const int rl = ranks_.level_rank(l);
        if (rl == 0) continue;
        const auto& strip = strips_[l];
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const int row = strip_offsets_[l] + k * rl;
            out.block(row, partition_.group_offset(l, k), rl, partition_.group_size(l, k)) =
                strip.a[k];
            out.block(row, strip_offsets_[l] + k * rl, rl, rl) = strip.r[k];
        }
        for (const auto& [lt, pieces] : strip.cross) {
            const int rlt = ranks_.level_rank(lt);
            for (int kt = 0; kt < static_cast<int>(pieces.size()); ++kt) {
                const int anc = partition_.ancestor(lt, kt, l);
                out.block(strip_offsets_[l] + anc * rl, strip_offsets_[lt] + kt * rlt, rl, rlt) =
                    pieces[kt];
            }
        }
    }
    return out;
}

void ExpandedCholesky::dump_binary(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    auto put_i64 = [&os](std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    auto put_mat = [&os](const Matrix& m) {
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) {
                double v = m(i, j);
                os.write(reinterpret_cast<const char*>(&v), 8);
            }
    };
    put_i64(n());
    put_i64(s_);
    put_i64(partition_.levels());
    for (int l = 0; l < partition_.levels(); ++l) put_i64(ranks_.level_rank(l));
    os.write(reinterpret_cast<const char*>(d_.data()), 8 * d_.size());
    for (int l = static_cast<int>(strips_.size()) - 1; l >= 0; --l) {
        const auto& strip = strips_[l];
        for (int k = 0; k < static_cast<int>(strip.a.size()); ++k) {
            put_mat(strip.a[k]);
            put_mat(strip.r[k]);
            os.write(reinterpret_cast<const char*>(strip.v[k].data()), 8 * strip.v[k].size());
        }
        for (auto it = strip.cross.rbegin(); it != strip.cross.rend(); ++it)
            for (const auto& piece : it->second) put_mat(piece);
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

Matrix build_expanded_dense(const PsdMlr& m, int cap) {
    const HierarchicalPartition& part = m.partition();
    const RankAllocation& ranks = m.ranks();
    const int n = part.n();
    const int s = ranks.factor_cols(part);
    check_dense_cap(n + s, cap, "build_expanded_dense");

    Matrix e = Matrix::Zero(n + s, n + s);
    e.topLeftCorner(n, n).diagonal() = m.d();
    e.bottomRightCorner(s, s) = -Matrix::Identity(s, s);

    int off = n;
    for (int l = part.levels() - 2; l >= 0; --l) {
        const int rl = ranks.level_rank(l);
        if (rl == 0) continue;
        for (int k = 0; k < part.num_groups(l); ++k) {
            const Matrix& f = m.factor(l, k);
            e.block(part.group_offset(l, k), off + k * rl, f.rows(), rl) = f;
            e.block(off + k * rl, part.group_offset(l, k), rl, f.rows()) = f.transpose();
        }
        off += part.num_groups(l) * rl;
    }
    return e;
}

double schur_complement_check(const PsdMlr& m, int cap) {
    const int n = m.n();
    const int s = m.ranks().factor_cols(m.partition());
    Matrix e = build_expanded_dense(m, cap);
    Matrix sigma = m.to_dense(cap);
    if (s == 0) return (e - sigma).norm() / sigma.norm();
    Matrix a = e.topLeftCorner(n, n);
    Matrix b = e.topRightCorner(n, s);
    Matrix c = e.bottomRightCorner(s, s);
    Matrix schur = a - b * c.lu().solve(b.transpose());
    return (schur - sigma).norm() / sigma.norm();
}

}  // namespace mlfm
