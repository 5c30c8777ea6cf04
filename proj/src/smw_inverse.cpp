#include "mlfm/smw_inverse.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <utility>

#include "mlfm/expanded_cholesky.hpp"

namespace mlfm {

namespace {

constexpr double kEigFloorTol = 1e-8;

// Unpivoted right-looking LDL^T of a tiny symmetric PD block. Safe without
// pivoting: every block factored here is I plus a PSD term.
void ldl_unpivoted(const Matrix& b, Matrix* rfac, Vector* pivots) {
    const int m = static_cast<int>(b.rows());
    Matrix r = Matrix::Identity(m, m);
    Vector v(m);
    for (int j = 0; j < m; ++j) {
        double vj = b(j, j);
        for (int t = 0; t < j; ++t) vj -= r(j, t) * r(j, t) * v(t);
        if (!(vj > 0.0))
            throw NumericalError("expanded Cholesky: nonpositive pivot " + std::to_string(vj) +
                                 " in a block that is analytically >= I");
        v(j) = vj;
        for (int i = j + 1; i < m; ++i) {
            double x = b(i, j);
            for (int t = 0; t < j; ++t) x -= r(i, t) * r(j, t) * v(t);
            r(i, j) = x / vj;
        }
    }
    *rfac = std::move(r);
    *pivots = std::move(v);
}

}  // namespace

// One bottom-to-top pass over the levels. Maintains only the running product
// Sigma_{(l+1)+}^{-1} F_{l-} blockwise in the sparsity pattern of F_{l-};
// optionally records the expanded-matrix Cholesky strips from the same
// intermediates.
class SmwSweep {
public:
    SmwSweep(const PsdMlr& m, bool want_chol) : m_(m), want_chol_(want_chol) {}

    void run() {
        const HierarchicalPartition& part = m_.partition();
        const RankAllocation& ranks = m_.ranks();
        const int nlev = m_.factor_levels();

        inv_.emplace(InverseMlr(part, ranks));
        inv_->dinv_ = m_.d().cwiseInverse();
        inv_->logdet_ = m_.d().array().log().sum();
        inv_->level_eigs_.resize(nlev);
        inv_->hfactors_.resize(nlev);

        if (want_chol_) {
            chol_.emplace(ExpandedCholesky(part, ranks));
            chol_->d_ = m_.d();
            chol_->s_ = ranks.factor_cols(part);
            chol_->strips_.resize(nlev);
            chol_->strip_offsets_.assign(nlev, 0);
            int off = part.n();
            for (int l = nlev - 1; l >= 0; --l) {
                chol_->strip_offsets_[l] = off;
                off += part.num_groups(l) * ranks.level_rank(l);
            }
        }

        // State: Sigma_{(l+1)+}^{-1} F_{l'} per level l' and block, seeded at
        // the bottom with D^{-1} F.
        std::vector<std::vector<Matrix>> state(nlev);
        std::size_t state_scalars = 0;
        for (int l = 0; l < nlev; ++l) {
            state[l].resize(part.num_groups(l));
            for (int k = 0; k < part.num_groups(l); ++k) {
                const Matrix& f = m_.factor(l, k);
                state[l][k] = inv_->dinv_.segment(part.group_offset(l, k), f.rows()).asDiagonal() * f;
                state_scalars += static_cast<std::size_t>(f.size());
            }
        }
        stats_.peak_workspace_scalars = state_scalars;

        if (want_chol_) {
            for (int l = 0; l < nlev; ++l) {
                auto& strip = chol_->strips_[l];
                const int p = part.num_groups(l);
                strip.a.resize(p);
                strip.r.resize(p);
                strip.v.resize(p);
                for (int k = 0; k < p; ++k) {
                    const Matrix& f = m_.factor(l, k);
                    // [F_l^T 0](D^{(l+1)} L^{(l+1)T})^{-1} restricted to the
                    // first n columns is F_l^T D^{-1} at every level.
                    strip.a[k] = f.transpose() *
                        inv_->dinv_.segment(part.group_offset(l, k), f.rows()).asDiagonal();
                }
            }
        }

        for (int cur = nlev - 1; cur >= 0; --cur) {
            const int rl = ranks.level_rank(cur);
            inv_->hfactors_[cur].resize(part.num_groups(cur));
            if (rl == 0) {
                for (int k = 0; k < part.num_groups(cur); ++k)
                    inv_->hfactors_[cur][k] = Matrix::Zero(part.group_size(cur, k), 0);
                inv_->level_eigs_[cur] = Vector::Zero(0);
                continue;
            }
            process_level(cur, state, &state_scalars);
            // The consumed level's state block is dropped from the window.
            for (auto& blockmat : state[cur]) {
                state_scalars -= static_cast<std::size_t>(blockmat.size());
                blockmat.resize(0, 0);
            }
        }

    }

    InverseMlr take_inverse() { return std::move(*inv_); }
    ExpandedCholesky take_cholesky() { return std::move(*chol_); }
    SmwStats stats() const { return stats_; }

private:
    void process_level(int cur, std::vector<std::vector<Matrix>>& state,
                       std::size_t* state_scalars) {
        const HierarchicalPartition& part = m_.partition();
        const RankAllocation& ranks = m_.ranks();
        const int rl = ranks.level_rank(cur);
        const int p = part.num_groups(cur);

        Vector eigs(p * rl);
        for (int k = 0; k < p; ++k) {
            const Matrix& f = m_.factor(cur, k);
            const Matrix& m0 = state[cur][k];

            Matrix b = Matrix::Identity(rl, rl) + f.transpose() * m0;
            b = 0.5 * (b + b.transpose()).eval();  // guard against fp asymmetry

            Eigen::SelfAdjointEigenSolver<Matrix> es(b);
            if (es.info() != Eigen::Success)
                throw NumericalError("eigendecomposition failed at level " + std::to_string(cur));
            const Vector& lam = es.eigenvalues();
            // The negated comparison also trips on NaN.
            if (!(lam.minCoeff() >= 1.0 - kEigFloorTol))
                throw NumericalError("eigenvalue " + std::to_string(lam.minCoeff()) +
                                     " of I + F^T Sigma^{-1} F below 1 at level " +
                                     std::to_string(cur) + "; upstream NaN/overflow likely");
            eigs.segment(k * rl, rl) = lam;
            inv_->logdet_ += lam.array().log().sum();

            const Matrix& q = es.eigenvectors();
            Matrix m2 = q * lam.cwiseInverse().asDiagonal() * q.transpose();
            inv_->hfactors_[cur][k].noalias() =
                m0 * (q * lam.cwiseSqrt().cwiseInverse().asDiagonal() * q.transpose());

            Matrix rfac;
            Vector pivots;
            if (want_chol_) {
                ldl_unpivoted(b, &rfac, &pivots);
                chol_->strips_[cur].r[k] = rfac;
                chol_->strips_[cur].v[k] = pivots;
            }

            track_temp(state_scalars, static_cast<std::size_t>(3 * rl * rl + m0.size()));

            // Push the update through every coarser level's state block and,
            // when requested, harvest the Cholesky cross pieces M_3^T R_l.
            for (int lp = 0; lp < cur; ++lp) {
                const int rlp = ranks.level_rank(lp);
                if (rlp == 0) continue;
                const int anc = part.ancestor(cur, k, lp);
                const int local = part.group_offset(cur, k) - part.group_offset(lp, anc);
                const auto fview = m_.factor(lp, anc).middleRows(local, f.rows());

                Matrix t1 = m0.transpose() * fview;  // M_1 piece
                Matrix t2 = m2 * t1;                 // M_3 piece
                if (want_chol_) {
                    auto& pieces = chol_->strips_[lp].cross[cur];
                    pieces.resize(p);
                    pieces[k] = t2.transpose() * rfac;
                }
                state[lp][anc].middleRows(local, f.rows()).noalias() -= m0 * t2;  // M_5
                track_temp(state_scalars, static_cast<std::size_t>(2 * rl * rlp));
            }
        }
        inv_->level_eigs_[cur] = std::move(eigs);
    }

    void track_temp(const std::size_t* state_scalars, std::size_t temp) {
        stats_.peak_workspace_scalars = std::max(stats_.peak_workspace_scalars,
                                                 *state_scalars + temp);
    }

    const PsdMlr& m_;
    bool want_chol_;
    std::optional<InverseMlr> inv_;
    std::optional<ExpandedCholesky> chol_;
    SmwStats stats_;
};

InverseMlr invert(const PsdMlr& m, SmwStats* stats) {
    SmwSweep sweep(m, /*want_chol=*/false);
    sweep.run();
    if (stats) *stats = sweep.stats();
    return sweep.take_inverse();
}

ExpandedCholesky factorize(const PsdMlr& m) {
    SmwSweep sweep(m, /*want_chol=*/true);
    sweep.run();
    return sweep.take_cholesky();
}

std::pair<InverseMlr, ExpandedCholesky> invert_and_factorize(const PsdMlr& m) {
    SmwSweep sweep(m, /*want_chol=*/true);
    sweep.run();
    return {sweep.take_inverse(), sweep.take_cholesky()};
}

Matrix InverseMlr::apply(const Matrix& x) const {
    if (x.rows() != n()) throw StructuralError("apply: row count does not match n");
    Matrix y = dinv_.asDiagonal() * x;
    for (int l = 0; l < static_cast<int>(hfactors_.size()); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& h = hfactors_[l][k];
            auto rows = x.middleRows(partition_.group_offset(l, k), partition_.group_size(l, k));
            y.middleRows(partition_.group_offset(l, k), partition_.group_size(l, k)).noalias() -=
                h * (h.transpose() * rows);
        }
    }
    return y;
}

Vector InverseMlr::apply(const Vector& x) const {
    return apply(Matrix(x)).col(0);
}

Vector InverseMlr::diagonal() const {
    Vector diag = dinv_;
    for (int l = 0; l < static_cast<int>(hfactors_.size()); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k)
            diag.segment(partition_.group_offset(l, k), partition_.group_size(l, k)) -=
                hfactors_[l][k].rowwise().squaredNorm();
    }
    return diag;
}

Matrix InverseMlr::to_dense(int cap) const {
    check_dense_cap(n(), cap, "InverseMlr::to_dense");
    Matrix out = Matrix::Zero(n(), n());
    out.diagonal() = dinv_;
    for (int l = 0; l < static_cast<int>(hfactors_.size()); ++l) {
        if (ranks_.level_rank(l) == 0) continue;
        for (int k = 0; k < partition_.num_groups(l); ++k) {
            const Matrix& h = hfactors_[l][k];
            out.block(partition_.group_offset(l, k), partition_.group_offset(l, k),
                      h.rows(), h.rows()).noalias() -= h * h.transpose();
        }
    }
    return out;
}

}  // namespace mlfm
