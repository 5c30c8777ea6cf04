#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cstdint>
#include <cstdio>
#include <fstream>

#include "mlfm/expanded_cholesky.hpp"
#include "mlfm/rng.hpp"
#include "mlfm/smw_inverse.hpp"
#include "support.hpp"

using namespace mlfm;

namespace {

HierarchicalPartition example_partition() {
    return HierarchicalPartition(5, {{5}, {3, 2}, {1, 2, 1, 1}, {1, 1, 1, 1, 1}});
}

double reconstruction_residual(const PsdMlr& m, const ExpandedCholesky& chol) {
    Matrix e = build_expanded_dense(m);
    Matrix l = chol.dense_l();
    return (l * chol.dsigned().asDiagonal() * l.transpose() - e).norm() / e.norm();
}

}  // namespace

TEST_CASE("expanded matrix of the worked example is a 13x13 arrow") {
    CounterRng rng(81, 1);
    auto m = test::random_model(rng, example_partition(), RankAllocation({2, 1, 1, 1}));
    const int s = m.ranks().factor_cols(m.partition());
    CHECK(s == 8);  // 1*2 + 2*1 + 4*1
    Matrix e = build_expanded_dense(m);
    REQUIRE(e.rows() == 13);
    CHECK(e.isApprox(e.transpose()));
    CHECK(Vector(e.topLeftCorner(5, 5).diagonal()).isApprox(m.d()));
    CHECK(e.topLeftCorner(5, 5).isApprox(Matrix(m.d().asDiagonal())));
    CHECK(e.bottomRightCorner(8, 8).isApprox(-Matrix::Identity(8, 8)));
    // strip order: F_{L-1} first after the top-left block
    CHECK(e.block(0, 5, 5, 4).isApprox(test::dense_f(m).middleCols(4, 4)));
}

TEST_CASE("zero factors: L = I and D^E = blkdiag(D, -I)") {
    auto part = example_partition();
    Vector d = Vector::LinSpaced(5, 0.5, 2.5);
    PsdMlr m = PsdMlr::diagonal_model(part, RankAllocation({2, 1, 1, 1}), d);
    ExpandedCholesky chol = factorize(m);
    CHECK(chol.dense_l().isApprox(Matrix::Identity(13, 13)));
    Vector ds = chol.dsigned();
    CHECK(ds.head(5).isApprox(d));
    CHECK(ds.tail(8).isApprox(-Vector::Ones(8)));
    CHECK(build_expanded_dense(m).isApprox(
        Matrix(chol.dsigned().asDiagonal())));
    CHECK(schur_complement_check(m) == 0.0);
}

TEST_CASE("random reconstruction across shapes") {
    CounterRng rng(83, 2);
    for (int rep = 0; rep < 8; ++rep) {
        int levels = 2 + rep % 4;
        int n = 20 + static_cast<int>(rng.uniform() * 30);
        auto part = test::random_partition(rng, n, levels);
        auto m = test::random_model(rng, part, test::random_ranks(rng, levels, 3));
        CHECK(reconstruction_residual(m, factorize(m)) < 1e-10);
    }
}

TEST_CASE("n=50 three-level model: reconstruction, Schur complement, inertia") {
    CounterRng rng(89, 3);
    auto part = test::random_partition(rng, 50, 3);
    auto m = test::random_model(rng, part, test::random_ranks(rng, 3, 3, 1));
    ExpandedCholesky chol = factorize(m);
    CHECK(reconstruction_residual(m, chol) < 1e-10);
    CHECK(schur_complement_check(m) < 1e-10);

    // D^E sign pattern and Sylvester consistency with the dense E
    Vector ds = chol.dsigned();
    const int n = 50, s = chol.s();
    CHECK((ds.head(n).array() > 0.0).all());
    CHECK((ds.tail(s).array() < 0.0).all());
    Eigen::SelfAdjointEigenSolver<Matrix> es(build_expanded_dense(m), Eigen::EigenvaluesOnly);
    CHECK((es.eigenvalues().array() > 0.0).cast<int>().sum() == n);
    CHECK((es.eigenvalues().array() < 0.0).cast<int>().sum() == s);
}

TEST_CASE("deep hierarchy Schur complement") {
    CounterRng rng(97, 4);
    auto part = test::random_partition(rng, 40, 5);
    auto m = test::random_model(rng, part, test::random_ranks(rng, 5, 2));
    CHECK(schur_complement_check(m) < 1e-10);
}

TEST_CASE("L and its inverse share a support") {
    CounterRng rng(101, 5);
    auto part = test::random_partition(rng, 30, 4);
    auto m = test::random_model(rng, part, test::random_ranks(rng, 4, 3, 1));
    Matrix l = factorize(m).dense_l();
    Matrix linv = l.inverse();
    const double tol = 1e-12 * l.cwiseAbs().maxCoeff();
    for (int i = 0; i < l.rows(); ++i)
        for (int j = 0; j < l.cols(); ++j)
            if (l(i, j) == 0.0) CHECK(std::abs(linv(i, j)) <= tol);
}

TEST_CASE("log determinant agrees with SMW and with the signed diagonal") {
    CounterRng rng(103, 6);
    for (int rep = 0; rep < 6; ++rep) {
        int levels = 2 + rep % 3;
        auto part = test::random_partition(rng, 36, levels);
        auto m = test::random_model(rng, part, test::random_ranks(rng, levels, 3));
        auto [inv, chol] = invert_and_factorize(m);
        CHECK(std::abs(chol.logdet() - inv.logdet()) < 1e-9);
        // det E = (-1)^s det Sigma through |D^E|
        Vector ds = chol.dsigned();
        double sum_log_abs = ds.array().abs().log().sum();
        CHECK(sum_log_abs == doctest::Approx(chol.logdet()).epsilon(1e-12));
    }

    // diagonal special cases
    HierarchicalPartition p(4, {{4}, {1, 1, 1, 1}});
    Vector d(4);
    d << 2, 3, 4, 5;
    CHECK(factorize(PsdMlr::diagonal_model(p, RankAllocation({0, 1}), d)).logdet() ==
          doctest::Approx(d.array().log().sum()));
    CHECK(factorize(PsdMlr::diagonal_model(p, RankAllocation({0, 1}), Vector::Ones(4))).logdet() ==
          doctest::Approx(0.0));
}

TEST_CASE("stored nonzeros of L respect the factor-size bound") {
    CounterRng rng(107, 7);
    for (int rep = 0; rep < 5; ++rep) {
        int levels = 3 + rep % 3;
        auto part = test::random_partition(rng, 48, levels);
        auto ranks = test::random_ranks(rng, levels, 3, 1);
        auto m = test::random_model(rng, part, ranks);
        ExpandedCholesky chol = factorize(m);
        const double n = part.n();
        const double r = ranks.mlr_rank();
        const double p_leaf = part.num_groups(levels - 2);
        CHECK(static_cast<double>(chol.lfactor_nnz()) <= n * r + p_leaf * r * r + n + chol.s());
    }
}

TEST_CASE("binary dump layout") {
    CounterRng rng(109, 8);
    auto part = HierarchicalPartition(6, {{4, 2}, {2, 2, 2}, {1, 1, 1, 1, 1, 1}});
    auto ranks = RankAllocation({1, 2, 1});
    auto m = test::random_model(rng, part, ranks);
    ExpandedCholesky chol = factorize(m);
    const char* path = "chol_dump.bin";
    chol.dump_binary(path);

    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    auto get_i64 = [&is]() {
        std::int64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    CHECK(get_i64() == 6);                      // n
    CHECK(get_i64() == chol.s());               // s
    CHECK(get_i64() == 3);                      // L
    CHECK(get_i64() == 1);
    CHECK(get_i64() == 2);
    CHECK(get_i64() == 1);
    double d0 = 0;
    is.read(reinterpret_cast<char*>(&d0), 8);
    CHECK(d0 == m.d()[0]);
    // total payload: header + d + strips
    is.seekg(0, std::ios::end);
    std::size_t expected = 8 * (3 + 3) + 8 * 6;
    for (int l = 0; l < 2; ++l) {
        const auto& strip = chol.strip(l);
        for (std::size_t k = 0; k < strip.a.size(); ++k)
            expected += 8 * (strip.a[k].size() + strip.r[k].size() + strip.v[k].size());
        for (const auto& [lt, pieces] : strip.cross)
            for (const auto& piece : pieces) expected += 8 * piece.size();
    }
    CHECK(static_cast<std::size_t>(is.tellg()) == expected);
    std::remove(path);
}
