#include <gtest/gtest.h>

#include "neuromod/projection.hpp"

using namespace neuromod;

TEST(Projection, GoldenEntries) {
    // tests/oracles/rng_golden.py: projection(11, .25, 3, 8)
    SparseTernaryProjection a(11, 0.25, 3, 8);
    const std::vector<TernaryEntry> want{{0, 6, 1}, {1, 5, -1}, {1, 6, -1}, {2, 1, 1}};
    EXPECT_EQ(a.entries(), want);
    EXPECT_EQ(a.content_hash(), 0x9A4E319F6806E15DULL);
}

TEST(Projection, EntriesSortedRowMajor) {
    SparseTernaryProjection a(3, 0.3, 20, 50);
    const auto& e = a.entries();
    for (std::size_t i = 1; i < e.size(); ++i) {
        EXPECT_TRUE(e[i - 1].row < e[i].row || (e[i - 1].row == e[i].row && e[i - 1].col < e[i].col));
    }
}

TEST(Projection, Statistics32x4096) {
    SparseTernaryProjection a(12345, 0.25, 32, 4096);
    const double cells = 32.0 * 4096.0;
    std::size_t pos = 0;
    for (const auto& e : a.entries()) pos += e.sign > 0 ? 1 : 0;
    const double nz = static_cast<double>(a.entries().size());
    EXPECT_NEAR(nz / cells, 0.25, 0.01);
    EXPECT_NEAR(static_cast<double>(pos) / nz, 0.5, 0.02);
}

TEST(Projection, SameSeedSameMatrix) {
    SparseTernaryProjection a(77, 0.25, 16, 64);
    SparseTernaryProjection b(77, 0.25, 16, 64);
    EXPECT_EQ(a.entries(), b.entries());
    EXPECT_EQ(a.content_hash(), b.content_hash());
    EXPECT_TRUE(a.same_generation(b));
    SparseTernaryProjection c(78, 0.25, 16, 64);
    EXPECT_NE(a.content_hash(), c.content_hash());
    EXPECT_FALSE(a.same_generation(c));
}

TEST(Projection, MatchesDenseOracle) {
    SparseTernaryProjection a(5, 0.25, 16, 64);
    const Matrix dense = a.to_dense();
    Rng g(1);
    for (int t = 0; t < 20; ++t) {
        Vector x(64);
        for (auto& v : x) v = g.next_gaussian();
        const Vector h = a.project(x);
        const Vector want = matvec(dense, x);
        for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], want[i], 1e-12);
        Vector gr(16);
        for (auto& v : gr) v = g.next_gaussian();
        const Vector back = a.project_transposed(gr);
        const Vector want_back = matvec_transposed(dense, gr);
        for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], want_back[i], 1e-12);
    }
}

TEST(Projection, DenseEntriesAreTernary) {
    const Matrix d = SparseTernaryProjection(9, 0.5, 8, 8).to_dense();
    for (double v : d.flat()) EXPECT_TRUE(v == 0.0 || v == 1.0 || v == -1.0);
}

TEST(Projection, RhoOneIsFullyDense) {
    SparseTernaryProjection a(4, 1.0, 4, 10);
    EXPECT_EQ(a.entries().size(), 40u);
}

TEST(Projection, RejectsBadParameters) {
    EXPECT_THROW(SparseTernaryProjection(1, 0.0, 4, 4), ParameterError);
    EXPECT_THROW(SparseTernaryProjection(1, -0.1, 4, 4), ParameterError);
    EXPECT_THROW(SparseTernaryProjection(1, 1.5, 4, 4), ParameterError);
    EXPECT_THROW(SparseTernaryProjection(1, 0.25, 0, 4), ParameterError);
}

TEST(Projection, RejectsWrongInputLength) {
    SparseTernaryProjection a(1, 0.5, 4, 6);
    EXPECT_THROW(a.project(Vector(5)), DimensionError);
    EXPECT_THROW(a.project_transposed(Vector(6)), DimensionError);
}
