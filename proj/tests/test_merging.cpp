#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "merge_oracle.hpp"
#include "neuromod/merging.hpp"

using namespace neuromod;
using merge_oracle::Grid;

namespace {

std::vector<AdapterState> fixture_adapters(const merge_oracle::Fixture& f) {
    std::vector<AdapterState> out;
    for (std::size_t t = 0; t < f.inits.size(); ++t) {
        out.push_back(merge_oracle::fixture_adapter(f.inits[t], merge_oracle::add(f.inits[t], f.deltas[t])));
    }
    return out;
}

Grid flat(const Matrix& m) { return Grid(m.flat().begin(), m.flat().end()); }

} // namespace

TEST(TaskArithmetic, MatchesOracleOnFixture) {
    const auto f = merge_oracle::three_task_fixture();
    const auto ads = fixture_adapters(f);
    for (double scaling : {1.0, 0.5, 1.0 / 3.0}) {
        const auto merged = merge_task_arithmetic(ads, scaling);
        const Grid want = merge_oracle::add(merge_oracle::mean_inits(f), merge_oracle::ta_oracle(f.deltas, scaling));
        EXPECT_EQ(flat(merged.b), want) << "scaling " << scaling;
        EXPECT_EQ(flat(merged.b_init), merge_oracle::mean_inits(f));
    }
}

TEST(Ties, MatchesOracleOnFixture) {
    const auto f = merge_oracle::three_task_fixture();
    const auto ads = fixture_adapters(f);
    for (double trim : {1.0, 0.5, 0.2, 1.0 / 9.0}) {
        const auto merged = merge_ties(ads, trim);
        const Grid want = merge_oracle::add(merge_oracle::mean_inits(f), merge_oracle::ties_oracle(f.deltas, trim));
        EXPECT_EQ(flat(merged.b), want) << "trim " << trim;
        std::vector<Matrix> deltas;
        for (const auto& d : f.deltas) deltas.push_back(Matrix(3, 3, d));
        EXPECT_EQ(flat(ties_merge_deltas(deltas, trim)), merge_oracle::ties_oracle(f.deltas, trim));
    }
}

TEST(Ties, HandTracedExample) {
    // One coordinate holds +3 and -1 with trim 1.0: sign + wins, disjoint mean {3}.
    const Grid zero(9, 0.0);
    Grid d1 = zero, d2 = zero;
    d1[4] = 3.0;
    d2[4] = -1.0;
    std::vector<AdapterState> ads{merge_oracle::fixture_adapter(zero, d1), merge_oracle::fixture_adapter(zero, d2)};
    const auto merged = merge_ties(ads, 1.0);
    EXPECT_EQ(merged.b.flat()[4], 3.0);
    EXPECT_EQ(merge_oracle::ties_oracle({d1, d2}, 1.0)[4], 3.0);
}

TEST(Ties, ZeroSumElectsPositive) {
    std::vector<Matrix> d{Matrix(1, 2, {2.0, 1.0}), Matrix(1, 2, {-2.0, 1.0})};
    const Matrix m = ties_merge_deltas(d, 1.0);
    EXPECT_EQ(m(0, 0), 2.0);
    EXPECT_EQ(m(0, 1), 1.0);
}

TEST(Ties, TrimTiesGoToLowerIndex) {
    std::vector<Matrix> d{Matrix(1, 4, {1.0, -1.0, 1.0, 0.5})};
    const Matrix m = ties_merge_deltas(d, 0.5); // keep 2 of 4
    EXPECT_EQ(m, Matrix(1, 4, {1.0, -1.0, 0.0, 0.0}));
}

TEST(Ties, IdenticalAdaptersGiveCommonDelta) {
    const auto f = merge_oracle::three_task_fixture();
    const auto a = merge_oracle::fixture_adapter(f.inits[0], merge_oracle::add(f.inits[0], f.deltas[0]));
    std::vector<AdapterState> ads{a, a, a};
    EXPECT_EQ(merge_ties(ads, 1.0).b, a.b);
}

TEST(TaskArithmetic, SingleAdapterIsIdentity) {
    const auto f = merge_oracle::three_task_fixture();
    const auto a = merge_oracle::fixture_adapter(f.inits[1], merge_oracle::add(f.inits[1], f.deltas[1]));
    const auto m = merge_task_arithmetic(std::span<const AdapterState>(&a, 1), 1.0);
    EXPECT_EQ(m.b, a.b);
}

TEST(TaskArithmetic, OppositeDeltasCancel) {
    const auto f = merge_oracle::three_task_fixture();
    Grid neg(9);
    for (std::size_t i = 0; i < 9; ++i) neg[i] = -f.deltas[0][i];
    std::vector<AdapterState> ads{
        merge_oracle::fixture_adapter(f.inits[0], merge_oracle::add(f.inits[0], f.deltas[0])),
        merge_oracle::fixture_adapter(f.inits[0], merge_oracle::add(f.inits[0], neg))};
    const auto m = merge_task_arithmetic(ads, 1.0);
    EXPECT_EQ(m.b, m.b_init);
}

TEST(Merging, PermutationInvariantOnRandomAdapters) {
    Rng g(3);
    std::vector<AdapterState> ads;
    AdapterConfig c;
    c.d_in = 10;
    c.d_out = 7;
    c.r = 6;
    c.k = 2;
    c.d_h = 3;
    for (int t = 0; t < 4; ++t) {
        auto s = init_adapter(c, 11, 12);
        s.b = Matrix::gaussian(7, 6, 1.0, g);
        s.b_init = Matrix::gaussian(7, 6, 1.0, g);
        s.gate->w2 = Matrix::gaussian(6, 3, 1.0, g);
        for (auto& v : s.gate->gamma) v = g.next_gaussian();
        ads.push_back(s);
    }
    const auto ta = merge_task_arithmetic(ads, 0.3);
    const auto ti = merge_ties(ads, 0.4);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    while (std::next_permutation(perm.begin(), perm.end())) {
        std::vector<AdapterState> p;
        for (auto i : perm) p.push_back(ads[i]);
        const auto ta2 = merge_task_arithmetic(p, 0.3);
        const auto ti2 = merge_ties(p, 0.4);
        EXPECT_EQ(ta2.b, ta.b);
        EXPECT_EQ(*ta2.gate, *ta.gate);
        EXPECT_EQ(ti2.b, ti.b);
    }
}

TEST(Merging, GateAveragedAndFrozenAPreserved) {
    AdapterConfig c;
    c.d_in = 6;
    c.d_out = 4;
    c.r = 4;
    c.k = 2;
    c.d_h = 2;
    auto a = init_adapter(c, 1, 2);
    auto b = init_adapter(c, 1, 2);
    a.gate->gamma = Vector{1.0, 2.0, 3.0, 4.0};
    b.gate->gamma = Vector{3.0, 2.0, 1.0, 0.0};
    a.gate->beta = Vector{0.5, 0.5, 0.5, 0.5};
    std::vector<AdapterState> ads{a, b};
    const auto m = merge_task_arithmetic(ads, 0.5);
    EXPECT_EQ(m.gate->gamma, Vector(4, 2.0));
    EXPECT_EQ(m.gate->beta, Vector(4, 0.25));
    EXPECT_EQ(m.projection.entries(), a.projection.entries());
    EXPECT_NO_THROW(m.validate());
    EXPECT_NO_THROW(adapter_forward(m, Vector(6, 1.0)));
}

TEST(Merging, StaticModulationAveraged) {
    auto a = merge_oracle::fixture_adapter(Grid(9, 0.0), Grid(9, 1.0), Variant::static_gate);
    auto b = a;
    b.static_m = Vector{1.0, 0.0, 0.5};
    std::vector<AdapterState> ads{a, b};
    EXPECT_EQ(merge_ties(ads, 1.0).static_m, (Vector{0.75, 0.25, 0.5}));
}

TEST(Merging, RejectsIncompatibleAdapters) {
    AdapterConfig c;
    c.d_in = 6;
    c.d_out = 4;
    c.r = 4;
    c.k = 2;
    c.d_h = 2;
    std::vector<AdapterState> seeds{init_adapter(c, 1, 2), init_adapter(c, 3, 2)};
    EXPECT_THROW(merge_task_arithmetic(seeds, 1.0), IncompatibleError);
    std::vector<AdapterState> bases{init_adapter(c, 1, 2), init_adapter(c, 1, 5)};
    EXPECT_THROW(merge_ties(bases, 1.0), IncompatibleError);
    auto c2 = c;
    c2.k = 3;
    std::vector<AdapterState> cfgs{init_adapter(c, 1, 2), init_adapter(c2, 1, 2)};
    EXPECT_THROW(merge_task_arithmetic(cfgs, 1.0), IncompatibleError);
    c.variant = Variant::trainable_a;
    std::vector<AdapterState> dense{init_adapter(c, 1, 2), init_adapter(c, 1, 2)};
    EXPECT_THROW(merge_task_arithmetic(dense, 1.0), IncompatibleError);
    EXPECT_THROW(merge_task_arithmetic(std::span<const AdapterState>{}, 1.0), EmptyInputError);
}

TEST(Merging, RecipeValidation) {
    const auto f = merge_oracle::three_task_fixture();
    const auto ads = fixture_adapters(f);
    EXPECT_THROW(merge_task_arithmetic(ads, 0.0), ParameterError);
    EXPECT_THROW(merge_ties(ads, 0.0), ParameterError);
    EXPECT_THROW(merge_ties(ads, 1.5), ParameterError);
    EXPECT_THROW(parse_merge_method("average"), ParameterError);
    EXPECT_EQ(merge(ads, MergeRecipe{MergeMethod::ties, 1.0, 0.5}).b, merge_ties(ads, 0.5).b);
}

TEST(Overlap, SelfAndOrthogonal) {
    auto a = merge_oracle::fixture_adapter(Grid(9, 0.0), {1, 0, 0, 0, 2, 0, 0, 0, 3});
    std::vector<AdapterState> ads{a, a};
    const auto rep = subspace_overlap_report(ads);
    EXPECT_EQ(rep.cross(0, 0), 0.0);
    EXPECT_EQ(rep.matched(0, 1), 1.0);
    EXPECT_EQ(mean_offpair_cos2(a.b), 0.0);
}

TEST(Overlap, RandomPairNearInverseDimension) {
    Rng g(10);
    AdapterConfig c;
    c.d_in = 8;
    c.d_out = 1024;
    c.r = 16;
    c.k = 4;
    c.variant = Variant::flylora;
    auto a = init_adapter(c, 1, 2);
    auto b = init_adapter(c, 1, 2);
    a.b = Matrix::gaussian(1024, 16, 1.0, g);
    b.b = Matrix::gaussian(1024, 16, 1.0, g);
    std::vector<AdapterState> ads{a, b};
    const auto rep = subspace_overlap_report(ads);
    // Per-pair cos^2 has sd ~ sqrt(2)/d; bands are 4 sd of the averaged pairs.
    EXPECT_NEAR(rep.cross(0, 1), 1.0 / 1024.0, 4.0 * std::sqrt(2.0 / 240.0) / 1024.0);
    EXPECT_NEAR(rep.matched(0, 1), 1.0 / 1024.0, 4.0 * std::sqrt(2.0 / 16.0) / 1024.0);
}
