#include <gtest/gtest.h>

#include "neuromod/continual.hpp"

using namespace neuromod;

namespace {

AccuracyMatrix full(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t i = 0; i <= j; ++i) m.set(j, i, rows[j][i]);
    }
    return m;
}

} // namespace

TEST(Bwt, HandExample) {
    AccuracyMatrix m(3);
    m.set(0, 0, 60);
    m.set(1, 1, 72);
    m.set(1, 0, 55);
    m.set(2, 0, 50);
    m.set(2, 1, 70);
    m.set(2, 2, 80);
    EXPECT_EQ(backward_transfer(m), -6.0);
}

TEST(Bwt, NoForgettingIsExactlyZero) {
    const auto m = full({{0.7}, {0.7, 0.9}, {0.7, 0.9, 0.4}});
    EXPECT_EQ(backward_transfer(m), 0.0);
}

TEST(Bwt, ClosedForm) {
    Rng g(1);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 2 + g.next_below(6);
        std::vector<std::vector<double>> rows(n);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i <= j; ++i) rows[j].push_back(g.next_uniform());
        }
        double want = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) want += rows[n - 1][i] - rows[i][i];
        want /= static_cast<double>(n - 1);
        EXPECT_NEAR(backward_transfer(full(rows)), want, 1e-12);
    }
}

TEST(Bwt, ColumnShiftLeavesItUnchanged) {
    auto rows = std::vector<std::vector<double>>{{0.5}, {0.25, 0.75}, {0.125, 0.5, 0.875}};
    const double before = backward_transfer(full(rows));
    for (std::size_t j = 0; j < 3; ++j) rows[j][0] += 0.25;
    EXPECT_EQ(backward_transfer(full(rows)), before);
}

TEST(Bwt, Errors) {
    EXPECT_THROW(backward_transfer(AccuracyMatrix(1)), ParameterError);
    AccuracyMatrix m(3);
    m.set(0, 0, 1.0);
    m.set(2, 0, 1.0);
    EXPECT_THROW(backward_transfer(m), IncompleteMatrixError);
}

namespace {

TaskSpec small_spec() {
    TaskSpec s;
    s.d_in = 16;
    s.d_out = 8;
    s.clusters = 2;
    s.n_train_per_cluster = 16;
    s.n_eval_per_cluster = 4;
    return s;
}

AdapterConfig small_adapter() {
    AdapterConfig c;
    c.d_in = 16;
    c.d_out = 8;
    c.r = 8;
    c.k = 2;
    c.d_h = 4;
    return c;
}

OptimizerConfig small_opt() {
    OptimizerConfig o;
    o.batch_size = 4;
    o.grad_accum = 2;
    o.epochs = 2;
    return o;
}

} // namespace

TEST(RunSequence, PopulatesLowerTriangleAndIsDeterministic) {
    const auto fam = gen_task_family(small_spec(), 3);
    auto run = [&] {
        auto s = init_adapter(small_adapter(), 7, fam[0].base_seed);
        Rng rng(8);
        return std::make_pair(run_sequence(s, fam, LossConfig{}, small_opt(), rng), s);
    };
    auto [r1, s1] = run();
    auto [r2, s2] = run();
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(r1.accuracy.get(j, i).has_value(), i <= j);
            EXPECT_EQ(r1.accuracy.get(j, i), r2.accuracy.get(j, i));
        }
    }
    ASSERT_TRUE(r1.bwt.has_value());
    EXPECT_EQ(*r1.bwt, backward_transfer(r1.accuracy));
    EXPECT_EQ(r1.stages.size(), 3u);
    EXPECT_EQ(r1.stages[2].epochs.size(), 2u);
    EXPECT_EQ(s1.b, s2.b);
}

TEST(RunSequence, NeverTouchesProjection) {
    const auto fam = gen_task_family(small_spec(), 2);
    auto s = init_adapter(small_adapter(), 7, fam[0].base_seed);
    const auto before = s.projection.entries();
    const auto hash = s.projection.content_hash();
    Rng rng(1);
    run_sequence(s, fam, LossConfig{}, small_opt(), rng);
    EXPECT_EQ(s.projection.entries(), before);
    EXPECT_EQ(s.projection.content_hash(), hash);
}

TEST(RunSequence, SingleTaskHasNoBwt) {
    const auto fam = gen_task_family(small_spec(), 1);
    auto s = init_adapter(small_adapter(), 7, fam[0].base_seed);
    Rng rng(1);
    const auto r = run_sequence(s, fam, LossConfig{}, small_opt(), rng);
    EXPECT_FALSE(r.bwt.has_value());
    EXPECT_EQ(r.accuracy.tasks(), 1u);
}

TEST(RunSequence, DuplicatedTaskForgetsLittle) {
    const auto fam = gen_task_family(small_spec(), 1);
    std::vector<TaskDataset> same{fam[0], fam[0], fam[0]};
    auto s = init_adapter(small_adapter(), 7, fam[0].base_seed);
    Rng rng(2);
    const auto r = run_sequence(s, same, LossConfig{}, small_opt(), rng);
    ASSERT_TRUE(r.bwt.has_value());
    // Repeating a task can only keep improving it.
    EXPECT_GE(*r.bwt, -0.01);
}

TEST(RunSequence, EmptyTaskList) {
    auto s = init_adapter(small_adapter(), 7, 1);
    Rng rng(1);
    EXPECT_THROW(run_sequence(s, std::span<const TaskDataset>{}, LossConfig{}, small_opt(), rng), EmptyInputError);
}
