#include <cmath>

#include <gtest/gtest.h>

#include "fd.hpp"
#include "neuromod/losses.hpp"

using namespace neuromod;

TEST(Mse, ValueAndGradient) {
    const auto l = mse_loss(Vector{1.0, 2.0, 4.0}, Vector{0.0, 2.0, 1.0});
    EXPECT_DOUBLE_EQ(l.value, (1.0 + 0.0 + 9.0) / 3.0);
    EXPECT_DOUBLE_EQ(l.grad[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(l.grad[1], 0.0);
    EXPECT_DOUBLE_EQ(l.grad[2], 2.0);
    EXPECT_THROW(mse_loss(Vector{1.0}, Vector{1.0, 2.0}), DimensionError);
}

TEST(CrossEntropy, ValueAndFiniteDifferences) {
    Vector logits{0.3, -1.2, 2.0, 0.0};
    const auto l = cross_entropy_loss(logits, 2);
    const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0) + std::exp(0.0);
    EXPECT_NEAR(l.value, std::log(z) - 2.0, 1e-14);
    fdcheck::check(logits, l.grad, [&] { return cross_entropy_loss(logits, 2).value; }, "logits");
    EXPECT_THROW(cross_entropy_loss(logits, 4), ParameterError);
}

TEST(CrossEntropy, StableForLargeLogits) {
    const auto l = cross_entropy_loss(Vector{1000.0, 0.0}, 0);
    EXPECT_TRUE(std::isfinite(l.value));
    EXPECT_NEAR(l.value, 0.0, 1e-12);
}

TEST(TotalLoss, Combines) { EXPECT_DOUBLE_EQ(total_loss(2.0, 0.5, 0.1), 2.05); }

TEST(Orthogonality, ScalarOracle) {
    // Columns (1, 0), (1, 1), (0, 2); active {0}: pairs (0,1) cos^2 = 1/2, (0,2) = 0.
    Matrix b(2, 3, {1, 1, 0, 0, 1, 2});
    const std::vector<std::size_t> act{0};
    EXPECT_NEAR(orthogonality_loss(b, act).value, 0.25, 1e-15);
    // Active {1}: (1,0) = 1/2, (1,2) = 1/2.
    const std::vector<std::size_t> act1{1};
    EXPECT_NEAR(orthogonality_loss(b, act1).value, 0.5, 1e-15);
}

TEST(Orthogonality, ExactlyZeroForOrthogonalColumns) {
    Matrix b = Matrix::identity(5);
    for (std::size_t c = 0; c < 5; ++c) b(c, c) = 0.5 + static_cast<double>(c);
    const std::vector<std::size_t> act{1, 3};
    const auto l = orthogonality_loss(b, act);
    EXPECT_EQ(l.value, 0.0);
    for (double g : l.grad.flat()) EXPECT_EQ(g, 0.0);
}

TEST(Orthogonality, OneForIdenticalColumns) {
    Rng g(4);
    Matrix b(7, 4);
    Vector col(7);
    for (auto& v : col) v = g.next_gaussian();
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t o = 0; o < 7; ++o) b(o, c) = col[o];
    }
    const std::vector<std::size_t> act{0, 2};
    EXPECT_NEAR(orthogonality_loss(b, act).value, 1.0, 1e-12);
}

TEST(Orthogonality, InvariantUnderColumnRescaling) {
    Rng g(5);
    Matrix b = Matrix::gaussian(9, 8, 1.0, g);
    const std::vector<std::size_t> act{0, 4, 6};
    const double before = orthogonality_loss(b, act).value;
    for (std::size_t c = 0; c < 8; ++c) {
        const double s = c % 2 == 0 ? 3.7 : -0.01 * static_cast<double>(c + 1);
        for (std::size_t o = 0; o < 9; ++o) b(o, c) *= s;
    }
    EXPECT_NEAR(orthogonality_loss(b, act).value, before, 1e-12);
}

TEST(Orthogonality, GradientMatchesFiniteDifferences) {
    Rng g(6);
    for (int t = 0; t < 10; ++t) {
        Matrix b = Matrix::gaussian(9, 8, 1.0, g);
        std::vector<std::size_t> act{1, 2, 5};
        const auto l = orthogonality_loss(b, act);
        fdcheck::check(b.flat(), l.grad.flat(), [&] { return orthogonality_loss(b, act).value; }, "B");
    }
}

TEST(Orthogonality, GradientReachesBothColumnSets) {
    Rng g(7);
    Matrix b = Matrix::gaussian(6, 4, 1.0, g);
    const std::vector<std::size_t> act{0};
    const auto l = orthogonality_loss(b, act);
    for (std::size_t c = 0; c < 4; ++c) {
        double n = 0.0;
        for (std::size_t o = 0; o < 6; ++o) n += std::fabs(l.grad(o, c));
        EXPECT_GT(n, 0.0) << "column " << c;
    }
}

TEST(Orthogonality, EdgeCases) {
    Matrix b = Matrix::identity(3);
    EXPECT_EQ(orthogonality_loss(b, std::vector<std::size_t>{}).value, 0.0);
    EXPECT_EQ(orthogonality_loss(b, std::vector<std::size_t>{0, 1, 2}).value, 0.0);
    EXPECT_THROW(orthogonality_loss(b, std::vector<std::size_t>{0, 0}), ParameterError);
    EXPECT_THROW(orthogonality_loss(b, std::vector<std::size_t>{3}), ParameterError);
    b(1, 1) = 0.0;
    EXPECT_THROW(orthogonality_loss(b, std::vector<std::size_t>{0}), SingularityError);
}

TEST(Orthogonality, GaussianInitExpectation) {
    // E[cos^2] of independent Gaussian columns is 1/d.
    Rng g(8);
    const std::size_t d = 256;
    const Matrix b = Matrix::gaussian(d, 16, 1.0, g);
    std::vector<std::size_t> act{0, 1, 2, 3};
    double acc = 0.0;
    for (int t = 0; t < 4; ++t) {
        for (auto& a : act) a = (a + 4) % 16;
        acc += orthogonality_loss(b, act).value;
    }
    EXPECT_NEAR(acc / 4.0, 1.0 / d, 0.35 / d);
}

TEST(Orthogonality, BatchMean) {
    Rng g(9);
    Matrix b = Matrix::gaussian(5, 4, 1.0, g);
    std::vector<ForwardTrace> traces(2);
    traces[0].active = {0};
    traces[1].active = {1, 2};
    const auto l = batch_orthogonality_loss(b, traces);
    const double want = 0.5 * (orthogonality_loss(b, traces[0].active).value +
                               orthogonality_loss(b, traces[1].active).value);
    EXPECT_NEAR(l.value, want, 1e-15);
    EXPECT_THROW(batch_orthogonality_loss(b, std::vector<ForwardTrace>{}), EmptyInputError);
}

TEST(LossConfig, Validation) {
    LossConfig c;
    c.lambda = -1.0;
    EXPECT_THROW(c.validate(), ParameterError);
    EXPECT_EQ(parse_task_loss("cross_entropy"), TaskLossKind::softmax_cross_entropy);
    EXPECT_THROW(parse_task_loss("l1"), ParameterError);
}
