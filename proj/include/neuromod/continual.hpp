#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuromod/adapter.hpp"
#include "neuromod/error.hpp"
#include "neuromod/optim.hpp"
#include "neuromod/tasks.hpp"

namespace neuromod {

/// R[j][i]: eval score on task i after finishing training on task j. Only
/// j >= i is populated by a sequential run.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(std::size_t tasks) : t_(tasks), cells_(tasks * tasks) {}

    std::size_t tasks() const { return t_; }

    void set(std::size_t after, std::size_t task, double value) { cells_.at(after * t_ + task) = value; }
    std::optional<double> get(std::size_t after, std::size_t task) const { return cells_.at(after * t_ + task); }

private:
    std::size_t t_;
    std::vector<std::optional<double>> cells_;
};

/// BWT = 1/(T-1) * sum_{i < T-1} (R[T-1][i] - R[i][i]), zero-indexed.
/// Negative values mean forgetting.
inline double backward_transfer(const AccuracyMatrix& m) {
    const std::size_t t = m.tasks();
    if (t < 2) throw ParameterError("backward transfer needs at least two tasks");
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < t; ++i) {
        const auto last = m.get(t - 1, i);
        const auto diag = m.get(i, i);
        if (!last || !diag) {
            throw IncompleteMatrixError("accuracy matrix is missing R[" + std::to_string(!last ? t - 1 : i) + "][" +
                                        std::to_string(i) + "]");
        }
        acc += *last - *diag;
    }
    return acc / static_cast<double>(t - 1);
}

struct StageMetrics {
    std::size_t stage = 0;
    std::string task;
    std::vector<EpochMetrics> epochs;
};

struct ContinualResult {
    AccuracyMatrix accuracy;
    std::optional<double> bwt; // absent for a single task
    std::vector<StageMetrics> stages;
};

/// Trains on each task in order with a fresh optimizer and schedule per task,
/// no replay and no task identity. After stage j every task i <= j is scored
/// on its eval split.
inline ContinualResult run_sequence(AdapterState& s, std::span<const TaskDataset> tasks, const LossConfig& loss,
                                    const OptimizerConfig& opt, Rng& rng) {
    if (tasks.empty()) throw EmptyInputError("continual run needs at least one task");
    ContinualResult res{AccuracyMatrix(tasks.size()), std::nullopt, {}};
    for (std::size_t j = 0; j < tasks.size(); ++j) {
        StageMetrics stage{j, tasks[j].name, train_epochs(s, tasks[j], loss, opt, opt.epochs, rng)};
        for (std::size_t i = 0; i <= j; ++i) res.accuracy.set(j, i, evaluate(s, tasks[i]).score);
        res.stages.push_back(std::move(stage));
    }
    if (tasks.size() >= 2) res.bwt = backward_transfer(res.accuracy);
    return res;
}

} // namespace neuromod
