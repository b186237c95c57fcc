#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuromod/adapter.hpp"
#include "neuromod/error.hpp"
#include "neuromod/numerics.hpp"

namespace neuromod {

enum class TaskLossKind { mean_squared_error, softmax_cross_entropy };

inline std::string to_string(TaskLossKind k) {
    return k == TaskLossKind::mean_squared_error ? "mse" : "cross_entropy";
}

inline TaskLossKind parse_task_loss(std::string_view s) {
    if (s == "mse") return TaskLossKind::mean_squared_error;
    if (s == "cross_entropy") return TaskLossKind::softmax_cross_entropy;
    throw ParameterError("unknown task loss '" + std::string(s) + "' (expected mse or cross_entropy)");
}

struct LossConfig {
    double lambda = 0.1;
    TaskLossKind task_loss = TaskLossKind::mean_squared_error;

    void validate() const {
        if (!std::isfinite(lambda) || lambda < 0.0) {
            throw ParameterError("orthogonality weight lambda must be finite and >= 0");
        }
    }
};

struct LossValue {
    double value;
    Vector grad; // w.r.t. the prediction
};

struct MatrixLoss {
    double value;
    Matrix grad;
};

inline LossValue mse_loss(std::span<const double> pred, std::span<const double> target) {
    require_length(target, pred.size(), "mse target");
    if (pred.empty()) throw EmptyInputError("mse of empty vectors");
    const double n = static_cast<double>(pred.size());
    LossValue out{0.0, Vector(pred.size())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d / n;
    }
    out.value /= n;
    return out;
}

/// Softmax cross-entropy against a class index.
inline LossValue cross_entropy_loss(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        throw ParameterError("class index " + std::to_string(label) + " out of range for " +
                             std::to_string(logits.size()) + " classes");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double log_z = mx + std::log(z);
    LossValue out{log_z - logits[label], Vector(logits.size())};
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - log_z);
    out.grad[label] -= 1.0;
    return out;
}

/// Regression target (MSE) or class label (cross-entropy).
struct Target {
    Vector values;
    std::size_t label = 0;
};

inline LossValue task_loss(std::span<const double> pred, const Target& target, TaskLossKind kind) {
    return kind == TaskLossKind::mean_squared_error ? mse_loss(pred, target.values)
                                                    : cross_entropy_loss(pred, target.label);
}

inline double total_loss(double task, double orth, double lambda) { return task + lambda * orth; }

/// Mean over (active i, inactive j) of cos^2(B[:, i], B[:, j]) and its exact
/// gradient with respect to every entry of B. Zero when nothing is inactive.
inline MatrixLoss orthogonality_loss(const Matrix& b, std::span<const std::size_t> active) {
    const std::size_t r = b.cols();
    const std::size_t d = b.rows();
    std::vector<char> is_active(r, 0);
    for (std::size_t i : active) {
        if (i >= r) throw ParameterError("active index " + std::to_string(i) + " out of range");
        if (is_active[i]) throw ParameterError("duplicate active index " + std::to_string(i));
        is_active[i] = 1;
    }
    std::vector<std::size_t> inactive;
    for (std::size_t j = 0; j < r; ++j) {
        if (!is_active[j]) inactive.push_back(j);
    }

    MatrixLoss out{0.0, Matrix(d, r)};
    if (active.empty() || inactive.empty()) return out;

    Vector norms(r, 0.0);
    auto column_norm = [&](std::size_t c) {
        double acc = 0.0;
        for (std::size_t o = 0; o < d; ++o) acc += b(o, c) * b(o, c);
        if (acc == 0.0) throw SingularityError("column " + std::to_string(c) + " of B has zero norm");
        return std::sqrt(acc);
    };
    for (std::size_t i : active) norms[i] = column_norm(i);
    for (std::size_t j : inactive) norms[j] = column_norm(j);

    const double pairs = static_cast<double>(active.size() * inactive.size());
    for (std::size_t i : active) {
        for (std::size_t j : inactive) {
            double ip = 0.0;
            for (std::size_t o = 0; o < d; ++o) ip += b(o, i) * b(o, j);
            const double ni = norms[i];
            const double nj = norms[j];
            const double c = ip / (ni * nj);
            out.value += c * c;
            // d(c^2)/db_i = 2c (b_j / (ni nj) - c b_i / ni^2), symmetric for b_j.
            const double w = 2.0 * c / pairs;
            for (std::size_t o = 0; o < d; ++o) {
                out.grad(o, i) += w * (b(o, j) / (ni * nj) - c * b(o, i) / (ni * ni));
                out.grad(o, j) += w * (b(o, i) / (ni * nj) - c * b(o, j) / (nj * nj));
            }
        }
    }
    out.value /= pairs;
    return out;
}

/// Mean of the per-token orthogonality loss over a batch of traces.
inline MatrixLoss batch_orthogonality_loss(const Matrix& b, std::span<const ForwardTrace> traces) {
    if (traces.empty()) throw EmptyInputError("batch orthogonality loss needs at least one trace");
    MatrixLoss out{0.0, Matrix(b.rows(), b.cols())};
    const double n = static_cast<double>(traces.size());
    for (const auto& t : traces) {
        auto l = orthogonality_loss(b, t.active);
        out.value += l.value;
        auto g = out.grad.flat();
        auto lg = l.grad.flat();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += lg[i];
    }
    out.value /= n;
    for (auto& v : out.grad.flat()) v /= n;
    return out;
}

} // namespace neuromod
