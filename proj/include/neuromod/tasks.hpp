#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "neuromod/error.hpp"
#include "neuromod/losses.hpp"
#include "neuromod/numerics.hpp"

namespace neuromod {

enum class TaskKind { regression, classification };

inline std::string to_string(TaskKind k) { return k == TaskKind::regression ? "regression" : "classification"; }

inline TaskKind parse_task_kind(std::string_view s) {
    if (s == "regression") return TaskKind::regression;
    if (s == "classification") return TaskKind::classification;
    throw ParameterError("unknown task kind '" + std::string(s) + "' (expected regression or classification)");
}

/// Everything needed to regenerate a task family bit-for-bit.
struct TaskSpec {
    std::uint64_t seed = 1234;
    std::size_t clusters = 4;
    std::size_t d_in = 64;
    std::size_t d_out = 64;
    std::size_t n_train_per_cluster = 128;
    std::size_t n_eval_per_cluster = 32;
    double noise = 0.05;
    std::size_t delta_rank = 2;
    double delta_scale = 1.0;
    TaskKind kind = TaskKind::regression;

    void validate() const {
        if (clusters < 2) throw ParameterError("contextual tasks need at least 2 clusters");
        if (d_in == 0 || d_out == 0) throw ParameterError("task dimensions must be positive");
        if (n_train_per_cluster == 0) throw ParameterError("need at least one training sample per cluster");
        if (!(noise >= 0.0) || !std::isfinite(noise)) throw ParameterError("noise must be finite and >= 0");
        if (delta_rank == 0) throw ParameterError("delta_rank must be >= 1");
        if (!std::isfinite(delta_scale)) throw ParameterError("delta_scale must be finite");
        if (kind == TaskKind::classification && d_out < clusters) {
            throw ParameterError("classification needs d_out >= clusters");
        }
    }

    std::uint64_t base_seed() const { return derive_seed(seed, Stream::base); }

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Sample {
    Vector x;
    Target target;
    std::size_t cluster;
};

struct TaskDataset {
    std::string name;
    TaskSpec spec;
    std::size_t task_index = 0;
    std::uint64_t base_seed = 0;
    Matrix w0;
    std::vector<Vector> centers;  // unit cluster directions
    std::vector<Matrix> deltas;   // per-cluster target maps (regression)
    std::vector<Sample> train;
    std::vector<Sample> eval;
};

/// Modified Gram-Schmidt over Gaussian draws. Draws that collapse numerically
/// are redrawn. Vectors are produced in order, so the first n of a larger
/// request equal a request for n.
inline std::vector<Vector> random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
    if (count > dim) {
        throw ParameterError("cannot build " + std::to_string(count) + " orthonormal directions in dimension " +
                             std::to_string(dim));
    }
    std::vector<Vector> basis;
    basis.reserve(count);
    while (basis.size() < count) {
        Vector v(dim);
        for (auto& e : v) e = rng.next_gaussian();
        for (const auto& q : basis) {
            const double p = dot(v, q);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= p * q[i];
        }
        const double n = norm2(v);
        if (n < 1e-8) continue;
        for (auto& e : v) e /= n;
        basis.push_back(std::move(v));
    }
    return basis;
}

namespace detail {

inline Vector unit_gaussian(std::size_t dim, Rng& rng) {
    for (;;) {
        Vector v(dim);
        for (auto& e : v) e = rng.next_gaussian();
        const double n = norm2(v);
        if (n > 0.0) {
            for (auto& e : v) e /= n;
            return v;
        }
    }
}

/// delta_scale * P Q^T with P ~ N(0, 1/d_out) and Q = [center, random unit
/// vectors...], so the map acts strongly along its own cluster direction.
inline Matrix cluster_delta(const TaskSpec& spec, const Vector& center, Rng& rng) {
    Matrix p = Matrix::gaussian(spec.d_out, spec.delta_rank, 1.0 / std::sqrt(static_cast<double>(spec.d_out)), rng);
    std::vector<Vector> q{center};
    while (q.size() < spec.delta_rank) q.push_back(unit_gaussian(spec.d_in, rng));
    Matrix delta(spec.d_out, spec.d_in);
    for (std::size_t o = 0; o < spec.d_out; ++o) {
        for (std::size_t c = 0; c < spec.delta_rank; ++c) {
            const double po = spec.delta_scale * p(o, c);
            for (std::size_t j = 0; j < spec.d_in; ++j) delta(o, j) += po * q[c][j];
        }
    }
    return delta;
}

inline Sample draw_sample(const TaskDataset& ds, std::size_t cluster, Rng& rng) {
    const auto& spec = ds.spec;
    const double s = 0.5 + rng.next_uniform();
    Sample out{Vector(spec.d_in), {}, cluster};
    for (std::size_t j = 0; j < spec.d_in; ++j) {
        out.x[j] = s * ds.centers[cluster][j] + spec.noise * rng.next_gaussian();
    }
    if (spec.kind == TaskKind::regression) {
        out.target.values = matvec(ds.w0, out.x);
        const Vector dx = matvec(ds.deltas[cluster], out.x);
        for (std::size_t o = 0; o < spec.d_out; ++o) out.target.values[o] += dx[o];
    } else {
        out.target.label = cluster;
    }
    return out;
}

} // namespace detail

/// T tasks sharing one frozen base map, with mutually orthonormal cluster
/// directions across all tasks. Task t uses directions [tC, (t+1)C). Inputs
/// are x = s * center_c + noise * N(0, I) with s ~ U[0.5, 1.5) independent of
/// the cluster, so cluster identity lives in the direction of x and not in its
/// norm. Regression targets are y = W0 x + Delta_c x; classification targets
/// are the cluster index. Samples cycle through the clusters in order.
inline std::vector<TaskDataset> gen_task_family(const TaskSpec& spec, std::size_t tasks) {
    spec.validate();
    if (tasks < 1) throw ParameterError("task family needs at least one task");
    Rng dir_rng(derive_seed(spec.seed, Stream::data));
    const auto directions = random_orthonormal(tasks * spec.clusters, spec.d_in, dir_rng);
    const std::uint64_t base_seed = spec.base_seed();
    const Matrix w0 = base_weights(base_seed, spec.d_out, spec.d_in);

    std::vector<TaskDataset> family;
    family.reserve(tasks);
    for (std::size_t t = 0; t < tasks; ++t) {
        TaskDataset ds;
        ds.name = "contextual_" + to_string(spec.kind) + "_" + std::to_string(t);
        ds.spec = spec;
        ds.task_index = t;
        ds.base_seed = base_seed;
        ds.w0 = w0;
        ds.centers.assign(directions.begin() + static_cast<std::ptrdiff_t>(t * spec.clusters),
                          directions.begin() + static_cast<std::ptrdiff_t>((t + 1) * spec.clusters));
        Rng rng(derive_seed(spec.seed, Stream::data, t + 1));
        if (spec.kind == TaskKind::regression) {
            for (const auto& c : ds.centers) ds.deltas.push_back(detail::cluster_delta(spec, c, rng));
        }
        const std::size_t n_train = spec.n_train_per_cluster * spec.clusters;
        const std::size_t n_eval = spec.n_eval_per_cluster * spec.clusters;
        for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(detail::draw_sample(ds, i % spec.clusters, rng));
        for (std::size_t i = 0; i < n_eval; ++i) ds.eval.push_back(detail::draw_sample(ds, i % spec.clusters, rng));
        family.push_back(std::move(ds));
    }
    return family;
}

inline TaskDataset gen_contextual_regression(const TaskSpec& spec) { return gen_task_family(spec, 1).front(); }

/// Index of the center with the largest |<x, center>|.
inline std::size_t nearest_center(const TaskDataset& ds, std::span<const double> x) {
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t c = 0; c < ds.centers.size(); ++c) {
        const double s = std::fabs(dot(x, ds.centers[c]));
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

} // namespace neuromod
