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

enum class MergeMethod { task_arithmetic, ties };

inline std::string to_string(MergeMethod m) { return m == MergeMethod::task_arithmetic ? "task_arithmetic" : "ties"; }

inline MergeMethod parse_merge_method(std::string_view s) {
    if (s == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (s == "ties") return MergeMethod::ties;
    throw ParameterError("unknown merge method '" + std::string(s) + "' (expected task_arithmetic or ties)");
}

struct MergeRecipe {
    MergeMethod method = MergeMethod::task_arithmetic;
    double scaling = 1.0;
    double trim_fraction = 1.0; // TIES: fraction of each task delta kept

    void validate() const {
        if (!(scaling > 0.0) || !std::isfinite(scaling)) throw ParameterError("merge scaling must be positive");
        if (!(trim_fraction > 0.0 && trim_fraction <= 1.0)) {
            throw ParameterError("trim_fraction must lie in (0, 1]");
        }
    }
};

namespace detail {

/// Sum of values after sorting them, so the result does not depend on the
/// order the inputs arrived in.
inline double order_free_sum(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

inline void require_compatible(std::span<const AdapterState> adapters) {
    if (adapters.empty()) throw EmptyInputError("nothing to merge");
    const auto& ref = adapters.front();
    for (const auto& a : adapters) {
        a.validate();
        if (a.config.variant == Variant::trainable_a) {
            throw IncompatibleError("trainable_a adapters have no shared frozen projection and cannot be merged");
        }
        if (!(a.config == ref.config)) throw IncompatibleError("adapter configurations differ");
        if (!a.projection.same_generation(ref.projection)) {
            throw IncompatibleError("adapters use different frozen projections (A seeds " +
                                    std::to_string(ref.projection.seed()) + " vs " +
                                    std::to_string(a.projection.seed()) + ")");
        }
        if (a.base_seed != ref.base_seed || !(a.w0 == ref.w0)) {
            throw IncompatibleError("adapters adapt different base weights W0");
        }
    }
}

/// Element-wise order-free mean of equally shaped tensors.
inline void average_into(std::span<double> out, const std::vector<std::span<const double>>& inputs) {
    std::vector<double> buf(inputs.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t t = 0; t < inputs.size(); ++t) buf[t] = inputs[t][i];
        out[i] = order_free_sum(buf) / static_cast<double>(inputs.size());
    }
}

/// Shared skeleton: averaged B_init, averaged gate / static modulation.
inline AdapterState merged_skeleton(std::span<const AdapterState> adapters) {
    AdapterState out = adapters.front();
    std::vector<std::span<const double>> inits;
    for (const auto& a : adapters) inits.push_back(a.b_init.flat());
    average_into(out.b_init.flat(), inits);

    if (out.gate) {
        auto avg = [&](auto member, std::span<double> dst) {
            std::vector<std::span<const double>> src;
            for (const auto& a : adapters) src.push_back(member(*a.gate));
            average_into(dst, src);
        };
        avg([](const GateParams& g) { return g.w1.flat(); }, out.gate->w1.flat());
        avg([](const GateParams& g) { return g.w2.flat(); }, out.gate->w2.flat());
        avg([](const GateParams& g) { return std::span<const double>(g.gamma); }, out.gate->gamma);
        avg([](const GateParams& g) { return std::span<const double>(g.beta); }, out.gate->beta);
    }
    if (!out.static_m.empty()) {
        std::vector<std::span<const double>> src;
        for (const auto& a : adapters) src.push_back(a.static_m);
        average_into(out.static_m, src);
    }
    return out;
}

} // namespace detail

/// Task delta B - B_init.
inline Matrix task_delta(const AdapterState& a) {
    Matrix d = a.b;
    auto df = d.flat();
    auto bi = a.b_init.flat();
    for (std::size_t i = 0; i < df.size(); ++i) df[i] -= bi[i];
    return d;
}

/// Merged B = mean(B_init) + scaling * sum_t (B_t - B_init_t); gate tensors are
/// averaged. Requires a shared frozen projection and base map.
inline AdapterState merge_task_arithmetic(std::span<const AdapterState> adapters, double scaling) {
    detail::require_compatible(adapters);
    MergeRecipe{MergeMethod::task_arithmetic, scaling, 1.0}.validate();
    AdapterState out = detail::merged_skeleton(adapters);

    std::vector<Matrix> deltas;
    for (const auto& a : adapters) deltas.push_back(task_delta(a));
    auto ob = out.b.flat();
    auto oi = out.b_init.flat();
    std::vector<double> buf(deltas.size());
    for (std::size_t i = 0; i < ob.size(); ++i) {
        for (std::size_t t = 0; t < deltas.size(); ++t) buf[t] = deltas[t].flat()[i];
        ob[i] = oi[i] + scaling * detail::order_free_sum(buf);
    }
    return out;
}

/// TIES merge of task deltas:
///   1. trim: keep the ceil(trim_fraction * n) largest-|value| entries of each
///      delta (ties to the lower flat index), zero the rest;
///   2. elect: per coordinate, the sign of the sum of trimmed values (an exact
///      zero sum elects +);
///   3. disjoint mean: average the nonzero trimmed values whose sign matches.
/// The merged B is mean(B_init) + scaling * merged delta.
inline Matrix ties_merge_deltas(std::span<const Matrix> deltas, double trim_fraction) {
    if (deltas.empty()) throw EmptyInputError("nothing to merge");
    const std::size_t n = deltas.front().size();
    const std::size_t keep =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(n))), 1, n);

    std::vector<std::vector<double>> trimmed;
    for (const auto& d : deltas) {
        if (d.rows() != deltas.front().rows() || d.cols() != deltas.front().cols()) {
            throw DimensionError("task deltas have different shapes");
        }
        const auto f = d.flat();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return std::fabs(f[a]) > std::fabs(f[b]); });
        std::vector<double> t(n, 0.0);
        for (std::size_t i = 0; i < keep; ++i) t[idx[i]] = f[idx[i]];
        trimmed.push_back(std::move(t));
    }

    Matrix merged(deltas.front().rows(), deltas.front().cols());
    auto mf = merged.flat();
    std::vector<double> buf;
    for (std::size_t i = 0; i < n; ++i) {
        buf.clear();
        for (const auto& t : trimmed) buf.push_back(t[i]);
        const double elected = detail::order_free_sum(buf) >= 0.0 ? 1.0 : -1.0;
        std::vector<double> agree;
        for (const auto& t : trimmed) {
            if (t[i] != 0.0 && (t[i] > 0.0) == (elected > 0.0)) agree.push_back(t[i]);
        }
        mf[i] = agree.empty() ? 0.0 : detail::order_free_sum(agree) / static_cast<double>(agree.size());
    }
    return merged;
}

inline AdapterState merge_ties(std::span<const AdapterState> adapters, double trim_fraction, double scaling = 1.0) {
    detail::require_compatible(adapters);
    MergeRecipe{MergeMethod::ties, scaling, trim_fraction}.validate();
    AdapterState out = detail::merged_skeleton(adapters);
    std::vector<Matrix> deltas;
    for (const auto& a : adapters) deltas.push_back(task_delta(a));
    const Matrix merged = ties_merge_deltas(deltas, trim_fraction);
    auto ob = out.b.flat();
    auto oi = out.b_init.flat();
    auto md = merged.flat();
    for (std::size_t i = 0; i < ob.size(); ++i) ob[i] = oi[i] + scaling * md[i];
    return out;
}

inline AdapterState merge(std::span<const AdapterState> adapters, const MergeRecipe& recipe) {
    recipe.validate();
    return recipe.method == MergeMethod::task_arithmetic ? merge_task_arithmetic(adapters, recipe.scaling)
                                                         : merge_ties(adapters, recipe.trim_fraction, recipe.scaling);
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

inline double squared_cosine(std::span<const double> u, std::span<const double> v) {
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu == 0.0 || nv == 0.0) throw SingularityError("cosine of a zero vector");
    const double c = dot(u, v) / (nu * nv);
    return c * c;
}

/// Mean squared cosine between distinct expert columns of one B.
inline double mean_offpair_cos2(const Matrix& b) {
    std::vector<Vector> cols;
    for (std::size_t c = 0; c < b.cols(); ++c) cols.push_back(b.column(c));
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        for (std::size_t j = i + 1; j < cols.size(); ++j) {
            acc += squared_cosine(cols[i], cols[j]);
            ++pairs;
        }
    }
    return pairs == 0 ? 0.0 : acc / static_cast<double>(pairs);
}

struct OverlapReport {
    Matrix cross;   // (a, b): mean cos^2 over column pairs i != j of B_a, B_b
    Matrix matched; // (a, b): mean cos^2 of B_a[:, i] with B_b[:, i]
};

/// Pairwise expert-subspace overlap between adapters' B matrices.
inline OverlapReport subspace_overlap_report(std::span<const AdapterState> adapters) {
    if (adapters.empty()) throw EmptyInputError("no adapters to compare");
    const std::size_t t = adapters.size();
    for (const auto& a : adapters) {
        if (a.b.rows() != adapters.front().b.rows() || a.b.cols() != adapters.front().b.cols()) {
            throw DimensionError("adapters have differently shaped B");
        }
    }
    OverlapReport rep{Matrix(t, t), Matrix(t, t)};
    std::vector<std::vector<Vector>> cols(t);
    for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t c = 0; c < adapters[a].b.cols(); ++c) cols[a].push_back(adapters[a].b.column(c));
    }
    const std::size_t r = adapters.front().b.cols();
    for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t b = 0; b < t; ++b) {
            double cross = 0.0;
            double matched = 0.0;
            for (std::size_t i = 0; i < r; ++i) {
                matched += squared_cosine(cols[a][i], cols[b][i]);
                for (std::size_t j = 0; j < r; ++j) {
                    if (i != j) cross += squared_cosine(cols[a][i], cols[b][j]);
                }
            }
            rep.cross(a, b) = r > 1 ? cross / static_cast<double>(r * (r - 1)) : 0.0;
            rep.matched(a, b) = matched / static_cast<double>(r);
        }
    }
    return rep;
}

} // namespace neuromod
