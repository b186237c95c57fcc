#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuromod/error.hpp"
#include "neuromod/gate.hpp"
#include "neuromod/numerics.hpp"
#include "neuromod/projection.hpp"

namespace neuromod {

/// Adapter variants. `neurolora` is the full method; the others are the
/// ablations: magnitude-only routing (`flylora`), a learned input-independent
/// modulation vector (`static_gate`), and a dense trainable down-projection
/// without modulation (`trainable_a`).
enum class Variant { neurolora, flylora, static_gate, trainable_a };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::neurolora: return "neurolora";
    case Variant::flylora: return "flylora";
    case Variant::static_gate: return "static_gate";
    case Variant::trainable_a: return "trainable_a";
    }
    return "unknown";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "neurolora") return Variant::neurolora;
    if (s == "flylora") return Variant::flylora;
    if (s == "static_gate") return Variant::static_gate;
    if (s == "trainable_a") return Variant::trainable_a;
    throw ParameterError("unknown adapter variant '" + std::string(s) +
                         "' (expected neurolora, flylora, static_gate or trainable_a)");
}

struct AdapterConfig {
    std::size_t d_in = 64;
    std::size_t d_out = 64;
    std::size_t r = 16;
    std::size_t k = 4;
    double alpha = 16.0;
    double rho = 0.25;
    Variant variant = Variant::neurolora;
    std::size_t d_h = 16;

    double scale() const { return alpha / static_cast<double>(r); }

    void validate() const {
        if (d_in == 0 || d_out == 0 || r == 0) throw ParameterError("adapter dimensions must be positive");
        if (k < 1 || k > r) {
            throw ParameterError("active rank k must satisfy 1 <= k <= r (k=" + std::to_string(k) +
                                 ", r=" + std::to_string(r) + ")");
        }
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
        if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("rho must lie in (0, 1]");
        if (variant == Variant::neurolora && d_h == 0) throw ParameterError("gate bottleneck d_h must be positive");
    }

    friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

/// Frozen base map W0 plus the low-rank expert update.
struct AdapterState {
    AdapterConfig config;
    SparseTernaryProjection projection;
    std::optional<Matrix> dense_a; // trainable_a only
    Matrix b;                      // d_out x r
    Matrix b_init;                 // B at construction; merging works on B - B_init
    std::optional<GateParams> gate; // neurolora only
    Vector static_m;               // static_gate only
    std::uint64_t base_seed = 0;
    Matrix w0; // d_out x d_in, frozen

    void validate() const {
        config.validate();
        if (projection.rows() != config.r || projection.cols() != config.d_in) {
            throw DimensionError("projection shape does not match adapter config");
        }
        if (b.rows() != config.d_out || b.cols() != config.r || b_init.rows() != b.rows() ||
            b_init.cols() != b.cols()) {
            throw DimensionError("B has shape " + b.shape() + ", expected " +
                                 Matrix::shape_string(config.d_out, config.r));
        }
        if (w0.rows() != config.d_out || w0.cols() != config.d_in) {
            throw DimensionError("W0 has shape " + w0.shape() + ", expected " +
                                 Matrix::shape_string(config.d_out, config.d_in));
        }
        const bool wants_gate = config.variant == Variant::neurolora;
        if (wants_gate != gate.has_value()) throw ParameterError("gate parameters inconsistent with variant");
        if (gate) {
            gate->validate();
            if (gate->d_in() != config.d_in || gate->r() != config.r || gate->d_h() != config.d_h) {
                throw DimensionError("gate shapes do not match adapter config");
            }
        }
        const bool wants_static = config.variant == Variant::static_gate;
        if (wants_static != !static_m.empty() || (wants_static && static_m.size() != config.r)) {
            throw ParameterError("static modulation vector inconsistent with variant");
        }
        const bool wants_dense = config.variant == Variant::trainable_a;
        if (wants_dense != dense_a.has_value()) throw ParameterError("dense A inconsistent with variant");
        if (dense_a && (dense_a->rows() != config.r || dense_a->cols() != config.d_in)) {
            throw DimensionError("dense A has wrong shape");
        }
    }
};

/// Builds an adapter from a run seed. The projection seed and the weight-init
/// stream are both derived from `seed`, so adapters created with the same seed
/// share A, B_init and the gate's initial W1. B ~ N(0, 1/d_out) entrywise.
inline AdapterState init_adapter(const AdapterConfig& cfg, std::uint64_t seed, std::uint64_t base_seed) {
    cfg.validate();
    AdapterState s{cfg,
                   SparseTernaryProjection(derive_seed(seed, Stream::projection), cfg.rho, cfg.r, cfg.d_in),
                   std::nullopt,
                   {},
                   {},
                   std::nullopt,
                   {},
                   base_seed,
                   base_weights(base_seed, cfg.d_out, cfg.d_in)};
    Rng rng(derive_seed(seed, Stream::weights));
    s.b = Matrix::gaussian(cfg.d_out, cfg.r, 1.0 / std::sqrt(static_cast<double>(cfg.d_out)), rng);
    s.b_init = s.b;
    switch (cfg.variant) {
    case Variant::neurolora: s.gate = GateParams::init(cfg.d_in, cfg.d_h, cfg.r, rng); break;
    case Variant::static_gate: s.static_m = Vector(cfg.r, 0.5); break;
    case Variant::trainable_a: s.dense_a = s.projection.to_dense(); break;
    case Variant::flylora: break;
    }
    return s;
}

/// Indices of the k largest |v|, ties to the lower index, returned ascending.
inline std::vector<std::size_t> select_topk(std::span<const double> v, std::size_t k) {
    if (k < 1 || k > v.size()) {
        throw ParameterError("top-k requires 1 <= k <= " + std::to_string(v.size()) + ", got " + std::to_string(k));
    }
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double fa = std::fabs(v[a]);
                          const double fb = std::fabs(v[b]);
                          return fa > fb || (fa == fb && a < b);
                      });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct ForwardTrace {
    Vector x;
    Vector h;     // A x
    Vector m;     // modulation (all ones when the variant has none)
    Vector h_mod; // h * m
    std::vector<std::size_t> active;
    std::optional<GateTape> gate_tape;
};

struct AdapterOutput {
    Vector y;
    ForwardTrace trace;
};

/// y = W0 x + (alpha / r) * sum_{i in TopK(|h'|)} B[:, i] h'_i.
inline AdapterOutput adapter_forward(const AdapterState& s, std::span<const double> x) {
    const auto& cfg = s.config;
    require_length(x, cfg.d_in, "adapter_forward input");

    ForwardTrace t;
    t.x.assign(x.begin(), x.end());
    t.h = s.dense_a ? matvec(*s.dense_a, x) : s.projection.project(x);
    switch (cfg.variant) {
    case Variant::neurolora: {
        auto g = gate_forward(*s.gate, x);
        t.m = std::move(g.m);
        t.gate_tape = std::move(g.tape);
        break;
    }
    case Variant::static_gate: t.m = s.static_m; break;
    case Variant::flylora:
    case Variant::trainable_a: t.m = Vector(cfg.r, 1.0); break;
    }
    t.h_mod = hadamard(t.h, t.m);
    t.active = select_topk(t.h_mod, cfg.k);

    Vector y = matvec(s.w0, x);
    const double scale = cfg.scale();
    for (std::size_t i : t.active) {
        const double coef = scale * t.h_mod[i];
        for (std::size_t o = 0; o < cfg.d_out; ++o) y[o] += s.b(o, i) * coef;
    }
    return {std::move(y), std::move(t)};
}

struct AdapterGrads {
    Matrix b;
    std::optional<GateGrads> gate;
    Vector static_m;
    std::optional<Matrix> a;
    Vector x;

    static AdapterGrads zeros_like(const AdapterState& s) {
        AdapterGrads g;
        g.b = Matrix(s.b.rows(), s.b.cols());
        if (s.gate) g.gate = GateGrads::zeros_like(*s.gate);
        if (!s.static_m.empty()) g.static_m = Vector(s.static_m.size(), 0.0);
        if (s.dense_a) g.a = Matrix(s.dense_a->rows(), s.dense_a->cols());
        g.x = Vector(s.config.d_in, 0.0);
        return g;
    }
};

/// Gradients of <grad_y, y> with the active set held fixed (straight-through on
/// selected coordinates, zero on the rest).
inline AdapterGrads adapter_backward(const AdapterState& s, const ForwardTrace& t, std::span<const double> grad_y) {
    const auto& cfg = s.config;
    require_length(grad_y, cfg.d_out, "adapter_backward grad_y");
    if (t.x.size() != cfg.d_in || t.h.size() != cfg.r || t.m.size() != cfg.r || t.h_mod.size() != cfg.r ||
        t.active.size() != cfg.k || (cfg.variant == Variant::neurolora) != t.gate_tape.has_value()) {
        throw ConsistencyError("forward trace does not match adapter state");
    }

    AdapterGrads g = AdapterGrads::zeros_like(s);
    const double scale = cfg.scale();
    Vector grad_hmod(cfg.r, 0.0);
    for (std::size_t i : t.active) {
        const double coef = scale * t.h_mod[i];
        double acc = 0.0;
        for (std::size_t o = 0; o < cfg.d_out; ++o) {
            g.b(o, i) = grad_y[o] * coef;
            acc += s.b(o, i) * grad_y[o];
        }
        grad_hmod[i] = scale * acc;
    }

    Vector grad_h = hadamard(grad_hmod, t.m);
    g.x = matvec_transposed(s.w0, grad_y);

    switch (cfg.variant) {
    case Variant::neurolora: {
        const Vector grad_m = hadamard(grad_hmod, t.h);
        g.gate = gate_backward(*s.gate, *t.gate_tape, grad_m);
        for (std::size_t j = 0; j < cfg.d_in; ++j) g.x[j] += g.gate->x[j];
        break;
    }
    case Variant::static_gate: g.static_m = hadamard(grad_hmod, t.h); break;
    case Variant::trainable_a: add_outer(*g.a, grad_h, t.x); break;
    case Variant::flylora: break;
    }

    const Vector via_a = s.dense_a ? matvec_transposed(*s.dense_a, grad_h) : s.projection.project_transposed(grad_h);
    for (std::size_t j = 0; j < cfg.d_in; ++j) g.x[j] += via_a[j];
    return g;
}

/// Fraction of tokens that activated each expert. Entries sum to k.
inline Vector expert_utilization(std::span<const std::vector<std::size_t>> active_sets, std::size_t r) {
    if (active_sets.empty()) throw EmptyInputError("expert_utilization needs at least one token");
    Vector hist(r, 0.0);
    for (const auto& set : active_sets) {
        for (std::size_t i : set) {
            if (i >= r) throw ParameterError("expert index out of range");
            hist[i] += 1.0;
        }
    }
    for (auto& v : hist) v /= static_cast<double>(active_sets.size());
    return hist;
}

inline Vector expert_utilization(std::span<const ForwardTrace> traces, std::size_t r) {
    std::vector<std::vector<std::size_t>> sets;
    sets.reserve(traces.size());
    for (const auto& t : traces) sets.push_back(t.active);
    return expert_utilization(std::span<const std::vector<std::size_t>>(sets), r);
}

// ---------------------------------------------------------------------------
// Parameter enumeration for the optimizer.
// ---------------------------------------------------------------------------

enum class ParamGroup { b, gate };

struct ParamView {
    const char* name;
    ParamGroup group;
    bool decay;
    std::span<double> value;
};

/// Trainable tensors in a fixed order: B, [A], [W1, W2, gamma, beta], [m].
/// W0 and the sparse projection never appear here.
inline std::vector<ParamView> trainable_parameters(AdapterState& s) {
    std::vector<ParamView> out;
    out.push_back({"B", ParamGroup::b, true, s.b.flat()});
    if (s.dense_a) out.push_back({"A", ParamGroup::b, true, s.dense_a->flat()});
    if (s.gate) {
        out.push_back({"W1", ParamGroup::gate, true, s.gate->w1.flat()});
        out.push_back({"W2", ParamGroup::gate, true, s.gate->w2.flat()});
        out.push_back({"gamma", ParamGroup::gate, false, s.gate->gamma});
        out.push_back({"beta", ParamGroup::gate, false, s.gate->beta});
    }
    if (!s.static_m.empty()) out.push_back({"m", ParamGroup::gate, false, s.static_m});
    return out;
}

/// Gradient tensors in the same order as trainable_parameters().
inline std::vector<std::span<double>> gradient_views(AdapterGrads& g) {
    std::vector<std::span<double>> out;
    out.push_back(g.b.flat());
    if (g.a) out.push_back(g.a->flat());
    if (g.gate) {
        out.push_back(g.gate->w1.flat());
        out.push_back(g.gate->w2.flat());
        out.push_back(g.gate->gamma);
        out.push_back(g.gate->beta);
    }
    if (!g.static_m.empty()) out.push_back(g.static_m);
    return out;
}

} // namespace neuromod
