#pragma once

#include <cmath>
#include <span>

#include "neuromod/error.hpp"
#include "neuromod/numerics.hpp"

namespace neuromod {

/// Parameters of the neuromodulation gate
///     m_x = sigmoid(W2 * gelu(W1 x)) * gamma + beta.
struct GateParams {
    Matrix w1;    // d_h x d_in
    Matrix w2;    // r x d_h
    Vector gamma; // r
    Vector beta;  // r

    std::size_t d_in() const { return w1.cols(); }
    std::size_t d_h() const { return w1.rows(); }
    std::size_t r() const { return w2.rows(); }

    /// W1 ~ N(0, 1/d_in), W2 = 0, gamma = 1, beta = 0. With W2 zero the gate
    /// emits the constant 0.5 for every input.
    static GateParams init(std::size_t d_in, std::size_t d_h, std::size_t r, Rng& rng) {
        if (d_in == 0 || d_h == 0 || r == 0) throw ParameterError("gate dimensions must be positive");
        GateParams p;
        p.w1 = Matrix::gaussian(d_h, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
        p.w2 = Matrix(r, d_h, 0.0);
        p.gamma = Vector(r, 1.0);
        p.beta = Vector(r, 0.0);
        return p;
    }

    void validate() const {
        if (w2.cols() != w1.rows() || gamma.size() != w2.rows() || beta.size() != w2.rows()) {
            throw DimensionError("gate parameter shapes inconsistent: W1 " + w1.shape() + ", W2 " + w2.shape() +
                                 ", gamma " + std::to_string(gamma.size()) + ", beta " +
                                 std::to_string(beta.size()));
        }
    }

    friend bool operator==(const GateParams&, const GateParams&) = default;
};

/// Forward intermediates for one token.
struct GateTape {
    Vector x;       // input
    Vector pre_act; // W1 x
    Vector hidden;  // gelu(W1 x)
    Vector logits;  // W2 hidden
    Vector sig;     // sigmoid(logits)
    Vector m;       // sig * gamma + beta
};

struct GateGrads {
    Matrix w1;
    Matrix w2;
    Vector gamma;
    Vector beta;
    Vector x;

    static GateGrads zeros_like(const GateParams& p) {
        return {Matrix(p.w1.rows(), p.w1.cols()), Matrix(p.w2.rows(), p.w2.cols()), Vector(p.r(), 0.0),
                Vector(p.r(), 0.0), Vector(p.d_in(), 0.0)};
    }
};

struct GateOutput {
    Vector m;
    GateTape tape;
};

inline GateOutput gate_forward(const GateParams& p, std::span<const double> x) {
    p.validate();
    require_length(x, p.d_in(), "gate_forward input");
    GateTape t;
    t.x.assign(x.begin(), x.end());
    t.pre_act = matvec(p.w1, x);
    t.hidden.resize(t.pre_act.size());
    for (std::size_t i = 0; i < t.pre_act.size(); ++i) t.hidden[i] = gelu(t.pre_act[i]);
    t.logits = matvec(p.w2, t.hidden);
    t.sig.resize(t.logits.size());
    t.m.resize(t.logits.size());
    for (std::size_t i = 0; i < t.logits.size(); ++i) {
        t.sig[i] = sigmoid(t.logits[i]);
        t.m[i] = t.sig[i] * p.gamma[i] + p.beta[i];
    }
    Vector m = t.m;
    return {std::move(m), std::move(t)};
}

/// Contracts d m_x / d(params, x) with grad_m.
inline GateGrads gate_backward(const GateParams& p, const GateTape& tape, std::span<const double> grad_m) {
    p.validate();
    if (tape.x.size() != p.d_in() || tape.pre_act.size() != p.d_h() || tape.hidden.size() != p.d_h() ||
        tape.sig.size() != p.r() || tape.m.size() != p.r()) {
        throw ConsistencyError("gate tape does not match gate parameter shapes");
    }
    require_length(grad_m, p.r(), "gate_backward grad_m");

    GateGrads g = GateGrads::zeros_like(p);
    Vector grad_logits(p.r());
    for (std::size_t i = 0; i < p.r(); ++i) {
        g.beta[i] = grad_m[i];
        g.gamma[i] = grad_m[i] * tape.sig[i];
        grad_logits[i] = grad_m[i] * p.gamma[i] * sigmoid_grad(tape.sig[i]);
    }
    add_outer(g.w2, grad_logits, tape.hidden);
    Vector grad_pre = matvec_transposed(p.w2, grad_logits);
    for (std::size_t j = 0; j < grad_pre.size(); ++j) grad_pre[j] *= gelu_grad(tape.pre_act[j]);
    add_outer(g.w1, grad_pre, tape.x);
    g.x = matvec_transposed(p.w1, grad_pre);
    return g;
}

} // namespace neuromod
