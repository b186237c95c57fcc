#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "neuromod/error.hpp"

namespace neuromod {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Random numbers
//
// splitmix64 expands a 64-bit seed into xoshiro256++ state. Every consumer
// derives its own seed from the run seed with derive_seed(), so the streams for
// projection sampling, weight init, data generation and shuffling never share
// state.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Purpose tags for derived seeds. The numeric value is the additive offset
/// applied to the run seed before one splitmix64 round.
enum class Stream : std::uint64_t {
    projection = 0x50524F4AULL, // "PROJ"
    weights = 0x57454947ULL,    // "WEIG"
    data = 0x44415441ULL,       // "DATA"
    shuffle = 0x53485546ULL,    // "SHUF"
    base = 0x42415345ULL,       // "BASE": frozen base map W0
};

/// seed' = splitmix64(seed + offset(stream)), optionally further offset by an
/// index (used for per-task data streams).
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    std::uint64_t s = seed + static_cast<std::uint64_t>(stream) + 0x100000000ULL * index;
    return splitmix64(s);
}

/// xoshiro256++ generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal variate, polar Box-Muller. Each call draws uniform pairs
    /// until one falls strictly inside the unit disc and returns the first of
    /// the two resulting variates; the second is discarded so no hidden state
    /// exists beyond the xoshiro words.
    double next_gaussian() {
        for (;;) {
            const double u = 2.0 * next_uniform() - 1.0;
            const double v = 2.0 * next_uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    /// Uniform integer in [0, n). floor(u * n); bias is below 2^-53 * n.
    std::size_t next_below(std::size_t n) {
        return static_cast<std::size_t>(next_uniform() * static_cast<double>(n));
    }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4]{};
};

/// Fisher-Yates shuffle of 0..n-1, walking from the back.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Dense matrices
// ---------------------------------------------------------------------------

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                                 shape_string(rows_, cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
        Matrix m(rows, cols);
        for (auto& v : m.data_) v = stddev * rng.next_gaussian();
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector column(std::size_t c) const {
        Vector out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    std::string shape() const { return shape_string(rows_, cols_); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

    static std::string shape_string(std::size_t r, std::size_t c) {
        return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Frozen base map W0 with N(0, 1/cols) entries drawn from Rng(seed).
inline Matrix base_weights(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    Rng rng(seed);
    return Matrix::gaussian(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
}

inline void require_length(std::span<const double> v, std::size_t n, const char* what) {
    if (v.size() != n) {
        throw DimensionError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                             std::to_string(v.size()));
    }
}

/// Row-major triple loop, i-k-j order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

/// a * v, accumulating each row left to right.
inline Vector matvec(const Matrix& a, std::span<const double> v) {
    if (a.cols() != v.size()) {
        throw DimensionError("matvec: cannot multiply " + a.shape() + " by vector of length " +
                             std::to_string(v.size()));
    }
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) acc += r[j] * v[j];
        out[i] = acc;
    }
    return out;
}

/// a^T * v without materializing the transpose.
inline Vector matvec_transposed(const Matrix& a, std::span<const double> v) {
    if (a.rows() != v.size()) {
        throw DimensionError("matvec_transposed: cannot multiply transpose of " + a.shape() +
                             " by vector of length " + std::to_string(v.size()));
    }
    Vector out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += r[j] * v[i];
    }
    return out;
}

inline Vector hadamard(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw DimensionError("hadamard: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()) +
                             " differ");
    }
    Vector out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] * v[i];
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("add: shapes " + a.shape() + " and " + b.shape() + " differ");
    }
    Matrix out = a;
    auto o = out.flat();
    auto bf = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bf[i];
    return out;
}

/// out += u v^T
inline void add_outer(Matrix& out, std::span<const double> u, std::span<const double> v) {
    if (out.rows() != u.size() || out.cols() != v.size()) {
        throw DimensionError("add_outer: " + out.shape() + " vs outer product " +
                             Matrix::shape_string(u.size(), v.size()));
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (u[i] == 0.0) continue;
        auto r = out.row(i);
        for (std::size_t j = 0; j < v.size(); ++j) r[j] += u[i] * v[j];
    }
}

inline double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimensionError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
    return acc;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double kGeluK = 0.044715;
} // namespace detail

/// tanh-approximation GELU.
inline double gelu(double x) {
    using namespace detail;
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
}

/// Exact derivative of the tanh-approximation GELU.
inline double gelu_grad(double x) {
    using namespace detail;
    const double t = std::tanh(kGeluC * (x + kGeluK * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Derivative expressed through the forward output y = sigmoid(x).
inline double sigmoid_grad(double y) { return y * (1.0 - y); }

} // namespace neuromod
