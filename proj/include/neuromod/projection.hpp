#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neuromod/error.hpp"
#include "neuromod/numerics.hpp"

namespace neuromod {

/// One nonzero of the ternary projection.
struct TernaryEntry {
    std::uint32_t row;
    std::uint32_t col;
    std::int8_t sign; // +1 or -1

    friend bool operator==(const TernaryEntry&, const TernaryEntry&) = default;
};

/// Frozen sparse down-projection A in {0, +1, -1}^{r x d_in}.
///
/// Cells are sampled in row-major order from Rng(seed): one uniform per cell,
/// nonzero when u < rho, followed (for nonzeros only) by one more uniform whose
/// value below 0.5 gives +1 and otherwise -1. Entries are therefore stored
/// sorted by (row, col), which fixes the summation order of project().
///
/// The object is immutable; persisted form is (seed, rho, r, d_in) only.
class SparseTernaryProjection {
public:
    SparseTernaryProjection(std::uint64_t seed, double rho, std::size_t r, std::size_t d_in)
        : seed_(seed), rho_(rho), rows_(r), cols_(d_in) {
        if (!(rho > 0.0 && rho <= 1.0)) {
            throw ParameterError("projection sparsity rho must lie in (0, 1], got " + std::to_string(rho));
        }
        if (r == 0 || d_in == 0) throw ParameterError("projection dimensions must be positive");
        Rng rng(seed);
        for (std::size_t i = 0; i < r; ++i) {
            row_begin_.push_back(entries_.size());
            for (std::size_t j = 0; j < d_in; ++j) {
                if (rng.next_uniform() < rho) {
                    const std::int8_t sign = rng.next_uniform() < 0.5 ? std::int8_t{1} : std::int8_t{-1};
                    entries_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), sign});
                }
            }
        }
        row_begin_.push_back(entries_.size());
    }

    std::uint64_t seed() const { return seed_; }
    double rho() const { return rho_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const std::vector<TernaryEntry>& entries() const { return entries_; }

    /// h = A x, summing each row's entries in ascending column order.
    Vector project(std::span<const double> x) const {
        require_length(x, cols_, "project");
        Vector h(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i) {
            double acc = 0.0;
            for (std::size_t e = row_begin_[i]; e < row_begin_[i + 1]; ++e) {
                const auto& entry = entries_[e];
                acc += entry.sign > 0 ? x[entry.col] : -x[entry.col];
            }
            h[i] = acc;
        }
        return h;
    }

    /// A^T g.
    Vector project_transposed(std::span<const double> g) const {
        require_length(g, rows_, "project_transposed");
        Vector out(cols_, 0.0);
        for (const auto& e : entries_) out[e.col] += e.sign > 0 ? g[e.row] : -g[e.row];
        return out;
    }

    Matrix to_dense() const {
        Matrix m(rows_, cols_);
        for (const auto& e : entries_) m(e.row, e.col) = static_cast<double>(e.sign);
        return m;
    }

    /// FNV-1a over (row, col, sign) of every entry, in storage order.
    std::uint64_t content_hash() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        auto mix = [&h](std::uint64_t v, int bytes) {
            for (int b = 0; b < bytes; ++b) {
                h ^= (v >> (8 * b)) & 0xFFU;
                h *= 0x100000001B3ULL;
            }
        };
        for (const auto& e : entries_) {
            mix(e.row, 4);
            mix(e.col, 4);
            mix(static_cast<std::uint8_t>(e.sign), 1);
        }
        return h;
    }

    /// Same generation parameters (and therefore the same entries).
    bool same_generation(const SparseTernaryProjection& other) const {
        return seed_ == other.seed_ && rho_ == other.rho_ && rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::uint64_t seed_;
    double rho_;
    std::size_t rows_;
    std::size_t cols_;
    std::vector<TernaryEntry> entries_;
    std::vector<std::size_t> row_begin_;
};

inline SparseTernaryProjection generate_projection(std::uint64_t seed, double rho, std::size_t r, std::size_t d_in) {
    return SparseTernaryProjection(seed, rho, r, d_in);
}

inline Vector project(const SparseTernaryProjection& a, std::span<const double> x) { return a.project(x); }

} // namespace neuromod
