#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

// R = v - x elementwise (the cached quantity).
inline Tensor compute_residual(const Tensor& v, const Tensor& x) {
    require_same_shape(v, x, "compute_residual");
    return sub(v, x);
}

// Velocity approximation from a cached residual: v~ = x_next + R_cached.
inline Tensor approximate_with_cache(const Tensor& x_next, const Tensor& cached_r) {
    require_same_shape(x_next, cached_r, "approximate_with_cache");
    return add(x_next, cached_r);
}

// ||x_t - x_prev||_1 / ||x_prev||_1. A zero denominator yields +inf, which
// callers treat as "must compute".
inline double relative_l1(const Tensor& x_t, const Tensor& x_prev) {
    require_same_shape(x_t, x_prev, "relative_l1");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x_t.v.size(); ++i) {
        num += std::abs(x_t.v[i] - x_prev.v[i]);
        den += std::abs(x_prev.v[i]);
    }
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

// Per-token residual store with staleness bookkeeping. Every token must be
// computed once (warm-up guarantees it) before any reuse.
struct ResidualCache {
    Tensor r;
    std::vector<std::int64_t> last_computed_t;  // noise-clock t of last fill
    std::vector<std::uint8_t> valid;

    ResidualCache() = default;
    explicit ResidualCache(const ChunkShape& s)
        : r(s),
          last_computed_t(static_cast<std::size_t>(s.tokens()), -1),
          valid(static_cast<std::size_t>(s.tokens()), 0) {}

    bool all_valid() const {
        for (auto b : valid) {
            if (!b) return false;
        }
        return true;
    }

    // Store residual rows for every token from a full computation.
    void store_full(const Tensor& v, const Tensor& x, std::int64_t t) {
        r = compute_residual(v, x);
        std::fill(last_computed_t.begin(), last_computed_t.end(), t);
        std::fill(valid.begin(), valid.end(), 1);
    }

    // Store residual rows for the given tokens only; rows is n_active x C.
    void store_rows(const std::vector<std::int64_t>& tokens, const std::vector<double>& rows,
                    const Tensor& x, std::int64_t t) {
        const auto C = x.shape.channels;
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            const std::int64_t p = tokens[j];
            auto xr = x.token(p);
            auto rr = r.token(p);
            for (std::int64_t c = 0; c < C; ++c) {
                rr[c] = rows[j * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] - xr[c];
            }
            last_computed_t[static_cast<std::size_t>(p)] = t;
            valid[static_cast<std::size_t>(p)] = 1;
        }
    }

    // v~ = x_next + R for every token; requires a fully valid cache.
    Tensor approximate_all(const Tensor& x_next) const {
        if (!all_valid()) {
            throw StateError("ResidualCache: reuse of a never-filled residual entry");
        }
        return approximate_with_cache(x_next, r);
    }
};

}  // namespace mc
