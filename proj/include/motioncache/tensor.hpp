#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/shape.hpp"

namespace mc {

// Dense double tensor over a chunk shape, layout [f][h][w][c].
// Value-semantic; all mutation returns or produces new values.
struct Tensor {
    ChunkShape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(const ChunkShape& s, double fill = 0.0)
        : shape(s), v(static_cast<std::size_t>(s.elems()), fill) {
        shape.validate();
    }

    double& at(std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t c) {
        return v[static_cast<std::size_t>(
            ((f * shape.height + h) * shape.width + w) * shape.channels + c)];
    }
    double at(std::int64_t f, std::int64_t h, std::int64_t w, std::int64_t c) const {
        return v[static_cast<std::size_t>(
            ((f * shape.height + h) * shape.width + w) * shape.channels + c)];
    }

    // Channel row of token p.
    std::span<double> token(std::int64_t p) {
        return {v.data() + p * shape.channels, static_cast<std::size_t>(shape.channels)};
    }
    std::span<const double> token(std::int64_t p) const {
        return {v.data() + p * shape.channels, static_cast<std::size_t>(shape.channels)};
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b)) {
        throw InvalidArgument(std::string(who) + ": shape mismatch (" + a.shape.str() +
                              " vs " + b.shape.str() + ")");
    }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& x : out.v) x *= s;
    return out;
}

// out = a + b*s
inline Tensor axpy(const Tensor& a, const Tensor& b, double s) {
    require_same_shape(a, b, "axpy");
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i] * s;
    return out;
}

inline double norm_l1(const Tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += std::abs(x);
    return s;
}

inline double norm_l2(const Tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        m = std::max(m, std::abs(a.v[i] - b.v[i]));
    }
    return m;
}

// L2 over the channel row of token p in (a - b).
inline double token_l2_diff(const Tensor& a, const Tensor& b, std::int64_t p) {
    auto ra = a.token(p);
    auto rb = b.token(p);
    double s = 0.0;
    for (std::size_t c = 0; c < ra.size(); ++c) {
        const double d = ra[c] - rb[c];
        s += d * d;
    }
    return std::sqrt(s);
}

// Per-token scalar map over the F x H x W grid (importance, weights,
// accumulators). Same token ordering as Tensor.
struct TokenMap {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<double> v;

    TokenMap() = default;
    TokenMap(std::int64_t f, std::int64_t h, std::int64_t w, double fill = 0.0)
        : frames(f), height(h), width(w),
          v(static_cast<std::size_t>(f * h * w), fill) {}
    explicit TokenMap(const ChunkShape& s, double fill = 0.0)
        : TokenMap(s.frames, s.height, s.width, fill) {}

    std::int64_t tokens() const { return frames * height * width; }
    std::int64_t frame_tokens() const { return height * width; }

    std::span<double> frame(std::int64_t f) {
        return {v.data() + f * frame_tokens(), static_cast<std::size_t>(frame_tokens())};
    }
    std::span<const double> frame(std::int64_t f) const {
        return {v.data() + f * frame_tokens(), static_cast<std::size_t>(frame_tokens())};
    }

    bool same_grid(const TokenMap& o) const {
        return frames == o.frames && height == o.height && width == o.width;
    }
};

struct TokenMask {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<std::uint8_t> v;

    TokenMask() = default;
    TokenMask(std::int64_t f, std::int64_t h, std::int64_t w, bool fill = false)
        : frames(f), height(h), width(w),
          v(static_cast<std::size_t>(f * h * w), fill ? 1 : 0) {}
    explicit TokenMask(const ChunkShape& s, bool fill = false)
        : TokenMask(s.frames, s.height, s.width, fill) {}

    std::int64_t tokens() const { return frames * height * width; }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto b : v) n += b ? 1 : 0;
        return n;
    }
    bool any() const { return count() > 0; }
    bool all() const { return count() == tokens(); }

    std::vector<std::int64_t> active_indices() const {
        std::vector<std::int64_t> out;
        for (std::int64_t p = 0; p < tokens(); ++p) {
            if (v[static_cast<std::size_t>(p)]) out.push_back(p);
        }
        return out;
    }
};

}  // namespace mc
