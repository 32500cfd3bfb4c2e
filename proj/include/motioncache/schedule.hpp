#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "motioncache/error.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

// Discrete noise schedule over t in [0, T] with a monotonic sigma,
// sigma(0) = 0 (data) and sigma(T) = 1 (noise). Linear by default.
// Integration runs t = T -> 0 with normalized step magnitude 1/T; the
// signed Euler step is negative because the velocity convention points
// from data toward noise.
struct NoiseSchedule {
    std::int64_t total_steps = 0;  // T
    std::int64_t window = 1;       // l

    NoiseSchedule() = default;
    NoiseSchedule(std::int64_t T, std::int64_t l) : total_steps(T), window(l) {
        if (T < 1) throw InvalidArgument("NoiseSchedule: T must be >= 1");
        if (l < 1) throw InvalidArgument("NoiseSchedule: window must be >= 1");
        if (l > T) throw InvalidArgument("NoiseSchedule: window must be <= T");
    }

    double sigma(std::int64_t t) const {
        if (t < 0 || t > total_steps) {
            throw InvalidArgument("sigma: t outside [0, T]");
        }
        return static_cast<double>(t) / static_cast<double>(total_steps);
    }

    double dt_mag() const { return 1.0 / static_cast<double>(total_steps); }
    double dt_signed() const { return -dt_mag(); }
};

// x_t = (1 - sigma(t)) * x_data + sigma(t) * x_noise
inline Tensor forward_interpolate(const Tensor& x_data, const Tensor& x_noise,
                                  std::int64_t t, const NoiseSchedule& sched) {
    require_same_shape(x_data, x_noise, "forward_interpolate");
    const double s = sched.sigma(t);
    Tensor out = x_data;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        out.v[i] = (1.0 - s) * x_data.v[i] + s * x_noise.v[i];
    }
    return out;
}

// x + v*dt
inline Tensor euler_step(const Tensor& x, const Tensor& v, double dt) {
    require_same_shape(x, v, "euler_step");
    if (!std::isfinite(dt)) throw NumericError("euler_step: non-finite dt");
    if (!x.all_finite() || !v.all_finite()) {
        throw NumericError("euler_step: non-finite input tensor");
    }
    return axpy(x, v, dt);
}

struct StepInterval {
    std::int64_t start = 0;
    std::int64_t end = 0;  // closed
};

// Analytic active window of chunk i (1-based): [(i-1)*T/l, (i+l-1)*T/l].
// Consecutive windows overlap by (l-1)*T/l steps; fractional bounds round
// toward the interior.
inline StepInterval chunk_window_raw(std::int64_t i, std::int64_t T, std::int64_t l) {
    if (i < 1) throw InvalidArgument("chunk_window: chunk index must be >= 1 (1-based)");
    if (T < 1 || l < 1) throw InvalidArgument("chunk_window: T and l must be >= 1");
    if (l > T) throw InvalidArgument("chunk_window: window size l must be <= T");
    const std::int64_t lo_num = (i - 1) * T;
    const std::int64_t hi_num = (i + l - 1) * T;
    StepInterval w;
    w.start = (lo_num + l - 1) / l;  // ceil
    w.end = hi_num / l;              // floor
    return w;
}

// Window clipped to the base schedule range [0, T].
inline StepInterval chunk_window(std::int64_t i, std::int64_t T, std::int64_t l) {
    StepInterval w = chunk_window_raw(i, T, l);
    w.start = std::max<std::int64_t>(w.start, 0);
    w.end = std::min<std::int64_t>(w.end, T);
    if (w.end < w.start) w.end = w.start;
    return w;
}

}  // namespace mc
