#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

struct QualityReport {
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

inline double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return s / static_cast<double>(a.v.size());
}

inline double psnr_from_mse(double mse_value, double range) {
    if (!(range > 0.0)) throw InvalidArgument("psnr: data range must be > 0");
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / mse_value);
}

namespace detail {

// Mean SSIM over sliding uniform windows of one frame/channel plane.
inline void ssim_plane(const double* a, const double* b, std::int64_t h, std::int64_t w,
                       double c1, double c2, double& acc, std::int64_t& windows) {
    const std::int64_t win = std::min<std::int64_t>({7, h, w});
    const std::int64_t n = win * win;
    for (std::int64_t i = 0; i + win <= h; ++i) {
        for (std::int64_t j = 0; j + win <= w; ++j) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::int64_t di = 0; di < win; ++di) {
                for (std::int64_t dj = 0; dj < win; ++dj) {
                    const double xa = a[(i + di) * w + (j + dj)];
                    const double xb = b[(i + di) * w + (j + dj)];
                    sa += xa;
                    sb += xb;
                    saa += xa * xa;
                    sbb += xb * xb;
                    sab += xa * xb;
                }
            }
            const double nd = static_cast<double>(n);
            const double mu_a = sa / nd;
            const double mu_b = sb / nd;
            const double var_a = saa / nd - mu_a * mu_a;
            const double var_b = sbb / nd - mu_b * mu_b;
            const double cov = sab / nd - mu_a * mu_b;
            const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            acc += num / den;
            windows += 1;
        }
    }
}

}  // namespace detail

// Mean SSIM over all frames and channels, 7x7 uniform window, constants
// C1 = (0.01 r)^2 and C2 = (0.03 r)^2 for the declared data range r.
inline double ssim(const Tensor& a, const Tensor& b, double range) {
    require_same_shape(a, b, "ssim");
    if (!(range > 0.0)) throw InvalidArgument("ssim: data range must be > 0");
    const auto& s = a.shape;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);

    double acc = 0.0;
    std::int64_t windows = 0;
    std::vector<double> pa(static_cast<std::size_t>(s.height * s.width));
    std::vector<double> pb(pa.size());
    for (std::int64_t f = 0; f < s.frames; ++f) {
        for (std::int64_t c = 0; c < s.channels; ++c) {
            for (std::int64_t h = 0; h < s.height; ++h) {
                for (std::int64_t w = 0; w < s.width; ++w) {
                    pa[static_cast<std::size_t>(h * s.width + w)] = a.at(f, h, w, c);
                    pb[static_cast<std::size_t>(h * s.width + w)] = b.at(f, h, w, c);
                }
            }
            detail::ssim_plane(pa.data(), pb.data(), s.height, s.width, c1, c2, acc, windows);
        }
    }
    return acc / static_cast<double>(windows);
}

inline QualityReport quality_metrics(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                                     double range) {
    if (a.size() != b.size() || a.empty()) {
        throw InvalidArgument("quality_metrics: chunk lists must match and be non-empty");
    }
    QualityReport rep;
    double se = 0.0;
    std::size_t n = 0;
    double ssim_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require_same_shape(a[i], b[i], "quality_metrics");
        for (std::size_t j = 0; j < a[i].v.size(); ++j) {
            const double d = a[i].v[j] - b[i].v[j];
            se += d * d;
        }
        n += a[i].v.size();
        ssim_sum += ssim(a[i], b[i], range);
    }
    rep.mse = se / static_cast<double>(n);
    rep.psnr = psnr_from_mse(rep.mse, range);
    rep.ssim = ssim_sum / static_cast<double>(a.size());
    return rep;
}

// Data range of a reference set of latents (max - min), used when the
// config does not declare one.
inline double derive_range(const std::vector<Tensor>& ref) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& t : ref) {
        for (double x : t.v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    }
    if (!(hi > lo)) return 1.0;
    return hi - lo;
}

}  // namespace mc
