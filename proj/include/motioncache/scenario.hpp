#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/rng.hpp"
#include "motioncache/shape.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

struct MovingBlobParams {
    ChunkShape chunk_shape;  // frames per chunk, H, W, C
    std::int64_t chunks = 1;
    double center_h = 0.0, center_w = 0.0;  // blob center at global frame 0
    double vel_h = 0.0, vel_w = 0.0;        // tokens per frame
    double radius = 1.0;
    double amplitude = 1.0;
    double cutoff_mult = 2.5;  // support cutoff, in radii
    double texture_scale = 1.0;
};

// Deterministic latent video: a moving truncated-Gaussian bump over a static
// textured background, plus per-frame ground-truth motion masks (tokens
// whose data changes between adjacent global frames; frame 0 has none).
struct Scenario {
    ChunkShape chunk_shape;
    std::int64_t chunks = 0;
    std::vector<Tensor> data;        // one tensor per chunk
    std::vector<TokenMask> motion;   // one H x W mask per global frame

    std::int64_t total_frames() const { return chunks * chunk_shape.frames; }

    // Channel row of spatial token (h, w) in global frame g.
    std::span<const double> frame_token(std::int64_t g, std::int64_t h, std::int64_t w) const {
        const std::int64_t chunk = g / chunk_shape.frames;
        const std::int64_t f = g % chunk_shape.frames;
        const auto& x = data[static_cast<std::size_t>(chunk)];
        return x.token((f * chunk_shape.height + h) * chunk_shape.width + w);
    }
};

inline Scenario generate_moving_blob(const MovingBlobParams& p, std::uint64_t seed) {
    p.chunk_shape.validate();
    if (p.chunks < 1) throw InvalidArgument("generate_moving_blob: chunks must be >= 1");
    const double hmax = static_cast<double>(p.chunk_shape.height - 1);
    const double wmax = static_cast<double>(p.chunk_shape.width - 1);
    if (p.radius >= 0.5 * std::min(static_cast<double>(p.chunk_shape.height),
                                   static_cast<double>(p.chunk_shape.width))) {
        throw InvalidArgument("generate_moving_blob: radius must be < min(H, W)/2");
    }
    const std::int64_t total_frames = p.chunks * p.chunk_shape.frames;
    for (std::int64_t g = 0; g < total_frames; ++g) {
        const double ch = p.center_h + p.vel_h * static_cast<double>(g);
        const double cw = p.center_w + p.vel_w * static_cast<double>(g);
        if (ch < 0.0 || ch > hmax || cw < 0.0 || cw > wmax) {
            throw InvalidArgument("generate_moving_blob: blob leaves spatial bounds at frame " +
                                  std::to_string(g));
        }
    }

    const auto& s = p.chunk_shape;
    // Static background texture, identical in every frame.
    Rng tex_rng(derive_seed(seed, 0xB6));
    std::vector<double> texture(static_cast<std::size_t>(s.frame_tokens() * s.channels));
    for (double& x : texture) x = tex_rng.gaussian() * p.texture_scale;

    const double cutoff = p.cutoff_mult * p.radius;
    auto blob_value = [&](std::int64_t g, std::int64_t h, std::int64_t w) {
        const double ch = p.center_h + p.vel_h * static_cast<double>(g);
        const double cw = p.center_w + p.vel_w * static_cast<double>(g);
        const double dh = static_cast<double>(h) - ch;
        const double dw = static_cast<double>(w) - cw;
        const double d2 = dh * dh + dw * dw;
        if (d2 > cutoff * cutoff) return 0.0;
        return p.amplitude * std::exp(-d2 / (2.0 * p.radius * p.radius));
    };

    Scenario sc;
    sc.chunk_shape = s;
    sc.chunks = p.chunks;
    for (std::int64_t i = 0; i < p.chunks; ++i) {
        Tensor x(s);
        for (std::int64_t f = 0; f < s.frames; ++f) {
            const std::int64_t g = i * s.frames + f;
            for (std::int64_t h = 0; h < s.height; ++h) {
                for (std::int64_t w = 0; w < s.width; ++w) {
                    const double bump = blob_value(g, h, w);
                    const std::size_t base =
                        static_cast<std::size_t>(((h * s.width) + w) * s.channels);
                    for (std::int64_t c = 0; c < s.channels; ++c) {
                        x.at(f, h, w, c) = texture[base + static_cast<std::size_t>(c)] + bump;
                    }
                }
            }
        }
        sc.data.push_back(std::move(x));
    }

    // Ground truth by direct differencing of the generated frames.
    sc.motion.emplace_back(1, s.height, s.width, false);
    for (std::int64_t g = 1; g < total_frames; ++g) {
        TokenMask m(1, s.height, s.width, false);
        for (std::int64_t h = 0; h < s.height; ++h) {
            for (std::int64_t w = 0; w < s.width; ++w) {
                auto cur = sc.frame_token(g, h, w);
                auto prev = sc.frame_token(g - 1, h, w);
                for (std::int64_t c = 0; c < s.channels; ++c) {
                    if (cur[c] != prev[c]) {
                        m.v[static_cast<std::size_t>(h * s.width + w)] = 1;
                        break;
                    }
                }
            }
        }
        sc.motion.push_back(std::move(m));
    }
    return sc;
}

// Unstructured scenario: seeded Gaussian data chunks, no motion ground truth.
inline Scenario generate_random_latents(const ChunkShape& shape, std::int64_t chunks,
                                        std::uint64_t seed, double stddev = 1.0) {
    shape.validate();
    if (chunks < 1) throw InvalidArgument("generate_random_latents: chunks must be >= 1");
    Scenario sc;
    sc.chunk_shape = shape;
    sc.chunks = chunks;
    for (std::int64_t i = 0; i < chunks; ++i) {
        sc.data.push_back(gaussian_tensor(shape, derive_seed(seed, 0xDA7A + static_cast<std::uint64_t>(i)), stddev));
    }
    for (std::int64_t g = 0; g < sc.total_frames(); ++g) {
        sc.motion.emplace_back(1, shape.height, shape.width, false);
    }
    return sc;
}

// Initial latents: x_noise seeded per (chunk, run).
inline std::vector<Tensor> make_noise_chunks(const ChunkShape& shape, std::int64_t chunks,
                                             std::uint64_t run_seed) {
    std::vector<Tensor> out;
    for (std::int64_t i = 0; i < chunks; ++i) {
        out.push_back(gaussian_tensor(shape, derive_seed(run_seed, 0x4015E + static_cast<std::uint64_t>(i))));
    }
    return out;
}

}  // namespace mc
