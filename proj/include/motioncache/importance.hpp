#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

// Importance map M (F x H x W): channel-L1 frame differences of the given
// latent. Frames f > 0 difference against frame f-1; frame 0 of chunk i > 0
// against the supplied last frame of the previous chunk; frame 0 of chunk 0
// copies frame 1's row. A single-frame first chunk has no reference at all
// and falls back to a uniform map of ones.
inline TokenMap importance_map(const Tensor& latent,
                               const std::vector<double>* prev_chunk_last_frame,
                               std::int64_t chunk_index) {
    const auto& s = latent.shape;
    if (prev_chunk_last_frame &&
        static_cast<std::int64_t>(prev_chunk_last_frame->size()) != s.frame_tokens() * s.channels) {
        throw InvalidArgument("importance_map: previous-chunk frame has wrong size");
    }
    TokenMap m(s);
    const auto ft = s.frame_tokens();
    auto fill_frame_diff = [&](std::int64_t f, auto prev_token_row) {
        for (std::int64_t q = 0; q < ft; ++q) {
            auto cur = latent.token(f * ft + q);
            const double* prev = prev_token_row(q);
            double acc = 0.0;
            for (std::int64_t c = 0; c < s.channels; ++c) acc += std::abs(cur[c] - prev[c]);
            m.v[static_cast<std::size_t>(f * ft + q)] = acc;
        }
    };

    for (std::int64_t f = 1; f < s.frames; ++f) {
        fill_frame_diff(f, [&](std::int64_t q) { return latent.token((f - 1) * ft + q).data(); });
    }

    if (chunk_index > 0) {
        if (!prev_chunk_last_frame) {
            throw InvalidArgument("importance_map: chunk_index > 0 requires the previous "
                                  "chunk's last frame");
        }
        fill_frame_diff(0, [&](std::int64_t q) {
            return prev_chunk_last_frame->data() + q * s.channels;
        });
    } else if (s.frames > 1) {
        auto f0 = m.frame(0);
        auto f1 = m.frame(1);
        std::copy(f1.begin(), f1.end(), f0.begin());
    } else {
        std::fill(m.v.begin(), m.v.end(), 1.0);
    }
    return m;
}

// Min-max soft-mapping of one frame's importance row to [alpha, 1]:
// w = alpha + (1 - alpha) * (m - min) / (max - min + eps).
inline void soft_map_frame(std::span<const double> m_frame, double alpha, double eps_num,
                           std::span<double> w_frame) {
    if (m_frame.empty() || m_frame.size() != w_frame.size()) {
        throw InvalidArgument("soft_map_frame: bad frame sizes");
    }
    if (eps_num <= 0.0) throw InvalidArgument("soft_map_frame: eps_num must be > 0");
    const auto [lo_it, hi_it] = std::minmax_element(m_frame.begin(), m_frame.end());
    const double lo = *lo_it, hi = *hi_it;
    const double denom = hi - lo + eps_num;
    for (std::size_t i = 0; i < m_frame.size(); ++i) {
        w_frame[i] = alpha + (1.0 - alpha) * (m_frame[i] - lo) / denom;
    }
}

// Soft-mapping applied independently per frame.
inline TokenMap soft_map(const TokenMap& m, double alpha, double eps_num) {
    TokenMap w(m.frames, m.height, m.width);
    for (std::int64_t f = 0; f < m.frames; ++f) {
        soft_map_frame(m.frame(f), alpha, eps_num, w.frame(f));
    }
    return w;
}

// A'[p] = A[p] + W[p] * delta_chunk.
inline TokenMap accumulate(const TokenMap& a, const TokenMap& w, double delta_chunk) {
    if (!a.same_grid(w)) throw InvalidArgument("accumulate: grid mismatch");
    if (delta_chunk < 0.0) throw InvalidArgument("accumulate: delta_chunk must be >= 0");
    TokenMap out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += w.v[i] * delta_chunk;
    return out;
}

// mask[p] = (A[p] > tau), strict; selected accumulators reset to 0.
inline std::pair<TokenMask, TokenMap> threshold_mask(const TokenMap& a, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("threshold_mask: tau must be > 0");
    TokenMask mask(a.frames, a.height, a.width, false);
    TokenMap after = a;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        if (a.v[i] > tau) {
            mask.v[i] = 1;
            after.v[i] = 0.0;
        }
    }
    return {std::move(mask), std::move(after)};
}

// Importance bookkeeping for one chunk's denoising pass.
struct ImportanceState {
    TokenMap importance;   // M
    TokenMap weight;       // W in [alpha, 1]
    TokenMap accumulator;  // A
    TokenMask mask;
    double eps_num = 1e-6;

    ImportanceState() = default;
    explicit ImportanceState(const ChunkShape& s, double eps)
        : importance(s), weight(s, 1.0), accumulator(s), mask(s, false), eps_num(eps) {}
};

}  // namespace mc
