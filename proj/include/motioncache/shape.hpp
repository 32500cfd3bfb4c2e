#pragma once

#include <cstdint>
#include <string>
#include <tuple>

#include "motioncache/error.hpp"

namespace mc {

// Shape of one chunk latent: F frames, H x W spatial grid, C channels.
struct ChunkShape {
    std::int64_t frames   = 0;
    std::int64_t height   = 0;
    std::int64_t width    = 0;
    std::int64_t channels = 0;

    std::int64_t tokens() const { return frames * height * width; }
    std::int64_t elems() const { return tokens() * channels; }
    std::int64_t frame_tokens() const { return height * width; }

    bool operator==(const ChunkShape&) const = default;

    void validate() const {
        if (frames < 1 || height < 1 || width < 1 || channels < 1) {
            throw InvalidArgument("ChunkShape: all dims must be >= 1");
        }
    }

    std::string str() const {
        return std::to_string(frames) + "x" + std::to_string(height) + "x" +
               std::to_string(width) + "x" + std::to_string(channels);
    }
};

// Spatial-temporal token address (f, h, w) and its flat index
// p = f*H*W + h*W + w.
struct TokenIndex {
    std::int64_t f = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    bool operator==(const TokenIndex&) const = default;
};

inline std::int64_t token_flatten(const TokenIndex& idx, const ChunkShape& s) {
    if (idx.f < 0 || idx.f >= s.frames || idx.h < 0 || idx.h >= s.height ||
        idx.w < 0 || idx.w >= s.width) {
        throw InvalidArgument("token_flatten: index out of range for shape " + s.str());
    }
    return (idx.f * s.height + idx.h) * s.width + idx.w;
}

inline TokenIndex token_unflatten(std::int64_t p, const ChunkShape& s) {
    if (p < 0 || p >= s.tokens()) {
        throw InvalidArgument("token_unflatten: flat index out of range");
    }
    TokenIndex idx;
    idx.w = p % s.width;
    idx.h = (p / s.width) % s.height;
    idx.f = p / (s.width * s.height);
    return idx;
}

}  // namespace mc
