#pragma once

#include <cstdint>
#include <vector>

#include "motioncache/error.hpp"

namespace mc {

// Key/value rows for a block of tokens, row-major n x dim.
struct KVRows {
    std::int64_t n = 0;
    std::int64_t dim = 0;
    std::vector<double> k;
    std::vector<double> v;

    static KVRows zeros(std::int64_t n, std::int64_t dim) {
        KVRows r;
        r.n = n;
        r.dim = dim;
        r.k.assign(static_cast<std::size_t>(n * dim), 0.0);
        r.v.assign(static_cast<std::size_t>(n * dim), 0.0);
        return r;
    }

    const double* k_row(std::int64_t i) const { return k.data() + i * dim; }
    const double* v_row(std::int64_t i) const { return v.data() + i * dim; }
    double* k_row(std::int64_t i) { return k.data() + i * dim; }
    double* v_row(std::int64_t i) { return v.data() + i * dim; }
};

// Append-only K/V context of finalized chunks, ordered by chunk index.
// Single writer (the sequential generation loop), any number of readers.
class KVCacheState {
public:
    void finalize_chunk(std::int64_t chunk_index, KVRows rows) {
        if (chunk_index != static_cast<std::int64_t>(blocks_.size())) {
            if (chunk_index < static_cast<std::int64_t>(blocks_.size())) {
                throw StateError("finalize_chunk: chunk " + std::to_string(chunk_index) +
                                 " already finalized");
            }
            throw StateError("finalize_chunk: chunks must be finalized in order");
        }
        blocks_.push_back(std::move(rows));
    }

    std::int64_t finalized_chunks() const {
        return static_cast<std::int64_t>(blocks_.size());
    }

    std::int64_t total_tokens() const {
        std::int64_t n = 0;
        for (const auto& b : blocks_) n += b.n;
        return n;
    }

    const KVRows& block(std::int64_t i) const { return blocks_.at(static_cast<std::size_t>(i)); }

private:
    std::vector<KVRows> blocks_;
};

// Per-token K/V slots of the chunk currently being denoised. Tokens that
// were skipped keep the rows from their last computed evaluation.
struct WorkingKV {
    KVRows rows;
    std::vector<std::uint8_t> valid;

    static WorkingKV make(std::int64_t n, std::int64_t dim) {
        WorkingKV w;
        w.rows = KVRows::zeros(n, dim);
        w.valid.assign(static_cast<std::size_t>(n), 0);
        return w;
    }

    bool all_valid() const {
        for (auto b : valid) {
            if (!b) return false;
        }
        return true;
    }
};

}  // namespace mc
