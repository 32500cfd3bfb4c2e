#pragma once

#include <cstdint>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/policy.hpp"

namespace mc {

struct ModelDims {
    std::int64_t width = 0;      // d
    std::int64_t ffn_width = 0;  // d_ffn
};

// One step's operation counts. The three transformer categories follow the
// standard dense accounting (multiply-accumulate = 2 FLOPs); cache reuse is
// tracked separately and never competes with the compute categories.
struct StepFlops {
    double attention = 0.0;  // self+cross: 4 * N_q * N_kv * d
    double attn_gemm = 0.0;  // QKV/output projections: 8 * N_q * d^2
    double ffn_gemm = 0.0;   // 4 * N_q * d * d_ffn
    double reuse = 0.0;      // Eq.-6 adds for skipped tokens, one per element

    double categories_total() const { return attention + attn_gemm + ffn_gemm; }
};

// Cost of one step given how many query tokens were computed. N_kv counts
// the finalized prior chunks plus the full current chunk; sparse steps keep
// N_kv unchanged (inactive tokens still serve stale K/V).
inline StepFlops step_flops(StepMode mode, std::int64_t active_tokens,
                            std::int64_t chunk_tokens, std::int64_t chunk_index,
                            std::int64_t channels, const ModelDims& dims) {
    const double d = static_cast<double>(dims.width);
    const double dffn = static_cast<double>(dims.ffn_width);
    const double n_kv = static_cast<double>((chunk_index + 1) * chunk_tokens);
    const double n_q =
        mode == StepMode::FullChunkCompute ? static_cast<double>(chunk_tokens)
        : mode == StepMode::TokenSparse    ? static_cast<double>(active_tokens)
                                           : 0.0;
    StepFlops f;
    f.attention = 4.0 * n_q * n_kv * d;
    f.attn_gemm = 8.0 * n_q * d * d;
    f.ffn_gemm = 4.0 * n_q * d * dffn;
    f.reuse = static_cast<double>(chunk_tokens - static_cast<std::int64_t>(n_q)) *
              static_cast<double>(channels);
    return f;
}

struct FlopsLedger {
    std::vector<StepFlops> per_step;
    StepFlops totals;

    void add(const StepFlops& f) {
        per_step.push_back(f);
        totals.attention += f.attention;
        totals.attn_gemm += f.attn_gemm;
        totals.ffn_gemm += f.ffn_gemm;
        totals.reuse += f.reuse;
    }

    // Dominance over the compute categories only (reuse is bookkeeping for
    // skipped work, larger for cheaper runs by construction).
    bool dominates(const FlopsLedger& other) const {
        return totals.attention >= other.totals.attention &&
               totals.attn_gemm >= other.totals.attn_gemm &&
               totals.ffn_gemm >= other.totals.ffn_gemm;
    }
};

}  // namespace mc
