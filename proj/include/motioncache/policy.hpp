#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "motioncache/error.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

enum class PolicyKind { Vanilla, StepLevel, ChunkLevel, MotionCache };

inline std::string policy_kind_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::Vanilla: return "vanilla";
        case PolicyKind::StepLevel: return "step-level";
        case PolicyKind::ChunkLevel: return "chunk-level";
        case PolicyKind::MotionCache: return "motioncache";
    }
    return "?";
}

inline PolicyKind policy_kind_from_name(const std::string& s) {
    if (s == "vanilla") return PolicyKind::Vanilla;
    if (s == "step-level") return PolicyKind::StepLevel;
    if (s == "chunk-level") return PolicyKind::ChunkLevel;
    if (s == "motioncache") return PolicyKind::MotionCache;
    throw InvalidArgument("unknown policy kind: " + s);
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Vanilla;
    std::string name;            // label in traces/reports; defaults to the kind
    double alpha = 0.5;          // soft-mapping floor
    double tau = 0.1;            // token accumulator threshold
    double tau_chunk = -1.0;     // chunk gate threshold; < 0 means "use tau"
    std::int64_t phase1_full_computes = 6;  // K, counted after warm-up
    std::int64_t warmup_steps = 4;          // m
    double eps_num = 1e-6;

    double chunk_threshold() const { return tau_chunk >= 0.0 ? tau_chunk : tau; }

    std::string label() const { return name.empty() ? policy_kind_name(kind) : name; }

    void validate() const {
        if (kind == PolicyKind::Vanilla) return;  // cache fields ignored
        if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("PolicyConfig: alpha must be in [0, 1]");
        if (!(tau > 0.0)) throw InvalidArgument("PolicyConfig: tau must be > 0");
        if (tau_chunk >= 0.0 && !(tau_chunk > 0.0)) {
            throw InvalidArgument("PolicyConfig: tau_chunk must be > 0");
        }
        if (phase1_full_computes < 0) throw InvalidArgument("PolicyConfig: K must be >= 0");
        if (warmup_steps < 0) throw InvalidArgument("PolicyConfig: m must be >= 0");
        if (!(eps_num > 0.0)) throw InvalidArgument("PolicyConfig: eps_num must be > 0");
    }
};

enum class StepMode { FullChunkCompute, FullChunkSkip, TokenSparse };

inline std::string step_mode_name(StepMode m) {
    switch (m) {
        case StepMode::FullChunkCompute: return "full-chunk-compute";
        case StepMode::FullChunkSkip: return "full-chunk-skip";
        case StepMode::TokenSparse: return "token-sparse";
    }
    return "?";
}

struct StepDecision {
    StepMode mode = StepMode::FullChunkCompute;
    TokenMask mask;               // meaningful for token-sparse
    std::int64_t full_count = 0;  // threshold-triggered full computations so far
    std::int64_t phase = 1;       // 1 = chunk-wise, 2 = token-sparse
    bool warmup = false;
};

// Scalar accumulate-and-threshold gate used by the warm-up/Phase-1 schedule
// and, for the whole run, by the step- and chunk-level baselines. Warm-up
// steps always compute; afterwards delta accrues and a full computation
// fires on a strict threshold crossing, resetting the accumulator.
struct ChunkGate {
    double accumulator = 0.0;
    std::int64_t full_count = 0;
};

inline StepDecision phase1_chunk_decision(ChunkGate& gate, double delta_chunk,
                                          double tau_chunk, std::int64_t k_full,
                                          std::int64_t step_in_window, std::int64_t warmup_steps) {
    StepDecision d;
    d.phase = 1;
    if (step_in_window < warmup_steps || step_in_window == 0) {
        // The first step of a window is always a full computation even when
        // m = 0: the residual cache is empty and Eq.-6 reuse is undefined.
        d.mode = StepMode::FullChunkCompute;
        d.warmup = true;
        gate.accumulator = 0.0;
        d.full_count = gate.full_count;
        return d;
    }
    gate.accumulator += delta_chunk;
    if (gate.accumulator > tau_chunk) {
        gate.accumulator = 0.0;
        gate.full_count += 1;
        d.mode = StepMode::FullChunkCompute;
    } else {
        d.mode = StepMode::FullChunkSkip;
    }
    d.full_count = gate.full_count;
    (void)k_full;
    return d;
}

}  // namespace mc
