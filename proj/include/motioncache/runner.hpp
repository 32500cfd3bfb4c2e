#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "motioncache/fields.hpp"
#include "motioncache/flops.hpp"
#include "motioncache/importance.hpp"
#include "motioncache/policy.hpp"
#include "motioncache/residual_cache.hpp"
#include "motioncache/scenario.hpp"
#include "motioncache/schedule.hpp"
#include "motioncache/trace.hpp"

namespace mc {

struct RunInputs {
    ChunkShape shape;
    std::int64_t chunks = 1;
    NoiseSchedule sched;
    const VelocityField* field = nullptr;
    std::vector<Tensor> init_noise;  // x_noise per chunk
    ModelDims dims;
    Verbosity verbosity = Verbosity::Decisions;
    bool dual_emit = false;  // also record the counterfactual cached output
};

struct RunResult {
    std::vector<Tensor> final_latents;
    RunTrace trace;
    std::vector<std::int64_t> degenerate_chunks;  // Phase 1 never completed
};

namespace detail {

inline std::vector<double> last_frame_copy(const Tensor& x) {
    const auto& s = x.shape;
    const std::int64_t n = s.frame_tokens() * s.channels;
    const std::int64_t off = (s.frames - 1) * n;
    return {x.v.begin() + off, x.v.begin() + off + n};
}

inline void record_map(RunTrace& trace, TensorTag tag, std::int64_t chunk, std::int64_t t,
                       const TokenMap& m) {
    TraceTensor tt;
    tt.tag = tag;
    tt.chunk = chunk;
    tt.t = t;
    tt.dims = {m.frames, m.height, m.width};
    tt.data = m.v;
    trace.tensors.push_back(std::move(tt));
}

inline void record_tensor(RunTrace& trace, TensorTag tag, std::int64_t chunk, std::int64_t t,
                          const Tensor& x) {
    TraceTensor tt;
    tt.tag = tag;
    tt.chunk = chunk;
    tt.t = t;
    tt.dims = {x.shape.frames, x.shape.height, x.shape.width, x.shape.channels};
    tt.data = x.v;
    trace.tensors.push_back(std::move(tt));
}

}  // namespace detail

// Autoregressive chunked denoising under the chosen caching policy.
// Chunks run sequentially: chunk i is conditioned on the finalized K/V of
// chunks 0..i-1. Within a chunk the noise clock runs t = T..1, each step
// producing X_{t-1}.
inline RunResult run_denoise(const PolicyConfig& policy, const RunInputs& in) {
    policy.validate();
    in.shape.validate();
    if (!in.field) throw InvalidArgument("run_denoise: missing velocity field");
    if (static_cast<std::int64_t>(in.init_noise.size()) != in.chunks) {
        throw InvalidArgument("run_denoise: need one init noise tensor per chunk");
    }
    const std::int64_t T = in.sched.total_steps;
    const std::int64_t n_tokens = in.shape.tokens();
    const double dt = in.sched.dt_signed();

    RunResult res;
    KVCacheState kv;

    for (std::int64_t chunk = 0; chunk < in.chunks; ++chunk) {
        Tensor x = in.init_noise[static_cast<std::size_t>(chunk)];
        require_same_shape(x, Tensor(in.shape), "run_denoise init noise");
        std::optional<Tensor> prev_latent;
        std::optional<std::vector<double>> prev_chunk_frame;
        if (chunk > 0) {
            prev_chunk_frame = detail::last_frame_copy(res.final_latents.back());
        }

        ResidualCache cache(in.shape);
        ChunkGate gate;
        ImportanceState imp(in.shape, policy.eps_num);
        WorkingKV working = WorkingKV::make(n_tokens, in.shape.channels);
        EvalContext ctx{&kv, &working, chunk};

        for (std::int64_t t = T; t >= 1; --t) {
            const std::int64_t step_in_window = T - t;

            // Eq.-10 relative L1 between this step's input and the previous one.
            bool delta_valid = false;
            bool delta_inf = false;
            double delta = 0.0;
            if (prev_latent) {
                delta = relative_l1(x, *prev_latent);
                delta_valid = true;
                delta_inf = std::isinf(delta);
            }

            // Importance map of the previous step's latent (Eq. 8/9); tracked
            // for every policy at >= latents verbosity, used for decisions by
            // motioncache only.
            bool maps_ready = false;
            if (prev_latent && !delta_inf) {
                imp.importance = importance_map(
                    *prev_latent, prev_chunk_frame ? &*prev_chunk_frame : nullptr, chunk);
                maps_ready = true;
                if (policy.kind == PolicyKind::MotionCache) {
                    imp.weight = soft_map(imp.importance, policy.alpha, policy.eps_num);
                    imp.accumulator = accumulate(imp.accumulator, imp.weight, delta);
                }
            }

            StepDecision dec;
            const bool in_warmup = step_in_window < policy.warmup_steps || step_in_window == 0;
            if (policy.kind == PolicyKind::Vanilla) {
                dec.mode = StepMode::FullChunkCompute;
                dec.phase = 1;
            } else if (delta_inf) {
                // A vanishing previous latent makes the relative L1 undefined;
                // treat as "must compute" without poisoning the accumulators.
                dec.mode = StepMode::FullChunkCompute;
                dec.phase = (policy.kind == PolicyKind::MotionCache && !in_warmup &&
                             gate.full_count >= policy.phase1_full_computes)
                                ? 2
                                : 1;
            } else if (policy.kind == PolicyKind::StepLevel ||
                       policy.kind == PolicyKind::ChunkLevel) {
                const double thr = policy.kind == PolicyKind::StepLevel
                                       ? policy.tau
                                       : policy.chunk_threshold();
                dec = phase1_chunk_decision(gate, delta, thr, policy.phase1_full_computes,
                                            step_in_window, policy.warmup_steps);
            } else {  // motioncache
                if (in_warmup || gate.full_count < policy.phase1_full_computes) {
                    dec = phase1_chunk_decision(gate, delta, policy.chunk_threshold(),
                                                policy.phase1_full_computes, step_in_window,
                                                policy.warmup_steps);
                    dec.phase = 1;
                } else {
                    dec.phase = 2;
                    auto [mask, a_after] = threshold_mask(imp.accumulator, policy.tau);
                    imp.accumulator = std::move(a_after);
                    imp.mask = std::move(mask);
                    dec.mask = imp.mask;
                    dec.mode = imp.mask.any() ? StepMode::TokenSparse : StepMode::FullChunkSkip;
                    dec.full_count = gate.full_count;
                }
            }

            const bool cache_was_valid = cache.all_valid();
            Tensor r_before_full;  // cached residual before a dual-emit compute
            if (in.dual_emit && dec.mode == StepMode::FullChunkCompute && cache_was_valid) {
                r_before_full = cache.r;
            }

            Tensor velocity;
            std::int64_t active_count = 0;
            switch (dec.mode) {
                case StepMode::FullChunkCompute: {
                    velocity = in.field->eval_full(x, t, ctx);
                    cache.store_full(velocity, x, t);
                    // All tokens computed: their accumulators reset (Eq. 12).
                    std::fill(imp.accumulator.v.begin(), imp.accumulator.v.end(), 0.0);
                    if (delta_inf) gate.accumulator = 0.0;
                    active_count = n_tokens;
                    break;
                }
                case StepMode::FullChunkSkip: {
                    velocity = cache.approximate_all(x);
                    active_count = 0;
                    break;
                }
                case StepMode::TokenSparse: {
                    const auto active = dec.mask.active_indices();
                    const auto rows = in.field->eval_sparse(
                        x, t, std::span<const std::int64_t>(active.data(), active.size()), ctx);
                    velocity = cache.approximate_all(x);
                    const auto C = in.shape.channels;
                    for (std::size_t j = 0; j < active.size(); ++j) {
                        auto dst = velocity.token(active[j]);
                        for (std::int64_t c = 0; c < C; ++c) {
                            dst[c] = rows[j * static_cast<std::size_t>(C) +
                                          static_cast<std::size_t>(c)];
                        }
                    }
                    cache.store_rows(active, rows, x, t);
                    active_count = static_cast<std::int64_t>(active.size());
                    break;
                }
            }

            Tensor x_next = euler_step(x, velocity, dt);
            if (!x_next.all_finite()) {
                throw NumericError("run_denoise: non-finite latent at chunk " +
                                   std::to_string(chunk) + ", t " + std::to_string(t));
            }

            TraceStep rec;
            rec.chunk = chunk;
            rec.t = t;
            rec.step_in_window = step_in_window;
            rec.phase = dec.phase;
            rec.mode = dec.mode;
            rec.warmup = dec.warmup || (policy.kind != PolicyKind::Vanilla && in_warmup);
            rec.delta_valid = delta_valid;
            rec.delta_infinite = delta_inf;
            rec.delta_chunk = delta_inf ? 0.0 : delta;
            rec.active_count = active_count;
            rec.n_tokens = n_tokens;
            rec.flops = step_flops(dec.mode, active_count, n_tokens, chunk,
                                   in.shape.channels, in.dims);
            if (dec.mode == StepMode::TokenSparse) rec.mask = dec.mask.v;
            res.trace.steps.push_back(std::move(rec));

            if (in.verbosity >= Verbosity::Latents) {
                detail::record_tensor(res.trace, TensorTag::LatentIn, chunk, t, x);
                if (maps_ready) {
                    detail::record_map(res.trace, TensorTag::ImportanceMap, chunk, t,
                                       imp.importance);
                    if (policy.kind == PolicyKind::MotionCache) {
                        detail::record_map(res.trace, TensorTag::WeightMap, chunk, t, imp.weight);
                    }
                }
            }
            if (in.verbosity >= Verbosity::Residuals &&
                dec.mode != StepMode::FullChunkSkip) {
                detail::record_tensor(res.trace, TensorTag::Residual, chunk, t, cache.r);
            }
            if (in.dual_emit && dec.mode == StepMode::FullChunkCompute && cache_was_valid) {
                const Tensor approx_v = approximate_with_cache(x, r_before_full);
                detail::record_tensor(res.trace, TensorTag::TrueNext, chunk, t, x_next);
                detail::record_tensor(res.trace, TensorTag::ApproxNext, chunk, t,
                                      euler_step(x, approx_v, dt));
            }

            prev_latent = std::move(x);
            x = std::move(x_next);
        }

        if (policy.kind == PolicyKind::MotionCache &&
            gate.full_count < policy.phase1_full_computes) {
            res.degenerate_chunks.push_back(chunk);
        }
        if (in.verbosity >= Verbosity::Latents) {
            detail::record_tensor(res.trace, TensorTag::LatentFinal, chunk, 0, x);
        }
        finalize_chunk_kv(kv, *in.field, chunk, x);
        res.final_latents.push_back(std::move(x));
    }

    nlohmann::json& h = res.trace.header;
    h["policy"] = {{"kind", policy_kind_name(policy.kind)},
                   {"name", policy.label()},
                   {"alpha", policy.alpha},
                   {"tau", policy.tau},
                   {"tau_chunk", policy.chunk_threshold()},
                   {"K", policy.phase1_full_computes},
                   {"m", policy.warmup_steps},
                   {"eps_num", policy.eps_num}};
    h["shape"] = {{"frames", in.shape.frames},
                  {"height", in.shape.height},
                  {"width", in.shape.width},
                  {"channels", in.shape.channels}};
    h["chunks"] = in.chunks;
    h["schedule"] = {{"T", T}, {"window", in.sched.window}};
    h["model_dims"] = {{"width", in.dims.width}, {"ffn_width", in.dims.ffn_width}};
    h["verbosity"] = verbosity_name(in.verbosity);
    h["field"] = field_kind_name(in.field->kind());
    h["degenerate_phase1_chunks"] = res.degenerate_chunks;
    h["steps"] = res.trace.steps.size();
    h["tensors"] = res.trace.tensors.size();
    {
        nlohmann::json windows = nlohmann::json::array();
        for (std::int64_t i = 1; i <= in.chunks; ++i) {
            const auto w = chunk_window(i, T, in.sched.window);
            windows.push_back({{"start", w.start}, {"end", w.end}});
        }
        h["windows"] = windows;
    }
    return res;
}

}  // namespace mc
