#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/flops.hpp"
#include "motioncache/tensor.hpp"
#include "motioncache/trace.hpp"

namespace mc {

// ---------------------------------------------------------------- ranking

// Standard NDCG with graded relevance: rank tokens by proxy score
// descending (ties by flat index), gain = oracle score, discount
// log2(rank + 1). An all-zero oracle gives 1 by convention. truncation = 0
// means full depth.
inline double ndcg(std::span<const double> proxy, std::span<const double> oracle,
                   std::size_t truncation = 0) {
    if (proxy.empty() || proxy.size() != oracle.size()) {
        throw InvalidArgument("ndcg: need equal-length non-empty score vectors");
    }
    const std::size_t n = proxy.size();
    const std::size_t depth = truncation == 0 ? n : std::min(truncation, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (proxy[a] != proxy[b]) return proxy[a] > proxy[b];
        return a < b;
    });
    std::vector<std::size_t> ideal = order;
    std::sort(ideal.begin(), ideal.end(), [&](std::size_t a, std::size_t b) {
        if (oracle[a] != oracle[b]) return oracle[a] > oracle[b];
        return a < b;
    });

    double dcg = 0.0, idcg = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
        const double disc = std::log2(static_cast<double>(r) + 2.0);
        dcg += oracle[order[r]] / disc;
        idcg += oracle[ideal[r]] / disc;
    }
    if (idcg == 0.0) return 1.0;
    return dcg / idcg;
}

// Average ranks (ties share the mean rank).
inline std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InvalidArgument("spearman: need two equal-length vectors of size >= 2");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ------------------------------------------------------------ prop1 check

struct Prop1Sample {
    std::int64_t chunk = 0;
    std::int64_t t = 0;
    double eps = 0.0;        // ||true - approx||_2
    double predicted = 0.0;  // dt * ||R_t - R_prev||_2
    double rel_violation = 0.0;
};

struct ErrorReport {
    std::vector<Prop1Sample> samples;  // chunk-level samples
    double max_rel_violation = 0.0;    // over chunk, frame and token groups
    std::int64_t group_checks = 0;
};

namespace detail {

inline double l2_diff_range(std::span<const double> a, std::span<const double> b,
                            std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace detail

// Verifies eps = dt * ||R_t - R_prev||_2 on every dual-emitted step, at
// chunk, frame and token granularity (the identity is pointwise algebra and
// must hold for every restriction).
inline ErrorReport prop1_check(const RunTrace& trace) {
    const std::int64_t T = trace.header.at("schedule").at("T").get<std::int64_t>();
    const double dt = 1.0 / static_cast<double>(T);
    const auto shape = trace.header.at("shape");
    const std::int64_t channels = shape.at("channels").get<std::int64_t>();
    const std::int64_t frame_elems =
        shape.at("height").get<std::int64_t>() * shape.at("width").get<std::int64_t>() * channels;

    ErrorReport rep;
    for (const auto& tt : trace.tensors) {
        if (tt.tag != TensorTag::TrueNext) continue;
        const TraceTensor* approx = trace.find_tensor(TensorTag::ApproxNext, tt.chunk, tt.t);
        const TraceTensor* r_cur = trace.find_tensor(TensorTag::Residual, tt.chunk, tt.t);
        const TraceTensor* r_prev = trace.find_tensor(TensorTag::Residual, tt.chunk, tt.t + 1);
        if (!approx || !r_cur || !r_prev) {
            throw InvalidArgument("prop1_check: trace lacks dual outputs or residual pair at "
                                  "chunk " + std::to_string(tt.chunk) + ", t " +
                                  std::to_string(tt.t));
        }
        const std::size_t n = tt.data.size();
        auto check_group = [&](std::size_t lo, std::size_t hi) {
            const double eps = detail::l2_diff_range(tt.data, approx->data, lo, hi);
            const double pred = dt * detail::l2_diff_range(r_cur->data, r_prev->data, lo, hi);
            const double viol = std::abs(eps - pred) / std::max(eps, 1e-300);
            rep.max_rel_violation = std::max(rep.max_rel_violation, viol);
            rep.group_checks += 1;
            return std::pair<double, double>{eps, pred};
        };
        const auto [eps, pred] = check_group(0, n);
        Prop1Sample s;
        s.chunk = tt.chunk;
        s.t = tt.t;
        s.eps = eps;
        s.predicted = pred;
        s.rel_violation = std::abs(eps - pred) / std::max(eps, 1e-300);
        rep.samples.push_back(s);
        for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(frame_elems)) {
            check_group(lo, std::min(n, lo + static_cast<std::size_t>(frame_elems)));
        }
        for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(channels)) {
            check_group(lo, lo + static_cast<std::size_t>(channels));
        }
    }
    if (rep.samples.empty()) {
        throw InvalidArgument("prop1_check: trace contains no dual-emitted steps");
    }
    return rep;
}

// ------------------------------------------------------------ lemma check

struct LemmaReport {
    // Token-level samples: channel-L2 residual difference vs channel-L2
    // intra-chunk frame difference, frames f >= 1.
    std::int64_t samples = 0;
    double fitted_c = 0.0;   // max ratio lhs/rhs: bound holds on 100% by construction
    double ls_slope = 0.0;   // least squares through the origin
    double spearman_rank = 0.0;
    // Frame-level pairs (the lemma's literal granularity).
    std::int64_t frame_samples = 0;
    double frame_fitted_c = 0.0;
    double frame_spearman = 0.0;
    std::vector<double> lhs;  // token-level
    std::vector<double> rhs;
};

// Computes both sides of the motion-instability bound from a trace with
// per-step latents and residuals (vanilla verbosity=residuals runs).
inline LemmaReport lemma_check(const RunTrace& trace) {
    const auto shape = trace.header.at("shape");
    const std::int64_t F = shape.at("frames").get<std::int64_t>();
    const std::int64_t H = shape.at("height").get<std::int64_t>();
    const std::int64_t W = shape.at("width").get<std::int64_t>();
    const std::int64_t C = shape.at("channels").get<std::int64_t>();
    const std::int64_t ft = H * W;
    const std::int64_t T = trace.header.at("schedule").at("T").get<std::int64_t>();
    const std::int64_t chunks = trace.header.at("chunks").get<std::int64_t>();

    LemmaReport rep;
    std::vector<double> frame_lhs, frame_rhs;
    for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
        for (std::int64_t t = T - 1; t >= 1; --t) {
            const TraceTensor* r_new = trace.find_tensor(TensorTag::Residual, chunk, t);
            const TraceTensor* r_old = trace.find_tensor(TensorTag::Residual, chunk, t + 1);
            const TraceTensor* x_old = trace.find_tensor(TensorTag::LatentIn, chunk, t + 1);
            if (!r_new || !r_old || !x_old) continue;
            for (std::int64_t f = 1; f < F; ++f) {
                double flhs = 0.0, frhs = 0.0;
                for (std::int64_t q = 0; q < ft; ++q) {
                    const std::int64_t p = f * ft + q;
                    const std::int64_t p_prev = (f - 1) * ft + q;
                    double dl = 0.0, dr = 0.0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double a = r_new->data[static_cast<std::size_t>(p * C + c)] -
                                         r_old->data[static_cast<std::size_t>(p * C + c)];
                        dl += a * a;
                        const double b = x_old->data[static_cast<std::size_t>(p * C + c)] -
                                         x_old->data[static_cast<std::size_t>(p_prev * C + c)];
                        dr += b * b;
                    }
                    rep.lhs.push_back(std::sqrt(dl));
                    rep.rhs.push_back(std::sqrt(dr));
                    flhs += dl;
                    frhs += dr;
                }
                frame_lhs.push_back(std::sqrt(flhs));
                frame_rhs.push_back(std::sqrt(frhs));
            }
        }
    }
    rep.samples = static_cast<std::int64_t>(rep.lhs.size());
    if (rep.samples < 10) {
        throw InsufficientData("lemma_check: fewer than 10 samples (record latents and "
                               "residuals on a run with F >= 2)");
    }

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < rep.lhs.size(); ++i) {
        if (rep.rhs[i] > 0.0) {
            rep.fitted_c = std::max(rep.fitted_c, rep.lhs[i] / rep.rhs[i]);
        } else if (rep.lhs[i] > 0.0) {
            rep.fitted_c = std::numeric_limits<double>::infinity();
        }
        num += rep.lhs[i] * rep.rhs[i];
        den += rep.rhs[i] * rep.rhs[i];
    }
    rep.ls_slope = den > 0.0 ? num / den : 0.0;
    rep.spearman_rank = spearman(rep.lhs, rep.rhs);

    rep.frame_samples = static_cast<std::int64_t>(frame_lhs.size());
    for (std::size_t i = 0; i < frame_lhs.size(); ++i) {
        if (frame_rhs[i] > 0.0) {
            rep.frame_fitted_c = std::max(rep.frame_fitted_c, frame_lhs[i] / frame_rhs[i]);
        } else if (frame_lhs[i] > 0.0) {
            rep.frame_fitted_c = std::numeric_limits<double>::infinity();
        }
    }
    rep.frame_spearman = frame_lhs.size() >= 2 ? spearman(frame_lhs, frame_rhs) : 0.0;
    return rep;
}

// ---------------------------------------------------- residual distribution

struct DistSummary {
    std::int64_t n = 0;
    double median = 0.0;
    double p90 = 0.0;
    double p99 = 0.0;
    double max = 0.0;
};

inline DistSummary summarize(std::vector<double> xs) {
    if (xs.empty()) throw InsufficientData("summarize: empty sample");
    std::sort(xs.begin(), xs.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(xs.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, xs.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return xs[lo] * (1.0 - frac) + xs[hi] * frac;
    };
    DistSummary s;
    s.n = static_cast<std::int64_t>(xs.size());
    s.median = quantile(0.5);
    s.p90 = quantile(0.9);
    s.p99 = quantile(0.99);
    s.max = xs.back();
    return s;
}

struct StepDistSummary {
    std::int64_t chunk = 0;
    std::int64_t t = 0;  // newer step of the adjacent pair (t, t+1)
    DistSummary stats;
};

struct DistributionStats {
    DistSummary overall;                    // token-wise ||dR||_2, all steps
    std::vector<StepDistSummary> per_step;  // one per adjacent-step pair
    std::vector<DistSummary> per_frame;     // per frame index within a chunk
};

inline DistributionStats residual_distribution(const RunTrace& trace) {
    const auto shape = trace.header.at("shape");
    const std::int64_t F = shape.at("frames").get<std::int64_t>();
    const std::int64_t H = shape.at("height").get<std::int64_t>();
    const std::int64_t W = shape.at("width").get<std::int64_t>();
    const std::int64_t C = shape.at("channels").get<std::int64_t>();
    const std::int64_t ft = H * W;
    const std::int64_t T = trace.header.at("schedule").at("T").get<std::int64_t>();
    const std::int64_t chunks = trace.header.at("chunks").get<std::int64_t>();

    bool any_residual = false;
    for (const auto& tt : trace.tensors) {
        if (tt.tag == TensorTag::Residual) {
            any_residual = true;
            break;
        }
    }
    if (!any_residual) {
        throw StateError("residual_distribution: residual logging disabled for this trace");
    }

    DistributionStats stats;
    std::vector<double> all;
    std::vector<std::vector<double>> by_frame(static_cast<std::size_t>(F));
    for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
        for (std::int64_t t = T - 1; t >= 1; --t) {
            const TraceTensor* r_new = trace.find_tensor(TensorTag::Residual, chunk, t);
            const TraceTensor* r_old = trace.find_tensor(TensorTag::Residual, chunk, t + 1);
            if (!r_new || !r_old) continue;
            std::vector<double> step_vals;
            for (std::int64_t p = 0; p < F * ft; ++p) {
                double s = 0.0;
                for (std::int64_t c = 0; c < C; ++c) {
                    const double d = r_new->data[static_cast<std::size_t>(p * C + c)] -
                                     r_old->data[static_cast<std::size_t>(p * C + c)];
                    s += d * d;
                }
                const double val = std::sqrt(s);
                step_vals.push_back(val);
                all.push_back(val);
                by_frame[static_cast<std::size_t>(p / ft)].push_back(val);
            }
            stats.per_step.push_back({chunk, t, summarize(std::move(step_vals))});
        }
    }
    stats.overall = summarize(std::move(all));
    for (auto& fv : by_frame) stats.per_frame.push_back(summarize(std::move(fv)));
    return stats;
}

// ------------------------------------------------------------ open-loop replay

// Replays the accumulate-and-threshold policy over a fixed recorded
// (W, delta) sequence and counts total threshold crossings.
inline std::int64_t replay_threshold_crossings(const std::vector<TokenMap>& weights,
                                               const std::vector<double>& deltas, double tau) {
    if (weights.size() != deltas.size()) {
        throw InvalidArgument("replay_threshold_crossings: sequence length mismatch");
    }
    if (!(tau > 0.0)) throw InvalidArgument("replay_threshold_crossings: tau must be > 0");
    if (weights.empty()) return 0;
    std::vector<double> acc(weights.front().v.size(), 0.0);
    std::int64_t crossings = 0;
    for (std::size_t s = 0; s < weights.size(); ++s) {
        const auto& w = weights[s];
        if (w.v.size() != acc.size()) {
            throw InvalidArgument("replay_threshold_crossings: inconsistent grid");
        }
        for (std::size_t p = 0; p < acc.size(); ++p) {
            acc[p] += w.v[p] * deltas[s];
            if (acc[p] > tau) {
                crossings += 1;
                acc[p] = 0.0;
            }
        }
    }
    return crossings;
}

// Extracts the recorded (W, delta) sequence of one chunk from a trace.
inline std::pair<std::vector<TokenMap>, std::vector<double>> recorded_weight_sequence(
    const RunTrace& trace, std::int64_t chunk) {
    std::vector<TokenMap> ws;
    std::vector<double> ds;
    for (const auto& step : trace.steps) {
        if (step.chunk != chunk || !step.delta_valid || step.delta_infinite) continue;
        const TraceTensor* w = trace.find_tensor(TensorTag::WeightMap, chunk, step.t);
        if (!w) continue;
        TokenMap m(w->dims[0], w->dims[1], w->dims[2]);
        m.v = w->data;
        ws.push_back(std::move(m));
        ds.push_back(step.delta_chunk);
    }
    return {std::move(ws), std::move(ds)};
}

// ------------------------------------------------------------ flops ledger

// Rebuilds the per-step ledger from trace decisions; the trace is the single
// source of truth and the stored per-step numbers must match this
// re-derivation exactly.
inline FlopsLedger flops_account(const RunTrace& trace, const ModelDims& dims) {
    const auto shape = trace.header.at("shape");
    const std::int64_t channels = shape.at("channels").get<std::int64_t>();
    FlopsLedger ledger;
    for (const auto& s : trace.steps) {
        ledger.add(step_flops(s.mode, s.active_count, s.n_tokens, s.chunk, channels, dims));
    }
    return ledger;
}

inline ModelDims trace_model_dims(const RunTrace& trace) {
    ModelDims d;
    d.width = trace.header.at("model_dims").at("width").get<std::int64_t>();
    d.ffn_width = trace.header.at("model_dims").at("ffn_width").get<std::int64_t>();
    return d;
}

inline bool stored_flops_match_derivation(const RunTrace& trace) {
    const FlopsLedger ledger = flops_account(trace, trace_model_dims(trace));
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& a = trace.steps[i].flops;
        const auto& b = ledger.per_step[i];
        if (a.attention != b.attention || a.attn_gemm != b.attn_gemm ||
            a.ffn_gemm != b.ffn_gemm || a.reuse != b.reuse) {
            return false;
        }
    }
    return true;
}

inline std::int64_t token_forward_count(const RunTrace& trace) {
    std::int64_t n = 0;
    for (const auto& s : trace.steps) n += s.active_count;
    return n;
}

// Effective per-step active pattern (full modes expand to all/none) —
// used to compare decision sequences across policies.
inline std::vector<std::uint8_t> effective_mask(const TraceStep& s) {
    if (s.mode == StepMode::TokenSparse) return s.mask;
    return std::vector<std::uint8_t>(static_cast<std::size_t>(s.n_tokens),
                                     s.mode == StepMode::FullChunkCompute ? 1 : 0);
}

inline bool decision_sequences_identical(const RunTrace& a, const RunTrace& b) {
    if (a.steps.size() != b.steps.size()) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        const auto& sa = a.steps[i];
        const auto& sb = b.steps[i];
        if (sa.chunk != sb.chunk || sa.t != sb.t) return false;
        if (effective_mask(sa) != effective_mask(sb)) return false;
    }
    return true;
}

}  // namespace mc
