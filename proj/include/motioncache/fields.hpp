#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "motioncache/error.hpp"
#include "motioncache/kv_cache.hpp"
#include "motioncache/rng.hpp"
#include "motioncache/tensor.hpp"

namespace mc {

enum class FieldKind { RectifiedOracle, LinearField, ToyAttention };

inline std::string field_kind_name(FieldKind k) {
    switch (k) {
        case FieldKind::RectifiedOracle: return "rectified-oracle";
        case FieldKind::LinearField: return "linear-field";
        case FieldKind::ToyAttention: return "toy-attention";
    }
    return "?";
}

struct EvalContext {
    const KVCacheState* finalized = nullptr;  // prior chunks
    WorkingKV* working = nullptr;             // current chunk slots (toy-attention)
    std::int64_t chunk_index = 0;
};

// Pluggable velocity field. Deterministic: identical (inputs, seed) give
// bit-identical outputs. eval_full must equal eval_sparse with an all-token
// mask bit-exactly, so both route through one evaluation core.
class VelocityField {
public:
    virtual ~VelocityField() = default;

    virtual FieldKind kind() const = 0;
    virtual bool uses_kv() const { return false; }

    virtual Tensor eval_full(const Tensor& x, std::int64_t t, EvalContext& ctx) const = 0;

    // Velocity rows (n_active x C) for the active tokens only. Active tokens
    // attend over the full key/value set; inactive tokens contribute stale
    // K/V from their last computed state.
    virtual std::vector<double> eval_sparse(const Tensor& x, std::int64_t t,
                                            std::span<const std::int64_t> active,
                                            EvalContext& ctx) const = 0;

    // Fresh K/V rows for every token of x. Empty for pointwise fields.
    virtual KVRows compute_kv(const Tensor& /*x*/, std::int64_t /*t*/) const { return {}; }
};

namespace detail {

inline void check_active(std::span<const std::int64_t> active, std::int64_t n_tokens) {
    if (active.empty()) {
        throw InvalidArgument("eval_sparse: empty active mask (callers must "
                              "short-circuit a full skip)");
    }
    for (auto p : active) {
        if (p < 0 || p >= n_tokens) throw InvalidArgument("eval_sparse: token index out of range");
    }
}

}  // namespace detail

// Constant field v = x_noise_target - x_data_target per chunk, the exact
// velocity of the straight-line interpolation path; trajectories integrated
// from the matching noise reach the data exactly.
class RectifiedOracleField final : public VelocityField {
public:
    RectifiedOracleField(std::vector<Tensor> data_targets, std::vector<Tensor> noise_targets) {
        if (data_targets.size() != noise_targets.size()) {
            throw InvalidArgument("RectifiedOracleField: target count mismatch");
        }
        for (std::size_t i = 0; i < data_targets.size(); ++i) {
            velocity_.push_back(sub(noise_targets[i], data_targets[i]));
        }
    }

    FieldKind kind() const override { return FieldKind::RectifiedOracle; }

    Tensor eval_full(const Tensor& x, std::int64_t, EvalContext& ctx) const override {
        const Tensor& v = chunk_velocity(ctx.chunk_index);
        require_same_shape(x, v, "RectifiedOracleField::eval_full");
        return v;
    }

    std::vector<double> eval_sparse(const Tensor& x, std::int64_t,
                                    std::span<const std::int64_t> active,
                                    EvalContext& ctx) const override {
        detail::check_active(active, x.shape.tokens());
        const Tensor& v = chunk_velocity(ctx.chunk_index);
        require_same_shape(x, v, "RectifiedOracleField::eval_sparse");
        const auto C = x.shape.channels;
        std::vector<double> rows(active.size() * static_cast<std::size_t>(C));
        for (std::size_t j = 0; j < active.size(); ++j) {
            auto row = v.token(active[j]);
            std::copy(row.begin(), row.end(), rows.begin() + j * static_cast<std::size_t>(C));
        }
        return rows;
    }

private:
    const Tensor& chunk_velocity(std::int64_t i) const {
        if (i < 0 || i >= static_cast<std::int64_t>(velocity_.size())) {
            throw InvalidArgument("RectifiedOracleField: no target for chunk " + std::to_string(i));
        }
        return velocity_[static_cast<std::size_t>(i)];
    }

    std::vector<Tensor> velocity_;
};

// v(x, t) = a*x + b elementwise.
class LinearField final : public VelocityField {
public:
    LinearField(double a, double b) : a_(a), b_(b) {}

    FieldKind kind() const override { return FieldKind::LinearField; }

    Tensor eval_full(const Tensor& x, std::int64_t, EvalContext&) const override {
        Tensor out = x;
        for (double& e : out.v) e = a_ * e + b_;
        return out;
    }

    std::vector<double> eval_sparse(const Tensor& x, std::int64_t,
                                    std::span<const std::int64_t> active,
                                    EvalContext&) const override {
        detail::check_active(active, x.shape.tokens());
        const auto C = x.shape.channels;
        std::vector<double> rows(active.size() * static_cast<std::size_t>(C));
        for (std::size_t j = 0; j < active.size(); ++j) {
            auto row = x.token(active[j]);
            for (std::int64_t c = 0; c < C; ++c) {
                rows[j * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] =
                    a_ * row[c] + b_;
            }
        }
        return rows;
    }

    double a() const { return a_; }
    double b() const { return b_; }

private:
    double a_;
    double b_;
};

enum class KvStaleness { Stale, Fresh };

struct ToyAttentionParams {
    std::int64_t channels = 8;       // C, spec range [4, 16]
    std::int64_t hidden = 16;        // MLP width
    std::int64_t total_steps = 1;    // T, for time normalization
    double omega_max = 8.0;          // max sinusoidal frequency
    double weight_scale = 1.0;       // extra scale on the MLP output layer
    double gain = 1.0;               // scale of the attention/MLP term
    std::uint64_t seed = 0x7017;     // weight seed
    KvStaleness staleness = KvStaleness::Stale;
};

// Single-head attention (dim C) + 2-layer tanh MLP, weights drawn once from
// a seeded Gaussian and frozen. A sinusoidal time embedding with bounded
// frequencies is added to token features. Optionally anchored to a per-chunk
// constant velocity so that runs reproduce the scenario content:
//   v(x, t) = anchor + gain * MLP(Attention(x + e(t)))
class ToyAttentionField final : public VelocityField {
public:
    explicit ToyAttentionField(const ToyAttentionParams& p,
                               std::vector<Tensor> anchor = {})
        : p_(p), anchor_(std::move(anchor)) {
        if (p.channels < 1 || p.hidden < 1 || p.total_steps < 1) {
            throw InvalidArgument("ToyAttentionField: bad dimensions");
        }
        const auto C = static_cast<std::size_t>(p.channels);
        const auto H = static_cast<std::size_t>(p.hidden);
        Rng rng(p.seed);
        const double si = 1.0 / std::sqrt(static_cast<double>(p.channels));
        const double sh = 1.0 / std::sqrt(static_cast<double>(p.hidden));
        auto fill = [&](std::vector<double>& w, std::size_t n, double s) {
            w.resize(n);
            for (double& x : w) x = rng.gaussian() * s;
        };
        fill(wq_, C * C, si);
        fill(wk_, C * C, si);
        fill(wv_, C * C, si);
        fill(w1_, H * C, si);
        fill(b1_, H, 0.1);
        fill(w2_, C * H, sh * p.weight_scale);
        fill(b2_, C, 0.1 * p.weight_scale);
    }

    FieldKind kind() const override { return FieldKind::ToyAttention; }
    bool uses_kv() const override { return true; }
    const ToyAttentionParams& params() const { return p_; }

    // Frozen weights, exposed for independent reference implementations.
    const std::vector<double>& wq() const { return wq_; }
    const std::vector<double>& wk() const { return wk_; }
    const std::vector<double>& wv() const { return wv_; }
    const std::vector<double>& w1() const { return w1_; }
    const std::vector<double>& b1() const { return b1_; }
    const std::vector<double>& w2() const { return w2_; }
    const std::vector<double>& b2() const { return b2_; }

    KVRows compute_kv(const Tensor& x, std::int64_t t) const override {
        check_channels(x);
        const auto N = x.shape.tokens();
        const auto C = p_.channels;
        KVRows rows = KVRows::zeros(N, C);
        const std::vector<double> e = time_embedding(t);
        std::vector<double> h(static_cast<std::size_t>(C));
        for (std::int64_t pidx = 0; pidx < N; ++pidx) {
            embed_token(x, pidx, e, h);
            matvec(wk_, h, rows.k_row(pidx), C, C);
            matvec(wv_, h, rows.v_row(pidx), C, C);
        }
        return rows;
    }

    Tensor eval_full(const Tensor& x, std::int64_t t, EvalContext& ctx) const override {
        check_context(x, ctx);
        KVRows fresh = compute_kv(x, t);
        std::vector<std::int64_t> all(static_cast<std::size_t>(x.shape.tokens()));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
        std::vector<double> rows = attend_given(x, t, all, fresh, ctx.finalized, ctx.chunk_index);
        if (ctx.working) {
            ctx.working->rows = std::move(fresh);
            ctx.working->valid.assign(static_cast<std::size_t>(x.shape.tokens()), 1);
        }
        Tensor out(x.shape);
        std::copy(rows.begin(), rows.end(), out.v.begin());
        return out;
    }

    std::vector<double> eval_sparse(const Tensor& x, std::int64_t t,
                                    std::span<const std::int64_t> active,
                                    EvalContext& ctx) const override {
        detail::check_active(active, x.shape.tokens());
        check_context(x, ctx);
        if (!ctx.working) {
            throw StateError("ToyAttentionField::eval_sparse: working KV required");
        }
        WorkingKV& wkv = *ctx.working;
        if (wkv.rows.n != x.shape.tokens() || wkv.rows.dim != p_.channels) {
            throw StateError("ToyAttentionField::eval_sparse: working KV has wrong geometry");
        }

        KVRows current;
        const std::vector<double> e = time_embedding(t);
        std::vector<double> h(static_cast<std::size_t>(p_.channels));
        if (p_.staleness == KvStaleness::Fresh) {
            current = compute_kv(x, t);
        } else {
            for (std::int64_t pidx = 0; pidx < x.shape.tokens(); ++pidx) {
                bool is_active = false;
                for (auto a : active) {
                    if (a == pidx) { is_active = true; break; }
                }
                if (!is_active && !wkv.valid[static_cast<std::size_t>(pidx)]) {
                    throw StateError("ToyAttentionField::eval_sparse: stale K/V missing for "
                                     "inactive token " + std::to_string(pidx));
                }
            }
            current = wkv.rows;
            for (auto pidx : active) {
                embed_token(x, pidx, e, h);
                matvec(wk_, h, current.k_row(pidx), p_.channels, p_.channels);
                matvec(wv_, h, current.v_row(pidx), p_.channels, p_.channels);
            }
        }

        std::vector<double> rows = attend_given(x, t, active, current, ctx.finalized,
                                                ctx.chunk_index);
        // Computed tokens refresh their working slots (last-computed state).
        for (auto pidx : active) {
            std::copy(current.k_row(pidx), current.k_row(pidx) + p_.channels,
                      wkv.rows.k_row(pidx));
            std::copy(current.v_row(pidx), current.v_row(pidx) + p_.channels,
                      wkv.rows.v_row(pidx));
            wkv.valid[static_cast<std::size_t>(pidx)] = 1;
        }
        return rows;
    }

    // Attention + MLP for the given query tokens over an explicit key/value
    // set: finalized chunk blocks first, then the supplied current-chunk
    // rows. This is the single evaluation core; sparse/dense consistency is
    // "gather" by construction.
    std::vector<double> attend_given(const Tensor& x, std::int64_t t,
                                     std::span<const std::int64_t> queries,
                                     const KVRows& current,
                                     const KVCacheState* finalized,
                                     std::int64_t chunk_index) const {
        check_channels(x);
        const auto C = p_.channels;
        const auto Hm = p_.hidden;
        const std::vector<double> e = time_embedding(t);

        std::vector<const KVRows*> blocks;
        if (finalized) {
            for (std::int64_t b = 0; b < finalized->finalized_chunks(); ++b) {
                blocks.push_back(&finalized->block(b));
            }
        }
        blocks.push_back(&current);

        std::int64_t n_keys = 0;
        for (const auto* b : blocks) n_keys += b->n;

        const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));
        std::vector<double> h(static_cast<std::size_t>(C));
        std::vector<double> q(static_cast<std::size_t>(C));
        std::vector<double> scores(static_cast<std::size_t>(n_keys));
        std::vector<double> attn(static_cast<std::size_t>(C));
        std::vector<double> z(static_cast<std::size_t>(Hm));
        std::vector<double> out_row(static_cast<std::size_t>(C));

        std::vector<double> rows(queries.size() * static_cast<std::size_t>(C));
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            const std::int64_t pidx = queries[qi];
            embed_token(x, pidx, e, h);
            matvec(wq_, h, q.data(), C, C);

            std::int64_t kpos = 0;
            double smax = -1e300;
            for (const auto* b : blocks) {
                for (std::int64_t j = 0; j < b->n; ++j, ++kpos) {
                    double s = 0.0;
                    const double* krow = b->k_row(j);
                    for (std::int64_t c = 0; c < C; ++c) s += q[static_cast<std::size_t>(c)] * krow[c];
                    s *= inv_sqrt_c;
                    scores[static_cast<std::size_t>(kpos)] = s;
                    if (s > smax) smax = s;
                }
            }
            double denom = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - smax);
                denom += s;
            }
            std::fill(attn.begin(), attn.end(), 0.0);
            kpos = 0;
            for (const auto* b : blocks) {
                for (std::int64_t j = 0; j < b->n; ++j, ++kpos) {
                    const double w = scores[static_cast<std::size_t>(kpos)] / denom;
                    const double* vrow = b->v_row(j);
                    for (std::int64_t c = 0; c < C; ++c) attn[static_cast<std::size_t>(c)] += w * vrow[c];
                }
            }

            matvec(w1_, attn, z.data(), Hm, C);
            for (std::int64_t j = 0; j < Hm; ++j) {
                z[static_cast<std::size_t>(j)] = std::tanh(z[static_cast<std::size_t>(j)] +
                                                           b1_[static_cast<std::size_t>(j)]);
            }
            matvec(w2_, z, out_row.data(), C, Hm);

            double* dst = rows.data() + qi * static_cast<std::size_t>(C);
            const double* anchor_row = anchor_token(chunk_index, x, pidx);
            for (std::int64_t c = 0; c < C; ++c) {
                const double base = anchor_row ? anchor_row[c] : 0.0;
                dst[c] = base + p_.gain * (out_row[static_cast<std::size_t>(c)] +
                                           b2_[static_cast<std::size_t>(c)]);
            }
        }
        return rows;
    }

    // e(t): sin/cos pairs over bounded frequencies in [1, omega_max],
    // evaluated at normalized time t/T.
    std::vector<double> time_embedding(std::int64_t t) const {
        const auto C = static_cast<std::size_t>(p_.channels);
        const double s = static_cast<double>(t) / static_cast<double>(p_.total_steps);
        std::vector<double> e(C);
        const std::size_t pairs = (C + 1) / 2;
        for (std::size_t k = 0; k < pairs; ++k) {
            const double omega =
                pairs > 1 ? 1.0 + (p_.omega_max - 1.0) * static_cast<double>(k) /
                                      static_cast<double>(pairs - 1)
                          : p_.omega_max;
            e[2 * k] = std::sin(omega * s);
            if (2 * k + 1 < C) e[2 * k + 1] = std::cos(omega * s);
        }
        return e;
    }

private:
    void check_channels(const Tensor& x) const {
        if (x.shape.channels != p_.channels) {
            throw InvalidArgument("ToyAttentionField: channel mismatch");
        }
    }

    void check_context(const Tensor& x, const EvalContext& ctx) const {
        check_channels(x);
        if (ctx.chunk_index > 0) {
            if (!ctx.finalized || ctx.finalized->finalized_chunks() < ctx.chunk_index) {
                throw StateError("ToyAttentionField: KV state missing for chunk " +
                                 std::to_string(ctx.chunk_index));
            }
        }
    }

    const double* anchor_token(std::int64_t chunk_index, const Tensor& x,
                               std::int64_t pidx) const {
        if (anchor_.empty()) return nullptr;
        if (chunk_index < 0 || chunk_index >= static_cast<std::int64_t>(anchor_.size())) {
            throw InvalidArgument("ToyAttentionField: no anchor for chunk " +
                                  std::to_string(chunk_index));
        }
        const Tensor& a = anchor_[static_cast<std::size_t>(chunk_index)];
        require_same_shape(a, x, "ToyAttentionField anchor");
        return a.token(pidx).data();
    }

    void embed_token(const Tensor& x, std::int64_t pidx, const std::vector<double>& e,
                     std::vector<double>& h) const {
        auto row = x.token(pidx);
        for (std::int64_t c = 0; c < p_.channels; ++c) {
            h[static_cast<std::size_t>(c)] = row[c] + e[static_cast<std::size_t>(c)];
        }
    }

    // out = W * in, W is rows x cols row-major.
    static void matvec(const std::vector<double>& w, const std::vector<double>& in,
                       double* out, std::int64_t rows, std::int64_t cols) {
        for (std::int64_t r = 0; r < rows; ++r) {
            double s = 0.0;
            const double* wr = w.data() + r * cols;
            for (std::int64_t c = 0; c < cols; ++c) s += wr[c] * in[static_cast<std::size_t>(c)];
            out[r] = s;
        }
    }

    ToyAttentionParams p_;
    std::vector<Tensor> anchor_;
    std::vector<double> wq_, wk_, wv_, w1_, b1_, w2_, b2_;
};

// K/V block for a fully denoised chunk, computed fresh from its final
// latent at t = 0, then appended to the cache.
inline void finalize_chunk_kv(KVCacheState& kv, const VelocityField& field,
                              std::int64_t chunk_index, const Tensor& final_latent) {
    if (field.uses_kv()) {
        kv.finalize_chunk(chunk_index, field.compute_kv(final_latent, 0));
    } else {
        kv.finalize_chunk(chunk_index,
                          KVRows::zeros(final_latent.shape.tokens(), final_latent.shape.channels));
    }
}

}  // namespace mc
