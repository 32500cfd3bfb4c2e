#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "motioncache/analysis.hpp"
#include "motioncache/experiment.hpp"
#include "motioncache/quality.hpp"

using namespace mc;

namespace {

// Second, deliberately naive SSIM implementation used as the oracle: two-pass
// mean/variance per window instead of accumulated moments.
double naive_ssim(const Tensor& a, const Tensor& b, double range) {
    const auto& s = a.shape;
    const double c1 = std::pow(0.01 * range, 2);
    const double c2 = std::pow(0.03 * range, 2);
    const std::int64_t win = std::min<std::int64_t>({7, s.height, s.width});
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t f = 0; f < s.frames; ++f) {
        for (std::int64_t c = 0; c < s.channels; ++c) {
            for (std::int64_t i = 0; i + win <= s.height; ++i) {
                for (std::int64_t j = 0; j + win <= s.width; ++j) {
                    double ma = 0, mb = 0;
                    for (std::int64_t di = 0; di < win; ++di) {
                        for (std::int64_t dj = 0; dj < win; ++dj) {
                            ma += a.at(f, i + di, j + dj, c);
                            mb += b.at(f, i + di, j + dj, c);
                        }
                    }
                    const double n = static_cast<double>(win * win);
                    ma /= n;
                    mb /= n;
                    double va = 0, vb = 0, cab = 0;
                    for (std::int64_t di = 0; di < win; ++di) {
                        for (std::int64_t dj = 0; dj < win; ++dj) {
                            const double da = a.at(f, i + di, j + dj, c) - ma;
                            const double db = b.at(f, i + di, j + dj, c) - mb;
                            va += da * da;
                            vb += db * db;
                            cab += da * db;
                        }
                    }
                    va /= n;
                    vb /= n;
                    cab /= n;
                    acc += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    return acc / static_cast<double>(count);
}

ExperimentConfig analysis_config(const std::string& field_kind) {
    ExperimentConfig c;
    c.scenario.kind = "moving-blob";
    c.scenario.frames = 3;
    c.scenario.height = 7;
    c.scenario.width = 7;
    c.scenario.channels = 4;
    c.scenario.chunks = 2;
    c.scenario.center_h = 2.0;
    c.scenario.center_w = 2.0;
    c.scenario.vel_h = 0.3;
    c.scenario.vel_w = 0.4;
    c.scenario.radius = 1.5;
    c.scenario.amplitude = 4.0;
    c.field.kind = field_kind;
    c.field.hidden = 8;
    c.schedule.total_steps = 14;
    c.seeds = {5};
    return c;
}

}  // namespace

TEST_CASE("ndcg hand-computed values") {
    SECTION("perfect ranking scores one") {
        const std::vector<double> oracle{3, 2, 1, 0.5};
        CHECK(ndcg(oracle, oracle) == 1.0);
    }
    SECTION("fully reversed ranking of [3,2,1]") {
        const std::vector<double> oracle{3, 2, 1};
        const std::vector<double> proxy{1, 2, 3};
        const double dcg = 1.0 / 1.0 + 2.0 / std::log2(3.0) + 3.0 / 2.0;
        const double idcg = 3.0 / 1.0 + 2.0 / std::log2(3.0) + 1.0 / 2.0;
        CHECK(ndcg(proxy, oracle) == Catch::Approx(dcg / idcg).epsilon(1e-12));
        CHECK(ndcg(proxy, oracle) == Catch::Approx(0.790).margin(5e-4));
    }
    SECTION("single token") {
        const std::vector<double> one{42.0};
        CHECK(ndcg(one, one) == 1.0);
    }
    SECTION("all-zero oracle scores one by convention") {
        const std::vector<double> proxy{1, 2, 3};
        const std::vector<double> oracle{0, 0, 0};
        CHECK(ndcg(proxy, oracle) == 1.0);
    }
    SECTION("invalid inputs") {
        CHECK_THROWS_AS(ndcg(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
        CHECK_THROWS_AS(ndcg(std::vector<double>{1}, std::vector<double>{1, 2}),
                        InvalidArgument);
    }
    SECTION("invariant under strictly monotone transforms of the proxy") {
        Rng rng(31);
        std::vector<double> proxy(25), oracle(25);
        for (auto& x : proxy) x = std::abs(rng.gaussian());
        for (auto& x : oracle) x = std::abs(rng.gaussian());
        proxy[3] = proxy[7];  // a tie survives the transform

        std::vector<double> mapped(proxy.size());
        soft_map_frame(proxy, 0.4, 1e-9, mapped);
        CHECK(ndcg(mapped, oracle) == ndcg(proxy, oracle));

        std::vector<double> cubed = proxy;
        for (auto& x : cubed) x = x * x * x + 2.0;
        CHECK(ndcg(cubed, oracle) == ndcg(proxy, oracle));
    }
    SECTION("truncated depth") {
        const std::vector<double> oracle{3, 2, 1};
        const std::vector<double> proxy{3, 2, 1};
        CHECK(ndcg(proxy, oracle, 2) == 1.0);
    }
}

TEST_CASE("spearman rank correlation") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> y{2, 4, 6, 8, 10};
    CHECK(spearman(x, y) == Catch::Approx(1.0));
    std::vector<double> rev{5, 4, 3, 2, 1};
    CHECK(spearman(x, rev) == Catch::Approx(-1.0));
    std::vector<double> ties{1, 1, 1, 1, 1};
    CHECK(spearman(x, ties) == 0.0);
}

TEST_CASE("proposition 1 holds on dual-emitted traces") {
    SECTION("toy attention backaend") {
        const ExperimentConfig c = analysis_config("toy-attention");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals, true);
        const RunResult res = execute_policy(c, pr, vanilla);
        const ErrorReport rep = prop1_check(res.trace);
        CHECK(rep.samples.size() >= 20);
        CHECK(rep.max_rel_violation <= 1e-9);
        for (const auto& s : rep.samples) CHECK(s.eps >= 0.0);
    }
    SECTION("identity field has zero residuals, hence zero error") {
        ExperimentConfig c = analysis_config("linear-field");
        c.field.linear_a = 1.0;
        c.field.linear_b = 0.0;  // v = x, so R = 0 at every step
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals, true);
        const RunResult res = execute_policy(c, pr, vanilla);
        const ErrorReport rep = prop1_check(res.trace);
        for (const auto& s : rep.samples) {
            CHECK(s.eps == 0.0);
            CHECK(s.predicted == 0.0);
        }
    }
    SECTION("a zero step size gives zero error trivially") {
        const ChunkShape s{1, 2, 2, 2};
        const Tensor x = gaussian_tensor(s, 1);
        const Tensor v = gaussian_tensor(s, 2);
        CHECK(max_abs_diff(euler_step(x, v, 0.0), x) == 0.0);
    }
    SECTION("missing dual data is rejected") {
        const ExperimentConfig c = analysis_config("toy-attention");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals, false);
        const RunResult res = execute_policy(c, pr, vanilla);
        CHECK_THROWS_AS(prop1_check(res.trace), InvalidArgument);
    }
}

TEST_CASE("lemma check") {
    SECTION("rectified oracle: residual differences equal the drift exactly") {
        const ExperimentConfig c = analysis_config("rectified-oracle");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals);
        const RunResult res = execute_policy(c, pr, vanilla);
        const LemmaReport rep = lemma_check(res.trace);
        CHECK(rep.samples >= 10);
        CHECK(std::isfinite(rep.fitted_c));

        // every lhs sample is bounded by the largest token drift ||v_p||/T
        double max_drift = 0.0;
        for (std::size_t i = 0; i < pr.scenario.data.size(); ++i) {
            const Tensor v = sub(pr.inputs.init_noise[i], pr.scenario.data[i]);
            for (std::int64_t p = 0; p < v.shape.tokens(); ++p) {
                double l2 = 0.0;
                for (double e : v.token(p)) l2 += e * e;
                max_drift = std::max(max_drift, std::sqrt(l2));
            }
        }
        max_drift /= static_cast<double>(c.schedule.total_steps);
        for (double lhs : rep.lhs) CHECK(lhs <= max_drift * (1.0 + 1e-9));
    }

    SECTION("fitted C is invariant under joint scaling of the trace") {
        const ExperimentConfig c = analysis_config("toy-attention");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals);
        RunResult res = execute_policy(c, pr, vanilla);
        const LemmaReport before = lemma_check(res.trace);
        for (auto& tt : res.trace.tensors) {
            for (double& x : tt.data) x *= 2.0;
        }
        const LemmaReport after = lemma_check(res.trace);
        CHECK(after.fitted_c == Catch::Approx(before.fitted_c).epsilon(1e-12));
        CHECK(after.spearman_rank == Catch::Approx(before.spearman_rank).epsilon(1e-12));
    }

    SECTION("insufficient data is rejected") {
        ExperimentConfig c = analysis_config("toy-attention");
        c.scenario.frames = 1;  // no intra-chunk pairs at all
        c.scenario.chunks = 1;
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals);
        const RunResult res = execute_policy(c, pr, vanilla);
        CHECK_THROWS_AS(lemma_check(res.trace), InsufficientData);
    }
}

TEST_CASE("residual distribution statistics") {
    SECTION("static rectified-oracle run is drift-degenerate") {
        ExperimentConfig c = analysis_config("rectified-oracle");
        c.scenario.vel_h = 0.0;
        c.scenario.vel_w = 0.0;
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals);
        const RunResult res = execute_policy(c, pr, vanilla);
        const DistributionStats stats = residual_distribution(res.trace);

        double max_drift = 0.0;
        for (std::size_t i = 0; i < pr.scenario.data.size(); ++i) {
            const Tensor v = sub(pr.inputs.init_noise[i], pr.scenario.data[i]);
            for (std::int64_t p = 0; p < v.shape.tokens(); ++p) {
                double l2 = 0.0;
                for (double e : v.token(p)) l2 += e * e;
                max_drift = std::max(max_drift, std::sqrt(l2));
            }
        }
        max_drift /= static_cast<double>(c.schedule.total_steps);
        CHECK(stats.overall.max <= max_drift * (1.0 + 1e-9));
        CHECK(stats.overall.median <= stats.overall.max);
        // drift is constant in t, so per-step summaries are identical within
        // each chunk (chunks carry independent noise targets)
        for (std::int64_t chunk = 0; chunk < 2; ++chunk) {
            const DistSummary* first = nullptr;
            for (const auto& st : stats.per_step) {
                if (st.chunk != chunk) continue;
                if (!first) {
                    first = &st.stats;
                    continue;
                }
                CHECK(st.stats.median == Catch::Approx(first->median).epsilon(1e-12));
                CHECK(st.stats.max == Catch::Approx(first->max).epsilon(1e-12));
            }
        }
    }

    SECTION("moving blob on toy attention has per-frame heterogeneity") {
        const ExperimentConfig c = analysis_config("toy-attention");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Residuals);
        const RunResult res = execute_policy(c, pr, vanilla);
        const DistributionStats stats = residual_distribution(res.trace);
        REQUIRE(stats.per_frame.size() == 3);
        bool differs = false;
        for (const auto& st : stats.per_frame) {
            if (st.median != stats.per_frame.front().median) differs = true;
        }
        CHECK(differs);
        CHECK(stats.overall.p90 >= stats.overall.median);
        CHECK(stats.overall.p99 >= stats.overall.p90);
        CHECK(stats.overall.max >= stats.overall.p99);
    }

    SECTION("duplicated tokens collapse the quantiles") {
        const DistSummary s = summarize(std::vector<double>(40, 1.25));
        CHECK(s.median == 1.25);
        CHECK(s.p90 == 1.25);
        CHECK(s.p99 == 1.25);
        CHECK(s.max == 1.25);
    }

    SECTION("decisions-only traces are rejected") {
        const ExperimentConfig c = analysis_config("toy-attention");
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Decisions);
        const RunResult res = execute_policy(c, pr, vanilla);
        CHECK_THROWS_AS(residual_distribution(res.trace), StateError);
    }
}

TEST_CASE("quality metrics") {
    const ChunkShape s{2, 9, 9, 2};
    const Tensor a = gaussian_tensor(s, 21);

    SECTION("identity") {
        CHECK(mse(a, a) == 0.0);
        CHECK(std::isinf(psnr_from_mse(0.0, 1.0)));
        CHECK(ssim(a, a, 4.0) == 1.0);
    }
    SECTION("uniform offset example") {
        Tensor b = a;
        for (double& x : b.v) x += 0.1;
        const double m = mse(a, b);
        CHECK(m == Catch::Approx(0.01).epsilon(1e-12));
        CHECK(psnr_from_mse(m, 1.0) == Catch::Approx(20.0).epsilon(1e-12));
    }
    SECTION("ssim cross-checked against a naive reference") {
        const Tensor b = gaussian_tensor(s, 22);
        const double got = ssim(a, b, 4.0);
        const double want = naive_ssim(a, b, 4.0);
        CHECK(got == Catch::Approx(want).epsilon(1e-10));
        CHECK(got < 1.0);
    }
    SECTION("ssim is symmetric") {
        const Tensor b = gaussian_tensor(s, 23);
        CHECK(ssim(a, b, 4.0) == Catch::Approx(ssim(b, a, 4.0)).epsilon(1e-12));
    }
    SECTION("psnr strictly decreases as mse increases") {
        double prev = psnr_from_mse(0.001, 2.0);
        for (double m : {0.01, 0.1, 1.0, 10.0}) {
            const double cur = psnr_from_mse(m, 2.0);
            CHECK(cur < prev);
            prev = cur;
        }
    }
    SECTION("small frames fall back to a global window") {
        const ChunkShape tiny{1, 3, 3, 1};
        const Tensor ta = gaussian_tensor(tiny, 1);
        CHECK(ssim(ta, ta, 1.0) == 1.0);
    }
}

TEST_CASE("flops accounting") {
    const ModelDims dims{2, 4};

    SECTION("vanilla one-step example") {
        const StepFlops f = step_flops(StepMode::FullChunkCompute, 4, 4, 0, 3, dims);
        CHECK(f.attention == 128.0);  // 4 * 4 * 4 * 2
        CHECK(f.attn_gemm == 8.0 * 4 * 2 * 2);
        CHECK(f.ffn_gemm == 4.0 * 4 * 2 * 4);
        CHECK(f.reuse == 0.0);
    }
    SECTION("full skip contributes nothing to compute categories") {
        const StepFlops f = step_flops(StepMode::FullChunkSkip, 0, 4, 0, 3, dims);
        CHECK(f.attention == 0.0);
        CHECK(f.attn_gemm == 0.0);
        CHECK(f.ffn_gemm == 0.0);
        CHECK(f.reuse == 12.0);  // 4 tokens * 3 channels
    }
    SECTION("half-active attention is exactly half") {
        const StepFlops full = step_flops(StepMode::FullChunkCompute, 8, 8, 1, 3, dims);
        const StepFlops half = step_flops(StepMode::TokenSparse, 4, 8, 1, 3, dims);
        CHECK(half.attention * 2.0 == full.attention);
        CHECK(half.attn_gemm * 2.0 == full.attn_gemm);
        CHECK(half.ffn_gemm * 2.0 == full.ffn_gemm);
    }
    SECTION("later chunks attend over more keys") {
        const StepFlops c0 = step_flops(StepMode::FullChunkCompute, 8, 8, 0, 3, dims);
        const StepFlops c1 = step_flops(StepMode::FullChunkCompute, 8, 8, 1, 3, dims);
        CHECK(c1.attention == 2.0 * c0.attention);
        CHECK(c1.attn_gemm == c0.attn_gemm);
    }
    SECTION("ledger additivity and dominance on real runs") {
        const ExperimentConfig c = analysis_config("toy-attention");
        const PreparedRun pr = prepare_run(c, 5, Verbosity::Decisions);
        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;
        PolicyConfig mcache;
        mcache.kind = PolicyKind::MotionCache;
        mcache.tau = 0.08;
        mcache.alpha = 0.4;
        mcache.phase1_full_computes = 3;
        mcache.warmup_steps = 2;

        const RunResult rv = execute_policy(c, pr, vanilla);
        const RunResult rm = execute_policy(c, pr, mcache);
        const FlopsLedger lv = flops_account(rv.trace, c.dims());
        const FlopsLedger lm = flops_account(rm.trace, c.dims());

        double att = 0;
        for (const auto& f : lm.per_step) att += f.attention;
        CHECK(att == Catch::Approx(lm.totals.attention).epsilon(1e-12));
        CHECK(lv.dominates(lm));
        CHECK(stored_flops_match_derivation(rv.trace));
        CHECK(stored_flops_match_derivation(rm.trace));
        CHECK(lm.totals.attention >= 0.0);
        CHECK(lm.totals.reuse > 0.0);
        CHECK(lv.totals.reuse == 0.0);
    }
}

TEST_CASE("replay validation") {
    CHECK(replay_threshold_crossings({}, {}, 0.5) == 0);
    TokenMap w(1, 1, 2);
    w.v = {1.0, 0.5};
    CHECK_THROWS_AS(replay_threshold_crossings({w}, {0.1, 0.2}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(replay_threshold_crossings({w}, {0.1}, 0.0), InvalidArgument);
    // one token crosses, the other stays below
    CHECK(replay_threshold_crossings({w, w}, {0.3, 0.3}, 0.5) == 1);
}
