#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "motioncache/analysis.hpp"
#include "motioncache/config.hpp"
#include "motioncache/quality.hpp"
#include "motioncache/runner.hpp"

namespace mc {

struct PreparedRun {
    std::uint64_t seed = 0;
    Scenario scenario;
    std::shared_ptr<VelocityField> field;
    RunInputs inputs;
};

inline Scenario build_scenario(const ExperimentConfig& c, std::uint64_t seed) {
    if (c.scenario.kind == "moving-blob") {
        MovingBlobParams p;
        p.chunk_shape = c.scenario.shape();
        p.chunks = c.scenario.chunks;
        p.center_h = c.scenario.center_h;
        p.center_w = c.scenario.center_w;
        p.vel_h = c.scenario.vel_h;
        p.vel_w = c.scenario.vel_w;
        p.radius = c.scenario.radius;
        p.amplitude = c.scenario.amplitude;
        p.cutoff_mult = c.scenario.cutoff_mult;
        p.texture_scale = c.scenario.texture_scale;
        return generate_moving_blob(p, seed);
    }
    return generate_random_latents(c.scenario.shape(), c.scenario.chunks, seed,
                                   c.scenario.random_stddev);
}

inline std::shared_ptr<VelocityField> build_field(const ExperimentConfig& c,
                                                  const Scenario& scenario,
                                                  const std::vector<Tensor>& noise) {
    if (c.field.kind == "rectified-oracle") {
        return std::make_shared<RectifiedOracleField>(scenario.data, noise);
    }
    if (c.field.kind == "linear-field") {
        return std::make_shared<LinearField>(c.field.linear_a, c.field.linear_b);
    }
    ToyAttentionParams p;
    p.channels = c.scenario.channels;
    p.hidden = c.field.hidden;
    p.total_steps = c.schedule.total_steps;
    p.omega_max = c.field.omega_max;
    p.weight_scale = c.field.weight_scale;
    p.gain = c.field.gain;
    p.seed = c.field.field_seed;
    p.staleness = c.field.kv_staleness == "fresh" ? KvStaleness::Fresh : KvStaleness::Stale;
    std::vector<Tensor> anchor;
    if (c.field.anchored) {
        for (std::size_t i = 0; i < scenario.data.size(); ++i) {
            anchor.push_back(sub(noise[i], scenario.data[i]));
        }
    }
    return std::make_shared<ToyAttentionField>(p, std::move(anchor));
}

inline PreparedRun prepare_run(const ExperimentConfig& c, std::uint64_t seed,
                               std::optional<Verbosity> verbosity = std::nullopt,
                               bool dual_emit = false) {
    PreparedRun pr;
    pr.seed = seed;
    pr.scenario = build_scenario(c, seed);
    auto noise = make_noise_chunks(c.scenario.shape(), c.scenario.chunks, seed);
    pr.field = build_field(c, pr.scenario, noise);
    pr.inputs.shape = c.scenario.shape();
    pr.inputs.chunks = c.scenario.chunks;
    pr.inputs.sched = NoiseSchedule(c.schedule.total_steps, c.schedule.window);
    pr.inputs.field = pr.field.get();
    pr.inputs.init_noise = std::move(noise);
    pr.inputs.dims = c.dims();
    pr.inputs.verbosity = verbosity.value_or(verbosity_from_name(c.verbosity));
    pr.inputs.dual_emit = dual_emit;
    return pr;
}

inline RunResult execute_policy(const ExperimentConfig& c, const PreparedRun& pr,
                                const PolicyConfig& policy) {
    RunResult res = run_denoise(policy, pr.inputs);
    res.trace.header["config_hash"] = config_hash(c);
    res.trace.header["scenario_hash"] = scenario_hash(c, pr.seed);
    res.trace.header["seed"] = pr.seed;
    res.trace.header["config"] = config_to_json(c);
    return res;
}

namespace detail {

inline std::string sanitize_label(const std::string& s) {
    std::string out;
    for (char ch : s) {
        out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '-');
    }
    return out.empty() ? std::string("policy") : out;
}

inline std::vector<std::string> unique_labels(const std::vector<PolicyConfig>& ps) {
    std::vector<std::string> labels;
    for (const auto& p : ps) labels.push_back(sanitize_label(p.label()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int dup = 0;
        for (std::size_t j = 0; j < i; ++j) {
            if (labels[j] == labels[i]) ++dup;
        }
        if (dup > 0) labels[i] += "-" + std::to_string(dup + 1);
    }
    return labels;
}

inline json number_or_inf(double x) {
    if (std::isinf(x)) return json(x > 0 ? "inf" : "-inf");
    return json(x);
}

inline std::string format_double(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

// Runs every configured policy on every seed, writes one trace per
// (policy, seed) plus summary.json, and returns the summary.
inline json run_experiment(const ExperimentConfig& c, const std::string& out_dir_override = "",
                           bool write_files = true) {
    const std::string out_dir = out_dir_override.empty() ? c.out_dir : out_dir_override;
    if (write_files) std::filesystem::create_directories(out_dir);

    const auto labels = detail::unique_labels(c.policies);
    std::optional<std::size_t> vanilla_idx;
    for (std::size_t i = 0; i < c.policies.size(); ++i) {
        if (c.policies[i].kind == PolicyKind::Vanilla && !vanilla_idx) vanilla_idx = i;
    }

    json summary;
    summary["config_hash"] = config_hash(c);
    summary["config"] = config_to_json(c);
    summary["seeds"] = json::array();

    for (const std::uint64_t seed : c.seeds) {
        const PreparedRun pr = prepare_run(c, seed);
        json seed_block;
        seed_block["seed"] = seed;
        seed_block["scenario_hash"] = scenario_hash(c, seed);
        seed_block["policies"] = json::array();

        std::vector<RunResult> results;
        for (const auto& policy : c.policies) results.push_back(execute_policy(c, pr, policy));

        double range = c.quality_range;
        if (range <= 0.0 && vanilla_idx) {
            range = derive_range(results[*vanilla_idx].final_latents);
        }

        for (std::size_t i = 0; i < c.policies.size(); ++i) {
            const auto& policy = c.policies[i];
            RunResult& res = results[i];
            const std::string trace_file =
                "trace_" + labels[i] + "_seed" + std::to_string(seed) + ".mctr";
            if (write_files) {
                write_trace(res.trace, (std::filesystem::path(out_dir) / trace_file).string());
            }

            const FlopsLedger ledger = flops_account(res.trace, c.dims());
            const std::int64_t forwards = token_forward_count(res.trace);
            const std::int64_t possible =
                c.scenario.chunks * c.schedule.total_steps * c.scenario.shape().tokens();

            json pj;
            pj["name"] = labels[i];
            pj["kind"] = policy_kind_name(policy.kind);
            pj["trace_file"] = trace_file;
            pj["flops"] = {{"attention", ledger.totals.attention},
                           {"attn_gemm", ledger.totals.attn_gemm},
                           {"ffn_gemm", ledger.totals.ffn_gemm},
                           {"reuse", ledger.totals.reuse},
                           {"total", ledger.totals.categories_total()}};
            pj["token_forwards"] = forwards;
            pj["active_token_ratio"] =
                static_cast<double>(forwards) / static_cast<double>(possible);
            pj["degenerate_phase1_chunks"] = res.degenerate_chunks;
            if (vanilla_idx && i != *vanilla_idx) {
                const QualityReport q =
                    quality_metrics(results[*vanilla_idx].final_latents, res.final_latents, range);
                pj["quality_vs_vanilla"] = {{"mse", q.mse},
                                            {"psnr", detail::number_or_inf(q.psnr)},
                                            {"ssim", q.ssim}};
            }
            seed_block["policies"].push_back(std::move(pj));
        }
        summary["seeds"].push_back(std::move(seed_block));
    }

    if (write_files) {
        std::ofstream f(std::filesystem::path(out_dir) / "summary.json", std::ios::trunc);
        if (!f) throw IoError("cannot write summary.json");
        f << summary.dump(2) << "\n";
    }
    return summary;
}

// ------------------------------------------------------------------ sweep

struct SweepRow {
    double value = 0.0;
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double flops = 0.0;
    std::int64_t token_forwards = 0;
};

// One run per parameter value on a copy of the first caching policy; quality
// measured against a vanilla reference on the same seeds.
inline std::vector<SweepRow> sweep_runs(const ExperimentConfig& c, const std::string& parameter,
                                        const std::vector<double>& values) {
    if (values.empty()) throw InvalidArgument("sweep: empty value list");
    std::optional<std::size_t> target;
    for (std::size_t i = 0; i < c.policies.size(); ++i) {
        if (c.policies[i].kind != PolicyKind::Vanilla) {
            target = i;
            break;
        }
    }
    if (!target) throw InvalidArgument("sweep: config has no caching policy to sweep");
    if (parameter != "alpha" && parameter != "tau" && parameter != "K") {
        throw InvalidArgument("sweep: parameter must be one of alpha, tau, K");
    }
    if (parameter == "alpha" && c.policies[*target].kind != PolicyKind::MotionCache) {
        throw InvalidArgument("sweep: alpha applies to the motioncache policy only");
    }

    std::vector<SweepRow> rows;
    for (const double value : values) {
        PolicyConfig p = c.policies[*target];
        if (parameter == "alpha") {
            p.alpha = value;
        } else if (parameter == "tau") {
            p.tau = value;
        } else {
            p.phase1_full_computes = static_cast<std::int64_t>(value);
        }
        p.validate();

        PolicyConfig vanilla;
        vanilla.kind = PolicyKind::Vanilla;

        SweepRow row;
        row.value = value;
        for (const std::uint64_t seed : c.seeds) {
            const PreparedRun pr = prepare_run(c, seed, Verbosity::Decisions);
            const RunResult base = execute_policy(c, pr, vanilla);
            const RunResult res = execute_policy(c, pr, p);
            const double range =
                c.quality_range > 0.0 ? c.quality_range : derive_range(base.final_latents);
            const QualityReport q = quality_metrics(base.final_latents, res.final_latents, range);
            row.mse += q.mse;
            row.psnr += q.psnr;
            row.ssim += q.ssim;
            row.flops += flops_account(res.trace, c.dims()).totals.categories_total();
            row.token_forwards += token_forward_count(res.trace);
        }
        const double n = static_cast<double>(c.seeds.size());
        row.mse /= n;
        row.psnr /= n;
        row.ssim /= n;
        row.flops /= n;
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(const std::string& parameter, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << parameter << ",psnr,ssim,mse,flops,token_forwards\n";
    for (const auto& r : rows) {
        os << detail::format_double(r.value) << "," << detail::format_double(r.psnr) << ","
           << detail::format_double(r.ssim) << "," << detail::format_double(r.mse) << ","
           << detail::format_double(r.flops) << "," << r.token_forwards << "\n";
    }
    return os.str();
}

// ------------------------------------------------------------------ verify

struct VerifyReport {
    bool pass = false;
    json stats;
};

// Proposition-1 identity on randomized (backend x seed x step) dual-path
// samples: eps must equal dt * ||R_t - R_prev||_2 to 1e-9 relative.
inline VerifyReport verify_prop1(const ExperimentConfig& c, std::int64_t min_samples = 1000) {
    VerifyReport rep;
    double max_viol = 0.0;
    std::int64_t samples = 0;
    std::int64_t groups = 0;
    std::int64_t runs = 0;

    const char* kinds[3] = {"rectified-oracle", "linear-field", "toy-attention"};
    std::uint64_t salt = 0;
    while (samples < min_samples) {
        for (const std::uint64_t base_seed : c.seeds) {
            if (samples >= min_samples) break;
            Rng shape_rng(derive_seed(base_seed, 0x9201 + salt));
            ExperimentConfig cc = c;
            cc.scenario.kind = "random-latents";
            cc.scenario.frames = shape_rng.uniform_int(1, 3);
            cc.scenario.height = shape_rng.uniform_int(3, 6);
            cc.scenario.width = shape_rng.uniform_int(3, 6);
            cc.scenario.channels = shape_rng.uniform_int(4, 8);
            cc.scenario.chunks = 2;
            cc.schedule.total_steps = shape_rng.uniform_int(6, 20);
            cc.schedule.window = 1;
            cc.field.kind = kinds[(salt + base_seed) % 3];
            cc.field.linear_a = shape_rng.uniform(-1.0, 1.0);
            cc.field.linear_b = shape_rng.uniform(-1.0, 1.0);
            cc.field.hidden = 8;
            cc.field.anchored = (salt % 2) == 0;
            if (cc.field.kind == "rectified-oracle") cc.field.anchored = true;

            PolicyConfig vanilla;
            vanilla.kind = PolicyKind::Vanilla;
            const PreparedRun pr =
                prepare_run(cc, derive_seed(base_seed, salt), Verbosity::Residuals, true);
            const RunResult res = execute_policy(cc, pr, vanilla);
            const ErrorReport er = prop1_check(res.trace);
            max_viol = std::max(max_viol, er.max_rel_violation);
            samples += static_cast<std::int64_t>(er.samples.size());
            groups += er.group_checks;
            runs += 1;
        }
        salt += 1;
        if (salt > 1000) break;  // defensive bound
    }

    rep.pass = samples >= min_samples && max_viol <= 1e-9;
    rep.stats = {{"kind", "prop1"},
                 {"samples", samples},
                 {"group_checks", groups},
                 {"runs", runs},
                 {"max_rel_violation", max_viol},
                 {"threshold", 1e-9}};
    return rep;
}

// Sparse/dense consistency of the toy-attention backend over randomized
// masks and staleness states, including 1-token and all-token extremes.
inline VerifyReport verify_sparse_dense(const ExperimentConfig& c, std::int64_t trials = 60) {
    ExperimentConfig cc = c;
    cc.field.kind = "toy-attention";
    double max_rel = 0.0;
    std::int64_t checked = 0;

    for (std::int64_t trial = 0; trial < trials; ++trial) {
        const std::uint64_t seed = derive_seed(c.seeds[trial % c.seeds.size()], 0x5d + trial);
        Rng rng(seed);
        ChunkShape shape{rng.uniform_int(1, 2), rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                         cc.scenario.channels};
        ExperimentConfig trial_cfg = cc;
        trial_cfg.scenario.kind = "random-latents";
        trial_cfg.scenario.frames = shape.frames;
        trial_cfg.scenario.height = shape.height;
        trial_cfg.scenario.width = shape.width;
        trial_cfg.scenario.chunks = 2;
        const Scenario scenario = build_scenario(trial_cfg, seed);
        auto noise = make_noise_chunks(shape, 2, seed);
        auto field_ptr = build_field(trial_cfg, scenario, noise);
        auto* field = dynamic_cast<ToyAttentionField*>(field_ptr.get());

        KVCacheState kv;
        kv.finalize_chunk(0, field->compute_kv(gaussian_tensor(shape, rng.next_u64()), 0));

        const Tensor x = gaussian_tensor(shape, rng.next_u64());
        const Tensor x_stale = gaussian_tensor(shape, rng.next_u64());
        const std::int64_t t = rng.uniform_int(1, trial_cfg.schedule.total_steps);
        WorkingKV working = WorkingKV::make(shape.tokens(), shape.channels);
        working.rows = field->compute_kv(x_stale, std::min(t + 1, trial_cfg.schedule.total_steps));
        std::fill(working.valid.begin(), working.valid.end(), 1);

        const std::int64_t n = shape.tokens();
        std::vector<std::int64_t> active;
        const std::int64_t mode = trial % 3;
        if (mode == 0) {
            active.push_back(rng.uniform_int(0, n - 1));
        } else if (mode == 1) {
            for (std::int64_t p = 0; p < n; ++p) active.push_back(p);
        } else {
            for (std::int64_t p = 0; p < n; ++p) {
                if (rng.uniform01() < 0.4) active.push_back(p);
            }
            if (active.empty()) active.push_back(0);
        }

        WorkingKV sparse_kv = working;
        EvalContext ctx{&kv, &sparse_kv, 1};
        const auto rows = field->eval_sparse(
            x, t, std::span<const std::int64_t>(active.data(), active.size()), ctx);

        // Dense reference over the same staleness inputs: the same overlaid
        // key set, queried for every token.
        KVRows overlay = working.rows;
        const KVRows fresh = field->compute_kv(x, t);
        for (auto p : active) {
            std::copy(fresh.k_row(p), fresh.k_row(p) + shape.channels, overlay.k_row(p));
            std::copy(fresh.v_row(p), fresh.v_row(p) + shape.channels, overlay.v_row(p));
        }
        std::vector<std::int64_t> all(static_cast<std::size_t>(n));
        for (std::int64_t p = 0; p < n; ++p) all[static_cast<std::size_t>(p)] = p;
        const auto dense = field->attend_given(x, t, all, overlay, &kv, 1);

        for (std::size_t j = 0; j < active.size(); ++j) {
            for (std::int64_t ch = 0; ch < shape.channels; ++ch) {
                const double a = rows[j * static_cast<std::size_t>(shape.channels) +
                                      static_cast<std::size_t>(ch)];
                const double b = dense[static_cast<std::size_t>(active[j] * shape.channels + ch)];
                const double rel = std::abs(a - b) / std::max(std::abs(b), 1e-300);
                max_rel = std::max(max_rel, rel);
                checked += 1;
            }
        }
    }

    VerifyReport rep;
    rep.pass = max_rel <= 1e-12 && checked > 0;
    rep.stats = {{"kind", "sparse-dense"},
                 {"trials", trials},
                 {"rows_checked", checked},
                 {"max_rel_deviation", max_rel},
                 {"threshold", 1e-12}};
    return rep;
}

namespace detail {

// Per-step NDCG of the frame-difference proxy vs the true residual-difference
// ranking, plus the mean NDCG of `perms` random permutations per step.
struct NdcgSeedStats {
    double mean_proxy = 0.0;
    double mean_random = 0.0;
    std::int64_t steps = 0;
};

inline NdcgSeedStats ndcg_over_trace(const RunTrace& trace, std::int64_t perms,
                                     std::uint64_t perm_seed) {
    const auto shape = trace.header.at("shape");
    const std::int64_t C = shape.at("channels").get<std::int64_t>();
    const std::int64_t T = trace.header.at("schedule").at("T").get<std::int64_t>();
    const std::int64_t chunks = trace.header.at("chunks").get<std::int64_t>();

    NdcgSeedStats st;
    Rng rng(perm_seed);
    for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
        for (std::int64_t t = T - 1; t >= 1; --t) {
            const TraceTensor* r_new = trace.find_tensor(TensorTag::Residual, chunk, t);
            const TraceTensor* r_old = trace.find_tensor(TensorTag::Residual, chunk, t + 1);
            const TraceTensor* m = trace.find_tensor(TensorTag::ImportanceMap, chunk, t);
            if (!r_new || !r_old || !m) continue;
            const std::size_t n = m->data.size();
            std::vector<double> oracle(n);
            for (std::size_t p = 0; p < n; ++p) {
                double s = 0.0;
                for (std::int64_t ch = 0; ch < C; ++ch) {
                    const double d =
                        r_new->data[p * static_cast<std::size_t>(C) + static_cast<std::size_t>(ch)] -
                        r_old->data[p * static_cast<std::size_t>(C) + static_cast<std::size_t>(ch)];
                    s += d * d;
                }
                oracle[p] = std::sqrt(s);
            }
            st.mean_proxy += ndcg(m->data, oracle);

            std::vector<double> shuffled = m->data;
            double rnd = 0.0;
            for (std::int64_t k = 0; k < perms; ++k) {
                for (std::size_t i = shuffled.size(); i > 1; --i) {
                    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
                    std::swap(shuffled[i - 1], shuffled[j]);
                }
                rnd += ndcg(shuffled, oracle);
            }
            st.mean_random += rnd / static_cast<double>(perms);
            st.steps += 1;
        }
    }
    if (st.steps > 0) {
        st.mean_proxy /= static_cast<double>(st.steps);
        st.mean_random /= static_cast<double>(st.steps);
    }
    return st;
}

inline RunResult vanilla_residual_run(const ExperimentConfig& c, std::uint64_t seed) {
    PolicyConfig vanilla;
    vanilla.kind = PolicyKind::Vanilla;
    const PreparedRun pr = prepare_run(c, seed, Verbosity::Residuals);
    return execute_policy(c, pr, vanilla);
}

}  // namespace detail

// Desk-scale motion-proxy ranking validation: mean per-step NDCG of the
// frame-difference proxy must beat the mean NDCG of random permutations by
// at least `min_gap` on at least 80% of seeds.
inline VerifyReport verify_ndcg(const ExperimentConfig& c, double min_gap = 0.15,
                                std::int64_t perms = 100) {
    json per_seed = json::array();
    std::int64_t passed = 0;
    for (const std::uint64_t seed : c.seeds) {
        const RunResult res = detail::vanilla_residual_run(c, seed);
        const auto st = detail::ndcg_over_trace(res.trace, perms, derive_seed(seed, 0xAD));
        const double gap = st.mean_proxy - st.mean_random;
        if (gap >= min_gap) passed += 1;
        per_seed.push_back({{"seed", seed},
                            {"mean_ndcg", st.mean_proxy},
                            {"mean_random_ndcg", st.mean_random},
                            {"gap", gap},
                            {"steps", st.steps}});
    }
    const auto need = static_cast<std::int64_t>(
        std::ceil(0.8 * static_cast<double>(c.seeds.size())));
    VerifyReport rep;
    rep.pass = passed >= need;
    rep.stats = {{"kind", "ndcg"},     {"per_seed", per_seed}, {"passed_seeds", passed},
                 {"needed", need},     {"min_gap", min_gap},   {"permutations", perms}};
    return rep;
}

// Residual-instability bound: token-level Spearman correlation above 0.5 on
// at least 80% of seeds, finite fitted C everywhere.
inline VerifyReport verify_lemma(const ExperimentConfig& c, double min_spearman = 0.5) {
    json per_seed = json::array();
    std::int64_t passed = 0;
    bool all_finite = true;
    for (const std::uint64_t seed : c.seeds) {
        const RunResult res = detail::vanilla_residual_run(c, seed);
        const LemmaReport rep = lemma_check(res.trace);
        const bool finite_c = std::isfinite(rep.fitted_c);
        all_finite = all_finite && finite_c;
        if (rep.spearman_rank > min_spearman && finite_c) passed += 1;
        per_seed.push_back({{"seed", seed},
                            {"spearman", rep.spearman_rank},
                            {"fitted_c", finite_c ? json(rep.fitted_c) : json("inf")},
                            {"ls_slope", rep.ls_slope},
                            {"samples", rep.samples},
                            {"frame_spearman", rep.frame_spearman},
                            {"frame_fitted_c", rep.frame_fitted_c}});
    }
    const auto need = static_cast<std::int64_t>(
        std::ceil(0.8 * static_cast<double>(c.seeds.size())));
    VerifyReport rep;
    rep.pass = passed >= need && all_finite;
    rep.stats = {{"kind", "lemma"},
                 {"per_seed", per_seed},
                 {"passed_seeds", passed},
                 {"needed", need},
                 {"min_spearman", min_spearman}};
    return rep;
}

inline VerifyReport run_verify(const std::string& kind, const ExperimentConfig& c) {
    if (kind == "prop1") return verify_prop1(c);
    if (kind == "lemma") return verify_lemma(c);
    if (kind == "ndcg") return verify_ndcg(c);
    if (kind == "sparse-dense") return verify_sparse_dense(c);
    throw InvalidArgument("verify: unknown kind '" + kind +
                          "' (expected prop1, lemma, ndcg or sparse-dense)");
}

// ------------------------------------------------------------------ export

namespace detail {

inline void write_pgm(const std::string& path, const std::vector<double>& panel,
                      std::int64_t h, std::int64_t w, double lo, double hi) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "P2\n" << w << " " << h << "\n255\n";
    const double denom = hi > lo ? hi - lo : 1.0;
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            const double x = panel[static_cast<std::size_t>(i * w + j)];
            const int g = static_cast<int>(std::lround(
                255.0 * std::clamp((x - lo) / denom, 0.0, 1.0)));
            f << g << (j + 1 == w ? "" : " ");
        }
        f << "\n";
    }
}

}  // namespace detail

// Writes per-frame grayscale grids of W beside the scenario frame and the
// ground-truth motion mask, as portable graymaps. Requires a trace recorded
// at >= latents verbosity by a motioncache run.
inline std::vector<std::string> export_importance_frames(const RunTrace& trace,
                                                         std::int64_t t_from, std::int64_t t_to,
                                                         const std::string& out_dir) {
    if (!trace.header.contains("config")) {
        throw InvalidArgument("export: trace header lacks the config echo");
    }
    bool any_w = false;
    for (const auto& tt : trace.tensors) {
        if (tt.tag == TensorTag::WeightMap) {
            any_w = true;
            break;
        }
    }
    if (!any_w) {
        throw StateError("export: no weight maps in trace (verbosity too low or not a "
                         "motioncache run)");
    }
    const ExperimentConfig c = config_from_json(trace.header.at("config"));
    const std::uint64_t seed = trace.header.at("seed").get<std::uint64_t>();
    const Scenario scenario = build_scenario(c, seed);
    const auto& s = scenario.chunk_shape;

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    for (const auto& step : trace.steps) {
        if (step.t < t_from || step.t > t_to) continue;
        const TraceTensor* w = trace.find_tensor(TensorTag::WeightMap, step.chunk, step.t);
        if (!w) continue;
        for (std::int64_t f = 0; f < s.frames; ++f) {
            const std::int64_t g = step.chunk * s.frames + f;
            const auto hw = static_cast<std::size_t>(s.height * s.width);
            // three side-by-side panels: W | scenario frame (channel mean) | mask
            const std::int64_t wide = 3 * s.width + 2;
            std::vector<double> canvas(static_cast<std::size_t>(s.height * wide), 0.0);
            double flo = 1e300, fhi = -1e300;
            std::vector<double> frame_mean(hw);
            for (std::int64_t hh = 0; hh < s.height; ++hh) {
                for (std::int64_t ww = 0; ww < s.width; ++ww) {
                    auto row = scenario.frame_token(g, hh, ww);
                    double mean = 0.0;
                    for (std::int64_t ch = 0; ch < s.channels; ++ch) mean += row[ch];
                    mean /= static_cast<double>(s.channels);
                    frame_mean[static_cast<std::size_t>(hh * s.width + ww)] = mean;
                    flo = std::min(flo, mean);
                    fhi = std::max(fhi, mean);
                }
            }
            const double fden = fhi > flo ? fhi - flo : 1.0;
            for (std::int64_t hh = 0; hh < s.height; ++hh) {
                for (std::int64_t ww = 0; ww < s.width; ++ww) {
                    const auto q = static_cast<std::size_t>(hh * s.width + ww);
                    // W panel on its natural [0, 1] scale
                    canvas[static_cast<std::size_t>(hh * wide + ww)] =
                        w->data[static_cast<std::size_t>(f) * hw + q];
                    canvas[static_cast<std::size_t>(hh * wide + s.width + 1 + ww)] =
                        (frame_mean[q] - flo) / fden;
                    canvas[static_cast<std::size_t>(hh * wide + 2 * s.width + 2 + ww)] =
                        scenario.motion[static_cast<std::size_t>(g)].v[q] ? 1.0 : 0.0;
                }
            }
            const std::string name = "w_chunk" + std::to_string(step.chunk) + "_t" +
                                     std::to_string(step.t) + "_f" + std::to_string(f) +
                                     "_phase" + std::to_string(step.phase) + ".pgm";
            detail::write_pgm((std::filesystem::path(out_dir) / name).string(), canvas,
                              s.height, wide, 0.0, 1.0);
            written.push_back(name);
        }
    }
    if (written.empty()) {
        throw InvalidArgument("export: no weight maps found in the requested step range");
    }
    return written;
}

// ------------------------------------------------------------------ inspect

inline std::string inspect_trace(const RunTrace& trace) {
    std::ostringstream os;
    os << "MCTR trace\n";
    os << "  policy: " << trace.header.at("policy").at("name").get<std::string>() << " ("
       << trace.header.at("policy").at("kind").get<std::string>() << ")\n";
    os << "  field: " << trace.header.at("field").get<std::string>() << "\n";
    os << "  seed: " << trace.header.at("seed") << "\n";
    os << "  config hash: " << trace.header.at("config_hash").get<std::string>() << "\n";
    os << "  scenario hash: " << trace.header.at("scenario_hash").get<std::string>() << "\n";
    const auto shape = trace.header.at("shape");
    os << "  shape: " << shape.at("frames") << "x" << shape.at("height") << "x"
       << shape.at("width") << "x" << shape.at("channels") << ", chunks "
       << trace.header.at("chunks") << ", T " << trace.header.at("schedule").at("T") << "\n";
    os << "  steps: " << trace.steps.size() << ", tensors: " << trace.tensors.size() << "\n";
    const auto degenerate = trace.header.at("degenerate_phase1_chunks");
    if (!degenerate.empty()) os << "  DEGENERATE phase-1 chunks: " << degenerate.dump() << "\n";

    std::int64_t computes = 0, skips = 0, sparse = 0;
    for (const auto& s : trace.steps) {
        if (s.mode == StepMode::FullChunkCompute) ++computes;
        if (s.mode == StepMode::FullChunkSkip) ++skips;
        if (s.mode == StepMode::TokenSparse) ++sparse;
    }
    os << "  modes: " << computes << " full-compute, " << skips << " full-skip, " << sparse
       << " token-sparse\n";
    os << "  token forwards: " << token_forward_count(trace) << "\n";
    os << "  step records (chunk, t, mode, active/total, delta):\n";
    for (const auto& s : trace.steps) {
        os << "    c" << s.chunk << " t" << s.t << " " << step_mode_name(s.mode) << " "
           << s.active_count << "/" << s.n_tokens;
        if (s.delta_valid) os << " delta=" << detail::format_double(s.delta_chunk);
        if (s.warmup) os << " warmup";
        os << " phase" << s.phase << "\n";
    }
    return os.str();
}

}  // namespace mc
