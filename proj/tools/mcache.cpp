// Experiment CLI: run, sweep, verify, export, inspect.
// Exit codes: 0 success, 2 config error, 3 verification failure, 4 I/O error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "motioncache/motioncache.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kVerifyFailure = 3;
constexpr int kIoError = 4;

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::string policy_filter;
    std::string verbosity;
};

mc::ExperimentConfig load_with_overrides(const CommonOpts& o) {
    mc::ExperimentConfig c = mc::load_config_file(o.config_path);
    if (o.seed >= 0) c.seeds = {static_cast<std::uint64_t>(o.seed)};
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    if (!o.verbosity.empty()) {
        mc::verbosity_from_name(o.verbosity);
        c.verbosity = o.verbosity;
    }
    if (!o.policy_filter.empty()) {
        std::vector<mc::PolicyConfig> kept;
        for (const auto& p : c.policies) {
            if (p.label() == o.policy_filter ||
                mc::policy_kind_name(p.kind) == o.policy_filter) {
                kept.push_back(p);
            }
        }
        if (kept.empty()) {
            throw mc::ConfigError("--policy '" + o.policy_filter +
                                  "' matches no configured policy");
        }
        c.policies = kept;
    }
    return c;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required = true) {
    auto* opt = cmd->add_option("--config", o.config_path, "experiment config JSON");
    if (config_required) opt->required();
    cmd->add_option("--seed", o.seed, "override the config seed list with one seed");
    cmd->add_option("--out", o.out_dir, "output directory override");
    cmd->add_option("--policy", o.policy_filter, "run only the named policy");
    cmd->add_option("--verbosity", o.verbosity, "decisions | latents | residuals");
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::string cur;
    for (char ch : csv) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::stod(cur));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"motion-aware token caching experiments"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    auto* run_cmd = app.add_subcommand("run", "run all configured policies and write traces");
    add_common(run_cmd, run_opts);

    CommonOpts sweep_opts;
    std::string sweep_param;
    std::string sweep_values;
    auto* sweep_cmd = app.add_subcommand("sweep", "one run per parameter value, CSV report");
    add_common(sweep_cmd, sweep_opts);
    sweep_cmd->add_option("--param", sweep_param, "alpha | K | tau")->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();

    CommonOpts verify_opts;
    std::string verify_kind;
    auto* verify_cmd = app.add_subcommand("verify", "run a verification suite");
    add_common(verify_cmd, verify_opts);
    verify_cmd->add_option("--kind", verify_kind, "prop1 | lemma | ndcg | sparse-dense")
        ->required();

    std::string export_trace, export_out = "export";
    std::int64_t export_from = 0, export_to = 1 << 20;
    auto* export_cmd = app.add_subcommand("export", "export importance maps as PGM grids");
    export_cmd->add_option("--trace", export_trace, "trace file (.mctr)")->required();
    export_cmd->add_option("--from", export_from, "first timestep (inclusive)");
    export_cmd->add_option("--to", export_to, "last timestep (inclusive)");
    export_cmd->add_option("--out", export_out, "output directory");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "pretty-print a trace");
    inspect_cmd->add_option("--trace", inspect_path, "trace file (.mctr)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            const mc::ExperimentConfig c = load_with_overrides(run_opts);
            const mc::json summary = mc::run_experiment(c);
            std::cout << "wrote " << (std::filesystem::path(c.out_dir) / "summary.json").string()
                      << "\n";
            for (const auto& seed_block : summary.at("seeds")) {
                for (const auto& pj : seed_block.at("policies")) {
                    std::cout << "seed " << seed_block.at("seed") << " "
                              << pj.at("name").get<std::string>() << ": token-forwards "
                              << pj.at("token_forwards") << ", flops "
                              << pj.at("flops").at("total") << "\n";
                }
            }
            return kOk;
        }
        if (sweep_cmd->parsed()) {
            const mc::ExperimentConfig c = load_with_overrides(sweep_opts);
            const auto rows = mc::sweep_runs(c, sweep_param, parse_values(sweep_values));
            const std::string csv = mc::sweep_csv(sweep_param, rows);
            std::filesystem::create_directories(c.out_dir);
            const auto path =
                std::filesystem::path(c.out_dir) / ("sweep_" + sweep_param + ".csv");
            std::ofstream f(path, std::ios::trunc);
            if (!f) throw mc::IoError("cannot write " + path.string());
            f << csv;
            std::cout << csv;
            return kOk;
        }
        if (verify_cmd->parsed()) {
            const mc::ExperimentConfig c = load_with_overrides(verify_opts);
            const mc::VerifyReport rep = mc::run_verify(verify_kind, c);
            std::cout << rep.stats.dump(2) << "\n";
            std::cout << "verify " << verify_kind << ": " << (rep.pass ? "PASS" : "FAIL") << "\n";
            return rep.pass ? kOk : kVerifyFailure;
        }
        if (export_cmd->parsed()) {
            const mc::RunTrace trace = mc::read_trace(export_trace);
            const auto files =
                mc::export_importance_frames(trace, export_from, export_to, export_out);
            std::cout << "wrote " << files.size() << " maps to " << export_out << "\n";
            return kOk;
        }
        if (inspect_cmd->parsed()) {
            std::cout << mc::inspect_trace(mc::read_trace(inspect_path));
            return kOk;
        }
    } catch (const mc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const mc::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoError;
    } catch (const mc::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kOk;
}
