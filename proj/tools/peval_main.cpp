// Command-line front end: validate / solve / verify / simulate.
// Exit codes: 0 success, 1 check failed, 2 config error, 3 numerical failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "peval/config.hpp"
#include "peval/dual.hpp"
#include "peval/errors.hpp"
#include "peval/fixedpoint.hpp"
#include "peval/io_util.hpp"
#include "peval/market.hpp"
#include "peval/policy_sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
    std::optional<std::size_t> paths;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

peval::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
    auto cfg = peval::ExperimentConfig::from_file(path);
    if (ov.paths) cfg.paths = *ov.paths;
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.threads) cfg.threads = *ov.threads;
    return cfg;
}

void write_json_file(const fs::path& p, const json& j) {
    peval::write_text_file(p.string(), j.dump(2) + "\n");
}

json load_solution(const std::string& artifacts_dir) {
    const fs::path p = fs::path(artifacts_dir) / "solution.json";
    std::ifstream in(p);
    if (!in) throw peval::ConfigError("cannot open solve artifact: " + p.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw peval::ConfigError("artifact parse error in " + p.string() + ": " + e.what());
    }
    return j;
}

int cmd_validate(const peval::ExperimentConfig& cfg, const fs::path& out) {
    const auto report = peval::validate_model(cfg.model, cfg.utility);
    json checks = json::array();
    for (const auto& c : report.checks) {
        std::cout << c.name << ": " << (c.passed ? "pass" : "FAIL")
                  << (c.certified ? "" : " [sampled evidence]") << "  " << c.detail
                  << "\n";
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"certified", c.certified},
                          {"worst", c.worst},
                          {"detail", c.detail}});
    }
    write_json_file(out / "validation.json",
                    {{"passed", report.passed}, {"checks", checks}});
    std::cout << (report.passed ? "all standing assumptions hold"
                                : "standing assumption violated")
              << "\n";
    return report.passed ? 0 : 1;
}

int require_valid_model(const peval::ExperimentConfig& cfg) {
    const auto report = peval::validate_model(cfg.model, cfg.utility);
    if (report.passed) return 0;
    for (const auto& c : report.checks)
        if (!c.passed) std::cerr << c.name << ": FAIL  " << c.detail << "\n";
    return 1;
}

int cmd_solve(const peval::ExperimentConfig& cfg, const fs::path& out) {
    if (int rc = require_valid_model(cfg); rc != 0) return rc;
    const auto fpcfg = cfg.fixed_point_config();
    json run;
    if (cfg.utility.mode == peval::UtilitySpec::Mode::Log) {
        const auto fp = peval::log_fixed_point(cfg.model, cfg.constraint, cfg.utility,
                                               fpcfg);
        peval::grid_to_csv(fp.A_star, (out / "A_star.csv").string());
        peval::dual_control_to_csv(fp.policy, fp.control,
                                   (out / "policy.csv").string());
        json sol = peval::log_fixed_point_to_json(fp);
        sol["mode"] = "log";
        write_json_file(out / "solution.json", sol);

        const auto box = peval::theoretical_bounds_A_log(cfg.model.bounds, cfg.utility);
        run["mode"] = "log";
        run["converged"] = true;
        run["iterations"] = 1;
        run["contraction"] =
            std::exp(-cfg.utility.rho * cfg.utility.tau);
        run["C_star"] = fp.C_star;
        run["A_min"] = fp.A_star.min_value();
        run["A_max"] = fp.A_star.max_value();
        run["bounds"] = {{"lower", box.lower}, {"upper", box.upper}};
        json gaps = json::array();
        for (std::size_t j = 0; j < fp.gap.size(); ++j)
            gaps.push_back({{"y", fp.gap.node(j)},
                            {"gap", fp.gap[j]},
                            {"gap_se", fp.gap_se[j]}});
        run["gaps"] = gaps;
        run["dual_gap"] = fp.dual_gap;
        run["dual_gap_se"] = fp.dual_gap_se;
        run["message"] = fp.message;
        std::cout << "solved: " << fp.message << "\n";
    } else {
        const auto fp = peval::solve_fixed_point(cfg.model, cfg.constraint, cfg.utility,
                                                 fpcfg);
        peval::grid_to_csv(fp.A_star, (out / "A_star.csv").string());
        peval::dual_control_to_csv(fp.policy, fp.control, (out / "policy.csv").string(),
                                   &fp.lambda_table);
        json sol = peval::fixed_point_to_json(fp);
        sol["mode"] = "power";
        write_json_file(out / "solution.json", sol);

        const auto box = peval::theoretical_bounds_A(cfg.model.bounds, cfg.utility);
        run["mode"] = "power";
        run["converged"] = fp.converged;
        run["iterations"] = fp.iterations;
        run["contraction"] = fp.contraction;
        run["final_step"] = fp.final_step;
        run["posterior_error"] = fp.posterior_error;
        run["mc_tolerance"] = fp.mc_tolerance;
        run["A_min"] = fp.A_star.min_value();
        run["A_max"] = fp.A_star.max_value();
        run["bounds"] = {{"lower", box.lower}, {"upper", box.upper}};
        json gaps = json::array();
        for (const auto& c : fp.certificates) {
            const double se = std::hypot(c.primal_se, c.dual_se);
            gaps.push_back({{"y", c.y},
                            {"primal", c.primal_E},
                            {"dual", c.dual_E},
                            {"gap", c.dual_E - c.primal_E},
                            {"combined_se", se},
                            {"lambda", c.lambda},
                            {"budget", c.budget}});
        }
        run["gaps"] = gaps;
        run["message"] = fp.message;
        std::cout << "solved: " << fp.message << "\n";
        if (!fp.converged) {
            write_json_file(out / "run_report.json", run);
            std::cerr << "fixed point did not converge within the iteration cap\n";
            return 1;
        }
    }
    write_json_file(out / "run_report.json", run);
    return 0;
}

struct CheckLog {
    json checks = json::array();
    bool all_passed = true;
    void add(const std::string& name, bool passed, bool gated, json detail) {
        detail["name"] = name;
        detail["passed"] = passed;
        detail["gated"] = gated;
        checks.push_back(detail);
        if (gated && !passed) all_passed = false;
        std::cout << name << ": " << (passed ? "pass" : (gated ? "FAIL" : "fail (ungated)"))
                  << "\n";
    }
};

int cmd_verify(const peval::ExperimentConfig& cfg, const std::string& artifacts,
               const fs::path& out) {
    const json sol = load_solution(artifacts);
    const std::string mode = sol.value("mode", "power");
    const bool is_log = (mode == "log");
    if (is_log != (cfg.utility.mode == peval::UtilitySpec::Mode::Log))
        throw peval::ConfigError("artifact mode does not match the config utility mode");

    CheckLog log;
    peval::PeriodicPolicy pp;
    double table_err = 0.0;  // certified error carried by the loaded tables
    if (is_log) {
        const auto fp = peval::log_fixed_point_from_json(sol);

        const auto box = peval::theoretical_bounds_A_log(cfg.model.bounds, cfg.utility);
        const double widen = 3.0 * fp.dual_gap_se + 1e-6;
        const bool in_box = fp.A_star.min_value() >= box.lower - widen &&
                            fp.A_star.max_value() <= box.upper + widen;
        log.add("fixed_point_bounds", in_box, true,
                {{"lower", box.lower},
                 {"upper", box.upper},
                 {"A_min", fp.A_star.min_value()},
                 {"A_max", fp.A_star.max_value()},
                 {"widen", widen}});

        const auto kkt = peval::kkt_check(cfg.constraint, fp.policy, fp.control, 1e-6);
        log.add("policy_feasibility",
                kkt.worst_K_dist <= 1e-6 && kkt.barrier_cone_ok, true,
                {{"worst_K_dist", kkt.worst_K_dist},
                 {"barrier_cone_ok", kkt.barrier_cone_ok}});
        log.add("complementarity", kkt.worst_slack <= 1e-6, true,
                {{"worst_slack", kkt.worst_slack}});

        log.add("budget", true, true,
                {{"detail", "log criterion: multiplier 1/x is exact"}});

        // The recorded dual growth must dominate the primal growth. The
        // residual magnitude is certificate tightness, reported but not
        // gated: with state-dependent coefficients the frozen nodal controls
        // are off-saddle between nodes, leaving a positive gap that shrinks
        // with grid resolution, not with path count.
        const double se_floor = 1e-12 * (1.0 + std::fabs(fp.dual_gap));
        const double gap_z = fp.dual_gap / std::max(fp.dual_gap_se, se_floor);
        log.add("duality_gap", gap_z >= -3.0, true,
                {{"dual_gap", fp.dual_gap},
                 {"dual_gap_se", fp.dual_gap_se},
                 {"detail", "dual growth must dominate primal within 3 SE"}});

        pp = peval::policy_log(cfg.model, cfg.constraint, cfg.utility, fp);
    } else {
        const auto fp = peval::fixed_point_from_json(sol);

        const auto box = peval::theoretical_bounds_A(cfg.model.bounds, cfg.utility);
        const double widen = fp.mc_tolerance + fp.posterior_error;
        table_err = widen;
        const bool in_box = fp.A_star.min_value() >= box.lower - widen &&
                            fp.A_star.max_value() <= box.upper + widen;
        log.add("fixed_point_bounds", in_box, true,
                {{"lower", box.lower},
                 {"upper", box.upper},
                 {"A_min", fp.A_star.min_value()},
                 {"A_max", fp.A_star.max_value()},
                 {"widen", widen}});

        const auto kkt = peval::kkt_check(cfg.constraint, fp.policy, fp.control, 1e-8);
        log.add("policy_feasibility",
                kkt.worst_K_dist <= 1e-8 && kkt.barrier_cone_ok, true,
                {{"worst_K_dist", kkt.worst_K_dist},
                 {"barrier_cone_ok", kkt.barrier_cone_ok}});
        // Numerically optimized controls carry slack; reported, not gated.
        log.add("complementarity", kkt.worst_slack <= 1e-6, false,
                {{"worst_slack", kkt.worst_slack}});

        double worst_budget = 0.0;
        double worst_gap_z = std::numeric_limits<double>::infinity();
        for (const auto& c : fp.certificates) {
            worst_budget = std::max(worst_budget, std::fabs(c.budget - 1.0));
            const double se = std::hypot(c.primal_se, c.dual_se);
            const double gap = c.dual_E - c.primal_E;
            // Exact nodes report se = 0; floor it so rounding residue in the
            // gap cannot masquerade as an infinite violation.
            const double se_floor = 1e-12 * (1.0 + std::fabs(c.primal_E));
            const double z = gap / std::max(se, se_floor);
            worst_gap_z = std::min(worst_gap_z, z);
        }
        log.add("budget", !fp.certificates.empty() && worst_budget <= 1e-6, true,
                {{"worst_abs_budget_minus_1", worst_budget}});
        log.add("duality_gap", worst_gap_z >= -3.0, true,
                {{"worst_gap_z", worst_gap_z},
                 {"detail", "dual must dominate primal within 3 combined SE"}});

        pp = peval::policy_from_fixed_point(cfg.model, cfg.constraint, cfg.utility, fp);
    }

    const auto roll = peval::rollout(cfg.model, cfg.constraint, cfg.utility, pp, cfg.x0,
                                     cfg.model.y0, cfg.periods, cfg.sim_config());

    // A profile off by table_err makes D drift by its transported scale per
    // period; deduct that certified amount so only unexplained drift gates.
    std::vector<double> allow;
    if (table_err > 0.0) {
        const auto& s = cfg.utility;
        const double p = s.alpha * (1.0 - s.gamma);
        const double vfac = std::fabs(std::exp(-s.rho * s.tau * s.gamma * s.alpha) / s.alpha);
        allow.resize(static_cast<std::size_t>(roll.periods));
        for (int i = 1; i <= roll.periods; ++i) {
            double mean_xp = 0.0;
            for (std::size_t pth = 0; pth < roll.paths; ++pth)
                mean_xp += std::pow(roll.wealth(static_cast<Eigen::Index>(pth), i - 1), p);
            mean_xp /= static_cast<double>(roll.paths);
            allow[static_cast<std::size_t>(i - 1)] =
                table_err * vfac * std::exp(-s.rho * s.tau * (i - 1)) * mean_xp;
        }
    }
    const auto mart = peval::verify_martingale_D(roll, allow);
    log.add("martingale", mart.all_within, true,
            {{"z_scores", mart.z_scores},
             {"negative_drift", mart.some_negative_drift},
             {"drift_allowance", allow}});

    const auto vb = peval::value_bounds_check(cfg.model.bounds, cfg.utility, roll);
    log.add("value_bounds", vb.inside, true,
            {{"estimate", vb.estimate},
             {"tolerance", vb.tolerance},
             {"lower", vb.box.lower},
             {"upper", vb.box.upper}});

    write_json_file(out / "verification.json",
                    {{"passed", log.all_passed}, {"mode", mode}, {"checks", log.checks}});
    std::cout << (log.all_passed ? "verification passed" : "verification FAILED") << "\n";
    return log.all_passed ? 0 : 1;
}

int cmd_simulate(const peval::ExperimentConfig& cfg, const std::string& artifacts,
                 const fs::path& out) {
    const json sol = load_solution(artifacts);
    const std::string mode = sol.value("mode", "power");
    const bool is_log = (mode == "log");
    if (is_log != (cfg.utility.mode == peval::UtilitySpec::Mode::Log))
        throw peval::ConfigError("artifact mode does not match the config utility mode");

    peval::PeriodicPolicy pp;
    if (is_log) {
        const auto fp = peval::log_fixed_point_from_json(sol);
        pp = peval::policy_log(cfg.model, cfg.constraint, cfg.utility, fp);
    } else {
        const auto fp = peval::fixed_point_from_json(sol);
        pp = peval::policy_from_fixed_point(cfg.model, cfg.constraint, cfg.utility, fp);
    }

    const auto roll = peval::rollout(cfg.model, cfg.constraint, cfg.utility, pp, cfg.x0,
                                     cfg.model.y0, cfg.periods, cfg.sim_config());
    peval::rollout_to_csv(roll, (out / "rollout.csv").string());
    const auto mart = peval::verify_martingale_D(roll);

    json summary;
    summary["mode"] = mode;
    summary["x0"] = roll.x0;
    summary["y0"] = roll.y0;
    summary["periods"] = roll.periods;
    summary["paths"] = roll.paths;
    summary["objective"] = roll.objective;
    summary["objective_se"] = roll.objective_se;
    summary["tail_bound"] = roll.tail_bound;
    summary["d0"] = roll.d0;
    if (is_log) {
        summary["log_objective"] = roll.log_objective;
        summary["log_objective_se"] = roll.log_objective_se;
    }
    summary["martingale_all_within"] = mart.all_within;
    summary["z_scores"] = mart.z_scores;
    write_json_file(out / "summary.json", summary);
    std::cout << "objective " << peval::format_double(roll.objective) << " (se "
              << peval::format_double(roll.objective_se) << "), candidate value "
              << peval::format_double(roll.d0) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic-evaluation portfolio solver and verification harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::string artifacts_dir;
    Overrides ov;

    auto add_common = [&](CLI::App* sub, bool needs_artifacts) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (default: current)");
        if (needs_artifacts)
            sub->add_option("--artifacts", artifacts_dir,
                            "directory holding solution.json from a solve run")
                ->required();
        sub->add_option("--paths", ov.paths, "override numerics.paths");
        sub->add_option("--seed", ov.seed, "override numerics.seed");
        sub->add_option("--threads", ov.threads,
                        "override numerics.threads (0 = hardware concurrency)");
    };

    auto* c_validate =
        app.add_subcommand("validate", "check the standing model assumptions");
    add_common(c_validate, false);
    auto* c_solve =
        app.add_subcommand("solve", "solve the fixed point and write artifacts");
    add_common(c_solve, false);
    auto* c_verify =
        app.add_subcommand("verify", "run certification checks on solve artifacts");
    add_common(c_verify, true);
    auto* c_simulate =
        app.add_subcommand("simulate", "roll out the periodic policy over many periods");
    add_common(c_simulate, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const auto cfg = load_config(config_path, ov);
        const fs::path out(out_dir);
        std::error_code ec;
        fs::create_directories(out, ec);
        if (app.got_subcommand(c_validate)) return cmd_validate(cfg, out);
        if (app.got_subcommand(c_solve)) return cmd_solve(cfg, out);
        if (app.got_subcommand(c_verify)) return cmd_verify(cfg, artifacts_dir, out);
        return cmd_simulate(cfg, artifacts_dir, out);
    } catch (const peval::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const peval::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
