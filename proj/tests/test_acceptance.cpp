#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// Release gate: ten independent checks, one verdict line each. Every check
// compares the library against an analytic value, a brute-force search, or an
// exact invariance, never against frozen output of the library itself.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "peval/config.hpp"
#include "peval/constraints.hpp"
#include "peval/fixedpoint.hpp"
#include "peval/market.hpp"
#include "peval/policy_sim.hpp"
#include "peval/utility.hpp"

using namespace peval;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void verdict(int k, const std::string& label, bool ok) {
    std::printf("[%2d/10] %-58s %s\n", k, label.c_str(), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
    CHECK(ok);
}

FactorModel base_model() {
    FactorModel m;
    m.n = 1;
    m.r = Coefficient::constant(0.02);
    m.mu = {Coefficient::constant(0.08)};
    m.sigma0 = Eigen::MatrixXd::Constant(1, 1, 0.2);
    m.b = Coefficient::affine(0.0, -0.5);
    m.beta = Coefficient::constant(0.3);
    m.q = Eigen::VectorXd::Constant(1, 0.5);
    m.y0 = 0.0;
    m.bounds.r_bar = 0.02;
    m.bounds.r_lower = 0.02;
    m.bounds.M0 = 0.09;
    m.bounds.kappa0 = 0.04;
    return m;
}

FactorModel flat_model() {
    FactorModel m = base_model();
    m.mu = {Coefficient::constant(0.02)};
    m.bounds.M0 = 0.0;
    return m;
}

UtilitySpec power_spec(double alpha, double gamma, double h = 1.0, double m = 0.5) {
    UtilitySpec s;
    s.alpha = alpha;
    s.gamma = gamma;
    s.rho = 0.2;
    s.tau = 1.0;
    s.h = Coefficient::constant(h);
    s.m = m;
    return s;
}

UtilitySpec log_spec(double gamma, double h = 0.95, double m = 0.9) {
    UtilitySpec s;
    s.mode = UtilitySpec::Mode::Log;
    s.gamma = gamma;
    s.rho = 0.2;
    s.tau = 1.0;
    s.h = Coefficient::constant(h);
    s.m = m;
    return s;
}

ValueGrid grid5(double value) { return ValueGrid(-0.5, 0.5, 5, value); }

SimConfig sim_cfg(std::size_t paths, int steps, std::uint64_t seed) {
    SimConfig cfg;
    cfg.paths = paths;
    cfg.steps = steps;
    cfg.seed = seed;
    return cfg;
}

double flat_A_star(double r, double rho, double tau, double alpha, double gamma,
                   double h) {
    const double p = alpha * (1.0 - gamma);
    return h * std::exp((r * alpha - rho) * tau) /
           (1.0 - std::exp(-(rho - r * p) * tau));
}

FixedPointConfig small_fp(std::uint64_t seed, double tol) {
    FixedPointConfig cfg;
    cfg.grid_nodes = 5;
    cfg.grid_width_sds = 4.0;
    cfg.paths = 512;
    cfg.certify_paths = 1024;
    cfg.steps = 8;
    cfg.seed = seed;
    cfg.tol = tol;
    cfg.rotate_sweeps = 2;
    cfg.pg_iters = 2;
    return cfg;
}

PeriodicPolicy capped_saddle_policy(const FactorModel& m, const ConstraintSet& K,
                                    const UtilitySpec& s) {
    // Hand-checked saddle of the capped base market at gamma = 1:
    // pi = 1, nu = -0.04, lambda = e^{0.035}, E[X^alpha] = e^{0.035}.
    FixedPointResult fp;
    fp.A_star = grid5(std::exp(0.035 - 0.2) / (1.0 - std::exp(-0.2)));
    fp.lambda_table = grid5(std::exp(0.035));
    return policy_gamma1(m, K, s, fp);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("one-period optimum against the closed-form growth rate") {
    const auto t0 = std::chrono::steady_clock::now();

    const FactorModel m = base_model();
    const UtilitySpec s = power_spec(0.5, 0.5, 1.0, 1.0);
    const ModifiedUtility mu(s, grid5(0.0));  // no continuation: pure one-period

    OnePeriodConfig cfg;
    cfg.paths = 1u << 16;
    cfg.steps = 8;
    cfg.seed = 11;
    cfg.pg_iters = 4;
    cfg.dual_sweeps = 3;
    const OnePeriodValue ov =
        one_period_value(m, ConstraintSet::unconstrained(1), mu, 0.0, cfg);

    // sup E[X^alpha/alpha] = (1/alpha) e^{zeta(alpha) tau} at constant
    // coefficients; zeta uses the exact Sharpe ratio 0.3.
    const double target = 2.0 * std::exp(zeta(0.02, 0.09, 0.5));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool primal_ok = std::fabs(ov.primal_E - target) <= 0.01 * target;
    const bool dual_ok = std::fabs(ov.dual_E - target) <= 0.01 * target;
    const bool fast = seconds < 60.0;
    CHECK(primal_ok);
    CHECK(dual_ok);
    CHECK(ov.primal_E <= ov.dual_E + 3.0 * std::hypot(ov.primal_se, ov.dual_se));
    CHECK(fast);
    verdict(1, "one-period optimum within 1% of closed form", primal_ok && dual_ok && fast);
}

TEST_CASE("degenerate market reproduces the geometric fixed point") {
    const FactorModel m = flat_model();
    FixedPointConfig cfg = small_fp(2, 1e-6);
    cfg.certify_paths = 512;
    cfg.rotate_sweeps = 3;
    const UtilitySpec s = power_spec(0.5, 0.5, 0.5, 0.5);  // zero Sharpe, h == m
    const FixedPointResult res =
        solve_fixed_point(m, ConstraintSet::no_short(1), s, cfg);

    const double astar = flat_A_star(0.02, 0.2, 1.0, 0.5, 0.5, 0.5);
    double sup = 0.0;
    for (std::size_t j = 0; j < res.A_star.size(); ++j)
        sup = std::max(sup, std::fabs(res.A_star[j] - astar));

    const bool ok = res.converged && sup <= 1e-4;
    CHECK(res.converged);
    CHECK(sup <= 1e-4);
    verdict(2, "degenerate fixed point within 1e-4 of closed form", ok);
}

TEST_CASE("period operator contracts random profile pairs") {
    const FactorModel m = base_model();
    const ConstraintSet K = ConstraintSet::no_short(1);
    const UtilitySpec s = power_spec(0.5, 1.0, 0.9, 0.5);
    const double c = contraction_constant(m.bounds, s);
    const BoundsBox box = theoretical_bounds_A(m.bounds, s);

    OnePeriodConfig cfg;
    cfg.paths = 512;
    cfg.steps = 8;
    cfg.seed = 7;
    cfg.pg_iters = 2;
    cfg.dual_sweeps = 2;
    cfg.with_dual = false;

    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> u(box.lower, box.upper);
    bool ok = true;
    for (int pair = 0; pair < 10; ++pair) {
        ValueGrid a1 = grid5(0.0), a2 = grid5(0.0);
        for (std::size_t j = 0; j < a1.size(); ++j) {
            a1[j] = u(rng);
            a2[j] = u(rng);
        }
        const double d0 = a1.sup_abs_diff(a2);
        REQUIRE(d0 > 0.0);
        // same sweep seed: both images are measured under common random numbers
        const ValueGrid p1 = apply_Psi(m, K, s, a1, cfg, 777);
        const ValueGrid p2 = apply_Psi(m, K, s, a2, cfg, 777);
        const double ratio = p1.sup_abs_diff(p2) / d0;
        CHECK(ratio <= c + 0.02);
        ok = ok && ratio <= c + 0.02;
    }
    verdict(3, "measured contraction factor within bound on 10 pairs", ok);
}

TEST_CASE("solved profile and simulated value respect the a priori boxes") {
    const FactorModel m = base_model();
    const ConstraintSet K = ConstraintSet::no_short(1);
    bool ok = true;

    for (const double alpha : {0.5, -1.0}) {
        const UtilitySpec s = power_spec(alpha, 0.5, 0.9, 0.5);
        const FixedPointResult res = solve_fixed_point(m, K, s, small_fp(3, 5e-4));
        REQUIRE(res.converged);

        const BoundsBox box = theoretical_bounds_A(m.bounds, s);
        const double widen = res.mc_tolerance + res.posterior_error;
        const bool a_in = res.A_star.min_value() >= box.lower - widen &&
                          res.A_star.max_value() <= box.upper + widen;
        CHECK(a_in);

        const PeriodicPolicy pol = policy_from_fixed_point(m, K, s, res);
        const RolloutResult roll =
            rollout(m, K, s, pol, 1.0, 0.0, 8, sim_cfg(1u << 12, 8, 13));
        const ValueBoundsCheck vb = value_bounds_check(m.bounds, s, roll);
        CHECK(vb.inside);
        ok = ok && a_in && vb.inside;
    }
    verdict(4, "profile and value inside widened theoretical boxes", ok);
}

TEST_CASE("dual certificates dominate the primal within noise") {
    const FactorModel m = base_model();
    bool ok = true;

    struct Case {
        double alpha, gamma;
        ConstraintSet K;
        bool no_gap;
    };
    const std::vector<Case> cases = {
        {0.5, 0.5, ConstraintSet::no_short(1), false},
        {-1.0, 0.5, ConstraintSet::borrow_cap(1, 1.5), false},
        {0.5, 1.0, ConstraintSet::no_short_borrow_cap(1, 1.0), true},
    };

    for (const Case& tc : cases) {
        const UtilitySpec s = power_spec(tc.alpha, tc.gamma, 0.9, 0.5);
        const BoundsBox box = theoretical_bounds_A(m.bounds, s);
        const ModifiedUtility mu(s, grid5(0.5 * (box.lower + box.upper)));

        OnePeriodConfig cfg;
        cfg.paths = 4096;
        cfg.steps = 8;
        cfg.seed = 17;
        cfg.pg_iters = 3;
        cfg.dual_sweeps = 3;
        const OnePeriodValue ov = one_period_value(m, tc.K, mu, 0.0, cfg);

        const double se = std::hypot(ov.primal_se, ov.dual_se);
        const double gap = ov.dual_E - ov.primal_E;
        const bool budget_ok = std::fabs(ov.budget - 1.0) <= 1e-6;
        const bool order_ok = gap >= -3.0 * se - 1e-12;
        const bool tight_ok = !tc.no_gap || std::fabs(gap) <= 3.0 * se + 1e-9;
        CHECK(budget_ok);
        CHECK(order_ok);
        CHECK(tight_ok);
        ok = ok && budget_ok && order_ok && tight_ok;
    }

    // logarithmic criterion: multiplier is exactly 1/x, growth gap vanishes
    FixedPointConfig lcfg = small_fp(5, 1e-6);
    lcfg.grid_width_sds = 3.0;
    lcfg.certify_paths = 512;
    const LogFixedPointResult lf =
        log_fixed_point(m, ConstraintSet::unconstrained(1), log_spec(0.7), lcfg);
    const bool log_ok = std::fabs(lf.dual_gap) <= 3.0 * lf.dual_gap_se + 1e-9 &&
                        lf.control.lambda == 1.0;
    CHECK(log_ok);
    ok = ok && log_ok;
    verdict(5, "budget exact and dual-primal gap within 3 SE", ok);
}

TEST_CASE("closed-form policies satisfy complementary slackness exactly") {
    bool ok = true;

    // myopic power policy on the capped cone: every table node binds the cap
    {
        const FactorModel m = base_model();
        const ConstraintSet K = ConstraintSet::no_short_borrow_cap(1, 1.0);
        const UtilitySpec s = power_spec(0.5, 1.0);
        const PeriodicPolicy pol = capped_saddle_policy(m, K, s);
        for (std::size_t j = 0; j < pol.A_star.size(); ++j) {
            const Eigen::VectorXd pi = pol.pi.at_node(j);
            const Eigen::VectorXd nu = pol.control.nu_at_node(j);
            const double dist = (pi - project_K(K, pi)).norm();
            const SupportValue d = support_delta(K, nu);
            const double slack = d.value + pi.dot(nu);
            CHECK(dist <= 1e-8);
            CHECK(d.finite);
            CHECK(std::fabs(slack) <= 1e-8);
            ok = ok && dist <= 1e-8 && d.finite && std::fabs(slack) <= 1e-8;
        }
    }

    // growth-optimal policy under a short-sale ban with negative premium
    {
        FactorModel m = base_model();
        m.mu = {Coefficient::constant(-0.02)};
        m.bounds.M0 = 0.04;
        const ConstraintSet K = ConstraintSet::no_short(1);
        const UtilitySpec s = log_spec(0.7);
        const LogFixedPointResult lf = log_fixed_point(m, K, s, small_fp(5, 1e-6));
        const PeriodicPolicy pol = policy_log(m, K, s, lf);
        for (std::size_t j = 0; j < pol.A_star.size(); ++j) {
            const Eigen::VectorXd pi = pol.pi.at_node(j);
            const Eigen::VectorXd nu = pol.control.nu_at_node(j);
            const double dist = (pi - project_K(K, pi)).norm();
            const double slack = support_delta(K, nu).value + pi.dot(nu);
            CHECK(dist <= 1e-8);
            CHECK(std::fabs(slack) <= 1e-8);
            ok = ok && dist <= 1e-8 && std::fabs(slack) <= 1e-8;
        }
    }

    // drift adjustment formula vs brute force, one asset on the capped cone
    {
        const ConstraintSet K = ConstraintSet::no_short_borrow_cap(1, 1.0);
        Eigen::VectorXd theta(1);
        theta << 0.3;
        const Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(1, 1, 0.2);
        const double w = 1.0;  // 2(1 - alpha) at alpha = 1/2
        const Eigen::VectorXd nu = nu_star_weighted(K, theta, sigma, w);
        const auto f = [&](double v) {
            const double q = theta(0) + v / 0.2;
            return q * q + w * std::max(0.0, -v);  // delta(v) = cap max(0,-v)
        };
        double best_v = 0.0, best_f = f(0.0);
        for (int k = -50000; k <= 50000; ++k) {
            const double v = 1e-5 * k;
            const double fv = f(v);
            if (fv < best_f) {
                best_f = fv;
                best_v = v;
            }
        }
        const bool val_ok = std::fabs(f(nu(0)) - best_f) <= 1e-4;
        const bool arg_ok = std::fabs(nu(0) - best_v) <= 1e-3;
        CHECK(val_ok);
        CHECK(arg_ok);
        ok = ok && val_ok && arg_ok;
    }

    // two assets, short-sale ban: barrier cone is the positive orthant
    {
        const ConstraintSet K = ConstraintSet::no_short(2);
        Eigen::VectorXd theta(2);
        theta << 0.3, -0.1;
        Eigen::MatrixXd sigma(2, 2);
        sigma << 0.2, 0.02, 0.0, 0.25;
        const double w = 1.3;
        const Eigen::VectorXd nu = nu_star_weighted(K, theta, sigma, w);
        const Eigen::MatrixXd sinv = sigma.inverse();
        const auto f = [&](const Eigen::VectorXd& v) {
            return (theta + sinv * v).squaredNorm();  // delta == 0 on the cone
        };
        double best_f = f(Eigen::VectorXd::Zero(2));
        Eigen::VectorXd v(2);
        for (int i = 0; i <= 800; ++i) {
            v(0) = 1e-3 * i;
            for (int j = 0; j <= 800; ++j) {
                v(1) = 1e-3 * j;
                best_f = std::min(best_f, f(v));
            }
        }
        const bool val_ok = std::fabs(f(nu) - best_f) <= 1e-4;
        const bool cone_ok = nu.minCoeff() >= -1e-12;
        CHECK(val_ok);
        CHECK(cone_ok);
        ok = ok && val_ok && cone_ok;
    }

    verdict(6, "policy feasibility, slackness, and drift formula exact", ok);
}

TEST_CASE("value increments are centered at the optimum and drift below it") {
    const FactorModel m = base_model();
    const ConstraintSet K = ConstraintSet::no_short_borrow_cap(1, 1.0);
    const UtilitySpec s = power_spec(0.5, 1.0);
    const PeriodicPolicy pol = capped_saddle_policy(m, K, s);
    const SimConfig cfg = sim_cfg(1u << 16, 8, 19);

    const RolloutResult opt = rollout(m, K, s, pol, 1.0, 0.0, 4, cfg);
    const MartingaleReport rep = verify_martingale_D(opt);
    REQUIRE(rep.z_scores.size() == 4);
    CHECK(rep.all_within);

    PeriodicPolicy half = pol;
    half.pi = constant_policy(pol.A_star, Eigen::VectorXd::Constant(1, 0.5));
    const RolloutResult sub = rollout(m, K, s, half, 1.0, 0.0, 4, cfg);
    const MartingaleReport sub_rep = verify_martingale_D(sub);
    CHECK(sub_rep.some_negative_drift);
    CHECK_FALSE(sub_rep.all_within);

    verdict(7, "martingale test passes at optimum, fails off it",
            rep.all_within && sub_rep.some_negative_drift && !sub_rep.all_within);
}

TEST_CASE("objective scales as a power of initial wealth") {
    const FactorModel m = base_model();
    const ConstraintSet K = ConstraintSet::no_short(1);
    bool ok = true;

    {
        const UtilitySpec s = power_spec(0.5, 0.5, 0.9, 0.5);
        const FixedPointResult res = solve_fixed_point(m, K, s, small_fp(3, 5e-4));
        const PeriodicPolicy pol = policy_from_fixed_point(m, K, s, res);
        const SimConfig cfg = sim_cfg(1024, 8, 23);
        const RolloutResult r1 = rollout(m, K, s, pol, 1.0, 0.0, 4, cfg);
        const RolloutResult r2 = rollout(m, K, s, pol, 2.0, 0.0, 4, cfg);

        // common seeds make the scaling law hold path by path
        const double want = std::pow(2.0, 0.25);
        const double ratio = r2.objective / r1.objective;
        const double band =
            3.0 * want * (r1.objective_se + r2.objective_se) / std::fabs(r1.objective);
        const bool in_band = std::fabs(ratio - want) <= band;
        const bool exact = std::fabs(ratio - want) <= 1e-10 * want;
        CHECK(in_band);
        CHECK(exact);
        ok = ok && in_band && exact;
    }

    {
        const ConstraintSet Kc = ConstraintSet::no_short_borrow_cap(1, 1.0);
        const UtilitySpec s = power_spec(0.5, 1.0);
        const PeriodicPolicy pol = capped_saddle_policy(m, Kc, s);
        const SimConfig cfg = sim_cfg(1024, 8, 29);
        const RolloutResult r1 = rollout(m, Kc, s, pol, 1.0, 0.0, 4, cfg);
        const RolloutResult r2 = rollout(m, Kc, s, pol, 2.0, 0.0, 4, cfg);
        const bool invariant =
            std::fabs(r2.objective - r1.objective) <= 1e-12 * (1.0 + std::fabs(r1.objective));
        CHECK(invariant);
        ok = ok && invariant;
    }

    verdict(8, "wealth scaling exact, invariant when exponent is one", ok);
}

TEST_CASE("artifacts are byte-identical across reruns and thread counts") {
    const fs::path work = "/tmp/peval_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    json j;
    j["model"] = {{"n", 1},
                  {"r", 0.02},
                  {"mu", json::array({0.08})},
                  {"sigma0", json::array({json::array({0.2})})},
                  {"b", {{"family", "affine"}, {"c0", 0.0}, {"c1", -0.5}}},
                  {"beta", 0.3},
                  {"q", json::array({0.5})},
                  {"y0", 0.0},
                  {"bounds",
                   {{"r_bar", 0.02}, {"r_lower", 0.02}, {"M0", 0.09}, {"kappa0", 0.04}}}};
    j["constraint"] = {{"kind", "no_short_borrow_cap"}, {"cap", 1.0}};
    j["utility"] = {{"mode", "power"},  {"alpha", 0.5}, {"gamma", 0.5},
                    {"rho", 0.2},       {"tau", 1.0},   {"h", 0.9},
                    {"m", 0.5}};
    j["numerics"] = {{"grid_nodes", 5},     {"grid_width_sds", 4.0},
                     {"paths", 512},        {"fp_paths", 512},
                     {"certify_paths", 512}, {"steps", 8},
                     {"seed", 4},           {"fp_tol", 5e-4},
                     {"rotate_sweeps", 2},  {"pg_iters", 2},
                     {"periods", 4}};
    const fs::path cfg = work / "config.json";
    std::ofstream(cfg) << j.dump(2) << "\n";

    const auto cli = [&](const std::string& args) {
        const std::string cmd = std::string(PEVAL_CLI_PATH) + " " + args + " > " +
                                (work / "out.txt").string() + " 2>&1";
        return std::system(cmd.c_str());
    };
    const auto dir = [&](const std::string& name) {
        const fs::path d = work / name;
        fs::create_directories(d);
        return d;
    };

    const fs::path a = dir("a"), b = dir("b"), c = dir("c");
    REQUIRE(cli("solve --config " + cfg.string() + " --out " + a.string() +
                " --threads 1") == 0);
    REQUIRE(cli("solve --config " + cfg.string() + " --out " + b.string() +
                " --threads 1") == 0);
    REQUIRE(cli("solve --config " + cfg.string() + " --out " + c.string() +
                " --threads 2") == 0);

    bool ok = true;
    for (const char* f : {"A_star.csv", "policy.csv", "solution.json", "run_report.json"}) {
        const bool rerun_same = slurp(a / f) == slurp(b / f);
        const bool threads_same = slurp(a / f) == slurp(c / f);
        CHECK(rerun_same);
        CHECK(threads_same);
        ok = ok && rerun_same && threads_same;
    }

    const fs::path s1 = dir("s1"), s2 = dir("s2");
    REQUIRE(cli("simulate --config " + cfg.string() + " --artifacts " + a.string() +
                " --out " + s1.string() + " --threads 1") == 0);
    REQUIRE(cli("simulate --config " + cfg.string() + " --artifacts " + a.string() +
                " --out " + s2.string() + " --threads 2") == 0);
    for (const char* f : {"summary.json", "rollout.csv"}) {
        const bool same = slurp(s1 / f) == slurp(s2 / f);
        CHECK(same);
        ok = ok && same;
    }

    fs::remove_all(work);
    verdict(9, "byte-identical artifacts across runs and threads", ok);
}

TEST_CASE("logarithmic solver matches its affine closed form") {
    const FactorModel m = base_model();
    const UtilitySpec s = log_spec(0.7);
    FixedPointConfig cfg = small_fp(5, 1e-6);
    cfg.grid_width_sds = 3.0;
    cfg.certify_paths = 512;
    const LogFixedPointResult res =
        log_fixed_point(m, ConstraintSet::unconstrained(1), s, cfg);

    const double disc = std::exp(-0.2);
    const double c1 = (1.0 - 0.7 * disc) / (std::exp(0.2) - 1.0);
    const double G = 0.02 + 0.5 * 0.09;
    const double astar = (c1 * G + disc * (0.95 - 0.14)) / (1.0 - disc);
    const double cstar = 0.3 / (std::exp(0.2) - 1.0);

    bool ok = std::fabs(res.C_star - cstar) <= 1e-15 * std::fabs(cstar);
    CHECK(res.C_star == doctest::Approx(cstar).epsilon(1e-15));
    double sup = 0.0;
    for (std::size_t j = 0; j < res.A_star.size(); ++j)
        sup = std::max(sup, std::fabs(res.A_star[j] - astar));
    CHECK(sup <= 1e-6);
    ok = ok && sup <= 1e-6;

    const BoundsBox box = theoretical_bounds_A_log(m.bounds, s);
    const bool boxed = res.A_star.min_value() >= box.lower - 1e-9 &&
                       res.A_star.max_value() <= box.upper + 1e-9;
    CHECK(boxed);
    ok = ok && boxed;
    verdict(10, "log-mode profile and slope match the closed form", ok);
}
