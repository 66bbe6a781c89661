#include "peval/policy_sim.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

#include "peval/errors.hpp"
#include "peval/io_util.hpp"
#include "peval/parallel.hpp"
#include "peval/rng.hpp"

namespace peval {

namespace {

constexpr std::uint64_t kTagRatio = 0x0A70;
constexpr std::uint64_t kTagRoll = 0x0477;

void require_grid(const ValueGrid& g, const char* who) {
    if (g.size() < 2) throw ConfigError(std::string(who) + ": fixed-point grid required");
}

} // namespace

bool binding_set_policy(const Eigen::VectorXd& excess, const Eigen::MatrixXd& Q,
                        double cap, double alpha,
                        Eigen::VectorXd& pi_out, Eigen::VectorXd& nu_out) {
    const int n = static_cast<int>(excess.size());
    if (n > 16) return false;
    if (!(cap > 0.0)) return false;
    const double w = 1.0 - alpha;
    const double tol = 1e-11;

    // nu = (1-alpha) Q pi - excess must equal phi on the support of pi and
    // exceed phi off it, with phi <= 0 and phi < 0 only when the cap binds.
    auto consistent = [&](const Eigen::VectorXd& pi, double phi) {
        Eigen::VectorXd nu = w * (Q * pi) - excess;
        for (int i = 0; i < n; ++i) {
            if (pi(i) < -tol) return false;
            if (nu(i) < phi - tol) return false;
            if (pi(i) > tol && std::fabs(nu(i) - phi) > tol) return false;
        }
        const double total = pi.sum();
        if (total > cap + tol) return false;
        if (phi < -tol && std::fabs(total - cap) > tol) return false;
        pi_out = pi.cwiseMax(0.0);
        nu_out = nu;
        return true;
    };

    // Empty support: optimal only when no asset has positive excess return.
    {
        Eigen::VectorXd pi = Eigen::VectorXd::Zero(n);
        if (consistent(pi, 0.0)) return true;
    }

    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> S;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) S.push_back(i);
        const int k = static_cast<int>(S.size());
        Eigen::MatrixXd Qs(k, k);
        Eigen::VectorXd bs(k);
        for (int a = 0; a < k; ++a) {
            bs(a) = excess(S[a]);
            for (int c = 0; c < k; ++c) Qs(a, c) = Q(S[a], S[c]);
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Qs);
        if (ldlt.info() != Eigen::Success) continue;

        // Slack cap first (phi = 0), then the binding-cap multiplier.
        const Eigen::VectorXd free_s = ldlt.solve(bs) / w;
        {
            Eigen::VectorXd pi = Eigen::VectorXd::Zero(n);
            for (int a = 0; a < k; ++a) pi(S[a]) = free_s(a);
            if (consistent(pi, 0.0)) return true;
        }
        const Eigen::VectorXd qinv_one = ldlt.solve(Eigen::VectorXd::Ones(k));
        const double denom = qinv_one.sum();
        if (std::fabs(denom) > 1e-14) {
            const double phi = (cap * w - ldlt.solve(bs).sum()) / denom;
            const Eigen::VectorXd pis = ldlt.solve(bs + phi * Eigen::VectorXd::Ones(k)) / w;
            Eigen::VectorXd pi = Eigen::VectorXd::Zero(n);
            for (int a = 0; a < k; ++a) pi(S[a]) = pis(a);
            if (phi <= tol && consistent(pi, std::min(phi, 0.0))) return true;
        }
    }
    return false;
}

PeriodicPolicy policy_gamma1(const FactorModel& model, const ConstraintSet& K,
                             const UtilitySpec& spec, const FixedPointResult& fp) {
    spec.validate();
    if (spec.mode != UtilitySpec::Mode::Power || spec.gamma != 1.0)
        throw ConfigError("policy_gamma1: needs power mode with gamma = 1");
    require_grid(fp.A_star, "policy_gamma1");

    const ValueGrid& layout = fp.A_star;
    const int n = model.n;
    PeriodicPolicy pol;
    pol.kind = PeriodicPolicy::Kind::PowerGamma1;
    pol.A_star = fp.A_star;
    pol.pi = constant_policy(layout, Eigen::VectorXd::Zero(n));
    pol.control = zero_control(layout, n);
    pol.lambda_table =
        fp.lambda_table.same_layout(layout) ? fp.lambda_table : layout;

    for (std::size_t j = 0; j < layout.size(); ++j) {
        const double y = layout.node(j);
        const Eigen::MatrixXd sig = model.sigma(y);
        const Eigen::MatrixXd Q = sig * sig.transpose();
        const Eigen::VectorXd ex = model.excess_return(y);
        Eigen::VectorXd pi, nu;
        bool done = false;
        if (K.kind == ConstraintSet::Kind::NoShortAndBorrowCap)
            done = binding_set_policy(ex, Q, K.cap, spec.alpha, pi, nu);
        if (!done) {
            nu = nu_star_power_gamma1(K, sharpe_theta(model, y), sig, spec.alpha, &pi);
        }
        for (int i = 0; i < n; ++i) {
            pol.pi.pi[i][j] = pi(i);
            pol.control.nu[i][j] = nu(i);
        }
    }
    pol.control.lambda = 1.0;
    return pol;
}

PeriodicPolicy policy_log(const FactorModel& model, const ConstraintSet& K,
                          const UtilitySpec& spec, const LogFixedPointResult& fp) {
    (void)model;
    (void)K;
    spec.validate();
    if (spec.mode != UtilitySpec::Mode::Log)
        throw ConfigError("policy_log: needs logarithmic mode");
    require_grid(fp.A_star, "policy_log");
    PeriodicPolicy pol;
    pol.kind = PeriodicPolicy::Kind::Log;
    pol.pi = fp.policy;
    pol.control = fp.control;
    pol.A_star = fp.A_star;
    pol.C_star = fp.C_star;
    ValueGrid ones = fp.A_star;
    for (std::size_t j = 0; j < ones.size(); ++j) ones[j] = 1.0;
    pol.lambda_table = ones;
    return pol;
}

PeriodicPolicy policy_from_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                       const UtilitySpec& spec,
                                       const FixedPointResult& fp) {
    (void)model;
    (void)K;
    spec.validate();
    if (spec.mode != UtilitySpec::Mode::Power)
        throw ConfigError("policy_from_fixed_point: power mode only");
    require_grid(fp.A_star, "policy_from_fixed_point");
    if (fp.policy.pi.empty() || fp.control.nu.empty() ||
        !fp.lambda_table.same_layout(fp.A_star))
        throw ConfigError("policy_from_fixed_point: result lacks the certification "
                          "sweep tables");
    PeriodicPolicy pol;
    pol.kind = PeriodicPolicy::Kind::PowerGeneral;
    pol.pi = fp.policy;
    pol.control = fp.control;
    pol.lambda_table = fp.lambda_table;
    pol.A_star = fp.A_star;
    return pol;
}

RatioSample optimal_ratio_sampler(const FactorModel& model, const ConstraintSet& K,
                                  const UtilitySpec& spec, const PeriodicPolicy& policy,
                                  double y_start, const SimConfig& cfg,
                                  std::uint64_t period_tag) {
    require_grid(policy.A_star, "optimal_ratio_sampler");
    const PathSet ps = simulate_factor(model, y_start, spec.tau, cfg, kTagRatio, period_tag);

    RatioSample out;
    out.ratio.resize(ps.paths);
    out.y_end.resize(ps.paths);
    std::vector<double> zb(ps.paths), bud(ps.paths);

    if (policy.kind == PeriodicPolicy::Kind::PowerGeneral) {
        const WealthDensity wd =
            simulate_wealth_density(model, ps, nullptr, &policy.control, &K, cfg);
        const ModifiedUtility mu(spec, policy.A_star);
        const double lambda =
            policy.lambda_table[policy.lambda_table.nearest_index(y_start)];
        parallel_chunks(ps.paths, cfg.threads,
                        [&](std::size_t, std::size_t begin, std::size_t end) {
                            for (std::size_t p = begin; p < end; ++p) {
                                const double z = wd.z[p] / wd.bank[p];
                                out.ratio[p] = mu.inverse_marginal(lambda * z, wd.y_end[p]);
                                out.y_end[p] = wd.y_end[p];
                                bud[p] = out.ratio[p] * z;
                            }
                        });
    } else {
        const WealthDensity wd =
            simulate_wealth_density(model, ps, &policy.pi, &policy.control, &K, cfg);
        for (std::size_t p = 0; p < ps.paths; ++p) {
            out.ratio[p] = wd.x[p];
            out.y_end[p] = wd.y_end[p];
            bud[p] = wd.x[p] * wd.z[p] / wd.bank[p];
        }
    }
    const MeanSE mb = mean_se(bud);
    out.budget = mb.mean;
    out.budget_se = mb.se;
    return out;
}

namespace {

struct NodeCaches {
    Eigen::MatrixXd pi;       // n x nodes
    Eigen::MatrixXd s0t_pi;   // sigma0' pi
    Eigen::MatrixXd s0i_nu;   // sigma0^{-1} nu
    Eigen::VectorXd eta;
    Eigen::VectorXd delta;
};

NodeCaches build_caches(const FactorModel& model, const ConstraintSet& K,
                        const PeriodicPolicy& policy) {
    const ValueGrid& layout = policy.A_star;
    const std::size_t nodes = layout.size();
    const int n = model.n;
    NodeCaches nc;
    nc.pi = Eigen::MatrixXd::Zero(n, nodes);
    nc.s0t_pi = Eigen::MatrixXd::Zero(n, nodes);
    nc.s0i_nu = Eigen::MatrixXd::Zero(n, nodes);
    nc.eta = Eigen::VectorXd::Zero(nodes);
    nc.delta = Eigen::VectorXd::Zero(nodes);
    const Eigen::MatrixXd sigma0_inv = model.sigma0.partialPivLu().inverse();
    const bool has_pi = !policy.pi.pi.empty();
    const bool has_nu = !policy.control.nu.empty();
    for (std::size_t j = 0; j < nodes; ++j) {
        if (has_pi) {
            const Eigen::VectorXd pj = policy.pi.at_node(j);
            nc.pi.col(j) = pj;
            nc.s0t_pi.col(j) = model.sigma0.transpose() * pj;
        }
        if (has_nu) {
            const Eigen::VectorXd nj = policy.control.nu_at_node(j);
            nc.s0i_nu.col(j) = sigma0_inv * nj;
            nc.eta(j) = policy.control.eta[j];
            const SupportValue d = support_delta(K, nj);
            if (!d.finite)
                throw NumericalError("rollout: control outside the barrier cone");
            nc.delta(j) = d.value;
        }
    }
    return nc;
}

} // namespace

RolloutResult rollout(const FactorModel& model, const ConstraintSet& K,
                      const UtilitySpec& spec, const PeriodicPolicy& policy,
                      double x0, double y0, int periods, const SimConfig& cfg) {
    model.validate_shape();
    spec.validate();
    if (periods < 1) throw ConfigError("rollout: periods must be >= 1");
    if (!(x0 > 0.0)) throw ConfigError("rollout: x0 must be positive");
    require_grid(policy.A_star, "rollout");

    const bool is_log = spec.mode == UtilitySpec::Mode::Log;
    if (is_log != (policy.kind == PeriodicPolicy::Kind::Log))
        throw ConfigError("rollout: policy kind does not match the utility mode");
    const bool via_density = policy.kind == PeriodicPolicy::Kind::PowerGeneral;

    const ValueGrid& layout = policy.A_star;
    const NodeCaches nc = build_caches(model, K, policy);
    const Eigen::MatrixXd sigma0_inv = model.sigma0.partialPivLu().inverse();
    std::optional<ModifiedUtility> mu_storage;
    if (!is_log) mu_storage.emplace(spec, policy.A_star);

    const int n = model.n;
    const double tau = spec.tau, rho = spec.rho, g = spec.gamma, alpha = spec.alpha;
    const double p_exp = alpha * (1.0 - g);
    const double dt = tau / static_cast<double>(cfg.steps);
    const double sdt = std::sqrt(dt);
    const double qo = model.q_orth();
    const double vfac = is_log ? 0.0 : std::exp(-rho * tau * g * alpha) / alpha;
    const double cstar = policy.C_star;

    auto v_term = [&](double a_val, double lx) {
        return is_log ? a_val + cstar * lx : vfac * a_val * std::exp(p_exp * lx);
    };

    RolloutResult res;
    res.periods = periods;
    res.paths = cfg.paths;
    res.x0 = x0;
    res.y0 = y0;
    res.d0 = v_term(layout.eval(y0), std::log(x0));

    std::vector<double> LX(cfg.paths, std::log(x0)), Y(cfg.paths, y0);
    std::vector<double> prevV(cfg.paths, res.d0), cum(cfg.paths, 0.0);
    res.wealth.resize(static_cast<Eigen::Index>(cfg.paths), periods + 1);
    res.wealth.col(0).setConstant(x0);
    res.D.resize(static_cast<Eigen::Index>(cfg.paths), periods);

    for (int period = 1; period <= periods; ++period) {
        std::vector<double> dD(cfg.paths), term(cfg.paths), xs(cfg.paths);
        const double disc_i = std::exp(-rho * tau * period);

        parallel_chunks(cfg.paths, cfg.threads, [&](std::size_t, std::size_t begin,
                                                    std::size_t end) {
            Eigen::VectorXd dw(n), excess(n), th(n);
            for (std::size_t p = begin; p < end; ++p) {
                std::mt19937_64 rng = path_stream(cfg.seed, p, kTagRoll,
                                                  static_cast<std::uint64_t>(period));
                std::normal_distribution<double> normal(0.0, 1.0);
                double y = Y[p];
                const std::size_t j_start = layout.nearest_index(y);
                double logr = 0.0, logz = 0.0, logb = 0.0;
                for (int s = 0; s < cfg.steps; ++s) {
                    const double rr = model.r(y);
                    const double mod = model.sigma_mod(y);
                    const std::size_t j = layout.nearest_index(y);
                    double qdw = 0.0;
                    for (int i = 0; i < n; ++i) {
                        dw(i) = sdt * normal(rng);
                        qdw += model.q(i) * dw(i);
                    }
                    const double dw2 = sdt * normal(rng);
                    for (int i = 0; i < n; ++i) excess(i) = model.mu[i](y) - rr;

                    if (via_density) {
                        th = (sigma0_inv * excess + nc.s0i_nu.col(j)) / mod;
                        const double eta = nc.eta(j);
                        logz += -th.dot(dw) + eta * dw2 -
                                0.5 * (th.squaredNorm() + eta * eta) * dt;
                        logb += (rr + nc.delta(j)) * dt;
                    } else {
                        const double drift = rr + nc.pi.col(j).dot(excess);
                        const double q2 = nc.s0t_pi.col(j).squaredNorm();
                        logr += (drift - 0.5 * mod * mod * q2) * dt +
                                mod * nc.s0t_pi.col(j).dot(dw);
                    }
                    y += model.b(y) * dt + model.beta(y) * (qdw + qo * dw2);
                }
                if (via_density) {
                    const double z = std::exp(logz - logb);
                    const double lambda = policy.lambda_table[j_start];
                    logr = std::log(mu_storage->inverse_marginal(lambda * z, y));
                }
                const double lx_old = LX[p];
                const double lx_new = lx_old + logr;
                if (std::fabs(lx_new) > cfg.logx_cap)
                    throw NumericalError("rollout: |log X| exceeded the cap");
                const double h_end = spec.h(y);
                double t_i;
                if (is_log) {
                    t_i = disc_i * (logr + (1.0 - g) * lx_old - g * rho * tau + h_end);
                } else {
                    t_i = disc_i * std::exp(-rho * tau * g * alpha) / alpha *
                          std::exp(alpha * logr + p_exp * lx_old) * h_end;
                }
                const double v_new = disc_i * v_term(layout.eval(y), lx_new);
                dD[p] = t_i + v_new - prevV[p];
                term[p] = t_i;
                xs[p] = std::exp(lx_new);
                LX[p] = lx_new;
                Y[p] = y;
                prevV[p] = v_new;
                cum[p] += t_i;
                const Eigen::Index pe = static_cast<Eigen::Index>(p);
                res.wealth(pe, period) = xs[p];
                res.D(pe, period - 1) = cum[p] + v_new;
            }
        });

        PeriodStats st;
        const MeanSE md = mean_se(dD);
        const MeanSE mt = mean_se(term);
        st.mean_dD = md.mean;
        st.se_dD = md.se;
        st.mean_term = mt.mean;
        st.se_term = mt.se;
        st.mean_x = pairwise_sum(xs) / static_cast<double>(cfg.paths);
        res.period_stats.push_back(st);
    }

    const MeanSE mo = mean_se(cum);
    res.objective = mo.mean;
    res.objective_se = mo.se;
    if (is_log) {
        res.log_objective = mo.mean;
        res.log_objective_se = mo.se;
    }

    // Geometric envelope on everything beyond the simulated horizon.
    if (is_log) {
        const BoundsBox abox = theoretical_bounds_A_log(model.bounds, spec);
        const double glim = std::max(std::fabs(model.bounds.r_lower),
                                     std::fabs(model.bounds.r_bar) + 0.5 * model.bounds.M0);
        const double amag = std::max(std::fabs(abox.lower), std::fabs(abox.upper));
        res.tail_bound = std::exp(-rho * tau * periods) *
                         (amag + std::fabs(cstar) *
                                     (std::fabs(std::log(x0)) + glim * tau * periods));
    } else {
        const double c = contraction_constant(model.bounds, spec);
        const BoundsBox abox = theoretical_bounds_A(model.bounds, spec);
        res.tail_bound = std::pow(c, periods) * std::pow(x0, p_exp) *
                         std::exp(-rho * tau * g * alpha) * abox.upper /
                         std::fabs(alpha);
    }
    return res;
}

MartingaleReport verify_martingale_D(const RolloutResult& r,
                                     const std::vector<double>& drift_allowance) {
    MartingaleReport rep;
    for (std::size_t i = 0; i < r.period_stats.size(); ++i) {
        const PeriodStats& st = r.period_stats[i];
        // Deterministic periods report se = 0; a few ulps of rounding residue
        // in the mean must not read as infinite drift.
        const double floor = 1e-12 * (1.0 + std::fabs(st.mean_term));
        const double allow = i < drift_allowance.size() ? drift_allowance[i] : 0.0;
        const double excess = std::fabs(st.mean_dD) - allow;
        double z = 0.0;
        if (excess <= floor) z = 0.0;
        else if (st.se_dD > 0.0) z = std::copysign(excess, st.mean_dD) / st.se_dD;
        else
            z = st.mean_dD > 0.0 ? std::numeric_limits<double>::infinity()
                                 : -std::numeric_limits<double>::infinity();
        rep.z_scores.push_back(z);
        if (std::fabs(z) > 3.0) rep.all_within = false;
        if (z < -3.0) rep.some_negative_drift = true;
    }
    return rep;
}

ValueBoundsCheck value_bounds_check(const ModelBounds& bounds, const UtilitySpec& spec,
                                    const RolloutResult& r) {
    ValueBoundsCheck chk;
    chk.estimate = r.objective;
    chk.tolerance = 3.0 * r.objective_se + r.tail_bound;
    chk.box = theoretical_bounds_V(bounds, spec, r.x0);
    chk.inside = chk.estimate >= chk.box.lower - chk.tolerance &&
                 chk.estimate <= chk.box.upper + chk.tolerance;
    return chk;
}

void rollout_to_csv(const RolloutResult& r, const std::string& path) {
    std::ostringstream out;
    out << "path,period,wealth,ratio,D\n";
    for (Eigen::Index p = 0; p < r.wealth.rows(); ++p)
        for (int i = 1; i <= r.periods; ++i)
            out << p << ',' << i << ',' << format_double(r.wealth(p, i)) << ','
                << format_double(r.wealth(p, i) / r.wealth(p, i - 1)) << ','
                << format_double(r.D(p, i - 1)) << '\n';
    write_text_file(path, out.str());
}

} // namespace peval
