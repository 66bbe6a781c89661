#include "peval/fixedpoint.hpp"

#include <cmath>
#include <sstream>

#include "peval/errors.hpp"
#include "peval/io_util.hpp"
#include "peval/parallel.hpp"
#include "peval/rng.hpp"

namespace peval {

namespace {

constexpr std::uint64_t kTagPeriod = 0x0501;
constexpr std::uint64_t kTagLog = 0x070F;

struct PolicyScore {
    FeedbackPolicy policy;
    double mean = 0.0;
    double se = 0.0;
};

// Sample mean and SE of h_A(X_tau, Y_tau) under a feedback policy.
bool eval_policy(const FactorModel& model, const ModifiedUtility& mu, const PathSet& ps,
                 const FeedbackPolicy& policy, const SimConfig& scfg, double& mean,
                 double& se, std::vector<double>* vals_out = nullptr) {
    try {
        const WealthDensity wd = simulate_wealth_density(model, ps, &policy, nullptr,
                                                         nullptr, scfg);
        std::vector<double> vals(ps.paths);
        parallel_chunks(ps.paths, scfg.threads,
                        [&](std::size_t, std::size_t begin, std::size_t end) {
                            for (std::size_t i = begin; i < end; ++i)
                                vals[i] = mu.h_A(wd.x[i], wd.y_end[i]);
                        });
        const MeanSE ms = mean_se(vals);
        mean = ms.mean;
        se = ms.se;
        if (vals_out) *vals_out = std::move(vals);
        return std::isfinite(mean);
    } catch (const NumericalError&) {
        return false;
    }
}

// Improvement of a candidate over the incumbent on the shared path set. Common
// random numbers make the pathwise difference low-variance, so requiring the
// gain to clear 3 SE of the difference filters out in-sample overfitting.
bool significant_gain(const std::vector<double>& cand, const std::vector<double>& cur,
                      double rel_floor) {
    std::vector<double> diff(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i) diff[i] = cand[i] - cur[i];
    const MeanSE d = mean_se(diff);
    return d.mean > std::max(rel_floor, 3.0 * d.se);
}

// Pathwise derivative of E[h_A(X_tau, Y_tau)] in the policy node values:
// weight x h_A'(x) times d log X / d pi_j.
Eigen::MatrixXd policy_gradient(const FactorModel& model, const ModifiedUtility& mu,
                                const PathSet& ps, const FeedbackPolicy& policy,
                                const SimConfig& scfg) {
    const int n = model.n;
    const ValueGrid& layout = policy.pi.front();
    const std::size_t nodes = layout.size();
    const double dt = ps.dt;

    Eigen::MatrixXd pi_nodes(n, nodes), s0t_pi(n, nodes), q_pi(n, nodes);
    const Eigen::MatrixXd Q0 = model.sigma0 * model.sigma0.transpose();
    for (std::size_t j = 0; j < nodes; ++j) {
        const Eigen::VectorXd pj = policy.at_node(j);
        pi_nodes.col(j) = pj;
        s0t_pi.col(j) = model.sigma0.transpose() * pj;
        q_pi.col(j) = Q0 * pj;
    }

    const std::size_t nchunks = (ps.paths + kChunk - 1) / kChunk;
    std::vector<Eigen::MatrixXd> cg(nchunks, Eigen::MatrixXd::Zero(n, nodes));

    parallel_chunks(ps.paths, scfg.threads, [&](std::size_t c, std::size_t begin,
                                                std::size_t end) {
        Eigen::MatrixXd& G = cg[c];
        Eigen::VectorXd excess(n), sdw(n);
        for (std::size_t p = begin; p < end; ++p) {
            double logx = 0.0;
            for (int s = 0; s < ps.steps; ++s) {
                const double y = ps.y_at(p, s);
                const double rr = model.r(y);
                const double mod = model.sigma_mod(y);
                const std::size_t j = layout.nearest_index(y);
                const double* dw1 = ps.dw1_at(p, s);
                double drift = rr, diff = 0.0;
                for (int i = 0; i < n; ++i) {
                    drift += pi_nodes(i, j) * (model.mu[i](y) - rr);
                    diff += s0t_pi(i, j) * dw1[i];
                }
                const double q2 = s0t_pi.col(j).squaredNorm();
                logx += (drift - 0.5 * mod * mod * q2) * dt + mod * diff;
            }
            if (std::fabs(logx) > scfg.logx_cap)
                throw NumericalError("policy_gradient: |log X| exceeded the cap");
            const double x = std::exp(logx);
            const double ye = ps.y_terminal(p);
            const double w = mu.marginal(x, ye) * x;
            for (int s = 0; s < ps.steps; ++s) {
                const double y = ps.y_at(p, s);
                const double rr = model.r(y);
                const double mod = model.sigma_mod(y);
                const std::size_t j = layout.nearest_index(y);
                const double* dw1 = ps.dw1_at(p, s);
                Eigen::Map<const Eigen::VectorXd> dW(dw1, n);
                for (int i = 0; i < n; ++i) excess(i) = model.mu[i](y) - rr;
                sdw.noalias() = model.sigma0 * dW;
                G.col(j) += w * ((excess - mod * mod * q_pi.col(j)) * dt + mod * sdw);
            }
        }
    });

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, nodes);
    for (std::size_t c = 0; c < nchunks; ++c) G += cg[c];
    return G / static_cast<double>(ps.paths);
}

std::vector<FeedbackPolicy> candidate_policies(const FactorModel& model,
                                               const ConstraintSet& K,
                                               const ValueGrid& layout, double alpha) {
    const int n = model.n;
    const double w = 2.0 * (1.0 - alpha);
    FeedbackPolicy qp = constant_policy(layout, Eigen::VectorXd::Zero(n));
    FeedbackPolicy merton = constant_policy(layout, Eigen::VectorXd::Zero(n));
    FeedbackPolicy zero = constant_policy(layout, Eigen::VectorXd::Zero(n));
    for (std::size_t j = 0; j < layout.size(); ++j) {
        const double y = layout.node(j);
        const Eigen::VectorXd th = sharpe_theta(model, y);
        const Eigen::MatrixXd sig = model.sigma(y);
        Eigen::VectorXd pi_qp;
        nu_star_weighted(K, th, sig, w, &pi_qp);
        const Eigen::VectorXd pi_m = project_K(
            K, (sig * sig.transpose()).ldlt().solve(model.excess_return(y)) /
                   (1.0 - alpha));
        for (int i = 0; i < n; ++i) {
            qp.pi[i][j] = pi_qp(i);
            merton.pi[i][j] = pi_m(i);
        }
    }
    return {std::move(qp), std::move(merton), std::move(zero)};
}

PolicyScore best_primal_policy(const FactorModel& model, const ConstraintSet& K,
                               const ModifiedUtility& mu, const PathSet& ps,
                               const SimConfig& scfg, const OnePeriodConfig& cfg,
                               const std::vector<FeedbackPolicy>* seeds) {
    std::vector<FeedbackPolicy> own;
    if (!seeds) {
        own = candidate_policies(model, K, mu.A(), mu.spec().alpha);
        seeds = &own;
    }

    PolicyScore cur;
    std::vector<double> cur_vals;
    bool have = false;
    for (const FeedbackPolicy& cand : *seeds) {
        double mean = 0.0, se = 0.0;
        std::vector<double> vals;
        if (!eval_policy(model, mu, ps, cand, scfg, mean, se, &vals)) continue;
        if (!have || mean > cur.mean) {
            cur = PolicyScore{cand, mean, se};
            cur_vals = std::move(vals);
            have = true;
        }
    }
    if (!have) throw NumericalError("one_period_value: every candidate policy exploded");

    const int n = model.n;
    const std::size_t nodes = cur.policy.pi.front().size();
    for (int iter = 0; iter < cfg.pg_iters; ++iter) {
        Eigen::MatrixXd G;
        try {
            G = policy_gradient(model, mu, ps, cur.policy, scfg);
        } catch (const NumericalError&) {
            break;
        }
        const double gmax = G.cwiseAbs().maxCoeff();
        if (gmax == 0.0) break;
        double pscale = 0.0;
        for (std::size_t j = 0; j < nodes; ++j)
            pscale = std::max(pscale, cur.policy.at_node(j).cwiseAbs().maxCoeff());
        double t = 0.5 * (1.0 + pscale) / gmax;
        bool accepted = false;
        for (int trial = 0; trial < 6; ++trial, t *= 0.5) {
            FeedbackPolicy cand = cur.policy;
            for (std::size_t j = 0; j < nodes; ++j) {
                const Eigen::VectorXd pj =
                    project_K(K, cur.policy.at_node(j) + t * G.col(j));
                for (int i = 0; i < n; ++i) cand.pi[i][j] = pj(i);
            }
            double mean = 0.0, se = 0.0;
            std::vector<double> vals;
            if (eval_policy(model, mu, ps, cand, scfg, mean, se, &vals) &&
                significant_gain(vals, cur_vals,
                                 cfg.pg_accept_rel * (1.0 + std::fabs(cur.mean)))) {
                cur = PolicyScore{std::move(cand), mean, se};
                cur_vals = std::move(vals);
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    return cur;
}

OnePeriodValue one_period_value_impl(const FactorModel& model, const ConstraintSet& K,
                                     const ModifiedUtility& mu, double y,
                                     const OnePeriodConfig& cfg,
                                     const std::vector<FeedbackPolicy>* seeds) {
    const UtilitySpec& spec = mu.spec();
    SimConfig scfg;
    scfg.paths = cfg.paths;
    scfg.steps = cfg.steps;
    scfg.seed = cfg.seed;
    scfg.threads = cfg.threads;
    const PathSet ps = simulate_factor(model, y, spec.tau, scfg, kTagPeriod, 0);

    const PolicyScore primal = best_primal_policy(model, K, mu, ps, scfg, cfg, seeds);

    OnePeriodValue out;
    out.primal_E = primal.mean;
    out.primal_se = primal.se;
    const std::size_t j0 = mu.A().nearest_index(y);
    out.pi_node = primal.policy.at_node(j0);
    out.policy = primal.policy;

    const double f = spec.alpha * std::exp(-spec.rho * spec.tau);
    out.psi_primal = f * out.primal_E;

    if (cfg.with_dual) {
        DualSearchConfig dcfg;
        dcfg.sweeps = cfg.dual_sweeps;
        const MinimizeDualResult mdr = minimize_dual(model, mu, K, ps, scfg, dcfg);
        out.dual_E = mdr.eval.value;
        out.dual_se = mdr.eval.std_err;
        out.lambda = mdr.eval.lambda;
        out.budget = mdr.eval.budget;
        out.nu_node = mdr.control.nu_at_node(j0);
        out.eta_node = mdr.control.eta[j0];
        out.psi_dual = f * out.dual_E;
        out.control = mdr.control;
        out.control.lambda = mdr.eval.lambda;
    } else {
        out.nu_node = Eigen::VectorXd::Zero(model.n);
        out.control = zero_control(mu.A(), model.n);
    }
    return out;
}

} // namespace

OnePeriodValue one_period_value(const FactorModel& model, const ConstraintSet& K,
                                const ModifiedUtility& mu, double y,
                                const OnePeriodConfig& cfg) {
    return one_period_value_impl(model, K, mu, y, cfg, nullptr);
}

ValueGrid apply_Psi(const FactorModel& model, const ConstraintSet& K,
                    const UtilitySpec& spec, const ValueGrid& A,
                    const OnePeriodConfig& cfg, std::uint64_t sweep_seed) {
    const ModifiedUtility mu(spec, A);
    const std::vector<FeedbackPolicy> seeds =
        candidate_policies(model, K, A, spec.alpha);
    OnePeriodConfig node_cfg = cfg;
    node_cfg.seed = sweep_seed;
    node_cfg.with_dual = false;
    ValueGrid out = A;
    for (std::size_t j = 0; j < A.size(); ++j) {
        const OnePeriodValue ov =
            one_period_value_impl(model, K, mu, A.node(j), node_cfg, &seeds);
        out[j] = std::max(0.0, ov.psi_primal);
    }
    return out;
}

double contraction_constant(const ModelBounds& bounds, const UtilitySpec& spec) {
    const double x =
        spec.mode == UtilitySpec::Mode::Power ? spec.alpha * (1.0 - spec.gamma) : 0.0;
    const double z = zeta(bounds.r_bar, bounds.M0, x);
    const double c = std::exp(-(spec.rho - z) * spec.tau);
    if (!(c < 1.0))
        throw NumericalError("contraction_constant: rho <= zeta(alpha(1-gamma)), "
                             "the period operator is not a contraction");
    return c;
}

BoundsBox theoretical_bounds_A(const ModelBounds& bounds, const UtilitySpec& spec) {
    if (spec.mode == UtilitySpec::Mode::Log)
        return theoretical_bounds_A_log(bounds, spec);
    const double a = spec.alpha;
    const double p = a * (1.0 - spec.gamma);
    const double tau = spec.tau;
    const double rho = spec.rho;
    const double za = zeta(bounds.r_bar, bounds.M0, a);
    const double zp = zeta(bounds.r_bar, bounds.M0, p);
    const double denom_z = 1.0 - std::exp(-(rho - zp) * tau);
    const double denom_r = 1.0 - std::exp(-(rho - bounds.r_lower * p) * tau);
    if (!(denom_z > 0.0) || !(denom_r > 0.0))
        throw NumericalError("theoretical_bounds_A: impatience rate too small for "
                             "the declared bounds");
    const double with_r = std::exp((bounds.r_lower * a - rho) * tau) / denom_r;
    const double with_z = std::exp((za - rho) * tau) / denom_z;
    BoundsBox box;
    if (a > 0.0) {
        box.lower = spec.m * with_r;
        box.upper = with_z;
    } else {
        box.lower = spec.m * with_z;
        box.upper = with_r;
    }
    if (!(box.lower <= box.upper))
        throw NumericalError("theoretical_bounds_A: empty bound box");
    return box;
}

BoundsBox theoretical_bounds_V(const ModelBounds& bounds, const UtilitySpec& spec,
                               double x) {
    if (!(x > 0.0)) throw ConfigError("theoretical_bounds_V: wealth must be positive");
    if (spec.mode == UtilitySpec::Mode::Log) {
        const BoundsBox a = theoretical_bounds_A_log(bounds, spec);
        const double cstar = (1.0 - spec.gamma) / (std::exp(spec.rho * spec.tau) - 1.0);
        return BoundsBox{a.lower + cstar * std::log(x), a.upper + cstar * std::log(x)};
    }
    const BoundsBox a = theoretical_bounds_A(bounds, spec);
    const double f = std::exp(-spec.rho * spec.tau * spec.gamma * spec.alpha) *
                     std::pow(x, spec.alpha * (1.0 - spec.gamma)) / spec.alpha;
    BoundsBox box;
    if (f > 0.0) {
        box.lower = f * a.lower;
        box.upper = f * a.upper;
    } else {
        box.lower = f * a.upper;
        box.upper = f * a.lower;
    }
    return box;
}

BoundsBox theoretical_bounds_A_log(const ModelBounds& bounds, const UtilitySpec& spec) {
    const double rho = spec.rho, tau = spec.tau, g = spec.gamma;
    const double e = std::exp(rho * tau);
    const double front = (e - g) / ((e - 1.0) * (e - 1.0));
    const double disc = std::exp(-rho * tau);
    BoundsBox box;
    box.lower = front * bounds.r_lower * tau + (spec.m - rho * tau * g) * disc / (1.0 - disc);
    box.upper = front * (bounds.r_bar + 0.5 * bounds.M0) * tau +
                (1.0 - rho * tau * g) * disc / (1.0 - disc);
    return box;
}

ValueGrid default_grid(const FactorModel& model, const UtilitySpec& spec,
                       std::size_t nodes, double width_sds) {
    const double s = model.factor_spread(spec.tau);
    return ValueGrid(model.y0 - width_sds * s, model.y0 + width_sds * s, nodes, 0.0);
}

FixedPointResult solve_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                   const UtilitySpec& spec, const FixedPointConfig& cfg) {
    model.validate_shape();
    spec.validate();
    if (spec.mode != UtilitySpec::Mode::Power)
        throw ConfigError("solve_fixed_point: power mode only; log_fixed_point handles "
                          "the logarithmic criterion");

    FixedPointResult res;
    res.contraction = contraction_constant(model.bounds, spec);
    const BoundsBox box = theoretical_bounds_A(model.bounds, spec);
    const double shrink = res.contraction / (1.0 - res.contraction);

    ValueGrid A = default_grid(model, spec, cfg.grid_nodes, cfg.grid_width_sds);
    for (std::size_t j = 0; j < A.size(); ++j) A[j] = box.lower;

    OnePeriodConfig pcfg;
    pcfg.paths = cfg.paths;
    pcfg.steps = cfg.steps;
    pcfg.threads = cfg.threads;
    pcfg.pg_iters = cfg.pg_iters;
    pcfg.dual_sweeps = cfg.dual_sweeps;
    pcfg.with_dual = false;

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        const int sweep = std::min(it, cfg.rotate_sweeps + 1);
        const std::uint64_t sweep_seed = mix_seed(cfg.seed, 0x50C1A1u, sweep, 0);
        const ValueGrid A_next = apply_Psi(model, K, spec, A, pcfg, sweep_seed);
        const double step = A_next.sup_abs_diff(A);
        res.step_history.push_back(step);
        res.final_step = step;
        res.iterations = it;
        A = A_next;
        if (it > cfg.rotate_sweeps && step * shrink <= cfg.tol) {
            res.converged = true;
            break;
        }
    }
    res.A_star = A;
    res.posterior_error = res.final_step * shrink;

    // Certification sweep: per-node primal/dual sandwich at higher path count.
    const ModifiedUtility mu(spec, A);
    OnePeriodConfig ccfg = pcfg;
    ccfg.paths = cfg.certify_paths;
    ccfg.with_dual = true;
    ccfg.seed = mix_seed(cfg.seed, 0xCE47, 0, 0);
    const std::vector<FeedbackPolicy> seeds = candidate_policies(model, K, A, spec.alpha);

    res.policy = constant_policy(A, Eigen::VectorXd::Zero(model.n));
    res.control = zero_control(A, model.n);
    res.lambda_table = A;
    const double psi_scale = std::fabs(spec.alpha) * std::exp(-spec.rho * spec.tau);
    double max_se = 0.0;
    for (std::size_t j = 0; j < A.size(); ++j) {
        const OnePeriodValue ov =
            one_period_value_impl(model, K, mu, A.node(j), ccfg, &seeds);
        NodeCertificate nc;
        nc.y = A.node(j);
        nc.primal_E = ov.primal_E;
        nc.primal_se = ov.primal_se;
        nc.dual_E = ov.dual_E;
        nc.dual_se = ov.dual_se;
        nc.lambda = ov.lambda;
        nc.budget = ov.budget;
        res.certificates.push_back(nc);
        for (int i = 0; i < model.n; ++i) {
            res.policy.pi[i][j] = ov.pi_node(i);
            res.control.nu[i][j] = ov.nu_node(i);
        }
        res.control.eta[j] = ov.eta_node;
        res.lambda_table[j] = ov.lambda;
        max_se = std::max(max_se, psi_scale * ov.primal_se);
    }
    res.control.lambda = res.lambda_table[0];
    res.mc_tolerance = 3.0 * max_se / (1.0 - res.contraction);

    std::ostringstream msg;
    msg << (res.converged ? "converged" : "iteration limit reached") << " after "
        << res.iterations << " sweeps; final step " << format_double(res.final_step)
        << ", posterior error " << format_double(res.posterior_error)
        << ", mc tolerance " << format_double(res.mc_tolerance);
    res.message = msg.str();
    return res;
}

LogFixedPointResult log_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                    const UtilitySpec& spec, const FixedPointConfig& cfg) {
    model.validate_shape();
    spec.validate();
    if (spec.mode != UtilitySpec::Mode::Log)
        throw ConfigError("log_fixed_point: logarithmic mode only");

    const double tau = spec.tau, rho = spec.rho, g = spec.gamma;
    const double disc = std::exp(-rho * tau);
    const double c1 = (1.0 - g * disc) / (std::exp(rho * tau) - 1.0);

    LogFixedPointResult res;
    res.C_star = (1.0 - g) / (std::exp(rho * tau) - 1.0);

    ValueGrid grid = default_grid(model, spec, cfg.grid_nodes, cfg.grid_width_sds);
    const std::size_t nodes = grid.size();
    const int n = model.n;

    // Closed-form growth-optimal controls node by node.
    res.policy = constant_policy(grid, Eigen::VectorXd::Zero(n));
    res.control = zero_control(grid, n);
    Eigen::VectorXd delta_nodes(nodes);
    Eigen::MatrixXd s0i_nu(n, nodes), s0t_pi(n, nodes), pi_nodes(n, nodes);
    const Eigen::MatrixXd sigma0_inv = model.sigma0.partialPivLu().inverse();
    for (std::size_t j = 0; j < nodes; ++j) {
        const double y = grid.node(j);
        Eigen::VectorXd pi;
        const Eigen::VectorXd nu = nu_star_log(K, sharpe_theta(model, y),
                                               model.sigma(y), &pi);
        const SupportValue d = support_delta(K, nu);
        if (!d.finite) throw NumericalError("log_fixed_point: nu left the barrier cone");
        delta_nodes(j) = d.value;
        for (int i = 0; i < n; ++i) {
            res.policy.pi[i][j] = pi(i);
            res.control.nu[i][j] = nu(i);
        }
        s0i_nu.col(j) = sigma0_inv * nu;
        s0t_pi.col(j) = model.sigma0.transpose() * pi;
        pi_nodes.col(j) = pi;
    }
    res.control.lambda = 1.0;

    SimConfig scfg;
    scfg.paths = cfg.certify_paths;
    scfg.steps = cfg.steps;
    scfg.seed = mix_seed(cfg.seed, kTagLog, 0, 0);
    scfg.threads = cfg.threads;

    Eigen::VectorXd G(nodes), hbar(nodes), gap(nodes), gap_se(nodes);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(nodes, nodes);

    for (std::size_t jn = 0; jn < nodes; ++jn) {
        const PathSet ps = simulate_factor(model, grid.node(jn), tau, scfg, kTagLog, 1);
        std::vector<double> gp(ps.paths), gd(ps.paths), hv(ps.paths);
        const std::size_t nchunks = (ps.paths + kChunk - 1) / kChunk;
        std::vector<Eigen::VectorXd> crow(nchunks, Eigen::VectorXd::Zero(nodes));

        parallel_chunks(ps.paths, cfg.threads, [&](std::size_t c, std::size_t begin,
                                                   std::size_t end) {
            Eigen::VectorXd excess(n), th(n);
            for (std::size_t p = begin; p < end; ++p) {
                double ap = 0.0, ad = 0.0;
                for (int s = 0; s < ps.steps; ++s) {
                    const double y = ps.y_at(p, s);
                    const double rr = model.r(y);
                    const double mod = model.sigma_mod(y);
                    const std::size_t j = grid.nearest_index(y);
                    for (int i = 0; i < n; ++i) excess(i) = model.mu[i](y) - rr;
                    ap += (rr + pi_nodes.col(j).dot(excess) -
                           0.5 * mod * mod * s0t_pi.col(j).squaredNorm()) * ps.dt;
                    th = (sigma0_inv * excess + s0i_nu.col(j)) / mod;
                    ad += (rr + delta_nodes(j) + 0.5 * th.squaredNorm()) * ps.dt;
                }
                gp[p] = ap;
                gd[p] = ad;
                const double ye = ps.y_terminal(p);
                hv[p] = spec.h(ye);
                std::size_t k;
                double w;
                grid.eval_weights(ye, k, w);
                crow[c](k) += 1.0 - w;
                crow[c](k + 1) += w;
            }
        });

        const MeanSE mg = mean_se(gp);
        G(jn) = mg.mean;
        hbar(jn) = pairwise_sum(hv.data(), hv.size()) / static_cast<double>(ps.paths);
        std::vector<double> diff(ps.paths);
        for (std::size_t p = 0; p < ps.paths; ++p) diff[p] = gd[p] - gp[p];
        const MeanSE md = mean_se(diff);
        gap(jn) = md.mean;
        gap_se(jn) = md.se;
        Eigen::VectorXd row = Eigen::VectorXd::Zero(nodes);
        for (std::size_t c = 0; c < nchunks; ++c) row += crow[c];
        P.row(jn) = row.transpose() / static_cast<double>(ps.paths);
    }

    // A = c1 G + disc (hbar - rho tau gamma + P A); the linear interpolation
    // operator P is substochastic, so I - disc P is invertible.
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(nodes, nodes) - disc * P;
    const Eigen::VectorXd rhs =
        c1 * G + disc * (hbar.array() - rho * tau * g).matrix();
    const Eigen::VectorXd A = M.partialPivLu().solve(rhs);

    res.A_star = grid;
    res.growth = grid;
    res.gap = grid;
    res.gap_se = grid;
    for (std::size_t j = 0; j < nodes; ++j) {
        res.A_star[j] = A(j);
        res.growth[j] = G(j);
        res.gap[j] = gap(j);
        res.gap_se[j] = gap_se(j);
    }

    std::size_t worst = 0;
    for (std::size_t j = 1; j < nodes; ++j)
        if (std::fabs(gap(j)) > std::fabs(gap(worst))) worst = j;
    res.dual_gap = gap(worst);
    res.dual_gap_se = gap_se(worst);

    std::ostringstream msg;
    msg << "direct solve on " << nodes << " nodes; growth duality gap "
        << format_double(res.dual_gap) << " (se " << format_double(res.dual_gap_se)
        << ")";
    res.message = msg.str();
    return res;
}

void grid_to_csv(const ValueGrid& g, const std::string& path,
                 const std::string& value_header) {
    std::ostringstream out;
    out << "y," << value_header << '\n';
    for (std::size_t j = 0; j < g.size(); ++j)
        out << format_double(g.node(j)) << ',' << format_double(g[j]) << '\n';
    write_text_file(path, out.str());
}

} // namespace peval
