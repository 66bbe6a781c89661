#include "peval/dual.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "peval/errors.hpp"
#include "peval/io_util.hpp"
#include "peval/parallel.hpp"

namespace peval {

Eigen::VectorXd theta_nu(const FactorModel& model, double y, const Eigen::VectorXd& nu) {
    return model.sigma(y).partialPivLu().solve(model.excess_return(y) + nu);
}

DensitySample density_sample(const FactorModel& model, const PathSet& ps,
                             const DualControl& ctrl, const ConstraintSet& K,
                             const SimConfig& cfg) {
    const WealthDensity wd = simulate_wealth_density(model, ps, nullptr, &ctrl, &K, cfg);
    DensitySample ds;
    ds.z.resize(ps.paths);
    ds.y_end = wd.y_end;
    for (std::size_t p = 0; p < ps.paths; ++p) ds.z[p] = wd.z[p] / wd.bank[p];
    return ds;
}

namespace {

double budget_at(const ModifiedUtility& mu, const DensitySample& ds, double lambda,
                 int threads) {
    std::vector<double> bud(ds.z.size());
    parallel_chunks(ds.z.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            bud[i] = mu.inverse_marginal(lambda * ds.z[i], ds.y_end[i]) * ds.z[i];
    });
    return pairwise_sum(bud.data(), bud.size()) / static_cast<double>(bud.size());
}

} // namespace

DualEvaluation dual_objective(const ModifiedUtility& mu, const DensitySample& ds,
                              double lambda, std::vector<double>* phi_out) {
    const std::size_t N = ds.z.size();
    std::vector<double> phi(N), bud(N);
    parallel_chunks(N, 0, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double x_star = 0.0;
            phi[i] = mu.legendre(lambda * ds.z[i], ds.y_end[i], &x_star);
            bud[i] = x_star * ds.z[i];
        }
    });
    const MeanSE mp = mean_se(phi);
    const MeanSE mb = mean_se(bud);
    DualEvaluation ev;
    ev.value = mp.mean + lambda;
    ev.std_err = mp.se;
    ev.budget = mb.mean;
    ev.budget_se = mb.se;
    ev.lambda = lambda;
    ev.paths = N;
    if (phi_out) *phi_out = std::move(phi);
    return ev;
}

double solve_lambda(const ModifiedUtility& mu, const DensitySample& ds, double tol) {
    if (ds.z.empty()) throw ConfigError("solve_lambda: empty sample");
    // budget(lambda) is continuous and strictly decreasing from +inf to 0.
    double lo = 1.0, hi = 1.0;
    double blo = budget_at(mu, ds, lo, 0);
    double bhi = blo;
    int guard = 0;
    while (blo < 1.0) {
        lo *= 0.25;
        blo = budget_at(mu, ds, lo, 0);
        if (++guard > 400) throw NumericalError("solve_lambda: cannot bracket from below");
    }
    guard = 0;
    while (bhi > 1.0) {
        hi *= 4.0;
        bhi = budget_at(mu, ds, hi, 0);
        if (++guard > 400) throw NumericalError("solve_lambda: cannot bracket from above");
    }
    double llo = std::log(lo), lhi = std::log(hi);
    double lambda = std::exp(0.5 * (llo + lhi));
    for (int it = 0; it < 200; ++it) {
        lambda = std::exp(0.5 * (llo + lhi));
        const double b = budget_at(mu, ds, lambda, 0);
        if (std::fabs(b - 1.0) <= tol) return lambda;
        if (b > 1.0) llo = std::log(lambda);
        else lhi = std::log(lambda);
        if (lhi - llo < 1e-15) break;
    }
    return lambda;
}

namespace {

struct GradAccum {
    Eigen::MatrixXd g_nu;       // n x nodes
    Eigen::VectorXd g_eta;      // nodes
};

// Pathwise derivative of E[Phi(lambda Z/B)] with respect to the node values of
// nu and eta. Weight per path: dPhi/du * lambda * z * dlog z = -x* lambda z dlog z.
GradAccum dual_gradient(const FactorModel& model, const ModifiedUtility& mu,
                        const ConstraintSet& K, const PathSet& ps,
                        const DualControl& ctrl, const DensitySample& ds,
                        double lambda, int threads) {
    const int n = model.n;
    const std::size_t nodes = ctrl.eta.size();
    const ValueGrid& layout = ctrl.eta;
    const Eigen::MatrixXd sigma0_inv_t = model.sigma0.partialPivLu().inverse().transpose();
    const Eigen::MatrixXd sigma0_inv = sigma0_inv_t.transpose();

    Eigen::MatrixXd s0i_nu(n, nodes);
    Eigen::MatrixXd dsub(n, nodes);
    for (std::size_t j = 0; j < nodes; ++j) {
        const Eigen::VectorXd nj = ctrl.nu_at_node(j);
        s0i_nu.col(j) = sigma0_inv * nj;
        dsub.col(j) = support_delta_subgrad(K, nj);
    }

    const std::size_t nchunks = (ps.paths + kChunk - 1) / kChunk;
    std::vector<Eigen::MatrixXd> cg_nu(nchunks, Eigen::MatrixXd::Zero(n, nodes));
    std::vector<Eigen::VectorXd> cg_eta(nchunks, Eigen::VectorXd::Zero(nodes));
    const double dt = ps.dt;

    parallel_chunks(ps.paths, threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
        Eigen::MatrixXd& G = cg_nu[c];
        Eigen::VectorXd& E = cg_eta[c];
        Eigen::VectorXd excess(n), s0i_ex(n), th(n), term(n);
        for (std::size_t p = begin; p < end; ++p) {
            const double z = ds.z[p];
            const double xs = mu.inverse_marginal(lambda * z, ds.y_end[p]);
            const double w = -xs * lambda * z;
            for (int s = 0; s < ps.steps; ++s) {
                const double y = ps.y_at(p, s);
                const double rr = model.r(y);
                const double mod = model.sigma_mod(y);
                const std::size_t j = layout.nearest_index(y);
                for (int i = 0; i < n; ++i) excess(i) = model.mu[i](y) - rr;
                s0i_ex.noalias() = sigma0_inv * excess;
                th = (s0i_ex + s0i_nu.col(j)) / mod;
                const double* dw1 = ps.dw1_at(p, s);
                Eigen::Map<const Eigen::VectorXd> dW(dw1, n);
                term.noalias() = sigma0_inv_t * (dW + th * dt);
                G.col(j) += w * (-term / mod - dsub.col(j) * dt);
                E(j) += w * (ps.dw2_at(p, s) - ctrl.eta[j] * dt);
            }
        }
    });

    GradAccum out;
    out.g_nu = Eigen::MatrixXd::Zero(n, nodes);
    out.g_eta = Eigen::VectorXd::Zero(nodes);
    for (std::size_t c = 0; c < nchunks; ++c) {
        out.g_nu += cg_nu[c];
        out.g_eta += cg_eta[c];
    }
    out.g_nu /= static_cast<double>(ps.paths);
    out.g_eta /= static_cast<double>(ps.paths);
    return out;
}

struct Scored {
    DualControl ctrl;
    DensitySample ds;
    DualEvaluation eval;
    std::vector<double> phi;  // per-path transform values at the solved multiplier
};

// Re-simulate, re-solve the multiplier, re-evaluate; +inf on blowup.
bool score(const FactorModel& model, const ModifiedUtility& mu, const ConstraintSet& K,
           const PathSet& ps, const SimConfig& scfg, DualControl ctrl, double lambda_tol,
           Scored& out) {
    try {
        DensitySample ds = density_sample(model, ps, ctrl, K, scfg);
        const double lambda = solve_lambda(mu, ds, lambda_tol);
        std::vector<double> phi;
        DualEvaluation ev = dual_objective(mu, ds, lambda, &phi);
        ctrl.lambda = lambda;
        out = Scored{std::move(ctrl), std::move(ds), ev, std::move(phi)};
        return true;
    } catch (const NumericalError&) {
        return false;
    }
}

// Drop of the candidate below the incumbent on the shared path set. The paired
// per-path difference has tiny variance under common random numbers, so a step
// must clear 3 SE of that difference to count as real rather than in-sample
// noise; spurious acceptances would walk exact seeds off their optimum.
bool significant_drop(const Scored& cur, const Scored& cand, double rel_floor) {
    std::vector<double> diff(cur.phi.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = cur.phi[i] - cand.phi[i];
    const MeanSE d = mean_se(diff);
    const double gain = cur.eval.value - cand.eval.value;
    return gain > std::max(rel_floor, 3.0 * d.se);
}

} // namespace

MinimizeDualResult minimize_dual(const FactorModel& model, const ModifiedUtility& mu,
                                 const ConstraintSet& K, const PathSet& ps,
                                 const SimConfig& scfg, const DualSearchConfig& dcfg) {
    const int n = model.n;
    const ValueGrid layout = mu.A();
    const std::size_t nodes = layout.size();
    const double alpha = mu.spec().alpha;
    const double w_myopic = 2.0 * (1.0 - alpha);
    const double line_lambda_tol = 1e-7;

    // Closed-form myopic seed at every node, against the zero control.
    DualControl seed = zero_control(layout, n);
    for (std::size_t j = 0; j < nodes; ++j) {
        const double y = layout.node(j);
        const Eigen::VectorXd th = sharpe_theta(model, y);
        const Eigen::VectorXd nu = nu_star_weighted(K, th, model.sigma(y), w_myopic);
        for (int i = 0; i < n; ++i) seed.nu[i][j] = nu(i);
    }

    Scored cur;
    if (!score(model, mu, K, ps, scfg, seed, 1e-9, cur)) {
        if (!score(model, mu, K, ps, scfg, zero_control(layout, n), 1e-9, cur))
            throw NumericalError("minimize_dual: no admissible starting control");
    } else {
        Scored zero_sc;
        if (score(model, mu, K, ps, scfg, zero_control(layout, n), 1e-9, zero_sc) &&
            significant_drop(cur, zero_sc, dcfg.accept_rel * (1.0 + std::fabs(cur.eval.value))))
            cur = std::move(zero_sc);
    }

    MinimizeDualResult res;
    res.sweeps_used = 0;
    for (int sweep = 0; sweep < dcfg.sweeps; ++sweep) {
        const double sweep_start = cur.eval.value;

        const GradAccum grad = dual_gradient(model, mu, K, ps, cur.ctrl, cur.ds,
                                             cur.eval.lambda, scfg.threads);
        res.grad_norm_nu = grad.g_nu.cwiseAbs().maxCoeff();
        res.grad_norm_eta = grad.g_eta.cwiseAbs().maxCoeff();

        // Block step on nu with backtracking; candidates projected node by node
        // onto the barrier cone.
        if (res.grad_norm_nu > 0.0) {
            double nu_scale = 0.0;
            for (std::size_t j = 0; j < nodes; ++j)
                nu_scale = std::max(nu_scale, cur.ctrl.nu_at_node(j).cwiseAbs().maxCoeff());
            double t = 0.5 * (1.0 + nu_scale) / res.grad_norm_nu;
            for (int trial = 0; trial < dcfg.line_search_trials; ++trial, t *= 0.5) {
                DualControl cand = cur.ctrl;
                for (std::size_t j = 0; j < nodes; ++j) {
                    Eigen::VectorXd nj = cur.ctrl.nu_at_node(j) - t * grad.g_nu.col(j);
                    nj = project_barrier_cone(K, nj);
                    for (int i = 0; i < n; ++i) cand.nu[i][j] = nj(i);
                }
                Scored sc;
                if (score(model, mu, K, ps, scfg, std::move(cand), line_lambda_tol, sc) &&
                    significant_drop(cur, sc,
                                     dcfg.accept_rel * (1.0 + std::fabs(cur.eval.value)))) {
                    cur = std::move(sc);
                    break;
                }
            }
        }

        // Block step on eta.
        if (res.grad_norm_eta > 0.0) {
            double eta_scale = 0.0;
            for (std::size_t j = 0; j < nodes; ++j)
                eta_scale = std::max(eta_scale, std::fabs(cur.ctrl.eta[j]));
            double t = 0.5 * (1.0 + eta_scale) / res.grad_norm_eta;
            for (int trial = 0; trial < dcfg.line_search_trials; ++trial, t *= 0.5) {
                DualControl cand = cur.ctrl;
                for (std::size_t j = 0; j < nodes; ++j)
                    cand.eta[j] = cur.ctrl.eta[j] - t * grad.g_eta(j);
                Scored sc;
                if (score(model, mu, K, ps, scfg, std::move(cand), line_lambda_tol, sc) &&
                    significant_drop(cur, sc,
                                     dcfg.accept_rel * (1.0 + std::fabs(cur.eval.value)))) {
                    cur = std::move(sc);
                    break;
                }
            }
        }

        // Exact minimization over lambda on the current sample. The budget
        // residual left here biases every transported wealth ratio, so it is
        // driven to the bracket limit rather than a loose tolerance.
        {
            const double lambda = solve_lambda(mu, cur.ds, 1e-13);
            const DualEvaluation ev = dual_objective(mu, cur.ds, lambda);
            if (ev.value <= cur.eval.value) {
                cur.ctrl.lambda = lambda;
                cur.eval = ev;
            }
        }

        res.sweeps_used = sweep + 1;
        if (sweep_start - cur.eval.value <
            dcfg.stop_rel * (1.0 + std::fabs(sweep_start)))
            break;
    }

    res.control = std::move(cur.ctrl);
    res.eval = cur.eval;
    return res;
}

KktReport kkt_check(const ConstraintSet& K, const FeedbackPolicy& policy,
                    const DualControl& control, double tol) {
    KktReport rep;
    rep.passed = true;
    const std::size_t nodes = policy.pi.front().size();
    for (std::size_t j = 0; j < nodes; ++j) {
        const Eigen::VectorXd pi = policy.at_node(j);
        const Eigen::VectorXd nu = control.nu_at_node(j);
        const double kdist = (pi - project_K(K, pi)).norm();
        const SupportValue d = support_delta(K, nu);
        double slack = 0.0;
        if (!d.finite) {
            rep.barrier_cone_ok = false;
            rep.passed = false;
            slack = std::numeric_limits<double>::infinity();
        } else {
            slack = std::fabs(d.value + pi.dot(nu));
        }
        if (std::max(kdist, slack) > std::max(rep.worst_K_dist, rep.worst_slack))
            rep.worst_node = j;
        rep.worst_K_dist = std::max(rep.worst_K_dist, kdist);
        rep.worst_slack = std::max(rep.worst_slack, slack);
    }
    if (rep.worst_K_dist > tol || rep.worst_slack > tol) rep.passed = false;
    return rep;
}

void dual_control_to_csv(const FeedbackPolicy& policy, const DualControl& control,
                         const std::string& path, const ValueGrid* lambda_table) {
    const int n = policy.n();
    const ValueGrid& layout = policy.pi.front();
    std::ostringstream out;
    out << "y";
    for (int i = 0; i < n; ++i) out << ",pi_" << (i + 1);
    for (int i = 0; i < n; ++i) out << ",nu_" << (i + 1);
    out << ",eta,lambda\n";
    for (std::size_t j = 0; j < layout.size(); ++j) {
        out << format_double(layout.node(j));
        for (int i = 0; i < n; ++i) out << ',' << format_double(policy.pi[i][j]);
        for (int i = 0; i < n; ++i) out << ',' << format_double(control.nu[i][j]);
        out << ',' << format_double(control.eta[j]);
        const double lam = lambda_table ? (*lambda_table)[j] : control.lambda;
        out << ',' << format_double(lam) << '\n';
    }
    write_text_file(path, out.str());
}

} // namespace peval
