#include "peval/market.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>
#include <sstream>

#include "peval/errors.hpp"
#include "peval/io_util.hpp"
#include "peval/parallel.hpp"
#include "peval/rng.hpp"

namespace peval {

void FactorModel::validate_shape() const {
    if (n < 1) throw ConfigError("model: n must be >= 1");
    if (static_cast<int>(mu.size()) != n) throw ConfigError("model: mu needs n entries");
    if (sigma0.rows() != n || sigma0.cols() != n) throw ConfigError("model: sigma0 must be n x n");
    if (q.size() != n) throw ConfigError("model: q must have n entries");
    if (q.norm() > 1.0 + 1e-12) throw ConfigError("model: need ||q|| <= 1");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma0);
    if (!lu.isInvertible()) throw ConfigError("model: sigma0 must be nonsingular");
}

Eigen::VectorXd FactorModel::mu_vec(double y) const {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = mu[i](y);
    return v;
}

Eigen::VectorXd FactorModel::excess_return(double y) const {
    return mu_vec(y) - Eigen::VectorXd::Constant(n, r(y));
}

double FactorModel::q_orth() const {
    const double s = 1.0 - q.squaredNorm();
    return s > 0.0 ? std::sqrt(s) : 0.0;
}

double FactorModel::factor_spread(double tau) const {
    // Mean-reverting drift b(y) = c0 + c1 y with c1 < 0: stationary spread.
    if (b.family == Coefficient::Family::Affine && b.c1 < 0.0) {
        const double kappa = -b.c1;
        const double bet = std::fabs(beta(y0));
        if (bet > 0.0) return bet / std::sqrt(2.0 * kappa);
    }
    const double horizon = std::fabs(beta(y0)) * std::sqrt(tau);
    return std::max(horizon, 1e-3);
}

double zeta(double r_bar, double M0, double x) {
    if (!(x < 1.0)) throw ConfigError("zeta: argument must be < 1");
    return r_bar * x + x * M0 / (2.0 * (1.0 - x));
}

Eigen::VectorXd sharpe_theta(const FactorModel& model, double y) {
    return model.sigma(y).partialPivLu().solve(model.excess_return(y));
}

void ValidationReport::add(CheckResult c) {
    passed = passed && c.passed;
    checks.push_back(std::move(c));
}

namespace {

// Interval bound on |mu_i(y) - r(y)| from per-coefficient ranges.
std::pair<double, double> minus_interval(std::pair<double, double> a,
                                         std::pair<double, double> b) {
    return {a.first - b.second, a.second - b.first};
}

} // namespace

ValidationReport validate_model(const FactorModel& model, const UtilitySpec& spec) {
    model.validate_shape();
    spec.validate();
    ValidationReport rep;

    const double spread = model.factor_spread(spec.tau);
    const double ylo = model.y0 - 8.0 * spread;
    const double yhi = model.y0 + 8.0 * spread;
    const int samples = 2001;
    auto sample_ys = [&](auto&& fn) {
        for (int k = 0; k < samples; ++k)
            fn(ylo + (yhi - ylo) * static_cast<double>(k) / (samples - 1));
    };

    // r within the declared band.
    {
        CheckResult c;
        c.name = "r_bounds";
        const bool analytic = model.r.has_global_bounds();
        double lo, hi;
        if (analytic) {
            std::tie(lo, hi) = model.r.global_bounds();
        } else {
            std::tie(lo, hi) = model.r.range_bounds(ylo, yhi);
        }
        c.certified = analytic;
        c.passed = lo >= model.bounds.r_lower - 1e-12 && hi <= model.bounds.r_bar + 1e-12;
        c.worst = std::max(model.bounds.r_lower - lo, hi - model.bounds.r_bar);
        c.detail = analytic ? "family bound" : "sampled range only (not falsified)";
        rep.add(c);
    }

    // Squared Sharpe ratio within M0: interval certificate when every
    // ingredient is bounded, dense sampling otherwise.
    {
        CheckResult c;
        c.name = "sharpe_M0";
        bool analytic = model.r.has_global_bounds() && model.sigma_mod.has_global_bounds();
        for (const auto& mi : model.mu) analytic = analytic && mi.has_global_bounds();
        double worst_sq = 0.0;
        if (analytic) {
            const auto rb = model.r.global_bounds();
            Eigen::VectorXd emax(model.n);
            for (int i = 0; i < model.n; ++i) {
                const auto d = minus_interval(model.mu[i].global_bounds(), rb);
                emax(i) = std::max(std::fabs(d.first), std::fabs(d.second));
            }
            const auto mb = model.sigma_mod.global_bounds();
            const double mod_min = std::min(std::fabs(mb.first), std::fabs(mb.second));
            if (mod_min <= 0.0) {
                analytic = false;
            } else {
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(model.sigma0);
                const double smin = svd.singularValues().minCoeff();
                const double bound = emax.norm() / (smin * mod_min);
                worst_sq = bound * bound;
            }
        }
        if (!analytic) {
            sample_ys([&](double y) {
                worst_sq = std::max(worst_sq, sharpe_theta(model, y).squaredNorm());
            });
        }
        c.certified = analytic;
        c.passed = worst_sq <= model.bounds.M0 + 1e-12;
        c.worst = worst_sq;
        c.detail = analytic ? "interval certificate" : "sampled range only (not falsified)";
        rep.add(c);
    }

    // Nondegeneracy: min eigenvalue of sigma sigma' >= kappa0.
    {
        CheckResult c;
        c.name = "nondegeneracy_kappa0";
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.sigma0 * model.sigma0.transpose());
        const double base = es.eigenvalues().minCoeff();
        double mod_lo;
        if (model.sigma_mod.has_global_bounds()) {
            const auto mb = model.sigma_mod.global_bounds();
            mod_lo = std::min(mb.first, mb.second);
            c.certified = true;
        } else {
            mod_lo = std::numeric_limits<double>::infinity();
            sample_ys([&](double y) { mod_lo = std::min(mod_lo, std::fabs(model.sigma_mod(y))); });
            c.certified = false;
        }
        if (c.certified && mod_lo <= 0.0) {
            c.passed = false;
            c.detail = "sigma_mod not bounded away from 0";
        } else {
            c.worst = base * mod_lo * mod_lo;
            c.passed = c.worst >= model.bounds.kappa0 - 1e-15 && model.bounds.kappa0 > 0.0;
            c.detail = c.certified ? "family bound" : "sampled range only (not falsified)";
        }
        rep.add(c);
    }

    // h within [m, 1].
    {
        CheckResult c;
        c.name = "h_range";
        double lo, hi;
        if (spec.h.has_global_bounds()) {
            std::tie(lo, hi) = spec.h.global_bounds();
            c.certified = true;
        } else {
            std::tie(lo, hi) = spec.h.range_bounds(ylo, yhi);
            c.certified = false;
        }
        c.passed = lo >= spec.m - 1e-12 && hi <= 1.0 + 1e-12;
        c.worst = std::max(spec.m - lo, hi - 1.0);
        c.detail = c.certified ? "family bound" : "sampled range only (not falsified)";
        rep.add(c);
    }

    // Standing assumption on the impatience rate.
    {
        CheckResult c;
        c.name = "impatience_rate";
        c.certified = true;
        if (spec.mode == UtilitySpec::Mode::Power) {
            const double x = spec.alpha * (1.0 - spec.gamma);
            const double z = zeta(model.bounds.r_bar, model.bounds.M0, x);
            c.passed = spec.rho > std::max(z, 0.0);
            c.worst = std::max(z, 0.0) - spec.rho;
            c.detail = "need rho > max(zeta(alpha(1-gamma)), 0) = " + format_double(std::max(z, 0.0));
        } else {
            c.passed = spec.rho > 0.0;
            c.worst = -spec.rho;
            c.detail = "need rho > 0";
        }
        rep.add(c);
    }

    return rep;
}

PathSet simulate_factor(const FactorModel& model, double y_start, double tau,
                        const SimConfig& cfg, std::uint64_t tag0, std::uint64_t tag1) {
    model.validate_shape();
    if (cfg.steps < 1) throw ConfigError("simulate_factor: steps must be >= 1");
    if (cfg.paths < 1) throw ConfigError("simulate_factor: paths must be >= 1");

    PathSet ps;
    ps.n = model.n;
    ps.paths = cfg.paths;
    ps.steps = cfg.steps;
    ps.dt = tau / static_cast<double>(cfg.steps);
    ps.y_start = y_start;
    ps.dw1.resize(cfg.paths * static_cast<std::size_t>(cfg.steps) * model.n);
    ps.dw2.resize(cfg.paths * static_cast<std::size_t>(cfg.steps));
    ps.y.resize(cfg.paths * static_cast<std::size_t>(cfg.steps + 1));

    const double sdt = std::sqrt(ps.dt);
    const double qo = model.q_orth();
    const int n = model.n;
    const int steps = cfg.steps;

    parallel_chunks(cfg.paths, cfg.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            std::mt19937_64 rng = path_stream(cfg.seed, p, tag0, tag1);
            std::normal_distribution<double> normal(0.0, 1.0);
            double y = y_start;
            ps.y[p * (steps + 1)] = y;
            for (int s = 0; s < steps; ++s) {
                double* dw1 = &ps.dw1[(p * steps + s) * n];
                double qdw = 0.0;
                for (int i = 0; i < n; ++i) {
                    dw1[i] = sdt * normal(rng);
                    qdw += model.q(i) * dw1[i];
                }
                const double dw2 = sdt * normal(rng);
                ps.dw2[p * steps + s] = dw2;
                y += model.b(y) * ps.dt + model.beta(y) * (qdw + qo * dw2);
                ps.y[p * (steps + 1) + s + 1] = y;
            }
        }
    });
    return ps;
}

void PathSet::to_csv(const std::string& path) const {
    std::ostringstream out;
    out << "path,step,y";
    for (int i = 0; i < n; ++i) out << ",dw1_" << (i + 1);
    out << ",dw2\n";
    for (std::size_t p = 0; p < paths; ++p) {
        for (int s = 0; s <= steps; ++s) {
            out << p << ',' << s << ',' << format_double(y_at(p, s));
            if (s < steps) {
                for (int i = 0; i < n; ++i) out << ',' << format_double(dw1_at(p, s)[i]);
                out << ',' << format_double(dw2_at(p, s));
            } else {
                for (int i = 0; i < n + 1; ++i) out << ",";
            }
            out << '\n';
        }
    }
    write_text_file(path, out.str());
}

Eigen::VectorXd FeedbackPolicy::at_node(std::size_t j) const {
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i) v(i) = pi[i][j];
    return v;
}

Eigen::VectorXd FeedbackPolicy::at(double y) const {
    const std::size_t j = pi.front().nearest_index(y);
    return at_node(j);
}

FeedbackPolicy constant_policy(const ValueGrid& layout, const Eigen::VectorXd& pi) {
    FeedbackPolicy fp;
    for (int i = 0; i < pi.size(); ++i) {
        ValueGrid g = layout;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = pi(i);
        fp.pi.push_back(std::move(g));
    }
    return fp;
}

Eigen::VectorXd DualControl::nu_at_node(std::size_t j) const {
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i) v(i) = nu[i][j];
    return v;
}

Eigen::VectorXd DualControl::nu_at(double y) const {
    const std::size_t j = nu.front().nearest_index(y);
    return nu_at_node(j);
}

DualControl zero_control(const ValueGrid& layout, int n) {
    DualControl c;
    ValueGrid zero = layout;
    for (std::size_t j = 0; j < zero.size(); ++j) zero[j] = 0.0;
    for (int i = 0; i < n; ++i) c.nu.push_back(zero);
    c.eta = zero;
    return c;
}

WealthDensity simulate_wealth_density(const FactorModel& model, const PathSet& ps,
                                      const FeedbackPolicy* policy,
                                      const DualControl* control,
                                      const ConstraintSet* K,
                                      const SimConfig& cfg) {
    const int n = model.n;
    const int steps = ps.steps;
    const double dt = ps.dt;
    if (control && !K)
        throw ConfigError("simulate_wealth_density: constraint set required with a dual control");

    // Per-node caches over the shared control grid.
    const ValueGrid* layout = nullptr;
    if (policy) layout = &policy->pi.front();
    else if (control) layout = &control->nu.front();

    std::size_t nodes = layout ? layout->size() : 1;
    Eigen::MatrixXd pi_nodes(n, nodes), s0t_pi(n, nodes), s0i_nu(n, nodes);
    Eigen::VectorXd delta_nodes(nodes), eta_nodes(nodes);
    const Eigen::MatrixXd sigma0_inv = model.sigma0.partialPivLu().inverse();
    delta_nodes.setZero();
    eta_nodes.setZero();
    s0i_nu.setZero();
    pi_nodes.setZero();
    s0t_pi.setZero();
    if (policy) {
        for (std::size_t j = 0; j < nodes; ++j) {
            const Eigen::VectorXd pj = policy->at_node(j);
            pi_nodes.col(j) = pj;
            s0t_pi.col(j) = model.sigma0.transpose() * pj;
        }
    }
    if (control) {
        for (std::size_t j = 0; j < nodes; ++j) {
            const Eigen::VectorXd nj = control->nu_at_node(j);
            s0i_nu.col(j) = sigma0_inv * nj;
            eta_nodes(j) = control->eta[j];
            const SupportValue d = support_delta(*K, nj);
            if (!d.finite)
                throw NumericalError("simulate_wealth_density: nu outside the barrier cone");
            delta_nodes(j) = d.value;
        }
    }

    WealthDensity out;
    out.x.assign(ps.paths, 1.0);
    out.z.assign(ps.paths, 1.0);
    out.bank.assign(ps.paths, 1.0);
    out.y_end.assign(ps.paths, 0.0);

    std::vector<double> chunk_max((ps.paths + kChunk - 1) / kChunk, 0.0);
    const bool want_z = control != nullptr;

    parallel_chunks(ps.paths, cfg.threads, [&](std::size_t c, std::size_t begin, std::size_t end) {
        Eigen::VectorXd excess(n), s0i_ex(n), theta_nu_v(n);
        double local_max = 0.0;
        for (std::size_t p = begin; p < end; ++p) {
            double logx = 0.0, logz = 0.0, logb = 0.0;
            for (int s = 0; s < steps; ++s) {
                const double y = ps.y_at(p, s);
                const double rr = model.r(y);
                const double mod = model.sigma_mod(y);
                const double* dw1 = ps.dw1_at(p, s);
                const std::size_t j = layout ? layout->nearest_index(y) : 0;

                for (int i = 0; i < n; ++i) excess(i) = model.mu[i](y) - rr;

                if (policy) {
                    const auto pj = pi_nodes.col(j);
                    const auto sp = s0t_pi.col(j);
                    double drift = rr + pj.dot(excess);
                    double diff = 0.0, q2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        diff += sp(i) * dw1[i];
                        q2 += sp(i) * sp(i);
                    }
                    logx += (drift - 0.5 * mod * mod * q2) * dt + mod * diff;
                } else {
                    logx += rr * dt;
                }

                if (want_z) {
                    s0i_ex.noalias() = sigma0_inv * excess;
                    theta_nu_v = (s0i_ex + s0i_nu.col(j)) / mod;
                    const double eta = eta_nodes(j);
                    double tdw = 0.0;
                    for (int i = 0; i < n; ++i) tdw += theta_nu_v(i) * dw1[i];
                    logz += -tdw + eta * ps.dw2_at(p, s) -
                            0.5 * (theta_nu_v.squaredNorm() + eta * eta) * dt;
                    logb += (rr + delta_nodes(j)) * dt;
                } else {
                    logb += rr * dt;
                }
            }
            local_max = std::max({local_max, std::fabs(logx), std::fabs(logz)});
            out.x[p] = std::exp(logx);
            out.z[p] = std::exp(logz);
            out.bank[p] = std::exp(logb);
            out.y_end[p] = ps.y_terminal(p);
        }
        chunk_max[c] = local_max;
    });

    for (double m : chunk_max) out.max_abs_logx = std::max(out.max_abs_logx, m);
    if (out.max_abs_logx > cfg.logx_cap)
        throw NumericalError("simulate_wealth_density: |log X| exceeded the cap (" +
                             format_double(out.max_abs_logx) + " > " +
                             format_double(cfg.logx_cap) + "); policy or control explodes");
    return out;
}

} // namespace peval
