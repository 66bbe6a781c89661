#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "peval/coefficients.hpp"
#include "peval/constraints.hpp"
#include "peval/grid.hpp"
#include "peval/utility.hpp"

namespace peval {

// Risky assets dS^i/S^i = mu_i(Y) dt + sum_j sigma_ij(Y) dW1_j plus a bank
// account at rate r(Y); the scalar factor follows
//   dY = b(Y) dt + beta(Y) (q' dW1 + sqrt(1 - ||q||^2) dW2).
// sigma(y) = sigma0 * sigma_mod(y) with sigma0 nonsingular and sigma_mod > 0.
//
// bounds carries the declared certificates used throughout:
//   r_lower <= r(y) <= r_bar,  ||theta(y)||^2 <= M0,  a' sigma sigma' a >= kappa0 ||a||^2.
struct ModelBounds {
    double r_bar = 0.0;
    double r_lower = 0.0;
    double M0 = 0.0;
    double kappa0 = 0.0;
};

struct FactorModel {
    int n = 1;
    Coefficient r = Coefficient::constant(0.0);
    std::vector<Coefficient> mu;
    Eigen::MatrixXd sigma0;
    Coefficient sigma_mod = Coefficient::constant(1.0);
    Coefficient b = Coefficient::constant(0.0);
    Coefficient beta = Coefficient::constant(0.0);
    Eigen::VectorXd q;
    double y0 = 0.0;
    ModelBounds bounds;

    void validate_shape() const;

    double sigma_mod_at(double y) const { return sigma_mod(y); }
    Eigen::MatrixXd sigma(double y) const { return sigma0 * sigma_mod(y); }
    Eigen::VectorXd mu_vec(double y) const;
    Eigen::VectorXd excess_return(double y) const;  // mu(y) - r(y) 1
    double q_orth() const;                          // sqrt(1 - ||q||^2)

    // Stationary (or horizon) spread of Y used for default grid sizing.
    double factor_spread(double tau) const;
};

// zeta(x) = r_bar x + x M0 / (2(1-x)) for x < 1; the exponential growth
// certificate for x-th wealth moments.
double zeta(double r_bar, double M0, double x);

Eigen::VectorXd sharpe_theta(const FactorModel& model, double y);

struct CheckResult {
    std::string name;
    bool passed = false;
    bool certified = false;  // analytic bound vs. sampled-only evidence
    double worst = 0.0;
    std::string detail;
};

struct ValidationReport {
    bool passed = true;
    std::vector<CheckResult> checks;
    void add(CheckResult c);
};

// Checks the standing assumptions: declared coefficient bounds (analytic where
// the family admits them, dense sampling otherwise), nondegeneracy of sigma,
// ||q|| <= 1, h in [m,1], and rho > max(zeta(alpha(1-gamma)), 0) (power) or
// rho > 0 (log). Sampled-only evidence is flagged certified=false.
ValidationReport validate_model(const FactorModel& model, const UtilitySpec& spec);

struct SimConfig {
    std::size_t paths = 1u << 16;
    int steps = 64;              // Euler steps per period
    std::uint64_t seed = 1;
    int threads = 0;             // 0 = hardware concurrency
    double logx_cap = 60.0;      // |log X| guard for exploding policies
};

// Frozen Brownian increments and factor paths over one period, all drawn from
// per-path streams keyed by (seed, path index, tags). Common-random-number
// comparisons reuse one PathSet across controls.
struct PathSet {
    int n = 1;
    std::size_t paths = 0;
    int steps = 0;
    double dt = 0.0;
    double y_start = 0.0;
    std::vector<double> dw1;    // [path * steps * n + step * n + i]
    std::vector<double> dw2;    // [path * steps + step]
    std::vector<double> y;      // [path * (steps+1) + step]

    double y_at(std::size_t p, int s) const { return y[p * (steps + 1) + s]; }
    const double* dw1_at(std::size_t p, int s) const { return &dw1[(p * steps + s) * n]; }
    double dw2_at(std::size_t p, int s) const { return dw2[p * steps + s]; }
    double y_terminal(std::size_t p) const { return y_at(p, steps); }

    void to_csv(const std::string& path) const;  // debugging aid
};

PathSet simulate_factor(const FactorModel& model, double y_start, double tau,
                        const SimConfig& cfg,
                        std::uint64_t tag0 = 0, std::uint64_t tag1 = 0);

// Feedback maps are piecewise constant on a shared uniform grid (nearest node).
struct FeedbackPolicy {
    std::vector<ValueGrid> pi;  // one grid per asset
    int n() const { return static_cast<int>(pi.size()); }
    Eigen::VectorXd at_node(std::size_t j) const;
    Eigen::VectorXd at(double y) const;
};

FeedbackPolicy constant_policy(const ValueGrid& layout, const Eigen::VectorXd& pi);

// Dual feedback control: drift adjustment nu(y) in the barrier cone, market
// completion loading eta(y), and the multiplier lambda.
struct DualControl {
    std::vector<ValueGrid> nu;
    ValueGrid eta;
    double lambda = 1.0;
    int n() const { return static_cast<int>(nu.size()); }
    Eigen::VectorXd nu_at_node(std::size_t j) const;
    Eigen::VectorXd nu_at(double y) const;
};

DualControl zero_control(const ValueGrid& layout, int n);

// Terminal samples of wealth X under feedback policy pi (real market), the
// density Z under (nu, eta), and the adjusted bank account B under nu, all on
// one PathSet via log-Euler. Either map may be empty (treated as zero).
struct WealthDensity {
    std::vector<double> x;       // X_tau, absent policy -> exp(int r)
    std::vector<double> z;       // Z_tau
    std::vector<double> bank;    // B_tau = exp(int (r + delta(nu)))
    std::vector<double> y_end;
    double max_abs_logx = 0.0;
};

WealthDensity simulate_wealth_density(const FactorModel& model, const PathSet& ps,
                                      const FeedbackPolicy* policy,
                                      const DualControl* control,
                                      const ConstraintSet* K,
                                      const SimConfig& cfg);

} // namespace peval
