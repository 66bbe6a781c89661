#pragma once

#include <Eigen/Dense>
#include <vector>

#include "peval/constraints.hpp"
#include "peval/market.hpp"
#include "peval/utility.hpp"

namespace peval {

// Sharpe ratio of the auxiliary market with drift adjustment nu:
// theta_nu = sigma(y)^{-1} (mu(y) - r(y) 1 + nu).
Eigen::VectorXd theta_nu(const FactorModel& model, double y, const Eigen::VectorXd& nu);

// Per-path state-price-over-bank ratios z_i = Z_tau / B_tau under a control,
// with the terminal factor values; the shared input of every dual evaluation.
struct DensitySample {
    std::vector<double> z;
    std::vector<double> y_end;
};

DensitySample density_sample(const FactorModel& model, const PathSet& ps,
                             const DualControl& ctrl, const ConstraintSet& K,
                             const SimConfig& cfg);

struct DualEvaluation {
    double value = 0.0;      // E[Phi(lambda z, Y_tau)] + lambda
    double std_err = 0.0;
    double budget = 0.0;     // E[I(lambda z, Y_tau) z]
    double budget_se = 0.0;
    double lambda = 1.0;
    std::size_t paths = 0;
};

// Dual bound for the one-period problem at the given control; an upper bound
// on sup_X E[h_A(X_tau, Y_tau)] for any admissible (nu, eta, lambda).
// phi_out, if given, receives the per-path transform values Phi(lambda z_i),
// the raw material for paired comparisons between controls.
DualEvaluation dual_objective(const ModifiedUtility& mu, const DensitySample& ds,
                              double lambda, std::vector<double>* phi_out = nullptr);

// Multiplier making the budget E[I(lambda z) z] = 1 to within tol (default
// 1e-9), by bisection in log lambda over the frozen sample.
double solve_lambda(const ModifiedUtility& mu, const DensitySample& ds,
                    double tol = 1e-9);

struct DualSearchConfig {
    int sweeps = 2;            // coordinate sweeps nu -> eta -> lambda
    int line_search_trials = 6;
    double accept_rel = 1e-6;  // minimum relative improvement to accept a step
    double stop_rel = 1e-7;    // stop when a full sweep improves less than this
};

struct MinimizeDualResult {
    DualControl control;
    DualEvaluation eval;
    int sweeps_used = 0;
    double grad_norm_nu = 0.0;
    double grad_norm_eta = 0.0;
};

// Coordinate descent over feedback controls on the grid of mu.A():
//   nu-step: pointwise closed-form seed (w = 2(1-alpha)) plus pathwise-gradient
//            refinement projected onto the barrier cone,
//   eta-step: pathwise-gradient direction with backtracking line search,
//   lambda-step: solve_lambda on the frozen sample.
// A step is accepted only when the paired per-path improvement clears 3 SE of
// the difference, so exact seeds survive Monte Carlo noise untouched.
MinimizeDualResult minimize_dual(const FactorModel& model, const ModifiedUtility& mu,
                                 const ConstraintSet& K, const PathSet& ps,
                                 const SimConfig& scfg, const DualSearchConfig& dcfg);

struct KktReport {
    bool passed = false;
    double worst_K_dist = 0.0;        // max over nodes of ||pi - P_K(pi)||
    double worst_slack = 0.0;         // max over nodes of |delta(nu) + pi'nu|
    bool barrier_cone_ok = true;      // every nu node inside the barrier cone
    std::size_t worst_node = 0;
};

// Complementary slackness between a candidate policy and dual control,
// node by node: pi in K and delta(nu) + pi'nu = 0 within tol.
KktReport kkt_check(const ConstraintSet& K, const FeedbackPolicy& policy,
                    const DualControl& control, double tol = 1e-8);

// policy.csv layout: y, pi_1..pi_n, nu_1..nu_n, eta, lambda. The lambda column
// is per node when a table is supplied, otherwise the control's scalar.
void dual_control_to_csv(const FeedbackPolicy& policy, const DualControl& control,
                         const std::string& path,
                         const ValueGrid* lambda_table = nullptr);

} // namespace peval
