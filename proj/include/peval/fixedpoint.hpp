#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peval/dual.hpp"
#include "peval/market.hpp"
#include "peval/utility.hpp"

namespace peval {

struct OnePeriodConfig {
    std::size_t paths = 1u << 13;
    int steps = 64;
    std::uint64_t seed = 1;
    int threads = 0;
    int pg_iters = 8;             // projected-gradient passes over the policy
    double pg_accept_rel = 1e-5;  // min relative improvement to accept a step
    int dual_sweeps = 2;
    bool with_dual = true;        // compute the dual certificate
};

// Value of one evaluation period started at factor level y with unit wealth.
// E-scale quantities bound sup_X E[h_A(X_tau, Y_tau)] from below (primal, via
// a feedback policy) and above (dual); psi_* = alpha e^{-rho tau} * E-scale,
// the next iterate of the period operator. For alpha < 0 the psi ordering
// flips, the E-scale ordering primal <= dual holds for every alpha.
struct OnePeriodValue {
    double primal_E = 0.0;
    double primal_se = 0.0;
    double dual_E = 0.0;
    double dual_se = 0.0;
    double psi_primal = 0.0;
    double psi_dual = 0.0;
    double lambda = 0.0;
    double budget = 0.0;
    Eigen::VectorXd pi_node;   // policy at the starting node
    Eigen::VectorXd nu_node;
    double eta_node = 0.0;
    FeedbackPolicy policy;     // full feedback tables behind the estimates,
    DualControl control;       // reusable for out-of-sample re-evaluation
};

OnePeriodValue one_period_value(const FactorModel& model, const ConstraintSet& K,
                                const ModifiedUtility& mu, double y,
                                const OnePeriodConfig& cfg);

// One sweep of the period operator on the grid of A: node-wise primal of
// one_period_value, clamped at 0. Pass the same sweep_seed to compare two
// profiles under common random numbers.
ValueGrid apply_Psi(const FactorModel& model, const ConstraintSet& K,
                    const UtilitySpec& spec, const ValueGrid& A,
                    const OnePeriodConfig& cfg, std::uint64_t sweep_seed);

// e^{-(rho - zeta(alpha(1-gamma))) tau}; throws NumericalError when >= 1
// (standing assumption violated).
double contraction_constant(const ModelBounds& bounds, const UtilitySpec& spec);

struct BoundsBox {
    double lower = 0.0;
    double upper = 0.0;
};

// A-priori box for the fixed-point profile A*, both alpha regimes.
BoundsBox theoretical_bounds_A(const ModelBounds& bounds, const UtilitySpec& spec);

// A-priori box for the value function at wealth x.
BoundsBox theoretical_bounds_V(const ModelBounds& bounds, const UtilitySpec& spec, double x);

// A-priori box for the log-mode profile A*.
BoundsBox theoretical_bounds_A_log(const ModelBounds& bounds, const UtilitySpec& spec);

struct FixedPointConfig {
    std::size_t grid_nodes = 41;
    double grid_width_sds = 5.0;
    std::size_t paths = 1u << 13;        // per node during iteration
    std::size_t certify_paths = 1u << 14;  // final certification sweep
    int steps = 64;
    std::uint64_t seed = 1;
    int threads = 0;
    double tol = 1e-4;
    int max_iterations = 200;
    int rotate_sweeps = 8;   // fresh path seeds for this many sweeps, then frozen
    int pg_iters = 8;
    int dual_sweeps = 2;
};

struct NodeCertificate {
    double y = 0.0;
    double primal_E = 0.0, primal_se = 0.0;
    double dual_E = 0.0, dual_se = 0.0;
    double lambda = 0.0, budget = 0.0;
};

struct FixedPointResult {
    ValueGrid A_star;
    bool converged = false;
    int iterations = 0;
    double final_step = 0.0;
    double contraction = 0.0;       // certified constant c
    double posterior_error = 0.0;   // final_step * c / (1-c)
    double mc_tolerance = 0.0;      // 3 * max node SE / (1-c)
    std::vector<double> step_history;
    FeedbackPolicy policy;          // final-sweep policy table
    DualControl control;            // final-sweep dual control (lambda = node 0's)
    ValueGrid lambda_table;         // lambda*(y) per node
    std::vector<NodeCertificate> certificates;
    std::string message;
};

// Banach iteration of the period operator from the constant lower bound:
// seeds rotate for rotate_sweeps, then freeze so the iteration becomes a
// deterministic contraction; stops when step * c/(1-c) <= tol.
FixedPointResult solve_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                   const UtilitySpec& spec, const FixedPointConfig& cfg);

struct LogFixedPointResult {
    ValueGrid A_star;
    double C_star = 0.0;            // (1-gamma) / (e^{rho tau} - 1)
    ValueGrid growth;               // G(y) = sup E[log X_tau | Y_0 = y]
    FeedbackPolicy policy;
    DualControl control;            // nu* map, eta = 0, lambda = 1
    ValueGrid gap;                  // per-node dual-minus-primal growth gap
    ValueGrid gap_se;
    double dual_gap = 0.0;          // gap at the worst node (no-gap check)
    double dual_gap_se = 0.0;
    std::string message;
};

// Logarithmic criterion: V(x,y) = A*(y) + C* log x. The optimal growth G(y) is
// estimated pathwise from the closed-form policy; A* then solves the affine
// grid equation A = c1 G + e^{-rho tau}(E[h + A](Y_tau) - rho tau gamma)
// directly (the interpolation operator is a contraction with factor e^{-rho tau}).
LogFixedPointResult log_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                    const UtilitySpec& spec, const FixedPointConfig& cfg);

// Shared helper: default uniform grid around y0 spanning +/- width sds.
ValueGrid default_grid(const FactorModel& model, const UtilitySpec& spec,
                       std::size_t nodes, double width_sds);

void grid_to_csv(const ValueGrid& g, const std::string& path,
                 const std::string& value_header = "A");

} // namespace peval
