#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peval/fixedpoint.hpp"

namespace peval {

// Stationary periodic policy: the same one-period rule restarts at every
// evaluation date, with state (X_{T_i}, Y_{T_i}).
//
// PowerGeneral transports wealth by the dual representation ratio
//   X_{T_i} = X_{T_{i-1}} * I(lambda(Y_{T_{i-1}}) Z_period / B_period, Y_{T_i});
// PowerGamma1 and Log hold explicit feedback weights pi(y).
struct PeriodicPolicy {
    enum class Kind { PowerGeneral, PowerGamma1, Log };

    Kind kind = Kind::PowerGeneral;
    FeedbackPolicy pi;
    DualControl control;      // nu/eta maps for the density
    ValueGrid lambda_table;   // PowerGeneral: lambda*(y) at period start
    ValueGrid A_star;
    double C_star = 0.0;      // log mode only
};

// Myopic constrained power policy (gamma = 1): pi(y) = (sigma sigma')^{-1}
// (mu - r 1 + nu*) / (1-alpha). For the no-short-with-cap constraint the
// binding-set formula is tried first (every candidate set, consistency
// checked); it falls back to the numeric nu* program otherwise.
PeriodicPolicy policy_gamma1(const FactorModel& model, const ConstraintSet& K,
                             const UtilitySpec& spec, const FixedPointResult& fp);

PeriodicPolicy policy_log(const FactorModel& model, const ConstraintSet& K,
                          const UtilitySpec& spec, const LogFixedPointResult& fp);

// Assembles the general-power policy from a solved fixed point.
PeriodicPolicy policy_from_fixed_point(const FactorModel& model, const ConstraintSet& K,
                                       const UtilitySpec& spec, const FixedPointResult& fp);

// Binding-set construction for K = {pi >= 0, 1'pi <= cap}: enumerates active
// sets, applies the common-multiplier formula, and keeps the candidate passing
// complementary slackness. Returns false when no set is self-consistent.
bool binding_set_policy(const Eigen::VectorXd& excess, const Eigen::MatrixXd& Q,
                        double cap, double alpha,
                        Eigen::VectorXd& pi_out, Eigen::VectorXd& nu_out);

struct RatioSample {
    std::vector<double> ratio;   // X_{T_i} / X_{T_{i-1}} samples
    std::vector<double> y_end;
    double budget = 0.0;         // E[ratio * z]; 1 at the optimum
    double budget_se = 0.0;
};

RatioSample optimal_ratio_sampler(const FactorModel& model, const ConstraintSet& K,
                                  const UtilitySpec& spec, const PeriodicPolicy& policy,
                                  double y_start, const SimConfig& cfg,
                                  std::uint64_t period_tag = 0);

struct PeriodStats {
    double mean_dD = 0.0;    // mean increment of the certification process D
    double se_dD = 0.0;
    double mean_term = 0.0;  // mean objective term of the period
    double se_term = 0.0;
    double mean_x = 0.0;
};

struct RolloutResult {
    int periods = 0;
    std::size_t paths = 0;
    double x0 = 1.0, y0 = 0.0;
    Eigen::MatrixXd wealth;  // paths x (periods+1), wealth at each date
    Eigen::MatrixXd D;       // paths x periods, certification process per path
    std::vector<PeriodStats> period_stats;
    double objective = 0.0;      // sum of discounted period terms
    double objective_se = 0.0;
    double tail_bound = 0.0;     // geometric extrapolation beyond the horizon
    double d0 = 0.0;             // D at time 0 = candidate value function
    double log_objective = 0.0;  // log mode: estimate of A*(y0) + C* log x0
    double log_objective_se = 0.0;
};

// Simulates the periodic policy for `periods` evaluation dates; per-path
// streams are keyed by (seed, path, period) so horizons extend reproducibly.
RolloutResult rollout(const FactorModel& model, const ConstraintSet& K,
                      const UtilitySpec& spec, const PeriodicPolicy& policy,
                      double x0, double y0, int periods, const SimConfig& cfg);

struct MartingaleReport {
    bool all_within = true;            // |mean dD| <= 3 se for every period
    bool some_negative_drift = false;  // mean dD < -3 se for some period
    std::vector<double> z_scores;
};

// The certification process D_n must be a martingale along the optimal policy
// (each period increment mean-zero within Monte Carlo resolution) and a strict
// supermartingale along suboptimal ones. drift_allowance, when given, holds one
// absolute deduction per period for drift already explained by the certified
// error of the tables the policy was built from (a profile off by eps drifts
// by eps times its transported scale, which is not evidence against the policy).
MartingaleReport verify_martingale_D(const RolloutResult& r,
                                     const std::vector<double>& drift_allowance = {});

struct ValueBoundsCheck {
    bool inside = true;
    double estimate = 0.0;
    double tolerance = 0.0;  // 3 se + tail bound
    BoundsBox box;
};

ValueBoundsCheck value_bounds_check(const ModelBounds& bounds, const UtilitySpec& spec,
                                    const RolloutResult& r);

void rollout_to_csv(const RolloutResult& r, const std::string& path);

} // namespace peval
