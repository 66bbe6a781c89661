#pragma once

#include <Eigen/Dense>
#include <string>

namespace peval {

// Closed convex constraint set K for portfolio weights, with 0 in K.
//
// Each named kind carries closed forms for the support function
// delta(x) = sup_{pi in K} (-pi' x), its effective domain (the barrier cone),
// and the Euclidean projection onto K. General halfspace intersections
// {pi : A pi <= b} fall back to iterative routines.
struct ConstraintSet {
    enum class Kind {
        Unconstrained,          // K = R^n
        NoShort,                // K = {pi >= 0}
        BorrowCap,              // K = {1'pi <= cap}
        NoShortAndBorrowCap,    // K = {pi >= 0, 1'pi <= cap}
        Box,                    // K = {lo <= pi <= hi}, lo <= 0 <= hi
        HalfspaceIntersection   // K = {A pi <= b}, b >= 0
    };

    Kind kind = Kind::Unconstrained;
    int n = 1;
    double cap = 0.0;
    Eigen::VectorXd lo, hi;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;

    static ConstraintSet unconstrained(int n);
    static ConstraintSet no_short(int n);
    static ConstraintSet borrow_cap(int n, double cap);
    static ConstraintSet no_short_borrow_cap(int n, double cap);
    static ConstraintSet box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
    static ConstraintSet halfspaces(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

    std::string kind_name() const;
};

struct SupportValue {
    double value = 0.0;
    bool finite = true;
};

// delta(x | K); finite flag is false exactly when x is outside the barrier cone.
SupportValue support_delta(const ConstraintSet& K, const Eigen::VectorXd& x);

bool in_barrier_cone(const ConstraintSet& K, const Eigen::VectorXd& x);

// Euclidean projection onto K.
Eigen::VectorXd project_K(const ConstraintSet& K, const Eigen::VectorXd& pi);

// Euclidean projection onto the barrier cone (identity where the cone is R^n).
Eigen::VectorXd project_barrier_cone(const ConstraintSet& K, const Eigen::VectorXd& x);

// A subgradient of delta at x (valid where delta is finite).
Eigen::VectorXd support_delta_subgrad(const ConstraintSet& K, const Eigen::VectorXd& x);

// Minimizer of ||theta + sigma^{-1} nu||^2 + w * delta(nu) over the barrier
// cone, for weight w > 0. Solved through the equivalent concave program
//   max_{pi in K}  w pi'(sigma theta) - (w^2/4) pi' sigma sigma' pi
// by projected gradient; nu* = (w/2) sigma sigma' pi* - sigma theta.
// pi_out, if given, receives the maximizing portfolio.
Eigen::VectorXd nu_star_weighted(const ConstraintSet& K, const Eigen::VectorXd& theta,
                                 const Eigen::MatrixXd& sigma, double w,
                                 Eigen::VectorXd* pi_out = nullptr);

// Dual drift adjustment for the growth-optimal (logarithmic) criterion: w = 2.
Eigen::VectorXd nu_star_log(const ConstraintSet& K, const Eigen::VectorXd& theta,
                            const Eigen::MatrixXd& sigma,
                            Eigen::VectorXd* pi_out = nullptr);

// Dual drift adjustment for the myopic power criterion: w = 2(1-alpha).
Eigen::VectorXd nu_star_power_gamma1(const ConstraintSet& K, const Eigen::VectorXd& theta,
                                     const Eigen::MatrixXd& sigma, double alpha,
                                     Eigen::VectorXd* pi_out = nullptr);

} // namespace peval
