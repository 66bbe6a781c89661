#include "peval/constraints.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "peval/errors.hpp"

namespace peval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double cone_tol(const Eigen::VectorXd& x) {
    return 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>());
}

// Projection onto a single halfspace {a'x <= b}.
Eigen::VectorXd project_halfspace(const Eigen::VectorXd& x, const Eigen::VectorXd& a, double b) {
    const double viol = a.dot(x) - b;
    if (viol <= 0.0) return x;
    return x - (viol / a.squaredNorm()) * a;
}

// Dykstra's alternating projections: true Euclidean projection onto the
// intersection of halfspaces, unlike plain cyclic projection.
Eigen::VectorXd dykstra_project(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                const Eigen::VectorXd& x0, double tol = 1e-10,
                                int max_cycles = 20000) {
    const int m = static_cast<int>(A.rows());
    Eigen::VectorXd x = x0;
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(m, x0.size());
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        const Eigen::VectorXd x_prev = x;
        for (int i = 0; i < m; ++i) {
            const Eigen::VectorXd y = x + corr.row(i).transpose();
            const Eigen::VectorXd p = project_halfspace(y, A.row(i).transpose(), b(i));
            corr.row(i) = (y - p).transpose();
            x = p;
        }
        if ((x - x_prev).lpNorm<Eigen::Infinity>() <= tol * (1.0 + x.lpNorm<Eigen::Infinity>()))
            break;
    }
    return x;
}

// Projection onto {pi >= 0, 1'pi <= cap}: clamp, then shift by the common
// multiplier solving sum max(pi - t, 0) = cap if the cap is violated.
Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& pi, double cap) {
    Eigen::VectorXd p = pi.cwiseMax(0.0);
    if (p.sum() <= cap) return p;
    std::vector<double> u(pi.data(), pi.data() + pi.size());
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cum = 0.0;
    double t = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        cum += u[k];
        const double cand = (cum - cap) / static_cast<double>(k + 1);
        if (k + 1 == u.size() || u[k + 1] <= cand) { t = cand; break; }
    }
    return (pi.array() - t).cwiseMax(0.0).matrix();
}

} // namespace

ConstraintSet ConstraintSet::unconstrained(int n) {
    if (n < 1) throw ConfigError("constraint: n must be >= 1");
    ConstraintSet K;
    K.kind = Kind::Unconstrained;
    K.n = n;
    return K;
}

ConstraintSet ConstraintSet::no_short(int n) {
    ConstraintSet K = unconstrained(n);
    K.kind = Kind::NoShort;
    return K;
}

ConstraintSet ConstraintSet::borrow_cap(int n, double cap) {
    if (cap <= 0.0) throw ConfigError("constraint: cap must be > 0 so that 0 lies in K");
    ConstraintSet K = unconstrained(n);
    K.kind = Kind::BorrowCap;
    K.cap = cap;
    return K;
}

ConstraintSet ConstraintSet::no_short_borrow_cap(int n, double cap) {
    ConstraintSet K = borrow_cap(n, cap);
    K.kind = Kind::NoShortAndBorrowCap;
    return K;
}

ConstraintSet ConstraintSet::box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    if (lo.size() != hi.size() || lo.size() == 0)
        throw ConfigError("constraint box: lo/hi must be nonempty and equally sized");
    for (int i = 0; i < lo.size(); ++i) {
        if (!(lo(i) <= 0.0 && 0.0 <= hi(i)))
            throw ConfigError("constraint box: need lo <= 0 <= hi in every coordinate");
        if (!(lo(i) < hi(i))) throw ConfigError("constraint box: lo must be < hi");
    }
    ConstraintSet K = unconstrained(static_cast<int>(lo.size()));
    K.kind = Kind::Box;
    K.lo = lo;
    K.hi = hi;
    return K;
}

ConstraintSet ConstraintSet::halfspaces(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    if (A.rows() != b.size() || A.rows() == 0 || A.cols() == 0)
        throw ConfigError("constraint halfspaces: shape mismatch");
    for (int i = 0; i < b.size(); ++i) {
        if (b(i) < 0.0) throw ConfigError("constraint halfspaces: need b >= 0 so that 0 lies in K");
        if (A.row(i).norm() == 0.0) throw ConfigError("constraint halfspaces: zero normal");
    }
    ConstraintSet K = unconstrained(static_cast<int>(A.cols()));
    K.kind = Kind::HalfspaceIntersection;
    K.A = A;
    K.b = b;
    return K;
}

std::string ConstraintSet::kind_name() const {
    switch (kind) {
        case Kind::Unconstrained: return "unconstrained";
        case Kind::NoShort: return "no_short";
        case Kind::BorrowCap: return "borrow_cap";
        case Kind::NoShortAndBorrowCap: return "no_short_borrow_cap";
        case Kind::Box: return "box";
        case Kind::HalfspaceIntersection: return "halfspaces";
    }
    return "unconstrained";
}

SupportValue support_delta(const ConstraintSet& K, const Eigen::VectorXd& x) {
    if (x.size() != K.n) throw ConfigError("support_delta: dimension mismatch");
    const double tol = cone_tol(x);
    switch (K.kind) {
        case ConstraintSet::Kind::Unconstrained:
            if (x.lpNorm<Eigen::Infinity>() <= tol) return {0.0, true};
            return {kInf, false};
        case ConstraintSet::Kind::NoShort:
            if (x.minCoeff() >= -tol) return {0.0, true};
            return {kInf, false};
        case ConstraintSet::Kind::BorrowCap: {
            // K is a halfspace; the barrier cone is the ray {-u 1, u >= 0}.
            const double mean = x.mean();
            if (mean > tol) return {kInf, false};
            if ((x.array() - mean).abs().maxCoeff() > tol) return {kInf, false};
            return {K.cap * std::max(0.0, -mean), true};
        }
        case ConstraintSet::Kind::NoShortAndBorrowCap: {
            const double worst = std::max(0.0, -x.minCoeff());
            return {K.cap * worst, true};
        }
        case ConstraintSet::Kind::Box: {
            double v = 0.0;
            for (int i = 0; i < x.size(); ++i)
                v += std::max(-K.lo(i) * x(i), -K.hi(i) * x(i));
            return {v, true};
        }
        case ConstraintSet::Kind::HalfspaceIntersection: {
            if (x.lpNorm<Eigen::Infinity>() <= tol) return {0.0, true};
            // sup of the linear form -x'pi over K via projections of points far
            // along the ascent direction; for a polyhedron the value either
            // stabilizes (support face reached) or grows without bound.
            const Eigen::VectorXd d = -x / x.norm();
            double prev = -kInf;
            for (double t = 1.0; t <= 1e12; t *= 8.0) {
                const Eigen::VectorXd p = dykstra_project(K.A, K.b, t * d);
                const double s = -x.dot(p);
                if (std::abs(s - prev) <= 1e-10 * (1.0 + std::abs(s))) return {s, true};
                prev = s;
            }
            return {kInf, false};
        }
    }
    return {0.0, true};
}

bool in_barrier_cone(const ConstraintSet& K, const Eigen::VectorXd& x) {
    return support_delta(K, x).finite;
}

Eigen::VectorXd project_K(const ConstraintSet& K, const Eigen::VectorXd& pi) {
    if (pi.size() != K.n) throw ConfigError("project_K: dimension mismatch");
    switch (K.kind) {
        case ConstraintSet::Kind::Unconstrained:
            return pi;
        case ConstraintSet::Kind::NoShort:
            return pi.cwiseMax(0.0);
        case ConstraintSet::Kind::BorrowCap: {
            const double viol = pi.sum() - K.cap;
            if (viol <= 0.0) return pi;
            return pi - (viol / static_cast<double>(K.n)) * Eigen::VectorXd::Ones(K.n);
        }
        case ConstraintSet::Kind::NoShortAndBorrowCap:
            return project_capped_simplex(pi, K.cap);
        case ConstraintSet::Kind::Box:
            return pi.cwiseMax(K.lo).cwiseMin(K.hi);
        case ConstraintSet::Kind::HalfspaceIntersection:
            return dykstra_project(K.A, K.b, pi);
    }
    return pi;
}

Eigen::VectorXd project_barrier_cone(const ConstraintSet& K, const Eigen::VectorXd& x) {
    switch (K.kind) {
        case ConstraintSet::Kind::Unconstrained:
            return Eigen::VectorXd::Zero(K.n);
        case ConstraintSet::Kind::NoShort:
            return x.cwiseMax(0.0);
        case ConstraintSet::Kind::BorrowCap: {
            const double u = std::max(0.0, -x.mean());
            return Eigen::VectorXd::Constant(K.n, -u);
        }
        case ConstraintSet::Kind::NoShortAndBorrowCap:
        case ConstraintSet::Kind::Box:
        case ConstraintSet::Kind::HalfspaceIntersection:
            // Barrier cone is all of R^n for the capped kinds and boxes; for
            // halfspace intersections no closed form exists and callers keep
            // iterates where the support value stays finite.
            return x;
    }
    return x;
}

Eigen::VectorXd support_delta_subgrad(const ConstraintSet& K, const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(K.n);
    switch (K.kind) {
        case ConstraintSet::Kind::Unconstrained:
        case ConstraintSet::Kind::NoShort:
            return g;
        case ConstraintSet::Kind::BorrowCap:
            if (-x.mean() > 0.0) g.setConstant(-K.cap / static_cast<double>(K.n));
            return g;
        case ConstraintSet::Kind::NoShortAndBorrowCap: {
            int jmin = 0;
            const double worst = -x.minCoeff(&jmin);
            if (worst > 0.0) g(jmin) = -K.cap;
            return g;
        }
        case ConstraintSet::Kind::Box:
            for (int i = 0; i < x.size(); ++i) {
                if (x(i) > 0.0) g(i) = -K.lo(i);
                else if (x(i) < 0.0) g(i) = -K.hi(i);
            }
            return g;
        case ConstraintSet::Kind::HalfspaceIntersection: {
            // -argmax is a subgradient of the support function.
            const double tol = cone_tol(x);
            if (x.lpNorm<Eigen::Infinity>() <= tol) return g;
            const Eigen::VectorXd d = -x / x.norm();
            const Eigen::VectorXd p = dykstra_project(K.A, K.b, 1e6 * d);
            return -p;
        }
    }
    return g;
}

Eigen::VectorXd nu_star_weighted(const ConstraintSet& K, const Eigen::VectorXd& theta,
                                 const Eigen::MatrixXd& sigma, double w,
                                 Eigen::VectorXd* pi_out) {
    if (!(w > 0.0)) throw ConfigError("nu_star_weighted: weight must be > 0");
    if (sigma.rows() != K.n || sigma.cols() != K.n || theta.size() != K.n)
        throw ConfigError("nu_star_weighted: dimension mismatch");

    const Eigen::MatrixXd Q = sigma * sigma.transpose();
    const Eigen::VectorXd b = sigma * theta;

    Eigen::VectorXd pi;
    if (K.kind == ConstraintSet::Kind::Unconstrained) {
        pi = (2.0 / w) * Q.ldlt().solve(b);
    } else {
        // Projected gradient ascent of w pi'b - (w^2/4) pi'Q pi; strongly
        // concave since Q is positive definite, so the iteration is linear.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
        const double L = (w * w / 2.0) * es.eigenvalues().maxCoeff();
        const double step = 1.0 / L;
        pi = project_K(K, (2.0 / w) * Q.ldlt().solve(b));
        for (int it = 0; it < 500000; ++it) {
            const Eigen::VectorXd grad = w * b - (w * w / 2.0) * (Q * pi);
            const Eigen::VectorXd next = project_K(K, pi + step * grad);
            const double delta = (next - pi).lpNorm<Eigen::Infinity>();
            pi = next;
            if (delta <= 1e-14 * (1.0 + pi.lpNorm<Eigen::Infinity>())) break;
        }
    }

    if (pi_out) *pi_out = pi;
    const Eigen::VectorXd nu = (w / 2.0) * (Q * pi) - b;
    return project_barrier_cone(K, nu);
}

Eigen::VectorXd nu_star_log(const ConstraintSet& K, const Eigen::VectorXd& theta,
                            const Eigen::MatrixXd& sigma, Eigen::VectorXd* pi_out) {
    return nu_star_weighted(K, theta, sigma, 2.0, pi_out);
}

Eigen::VectorXd nu_star_power_gamma1(const ConstraintSet& K, const Eigen::VectorXd& theta,
                                     const Eigen::MatrixXd& sigma, double alpha,
                                     Eigen::VectorXd* pi_out) {
    if (!(alpha < 1.0) || alpha == 0.0)
        throw ConfigError("nu_star_power_gamma1: alpha must lie in (-inf,0) or (0,1)");
    return nu_star_weighted(K, theta, sigma, 2.0 * (1.0 - alpha), pi_out);
}

} // namespace peval
