#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "peval/constraints.hpp"
#include "peval/errors.hpp"

using namespace peval;

namespace {

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

std::vector<ConstraintSet> sample_sets() {
    std::vector<ConstraintSet> out;
    out.push_back(ConstraintSet::unconstrained(2));
    out.push_back(ConstraintSet::no_short(2));
    out.push_back(ConstraintSet::borrow_cap(2, 1.0));
    out.push_back(ConstraintSet::no_short_borrow_cap(2, 1.5));
    out.push_back(ConstraintSet::box(vec2(-0.5, 0.0), vec2(1.0, 2.0)));
    Eigen::MatrixXd A(3, 2);
    A << 1, 1, -1, 0, 0, -1;
    Eigen::VectorXd b(3);
    b << 1, 0, 0;
    out.push_back(ConstraintSet::halfspaces(A, b));
    return out;
}

// Capped simplex {pi >= 0, 1'pi <= 1} written as generic halfspaces.
ConstraintSet capped_simplex_as_halfspaces() {
    Eigen::MatrixXd A(3, 2);
    A << 1, 1, -1, 0, 0, -1;
    Eigen::VectorXd b(3);
    b << 1, 0, 0;
    return ConstraintSet::halfspaces(A, b);
}

}  // namespace

TEST_CASE("support function values on the named sets") {
    const auto simplex = ConstraintSet::no_short_borrow_cap(2, 1.5);
    auto s = support_delta(simplex, vec2(-1.0, 2.0));
    CHECK(s.finite);
    CHECK(s.value == doctest::Approx(1.5).epsilon(1e-12));

    const auto ns = ConstraintSet::no_short(2);
    s = support_delta(ns, vec2(1.0, 0.5));
    CHECK(s.finite);
    CHECK(s.value == 0.0);
    s = support_delta(ns, vec2(-0.1, 1.0));
    CHECK_FALSE(s.finite);

    const auto un = ConstraintSet::unconstrained(2);
    CHECK(support_delta(un, vec2(0.0, 0.0)).value == 0.0);
    CHECK_FALSE(support_delta(un, vec2(1e-3, 0.0)).finite);

    const auto cap = ConstraintSet::borrow_cap(2, 1.0);
    s = support_delta(cap, vec2(-2.0, -2.0));
    CHECK(s.finite);
    CHECK(s.value == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_FALSE(support_delta(cap, vec2(1.0, 1.0)).finite);
    CHECK_FALSE(support_delta(cap, vec2(-1.0, 1.0)).finite);

    // Box: the sup of a linear form over a box sits at a corner.
    const auto box = ConstraintSet::box(vec2(-0.5, 0.0), vec2(1.0, 2.0));
    const Eigen::VectorXd x = vec2(0.3, -0.7);
    s = support_delta(box, x);
    double corner_best = -1e300;
    for (double p0 : {-0.5, 1.0})
        for (double p1 : {0.0, 2.0}) corner_best = std::max(corner_best, -(p0 * x(0) + p1 * x(1)));
    CHECK(s.finite);
    CHECK(s.value == doctest::Approx(corner_best).epsilon(1e-12));
    CHECK(s.value == doctest::Approx(1.55).epsilon(1e-12));
}

TEST_CASE("support function vanishes at zero and is nonnegative for every kind") {
    std::mt19937 rng(42);
    std::normal_distribution<double> nd;
    for (const auto& K : sample_sets()) {
        const auto at_zero = support_delta(K, Eigen::VectorXd::Zero(2));
        CHECK(at_zero.finite);
        CHECK(at_zero.value == doctest::Approx(0.0).epsilon(1e-12));
        for (int t = 0; t < 30; ++t) {
            const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
            const auto v = support_delta(K, x);
            if (v.finite) CHECK(v.value >= -1e-12);
        }
    }
}

TEST_CASE("halfspace fallback reproduces the capped simplex closed form") {
    const auto generic = capped_simplex_as_halfspaces();
    const auto closed = ConstraintSet::no_short_borrow_cap(2, 1.0);
    const std::vector<Eigen::VectorXd> pts = {vec2(-1.0, 2.0), vec2(0.5, 0.5), vec2(-0.3, -0.8),
                                              vec2(2.0, -0.1), vec2(0.0, 0.0)};
    for (const auto& x : pts) {
        const auto a = support_delta(generic, x);
        const auto b = support_delta(closed, x);
        REQUIRE(a.finite == b.finite);
        CHECK(a.value == doctest::Approx(b.value).epsilon(1e-8));
    }

    // Unbounded direction must be flagged, not silently truncated.
    Eigen::MatrixXd A = -Eigen::MatrixXd::Identity(2, 2);
    const auto nonneg = ConstraintSet::halfspaces(A, Eigen::VectorXd::Zero(2));
    CHECK_FALSE(support_delta(nonneg, vec2(-0.1, 1.0)).finite);
    CHECK(support_delta(nonneg, vec2(0.4, 0.2)).value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("projections clamp, shift, and are idempotent") {
    const auto box = ConstraintSet::box(vec2(0.0, 0.0), vec2(1.0, 2.0));
    CHECK((project_K(box, vec2(1.4, -0.2)) - vec2(1.0, 0.0)).norm() == doctest::Approx(0.0));

    const auto simplex = ConstraintSet::no_short_borrow_cap(2, 1.0);
    CHECK((project_K(simplex, vec2(0.8, 0.8)) - vec2(0.5, 0.5)).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));

    const auto cap = ConstraintSet::borrow_cap(2, 1.0);
    const Eigen::VectorXd pc = project_K(cap, vec2(1.0, 1.0));
    CHECK(pc.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((pc - vec2(0.5, 0.5)).norm() == doctest::Approx(0.0).epsilon(1e-12));

    CHECK((project_K(ConstraintSet::no_short(2), vec2(-0.3, 0.7)) - vec2(0.0, 0.7)).norm() ==
          doctest::Approx(0.0));

    std::mt19937 rng(7);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (const auto& K : sample_sets()) {
        for (int t = 0; t < 40; ++t) {
            const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
            const Eigen::VectorXd p = project_K(K, x);
            CHECK((project_K(K, p) - p).norm() <= 1e-8 * (1.0 + p.norm()));
            // No feasible point can be closer than the projection.
            const Eigen::VectorXd z = project_K(K, vec2(nd(rng), nd(rng)));
            CHECK((x - p).norm() <= (x - z).norm() + 1e-8);
        }
    }
}

TEST_CASE("iterative projection agrees with the closed form on the same set") {
    const auto generic = capped_simplex_as_halfspaces();
    const auto closed = ConstraintSet::no_short_borrow_cap(2, 1.0);
    std::mt19937 rng(11);
    std::normal_distribution<double> nd(0.0, 1.5);
    for (int t = 0; t < 60; ++t) {
        const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
        CHECK((project_K(generic, x) - project_K(closed, x)).norm() <= 1e-7);
    }
}

TEST_CASE("barrier cone membership") {
    const auto simplex = ConstraintSet::no_short_borrow_cap(2, 1.5);
    std::mt19937 rng(3);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int t = 0; t < 30; ++t) CHECK(in_barrier_cone(simplex, vec2(nd(rng), nd(rng))));

    const auto ns = ConstraintSet::no_short(2);
    CHECK(in_barrier_cone(ns, vec2(0.2, 0.0)));
    CHECK_FALSE(in_barrier_cone(ns, vec2(-0.2, 5.0)));

    const auto cap = ConstraintSet::borrow_cap(2, 1.0);
    CHECK(in_barrier_cone(cap, vec2(-1.0, -1.0)));
    CHECK_FALSE(in_barrier_cone(cap, vec2(1.0, 1.0)));
    CHECK_FALSE(in_barrier_cone(cap, vec2(-1.0, -0.5)));

    for (const auto& K : sample_sets()) CHECK(in_barrier_cone(K, Eigen::VectorXd::Zero(2)));
}

TEST_CASE("barrier cone projection lands in the cone and fixes its members") {
    const auto ns = ConstraintSet::no_short(2);
    CHECK((project_barrier_cone(ns, vec2(-0.4, 0.9)) - vec2(0.0, 0.9)).norm() ==
          doctest::Approx(0.0));

    const auto cap = ConstraintSet::borrow_cap(2, 1.0);
    CHECK((project_barrier_cone(cap, vec2(-2.0, 0.0)) - vec2(-1.0, -1.0)).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));

    const auto un = ConstraintSet::unconstrained(2);
    CHECK(project_barrier_cone(un, vec2(3.0, -4.0)).norm() == 0.0);

    std::mt19937 rng(19);
    std::normal_distribution<double> nd;
    for (const auto& K : sample_sets()) {
        if (K.kind == ConstraintSet::Kind::HalfspaceIntersection) continue;
        for (int t = 0; t < 25; ++t) {
            const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
            const Eigen::VectorXd p = project_barrier_cone(K, x);
            CHECK(in_barrier_cone(K, p));
            CHECK((project_barrier_cone(K, p) - p).norm() <= 1e-12);
        }
    }
}

TEST_CASE("support function is positively homogeneous and subadditive") {
    std::mt19937 rng(23);
    std::normal_distribution<double> nd;
    const auto simplex = ConstraintSet::no_short_borrow_cap(2, 0.8);
    const auto box = ConstraintSet::box(vec2(-0.5, 0.0), vec2(1.0, 2.0));
    for (const auto& K : {simplex, box}) {
        for (int t = 0; t < 40; ++t) {
            const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
            const Eigen::VectorXd y = vec2(nd(rng), nd(rng));
            const double dx = support_delta(K, x).value;
            const double dy = support_delta(K, y).value;
            for (double s : {0.0, 0.7, 2.3})
                CHECK(support_delta(K, (s * x).eval()).value ==
                      doctest::Approx(s * dx).epsilon(1e-10));
            CHECK(support_delta(K, (x + y).eval()).value <= dx + dy + 1e-10);
            // -pi'x <= delta(x) for every pi in K.
            const Eigen::VectorXd pi = project_K(K, vec2(nd(rng), nd(rng)));
            CHECK(-pi.dot(x) <= dx + 1e-10);
        }
    }
    // On the ray where the borrow cap's support function is finite it is additive.
    const auto cap = ConstraintSet::borrow_cap(2, 1.0);
    const Eigen::VectorXd u = vec2(-1.0, -1.0);
    CHECK(support_delta(cap, (0.3 * u + 0.9 * u).eval()).value ==
          doctest::Approx(support_delta(cap, (0.3 * u).eval()).value +
                          support_delta(cap, (0.9 * u).eval()).value)
              .epsilon(1e-12));
}

TEST_CASE("support subgradient satisfies the Euler identity and convexity bound") {
    std::mt19937 rng(29);
    std::normal_distribution<double> nd;
    const auto simplex = ConstraintSet::no_short_borrow_cap(2, 1.3);
    const auto box = ConstraintSet::box(vec2(-0.5, 0.0), vec2(1.0, 2.0));
    for (const auto& K : {simplex, box}) {
        for (int t = 0; t < 40; ++t) {
            const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
            const Eigen::VectorXd g = support_delta_subgrad(K, x);
            const double dx = support_delta(K, x).value;
            CHECK(g.dot(x) == doctest::Approx(dx).epsilon(1e-10));
            const Eigen::VectorXd y = vec2(nd(rng), nd(rng));
            CHECK(support_delta(K, y).value >= dx + g.dot(y - x) - 1e-10);
        }
    }
    const auto generic = capped_simplex_as_halfspaces();
    for (int t = 0; t < 10; ++t) {
        const Eigen::VectorXd x = vec2(nd(rng), nd(rng));
        const Eigen::VectorXd g = support_delta_subgrad(generic, x);
        CHECK(g.dot(x) == doctest::Approx(support_delta(generic, x).value).epsilon(1e-6));
    }
}

TEST_CASE("drift adjustment is zero without constraints and clips against no-short") {
    Eigen::MatrixXd sigma(1, 1);
    sigma << 1.0;
    Eigen::VectorXd theta(1);

    const auto un = ConstraintSet::unconstrained(1);
    theta << 0.37;
    Eigen::VectorXd pi;
    CHECK(nu_star_log(un, theta, sigma, &pi).norm() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pi(0) == doctest::Approx(0.37).epsilon(1e-10));

    const auto ns = ConstraintSet::no_short(1);
    theta << -0.2;
    Eigen::VectorXd nu = nu_star_log(ns, theta, sigma, &pi);
    CHECK(nu(0) == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(pi(0) == doctest::Approx(0.0).epsilon(1e-9));
    theta << 0.3;
    nu = nu_star_log(ns, theta, sigma, &pi);
    CHECK(nu(0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pi(0) == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("power drift adjustment matches the one dimensional closed form") {
    // With sigma = 1 the maximizer is pi = clamp(theta/(1-alpha)); the
    // adjustment is nu = (1-alpha) pi - theta, negative when the cap binds.
    Eigen::MatrixXd sigma(1, 1);
    sigma << 1.0;
    Eigen::VectorXd theta(1);
    theta << 0.3;
    const double alpha = 0.5;
    const auto K = ConstraintSet::no_short_borrow_cap(1, 0.25);
    Eigen::VectorXd pi;
    const Eigen::VectorXd nu = nu_star_power_gamma1(K, theta, sigma, alpha, &pi);
    CHECK(pi(0) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(nu(0) == doctest::Approx(-0.175).epsilon(1e-8));

    // Same instance through the scalar penalized program, solved by search.
    const double w = 2.0 * (1.0 - alpha);
    auto F = [&](double v) {
        return (0.3 + v) * (0.3 + v) + w * 0.25 * std::max(0.0, -v);
    };
    const double v_ref = oracle::golden_min(F, -2.0, 2.0);
    CHECK(nu(0) == doctest::Approx(v_ref).epsilon(1e-6));
    CHECK(nu_star_weighted(K, theta, sigma, w)(0) == doctest::Approx(nu(0)).epsilon(1e-12));
}

TEST_CASE("drift adjustment minimizes the penalized distance in two dimensions") {
    const auto K = ConstraintSet::no_short_borrow_cap(2, 0.8);
    Eigen::MatrixXd sigma(2, 2);
    sigma << 0.2, 0.0, 0.05, 0.25;
    Eigen::VectorXd theta = vec2(0.4, -0.1);
    const double w = 2.0;

    Eigen::VectorXd pi;
    const Eigen::VectorXd nu = nu_star_log(K, theta, sigma, &pi);

    const Eigen::MatrixXd sigma_inv = sigma.inverse();
    auto F = [&](const Eigen::Vector2d& v) {
        const Eigen::Vector2d resid = theta + sigma_inv * v;
        const double delta = K.cap * std::max(0.0, -v.minCoeff());
        return resid.squaredNorm() + w * delta;
    };
    const Eigen::Vector2d ref =
        oracle::grid_min_2d(F, Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(1.0, 1.0));

    CHECK(F(Eigen::Vector2d(nu(0), nu(1))) <= F(ref) + 1e-8);
    CHECK((nu - Eigen::VectorXd(ref)).norm() <= 1e-4);

    // The maximizing portfolio is feasible and tied to nu by the stationarity map.
    CHECK((project_K(K, pi) - pi).norm() <= 1e-9);
    const Eigen::MatrixXd Q = sigma * sigma.transpose();
    CHECK((nu - ((w / 2.0) * Q * pi - sigma * theta)).norm() <= 1e-9);

    // Saddle value: penalized primal equals the concave dual objective.
    const double dual_value = w * pi.dot(sigma * theta) - (w * w / 4.0) * pi.dot(Q * pi);
    CHECK(F(Eigen::Vector2d(nu(0), nu(1))) == doctest::Approx(dual_value).epsilon(1e-7));
}

TEST_CASE("constraint factories validate their inputs") {
    CHECK_THROWS_AS(ConstraintSet::unconstrained(0), ConfigError);
    CHECK_THROWS_AS(ConstraintSet::borrow_cap(2, 0.0), ConfigError);
    CHECK_THROWS_AS(ConstraintSet::box(vec2(0.1, 0.0), vec2(1.0, 1.0)), ConfigError);
    CHECK_THROWS_AS(ConstraintSet::box(vec2(0.0, 0.0), vec2(0.0, 1.0)), ConfigError);
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    Eigen::VectorXd b(1);
    b << -0.5;
    CHECK_THROWS_AS(ConstraintSet::halfspaces(A, b), ConfigError);
    A << 0, 0;
    b << 1;
    CHECK_THROWS_AS(ConstraintSet::halfspaces(A, b), ConfigError);

    const auto K = ConstraintSet::no_short(2);
    Eigen::VectorXd x3 = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(support_delta(K, x3), ConfigError);
    CHECK_THROWS_AS(project_K(K, x3), ConfigError);
    Eigen::MatrixXd s3 = Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(nu_star_log(K, x3, s3), ConfigError);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(nu_star_power_gamma1(K, Eigen::VectorXd::Zero(2), s2, 0.0), ConfigError);
    CHECK_THROWS_AS(nu_star_power_gamma1(K, Eigen::VectorXd::Zero(2), s2, 1.0), ConfigError);
    CHECK_THROWS_AS(nu_star_weighted(K, Eigen::VectorXd::Zero(2), s2, 0.0), ConfigError);
}
