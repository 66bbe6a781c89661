#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "peval/errors.hpp"

namespace peval {

// Scalar model coefficient as a function of the factor level y.
//
// Families:
//   constant  c0
//   affine    c0 + c1*y                       (no global bounds)
//   sigmoid   c0 + c1 / (1 + exp(-(y-center)/scale))   (bounded, monotone)
//
// All families are monotone in y, so extremes over an interval sit at its
// endpoints. Global bounds exist for constant and sigmoid only; callers that
// need certified bounds must check has_global_bounds().
struct Coefficient {
    enum class Family { Constant, Affine, Sigmoid };

    Family family = Family::Constant;
    double c0 = 0.0;
    double c1 = 0.0;
    double center = 0.0;
    double scale = 1.0;

    static Coefficient constant(double value) {
        Coefficient c;
        c.family = Family::Constant;
        c.c0 = value;
        return c;
    }

    static Coefficient affine(double intercept, double slope) {
        Coefficient c;
        c.family = Family::Affine;
        c.c0 = intercept;
        c.c1 = slope;
        return c;
    }

    static Coefficient sigmoid(double base, double amplitude, double center, double scale) {
        if (!(scale > 0.0)) throw ConfigError("sigmoid coefficient: scale must be > 0");
        Coefficient c;
        c.family = Family::Sigmoid;
        c.c0 = base;
        c.c1 = amplitude;
        c.center = center;
        c.scale = scale;
        return c;
    }

    double operator()(double y) const {
        switch (family) {
            case Family::Constant: return c0;
            case Family::Affine: return c0 + c1 * y;
            case Family::Sigmoid: return c0 + c1 / (1.0 + std::exp(-(y - center) / scale));
        }
        return c0;
    }

    bool is_constant() const { return family == Family::Constant || c1 == 0.0; }

    bool has_global_bounds() const { return family != Family::Affine || c1 == 0.0; }

    // [lo, hi] over all of R; infinite for proper affine coefficients.
    std::pair<double, double> global_bounds() const {
        switch (family) {
            case Family::Constant: return {c0, c0};
            case Family::Affine:
                if (c1 == 0.0) return {c0, c0};
                return {-std::numeric_limits<double>::infinity(),
                        std::numeric_limits<double>::infinity()};
            case Family::Sigmoid:
                return {c0 + std::min(0.0, c1), c0 + std::max(0.0, c1)};
        }
        return {c0, c0};
    }

    // [lo, hi] over [ylo, yhi]; exact because every family is monotone.
    std::pair<double, double> range_bounds(double ylo, double yhi) const {
        const double a = (*this)(ylo);
        const double b = (*this)(yhi);
        return {std::min(a, b), std::max(a, b)};
    }

    std::string family_name() const {
        switch (family) {
            case Family::Constant: return "constant";
            case Family::Affine: return "affine";
            case Family::Sigmoid: return "sigmoid";
        }
        return "constant";
    }
};

} // namespace peval
