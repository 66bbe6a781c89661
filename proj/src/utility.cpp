#include "peval/utility.hpp"

#include <cmath>

#include "peval/errors.hpp"

namespace peval {

void UtilitySpec::validate() const {
    if (!(tau > 0.0)) throw ConfigError("utility: tau must be > 0");
    if (!(rho > 0.0)) throw ConfigError("utility: rho must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("utility: gamma must lie in (0,1]");
    if (mode == Mode::Power) {
        if (!(alpha < 1.0) || alpha == 0.0)
            throw ConfigError("utility: alpha must lie in (-inf,0) or (0,1)");
    }
    if (!(m > 0.0 && m <= 1.0)) throw ConfigError("utility: m must lie in (0,1]");
    if (h.has_global_bounds()) {
        auto [hlo, hhi] = h.global_bounds();
        if (hlo < m - 1e-12 || hhi > 1.0 + 1e-12)
            throw ConfigError("utility: h must take values in [m,1]");
    }
}

ModifiedUtility::ModifiedUtility(const UtilitySpec& spec, ValueGrid A)
    : spec_(spec), A_(std::move(A)) {
    spec_.validate();
    if (spec_.mode != UtilitySpec::Mode::Power)
        throw ConfigError("ModifiedUtility: power mode only");
    if (A_.min_value() < 0.0)
        throw ConfigError("ModifiedUtility: continuation profile must be >= 0");
}

double ModifiedUtility::h_A(double x, double y) const {
    const double a = spec_.alpha;
    const double p = a * (1.0 - spec_.gamma);
    const double t = std::log(x);
    return (spec_.h(y) * std::exp(a * t) + A_.eval(y) * std::exp(p * t)) / a;
}

double ModifiedUtility::marginal(double x, double y) const {
    const double a = spec_.alpha;
    const double p = a * (1.0 - spec_.gamma);
    const double t = std::log(x);
    double v = spec_.h(y) * std::exp((a - 1.0) * t);
    const double w = (1.0 - spec_.gamma) * A_.eval(y);
    if (w > 0.0) v += w * std::exp((p - 1.0) * t);
    return v;
}

double ModifiedUtility::inverse_marginal(double u, double y) const {
    if (!(u > 0.0)) throw NumericalError("inverse_marginal: u must be > 0");
    const double a = spec_.alpha;
    const double p = a * (1.0 - spec_.gamma);
    const double h = spec_.h(y);
    const double w = (1.0 - spec_.gamma) * A_.eval(y);

    if (w <= 0.0) return std::exp(std::log(u / h) / (a - 1.0));

    // marginal(e^t) = h e^{(a-1)t} + w e^{(p-1)t}, strictly decreasing in t.
    auto marg = [&](double t) { return h * std::exp((a - 1.0) * t) + w * std::exp((p - 1.0) * t); };
    auto dmarg = [&](double t) {
        return (a - 1.0) * h * std::exp((a - 1.0) * t) + (p - 1.0) * w * std::exp((p - 1.0) * t);
    };

    // Bracket: marginal >= h e^{(a-1)t} gives the lower end; each term alone
    // below u/2 gives the upper end.
    double tlo = std::log(u / h) / (a - 1.0);
    double thi = std::max(std::log(u / (2.0 * h)) / (a - 1.0),
                          std::log(u / (2.0 * w)) / (p - 1.0));
    if (thi < tlo) std::swap(tlo, thi);

    double t = 0.5 * (tlo + thi);
    for (int it = 0; it < 200; ++it) {
        const double f = marg(t);
        if (std::fabs(f / u - 1.0) <= 1e-12) return std::exp(t);
        if (f > u) tlo = t; else thi = t;  // decreasing: f > u puts the root above t
        // Newton on log marginal, safeguarded by the bracket.
        double tn = t - (std::log(f) - std::log(u)) / (dmarg(t) / f);
        if (!(tn > tlo && tn < thi)) tn = 0.5 * (tlo + thi);
        t = tn;
    }
    const double f = marg(t);
    if (std::fabs(f / u - 1.0) <= 1e-10) return std::exp(t);
    throw NumericalError("inverse_marginal: tolerance not met in 200 iterations");
}

double ModifiedUtility::legendre(double u, double y, double* x_star) const {
    const double x = inverse_marginal(u, y);
    if (x_star) *x_star = x;
    return h_A(x, y) - u * x;
}

double ModifiedUtility::ell(double x, double y) const {
    const double a = spec_.alpha;
    const double g = spec_.gamma;
    const double p = a * (1.0 - g);
    const double t = std::log(x);
    return (1.0 / a - 1.0) * spec_.h(y) * std::exp(a * t) +
           (1.0 / a - (1.0 - g)) * A_.eval(y) * std::exp(p * t);
}

} // namespace peval
