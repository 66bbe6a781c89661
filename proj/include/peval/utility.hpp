#pragma once

#include <string>

#include "peval/coefficients.hpp"
#include "peval/errors.hpp"
#include "peval/grid.hpp"

namespace peval {

// Preference block for the periodic ratio objective
//   sum_i e^{-rho T_i} U(X_{T_i} / (e^{rho tau} X_{T_{i-1}})^gamma, Y_{T_i}),
// with U(x,y) = x^alpha h(y)/alpha (power) or U(x,y) = log x + h(y) (log).
struct UtilitySpec {
    enum class Mode { Power, Log };

    Mode mode = Mode::Power;
    double alpha = 0.5;   // power only; in (-inf,0) or (0,1)
    double gamma = 1.0;   // in (0,1]
    double rho = 0.2;     // impatience rate
    double tau = 1.0;     // evaluation period length
    Coefficient h = Coefficient::constant(1.0);  // values in [m,1]
    double m = 1.0;       // certified lower bound of h, in (0,1]

    void validate() const;
    std::string mode_name() const { return mode == Mode::Power ? "power" : "log"; }
};

// One-period terminal reward with continuation profile A >= 0:
//   h_A(x,y) = x^alpha h(y)/alpha + A(y) x^{alpha(1-gamma)}/alpha.
// Strictly concave and increasing in x for alpha in (0,1); for alpha < 0 it is
// concave, negative, and increasing. The marginal d/dx h_A is strictly
// decreasing from +inf to 0 on x > 0, so the inverse marginal is well defined.
class ModifiedUtility {
public:
    ModifiedUtility(const UtilitySpec& spec, ValueGrid A);

    const UtilitySpec& spec() const { return spec_; }
    const ValueGrid& A() const { return A_; }

    double h_A(double x, double y) const;

    // d/dx h_A(x,y)
    double marginal(double x, double y) const;

    // x solving marginal(x,y) = u to relative tolerance 1e-10 (closed form when
    // gamma = 1 or A(y) = 0; otherwise safeguarded Newton in log x).
    double inverse_marginal(double u, double y) const;

    // Legendre transform Phi(u,y) = sup_x [h_A(x,y) - u x]; x_star receives the
    // maximizer (= inverse_marginal), which is also -dPhi/du.
    double legendre(double u, double y, double* x_star = nullptr) const;

    // x h_A'(x) subtracted form: ell(x,y) = h_A(x,y) - x * marginal(x,y);
    // increasing in x, used as an integrability diagnostic.
    double ell(double x, double y) const;

private:
    UtilitySpec spec_;
    ValueGrid A_;
};

} // namespace peval
