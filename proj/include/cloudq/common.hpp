#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace cloudq {

enum class Regime { DBS, DES };

inline const char* to_string(Regime r) { return r == Regime::DBS ? "DBS" : "DES"; }

struct NodeParams {
    int m = 1;        // server count
    double mu = 1.0;  // per-server service rate

    void validate() const {
        if (m < 1) throw std::invalid_argument("NodeParams: m must be >= 1");
        if (!(mu > 0.0)) throw std::invalid_argument("NodeParams: mu must be > 0");
    }
};

struct AbandonmentEnv {
    double theta = 1.0;  // abandonment rate
    Regime regime = Regime::DBS;

    void validate() const {
        if (!(theta > 0.0)) throw std::invalid_argument("AbandonmentEnv: theta must be > 0");
    }
};

struct RootBracketFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleSplit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexabilityViolation : std::logic_error {
    using std::logic_error::logic_error;
};

struct StateSpaceTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoConvergence : std::runtime_error {
    double last_residual;
    NoConvergence(const std::string& msg, double residual)
        : std::runtime_error(msg), last_residual(residual) {}
};

struct DegenerateBaseline : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationFailure : std::runtime_error {
    double simulated;
    double exact;
    double half_width;
    ValidationFailure(const std::string& msg, double sim, double ex, double hw)
        : std::runtime_error(msg), simulated(sim), exact(ex), half_width(hw) {}
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MonotonicityViolation : std::logic_error {
    using std::logic_error::logic_error;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Brent root finder on [a,b] with f(a)*f(b) <= 0. Stops when |f| <= f_tol or the
// bracket shrinks below x_tol relative width.
template <class F>
double brent(F f, double a, double b, double fa, double fb,
             double f_tol, double x_tol = 1e-14, int max_iter = 200) {
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (fa * fb > 0.0) throw RootBracketFailure("brent: endpoints do not bracket a root");
    double c = a, fc = fa, d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(fc) < std::abs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        const double tol1 = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b)
                            + 0.5 * x_tol * std::max(1.0, std::abs(b));
        const double xm = 0.5 * (c - b);
        if (std::abs(fb) <= f_tol || std::abs(xm) <= tol1) return b;
        if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
            double p, q, r;
            const double s = fb / fa;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                q = fa / fc;
                r = fb / fc;
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
                q = (q - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            p = std::abs(p);
            if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q), std::abs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += (std::abs(d) > tol1) ? d : (xm > 0.0 ? tol1 : -tol1);
        fb = f(b);
        if ((fb > 0.0) == (fc > 0.0)) {
            c = a; fc = fa;
            d = b - a; e = d;
        }
    }
    return b;
}

}  // namespace detail

}  // namespace cloudq
