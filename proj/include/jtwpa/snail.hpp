#pragma once

// Single SNAIL loop: one small junction in parallel with three large ones,
// threaded by an external flux. The phase variable is the small-junction
// phase; the large junctions share (phi_ext - phi) / 3 equally.
//
//   U(phi) = -E_Js cos(phi) - 3 E_Jl cos((phi_ext - phi) / 3)
//
// with E_Jl = E_Js / alpha (large junctions have area A_J / alpha).
// Taylor coefficients follow the 1/n! convention:
//   U(phi_min + d) = U0 + c2 d^2 + c3 d^3 + c4 d^4 + ...

#include "jtwpa/constants.hpp"
#include "jtwpa/errors.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace jtwpa {

struct JunctionSpec {
    double area_um2 = 0.0;
    double current_density_uA_per_um2 = 0.0;

    void validate() const {
        if (!(area_um2 > 0.0) || !std::isfinite(area_um2))
            throw std::domain_error("junction area must be positive");
        if (!(current_density_uA_per_um2 > 0.0) || !std::isfinite(current_density_uA_per_um2))
            throw std::domain_error("junction current density must be positive");
    }
};

struct SnailSpec {
    JunctionSpec small_junction;
    double alpha = 0.0;
    int n_large = 3;
    double flux_ext = 0.0; ///< external flux in units of Phi0, in [0, 1)
    /// Per-junction self-capacitance in F. Not part of the potential; the cell
    /// model places it across the loop when nonzero.
    double junction_capacitance = 0.0;

    void validate() const {
        small_junction.validate();
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::domain_error("SNAIL asymmetry alpha must lie in (0, 1)");
        if (n_large != 3)
            throw std::domain_error("SNAIL model supports exactly three large junctions");
        if (!(flux_ext >= 0.0 && flux_ext < 1.0))
            throw std::domain_error("external flux must lie in [0, 1) Phi0");
        if (!(junction_capacitance >= 0.0))
            throw std::domain_error("junction capacitance must be nonnegative");
    }
};

struct PotentialExpansion {
    double phi_min = 0.0; ///< rad
    double c2 = 0.0;      ///< J / rad^2
    double c3 = 0.0;      ///< J / rad^3
    double c4 = 0.0;      ///< J / rad^4
};

/// I_c = rho_Ic * A_J, in uA.
inline double critical_current(const JunctionSpec& j) {
    j.validate();
    return j.area_um2 * j.current_density_uA_per_um2;
}

/// L_J = Phi0 / (2 pi I_c), with I_c in uA; returns H.
inline double josephson_inductance(double critical_current_uA) {
    if (!(critical_current_uA > 0.0) || !std::isfinite(critical_current_uA))
        throw std::domain_error("Josephson inductance needs a positive critical current");
    return constants::reduced_flux_quantum / (critical_current_uA * constants::micro);
}

/// E_J = Phi0 I_c / (2 pi), with I_c in uA; returns J.
inline double josephson_energy(double critical_current_uA) {
    return constants::reduced_flux_quantum * critical_current_uA * constants::micro;
}

namespace detail {

/// Derivatives of U in units of the small-junction energy E_Js.
/// Index n holds d^n U / d phi^n for n = 0..4.
inline std::array<double, 5> reduced_derivatives(double alpha, double flux_ext, double phi) {
    const double phi_ext = 2.0 * std::numbers::pi * flux_ext;
    const double ratio = 1.0 / alpha; // E_Jl / E_Js
    const double u = (phi_ext - phi) / 3.0;
    const double sp = std::sin(phi), cp = std::cos(phi);
    const double su = std::sin(u), cu = std::cos(u);
    return {
        -cp - 3.0 * ratio * cu,
        sp - ratio * su,
        cp + ratio / 3.0 * cu,
        -sp + ratio / 9.0 * su,
        -cp - ratio / 27.0 * cu,
    };
}

/// Bisection on U' within [lo, hi] where U'(lo) < 0 <= U'(hi). Runs to
/// floating-point resolution and returns the endpoint with the smaller |U'|.
inline double refine_stationary_point(double alpha, double flux, double lo, double hi) {
    auto slope = [&](double x) { return reduced_derivatives(alpha, flux, x)[1]; };
    double f_lo = slope(lo);
    double f_hi = slope(hi);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double f_mid = slope(mid);
        if (f_mid < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    return std::abs(f_lo) < std::abs(f_hi) ? lo : hi;
}

/// Minimum of U on [lo, hi] found by scanning U' for - to + sign changes.
inline double scan_for_minimum(double alpha, double flux, double lo, double hi, int intervals) {
    double best_phi = std::numeric_limits<double>::quiet_NaN();
    double best_u = std::numeric_limits<double>::infinity();
    const double h = (hi - lo) / intervals;
    double a = lo;
    double da = reduced_derivatives(alpha, flux, a)[1];
    for (int i = 1; i <= intervals; ++i) {
        const double b = (i == intervals) ? hi : lo + i * h;
        const double db = reduced_derivatives(alpha, flux, b)[1];
        if (da < 0.0 && db >= 0.0) {
            const double phi = refine_stationary_point(alpha, flux, a, b);
            const auto d = reduced_derivatives(alpha, flux, phi);
            const bool lower = d[0] < best_u - 1e-12;
            const bool tie = std::abs(d[0] - best_u) <= 1e-12 && std::abs(phi) < std::abs(best_phi);
            if (d[2] > 0.0 && (lower || tie)) {
                best_u = d[0];
                best_phi = phi;
            }
        }
        a = b;
        da = db;
    }
    return best_phi;
}

inline double reduced_phase_minimum(double alpha, double flux_ext) {
    if (flux_ext == 0.0) return 0.0;
    const double phi_ext = 2.0 * std::numbers::pi * flux_ext;
    double phi = std::numeric_limits<double>::quiet_NaN();
    // Below half a flux quantum U'(0) < 0 <= U'(phi_ext): the minimum sits
    // between zero and phi_ext.
    if (flux_ext <= 0.5) phi = scan_for_minimum(alpha, flux_ext, 0.0, phi_ext, 64);
    if (std::isnan(phi))
        phi = scan_for_minimum(alpha, flux_ext, -3.0 * std::numbers::pi, 3.0 * std::numbers::pi, 6000);
    if (std::isnan(phi)) {
        std::ostringstream msg;
        msg << "no stable SNAIL minimum bracketed (alpha=" << alpha << ", flux_ext=" << flux_ext
            << " Phi0, U'(0)=" << reduced_derivatives(alpha, flux_ext, 0.0)[1] << " E_Js/rad)";
        throw NumericalError(msg.str());
    }
    return phi;
}

/// c2..c4 in units of E_Js at the potential minimum.
inline std::array<double, 3> reduced_coefficients(double alpha, double flux_ext, double phi_min) {
    const auto d = reduced_derivatives(alpha, flux_ext, phi_min);
    return {d[2] / 2.0, d[3] / 6.0, d[4] / 24.0};
}

} // namespace detail

/// U(phi) in J.
inline double potential(const SnailSpec& s, double phi) {
    s.validate();
    const double e_js = josephson_energy(critical_current(s.small_junction));
    return e_js * detail::reduced_derivatives(s.alpha, s.flux_ext, phi)[0];
}

/// dU/dphi in J/rad.
inline double potential_slope(const SnailSpec& s, double phi) {
    s.validate();
    const double e_js = josephson_energy(critical_current(s.small_junction));
    return e_js * detail::reduced_derivatives(s.alpha, s.flux_ext, phi)[1];
}

/// d^n U / d phi^n for n = 0..4, in J / rad^n.
inline std::array<double, 5> potential_derivatives(const SnailSpec& s, double phi) {
    s.validate();
    const double e_js = josephson_energy(critical_current(s.small_junction));
    auto d = detail::reduced_derivatives(s.alpha, s.flux_ext, phi);
    for (auto& v : d) v *= e_js;
    return d;
}

/// Small-junction phase at the potential minimum. Exactly zero at zero flux.
inline double find_phase_minimum(const SnailSpec& s) {
    s.validate();
    return detail::reduced_phase_minimum(s.alpha, s.flux_ext);
}

/// Analytic Taylor coefficients of U around its minimum.
inline PotentialExpansion expand_potential(const SnailSpec& s) {
    s.validate();
    const double e_js = josephson_energy(critical_current(s.small_junction));
    const double phi = detail::reduced_phase_minimum(s.alpha, s.flux_ext);
    const auto c = detail::reduced_coefficients(s.alpha, s.flux_ext, phi);
    return {phi, e_js * c[0], e_js * c[1], e_js * c[2]};
}

/// L = (Phi0 / 2pi)^2 / (2 c2), in H.
inline double effective_inductance(const PotentialExpansion& e) {
    if (!(e.c2 > 0.0)) throw std::domain_error("no stable minimum: c2 must be positive");
    const double phi0_red = constants::reduced_flux_quantum;
    return phi0_red * phi0_red / (2.0 * e.c2);
}

/// Smallest flux in (0, 0.5) Phi0 where the quartic coefficient vanishes while
/// the cubic one does not (the Kerr-free bias point). Found by a 2000-point
/// scan followed by bisection. The root does not depend on the junction size.
inline double kerr_free_flux(double alpha, const JunctionSpec& junction, double tolerance = 1e-14) {
    junction.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("SNAIL asymmetry alpha must lie in (0, 1)");
    auto coeffs = [alpha](double flux) {
        return detail::reduced_coefficients(alpha, flux, detail::reduced_phase_minimum(alpha, flux));
    };
    constexpr int scan_points = 2000;
    double prev_flux = 0.5 / scan_points;
    double prev_c4 = coeffs(prev_flux)[2];
    for (int i = 2; i < scan_points; ++i) {
        const double flux = 0.5 * i / scan_points;
        const double c4 = coeffs(flux)[2];
        if ((prev_c4 < 0.0) != (c4 < 0.0)) {
            double lo = prev_flux, hi = flux;
            const bool lo_negative = prev_c4 < 0.0;
            while (hi - lo > tolerance) {
                const double mid = 0.5 * (lo + hi);
                if (mid <= lo || mid >= hi) break;
                if ((coeffs(mid)[2] < 0.0) == lo_negative)
                    lo = mid;
                else
                    hi = mid;
            }
            const double root = 0.5 * (lo + hi);
            const auto c = coeffs(root);
            if (std::abs(c[1]) > 1e-6 * c[0]) return root;
        }
        prev_flux = flux;
        prev_c4 = c4;
    }
    std::ostringstream msg;
    msg << "no Kerr-free point in (0, 0.5) Phi0 for alpha=" << alpha;
    throw NumericalError(msg.str());
}

} // namespace jtwpa
