#pragma once

// Three-wave-mixing gain from coupled-mode equations along the line:
//
//   dAs/dx = i kappa Ap Ai* exp(-i dk x)
//   dAi/dx = i kappa Ap As* exp(-i dk x)
//   dAp/dx = i kappa As Ai  exp(+i dk x)
//
// x counts cells, kappa = g0 / xi and Ap(0) = xi, the pump amplitude as a
// fraction of twice the small-junction critical current. Kerr terms are not
// included.

#include "jtwpa/errors.hpp"
#include "jtwpa/metric.hpp"
#include "jtwpa/network.hpp"
#include "jtwpa/parallel.hpp"
#include "jtwpa/snail.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace jtwpa {

struct DriveSpec {
    double pump_freq = 11.5e9;  ///< Hz
    double xi = 0.0;            ///< I_p / (2 I_c,small)
    double flux = 0.0;          ///< Phi0
    double band_lo = 4.75e9;    ///< Hz
    double band_hi = 6.75e9;    ///< Hz
    double signal_step = 10e6;  ///< Hz

    void validate() const {
        if (!(xi >= 0.0 && xi < 1.0)) throw ConfigError("pump ratio xi must lie in [0, 1)");
        if (!(band_lo > 0.0 && band_hi < pump_freq && band_lo < band_hi))
            throw ConfigError("signal band must lie inside (0, f_p)");
        if (!(signal_step > 0.0)) throw ConfigError("signal grid step must be positive");
    }

    std::vector<double> signal_grid() const {
        std::vector<double> f;
        const auto n = static_cast<std::size_t>(std::floor((band_hi - band_lo) / signal_step + 1e-9));
        for (std::size_t i = 0; i <= n; ++i) f.push_back(band_lo + static_cast<double>(i) * signal_step);
        return f;
    }
};

/// xi = I_p / (2 I_c), both in uA.
inline double pump_ratio(double pump_current_uA, double small_critical_current_uA) {
    if (!(small_critical_current_uA > 0.0)) throw std::domain_error("critical current must be positive");
    return pump_current_uA / (2.0 * small_critical_current_uA);
}

struct CmeInputs {
    double k_s = 0.0, k_i = 0.0, k_p = 0.0; ///< rad / cell
    double delta_k = 0.0;                   ///< k_p - k_s - k_i
    double g0 = 0.0;                        ///< rad / cell
    double xi = 0.0;
    int cell_count = 0;
};

struct CmeAmplitudes {
    cplx signal{0.0}, idler{0.0}, pump{0.0};
};

struct CmeTrajectory {
    std::vector<CmeAmplitudes> samples; ///< at x = 0, 1, ..., N
    double step = 0.05;
    double halving_error = 0.0; ///< relative |As(N)|^2 difference vs half step
};

struct GainProfile {
    std::vector<double> freqs;     ///< Hz
    std::vector<double> gain_db;
    std::vector<double> depletion; ///< 1 - |Ap(N)|^2 / |Ap(0)|^2
    std::vector<double> delta_k;   ///< rad / cell at each signal frequency
};

/// g0 = |c3| / (2 c2) * xi * sqrt(k_s k_i). The sign of c3 only sets a phase.
inline double coupling_constant(const PotentialExpansion& e, double xi, double k_s, double k_i) {
    if (!(e.c2 > 0.0)) throw std::domain_error("coupling needs c2 > 0");
    if (xi < 0.0) throw std::domain_error("pump ratio must be nonnegative");
    return std::abs(e.c3) / (2.0 * e.c2) * xi * std::sqrt(std::max(0.0, k_s * k_i));
}

/// Small-signal power gain |cosh(gN) + i dk/(2g) sinh(gN)|^2 with
/// g = sqrt(g0^2 - (dk/2)^2), continued to imaginary g past the gain band.
inline double undepleted_gain(double g0, double delta_k, double n_cells) {
    const cplx g = std::sqrt(cplx{g0 * g0 - 0.25 * delta_k * delta_k, 0.0});
    const cplx j{0.0, 1.0};
    cplx amp;
    if (std::abs(g) * n_cells < 1e-8)
        amp = 1.0 + j * (0.5 * delta_k) * n_cells; // limit g -> 0
    else
        amp = std::cosh(g * n_cells) + j * (0.5 * delta_k) / g * std::sinh(g * n_cells);
    return std::norm(amp);
}

namespace detail {

inline CmeAmplitudes cme_rhs(const CmeInputs& in, double kappa, double x, const CmeAmplitudes& a) {
    const cplx j{0.0, 1.0};
    const cplx ph = std::polar(1.0, -in.delta_k * x);
    return {j * kappa * a.pump * std::conj(a.idler) * ph, j * kappa * a.pump * std::conj(a.signal) * ph,
            j * kappa * a.signal * a.idler * std::conj(ph)};
}

inline CmeAmplitudes axpy(const CmeAmplitudes& a, double h, const CmeAmplitudes& k) {
    return {a.signal + h * k.signal, a.idler + h * k.idler, a.pump + h * k.pump};
}

inline std::vector<CmeAmplitudes> rk4(const CmeInputs& in, CmeAmplitudes a, double step) {
    const double kappa = in.xi > 0.0 ? in.g0 / in.xi : 0.0;
    const int per_cell = std::max(1, static_cast<int>(std::lround(1.0 / step)));
    const double h = 1.0 / per_cell;
    std::vector<CmeAmplitudes> out;
    out.reserve(static_cast<std::size_t>(in.cell_count) + 1);
    out.push_back(a);
    for (int cell = 0; cell < in.cell_count; ++cell) {
        for (int s = 0; s < per_cell; ++s) {
            const double x = cell + s * h;
            const auto k1 = cme_rhs(in, kappa, x, a);
            const auto k2 = cme_rhs(in, kappa, x + 0.5 * h, axpy(a, 0.5 * h, k1));
            const auto k3 = cme_rhs(in, kappa, x + 0.5 * h, axpy(a, 0.5 * h, k2));
            const auto k4 = cme_rhs(in, kappa, x + h, axpy(a, h, k3));
            a.signal += h / 6.0 * (k1.signal + 2.0 * k2.signal + 2.0 * k3.signal + k4.signal);
            a.idler += h / 6.0 * (k1.idler + 2.0 * k2.idler + 2.0 * k3.idler + k4.idler);
            a.pump += h / 6.0 * (k1.pump + 2.0 * k2.pump + 2.0 * k3.pump + k4.pump);
        }
        out.push_back(a);
    }
    return out;
}

} // namespace detail

/// Fixed-step RK4 over [0, N] with a step-halving accuracy check.
inline CmeTrajectory integrate_cme(const CmeInputs& in, const CmeAmplitudes& initial, double step = 0.05) {
    if (in.cell_count <= 0) throw ConfigError("cell count must be positive");
    for (cplx v : {initial.signal, initial.idler, initial.pump})
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
            throw std::domain_error("initial amplitudes must be finite");
    CmeTrajectory t;
    t.step = step;
    t.samples = detail::rk4(in, initial, step);
    const auto fine = detail::rk4(in, initial, 0.5 * step);
    const double coarse_out = std::norm(t.samples.back().signal);
    const double fine_out = std::norm(fine.back().signal);
    const double scale = std::max(fine_out, std::numeric_limits<double>::min());
    t.halving_error = fine_out == coarse_out ? 0.0 : std::abs(fine_out - coarse_out) / scale;
    if (t.halving_error > 1e-6) {
        std::ostringstream msg;
        msg << "CME step-halving disagreement " << t.halving_error << " exceeds 1e-6; reduce the step below " << step;
        throw NumericalError(msg.str());
    }
    return t;
}

/// Inputs for one signal frequency from the line dispersion.
inline CmeInputs cme_inputs(const DispersionCurve& disp, const PotentialExpansion& e, double xi, double signal_freq,
                            double pump_freq, int cell_count) {
    CmeInputs in;
    in.k_s = wavenumber_at(disp, signal_freq);
    in.k_i = wavenumber_at(disp, pump_freq - signal_freq);
    in.k_p = wavenumber_at(disp, pump_freq);
    in.delta_k = in.k_p - (in.k_s + in.k_i);
    in.g0 = coupling_constant(e, xi, in.k_s, in.k_i);
    in.xi = xi;
    in.cell_count = cell_count;
    return in;
}

inline constexpr double signal_seed_ratio = 1e-6;

/// Gain over the drive's signal band, seeded with |As(0)| = 1e-6 xi.
inline GainProfile gain_profile(const DispersionCurve& disp, const PotentialExpansion& e, int cell_count,
                                const DriveSpec& drive, unsigned workers = 1) {
    drive.validate();
    GainProfile g;
    g.freqs = drive.signal_grid();
    const std::size_t n = g.freqs.size();
    g.gain_db.resize(n);
    g.depletion.resize(n);
    g.delta_k.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const auto in = cme_inputs(disp, e, drive.xi, g.freqs[i], drive.pump_freq, cell_count);
        g.delta_k[i] = in.delta_k;
        if (drive.xi == 0.0) {
            g.gain_db[i] = 0.0;
            g.depletion[i] = 0.0;
            return;
        }
        const CmeAmplitudes a0{signal_seed_ratio * drive.xi, 0.0, drive.xi};
        const auto traj = integrate_cme(in, a0);
        const auto& out = traj.samples.back();
        g.gain_db[i] = 10.0 * std::log10(std::norm(out.signal) / std::norm(a0.signal));
        g.depletion[i] = 1.0 - std::norm(out.pump) / std::norm(a0.pump);
    });
    return g;
}

/// Trapezoidal mean gain (dB) over [lo, hi].
inline double performance(const GainProfile& p, double lo, double hi) {
    return band_mean<double>(p.freqs, p.gain_db, lo, hi);
}

struct WorkingPoint {
    double pump_amplitude_uA = 0.0;
    double xi = 0.0;
    double flux = 0.0;
    double performance_db = 0.0;
    bool failed = false;
    std::string error;
};

struct WorkingPointResult {
    std::vector<WorkingPoint> table;
    std::vector<GainProfile> profiles;
    std::size_t best = 0;
};

/// Exhaustive working-point search over pump amplitudes at a fixed flux.
/// Ties go to the lower amplitude.
inline WorkingPointResult optimize_working_point(const DispersionCurve& disp, const PotentialExpansion& e,
                                                 int cell_count, double small_critical_current_uA,
                                                 const DriveSpec& base, const std::vector<double>& pump_amplitudes_uA,
                                                 unsigned workers = 1) {
    if (pump_amplitudes_uA.empty()) throw ConfigError("working-point grid is empty");
    WorkingPointResult r;
    r.table.resize(pump_amplitudes_uA.size());
    r.profiles.resize(pump_amplitudes_uA.size());
    parallel_for(pump_amplitudes_uA.size(), workers, [&](std::size_t i) {
        WorkingPoint& w = r.table[i];
        w.pump_amplitude_uA = pump_amplitudes_uA[i];
        w.flux = base.flux;
        w.xi = pump_ratio(w.pump_amplitude_uA, small_critical_current_uA);
        try {
            DriveSpec d = base;
            d.xi = w.xi;
            r.profiles[i] = gain_profile(disp, e, cell_count, d);
            w.performance_db = performance(r.profiles[i], d.band_lo, d.band_hi);
        } catch (const std::exception& ex) {
            w.failed = true;
            w.error = ex.what();
            w.performance_db = -std::numeric_limits<double>::infinity();
        }
    });
    bool any = false;
    for (std::size_t i = 0; i < r.table.size(); ++i) {
        if (r.table[i].failed) continue;
        const auto& best = r.table[r.best];
        const bool better = !any || r.table[i].performance_db > best.performance_db ||
                            (r.table[i].performance_db == best.performance_db &&
                             r.table[i].pump_amplitude_uA < best.pump_amplitude_uA);
        if (better) r.best = i;
        any = true;
    }
    if (!any) throw NumericalError("every working point failed; first error: " + r.table.front().error);
    return r;
}

/// Bisection on xi in (lo, hi) for a band-averaged gain of target_db.
/// Assumes the gain grows with xi over the bracket.
inline double calibrate_pump_ratio(const DispersionCurve& disp, const PotentialExpansion& e, int cell_count,
                                   DriveSpec drive, double target_db, double lo = 0.0, double hi = 0.5,
                                   double tolerance = 1e-6) {
    auto perf = [&](double xi) {
        drive.xi = xi;
        return performance(gain_profile(disp, e, cell_count, drive), drive.band_lo, drive.band_hi);
    };
    if (perf(hi) < target_db) {
        std::ostringstream msg;
        msg << "band-averaged gain at xi=" << hi << " stays below " << target_db << " dB";
        throw NumericalError(msg.str());
    }
    while (hi - lo > tolerance) {
        const double mid = 0.5 * (lo + hi);
        if (perf(mid) < target_db)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace jtwpa
