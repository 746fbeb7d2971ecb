#pragma once

// Linear two-port model of a SNAIL transmission line. Each cell is an
// L-section: series SNAIL inductance followed by a shunt gate capacitance.
// A macrocell holds P - 1 unloaded cells and one loaded cell; the line is
// N / P macrocells.

#include "jtwpa/constants.hpp"
#include "jtwpa/errors.hpp"
#include "jtwpa/snail.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace jtwpa {

using cplx = std::complex<double>;

/// One point of the design space plus the cell count.
struct DeviceParams {
    double junction_area_um2 = 0.0;             ///< A_J
    double current_density_uA_per_um2 = 0.0;    ///< rho_Ic
    double alpha = 0.0;                         ///< SNAIL asymmetry
    double dielectric_thickness_nm = 0.0;       ///< t
    double inductance_load_ratio = 1.0;         ///< L_l
    double capacitance_load_ratio = 1.0;        ///< C_l
    int pitch = 2;                              ///< P
    int cell_count = 360;                       ///< N

    void validate() const {
        if (cell_count <= 0) throw ConfigError("cell count must be positive");
        if (pitch < 1) throw ConfigError("loading pitch must be at least 1");
        if (cell_count % pitch != 0) {
            std::ostringstream msg;
            msg << "cell count " << cell_count << " is not divisible by the loading pitch " << pitch;
            throw ConfigError(msg.str());
        }
        if (!(dielectric_thickness_nm > 0.0)) throw ConfigError("dielectric thickness must be positive");
        if (!(inductance_load_ratio > 0.0) || !(capacitance_load_ratio > 0.0))
            throw ConfigError("load ratios must be positive");
    }

    JunctionSpec junction() const { return {junction_area_um2, current_density_uA_per_um2}; }
};

struct CellConfig {
    double relative_permittivity = 9.8;
    double pad_area_um2 = 30.0;
    double junction_capacitance = 0.0; ///< F across each SNAIL loop; 0 disables it
};

struct CellImmittance {
    double series_inductance = 0.0;   ///< H
    double shunt_capacitance = 0.0;   ///< F
    double loop_capacitance = 0.0;    ///< F in parallel with the series inductance
};

struct CellPair {
    CellImmittance unloaded;
    CellImmittance loaded;
};

struct FrequencyGrid {
    double start = 0.0; ///< Hz
    double stop = 0.0;  ///< Hz
    double step = 0.0;  ///< Hz

    void validate() const {
        if (!(step > 0.0)) throw ConfigError("frequency step must be positive");
        if (!(stop > start)) throw ConfigError("frequency stop must exceed start");
        if (start < 0.0) throw ConfigError("frequency start must be nonnegative");
    }
    std::size_t size() const {
        validate();
        return static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    }
    double at(std::size_t i) const { return start + static_cast<double>(i) * step; }
    std::vector<double> points() const {
        std::vector<double> f(size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = at(i);
        return f;
    }
};

/// Chain (ABCD) matrix of a two-port.
struct Abcd {
    cplx a{1.0}, b{0.0}, c{0.0}, d{1.0};

    cplx determinant() const { return a * d - b * c; }

    friend Abcd operator*(const Abcd& l, const Abcd& r) {
        return {l.a * r.a + l.b * r.c, l.a * r.b + l.b * r.d,
                l.c * r.a + l.d * r.c, l.c * r.b + l.d * r.d};
    }
};

struct TwoPortResponse {
    std::vector<double> freqs;
    std::vector<cplx> s11, s12, s21, s22;
    double ref_impedance = 50.0;

    std::size_t size() const { return freqs.size(); }
};

struct DispersionCurve {
    std::vector<double> freqs;
    std::vector<double> k; ///< rad per cell, unwrapped, k(0) = 0
};

struct SParams {
    cplx s11, s12, s21, s22;
};

/// Parallel-plate gate capacitance eps0 eps_r A_pad / t.
inline double gate_capacitance(double thickness_nm, const CellConfig& cfg) {
    if (!(thickness_nm > 0.0)) throw std::domain_error("dielectric thickness must be positive");
    return constants::vacuum_permittivity * cfg.relative_permittivity * cfg.pad_area_um2 * constants::um2 /
           (thickness_nm * constants::nano);
}

/// Unloaded and loaded cell immittances at the given flux bias. The loaded
/// cell divides every loop junction area by L_l (alpha preserved) and scales
/// the gate capacitance by C_l.
inline CellPair build_cells(const DeviceParams& p, double flux_ext, const CellConfig& cfg) {
    p.validate();
    auto snail_inductance = [&](double area) {
        SnailSpec s{{area, p.current_density_uA_per_um2}, p.alpha, 3, flux_ext, cfg.junction_capacitance};
        return effective_inductance(expand_potential(s));
    };
    const double cg = gate_capacitance(p.dielectric_thickness_nm, cfg);
    CellPair cells;
    cells.unloaded = {snail_inductance(p.junction_area_um2), cg, cfg.junction_capacitance};
    cells.loaded = {snail_inductance(p.junction_area_um2 / p.inductance_load_ratio),
                    cg * p.capacitance_load_ratio, cfg.junction_capacitance / p.inductance_load_ratio};
    for (const auto* c : {&cells.unloaded, &cells.loaded}) {
        if (!(c->series_inductance > 0.0) || !(c->shunt_capacitance > 0.0))
            throw std::domain_error("cell inductance and capacitance must be positive");
    }
    return cells;
}

namespace detail {

inline std::pair<Abcd, Abcd> cell_factors(const CellImmittance& c, double f) {
    const double w = 2.0 * std::numbers::pi * f;
    const cplx j{0.0, 1.0};
    cplx z = j * w * c.series_inductance;
    if (c.loop_capacitance > 0.0) z /= (1.0 - w * w * c.series_inductance * c.loop_capacitance);
    return {Abcd{1.0, z, 0.0, 1.0}, Abcd{1.0, 0.0, j * w * c.shunt_capacitance, 1.0}};
}

} // namespace detail

/// Series impedance then shunt admittance.
inline Abcd cell_abcd(const CellImmittance& c, double f) {
    const auto [series, shunt] = detail::cell_factors(c, f);
    return series * shunt;
}

/// Determinant of the cell as the product of its series and shunt factors,
/// free of the a*d - b*c cancellation of the assembled matrix.
inline cplx cell_determinant(const CellImmittance& c, double f) {
    const auto [series, shunt] = detail::cell_factors(c, f);
    return series.determinant() * shunt.determinant();
}

namespace detail {

template <typename T>
T power(T base, long long n, T identity) {
    T result = identity;
    while (n > 0) {
        if (n & 1) result = result * base;
        n >>= 1;
        if (n > 0) base = base * base;
    }
    return result;
}

inline Abcd macrocell_abcd(const CellPair& cells, int pitch, double f) {
    const Abcd u = cell_abcd(cells.unloaded, f);
    Abcd m;
    for (int i = 0; i + 1 < pitch; ++i) m = m * u;
    return m * cell_abcd(cells.loaded, f);
}

} // namespace detail

/// Total chain matrix (U^(P-1) L)^(N/P) at one frequency, together with its
/// determinant tracked as the product of the cell determinants. In stopbands
/// the entries grow exponentially and a*d - b*c of the result cancels
/// catastrophically, so the tracked value is the usable one.
struct CascadeResult {
    Abcd abcd;
    cplx determinant{1.0};
};

inline CascadeResult cascade_at(const CellPair& cells, int pitch, int cell_count, double f) {
    if (pitch < 1 || cell_count <= 0 || cell_count % pitch != 0) {
        std::ostringstream msg;
        msg << "cell count " << cell_count << " is not divisible by the loading pitch " << pitch;
        throw ConfigError(msg.str());
    }
    const Abcd macro = detail::macrocell_abcd(cells, pitch, f);
    const cplx macro_det = detail::power(cell_determinant(cells.unloaded, f), pitch - 1, cplx{1.0}) *
                           cell_determinant(cells.loaded, f);
    const long long reps = cell_count / pitch;
    return {detail::power(macro, reps, Abcd{}), detail::power(macro_det, reps, cplx{1.0})};
}

/// Per-frequency total chain matrices of the device.
inline std::vector<Abcd> cascade(const DeviceParams& p, std::span<const double> freqs, const CellPair& cells) {
    p.validate();
    std::vector<Abcd> out;
    out.reserve(freqs.size());
    for (double f : freqs) out.push_back(cascade_at(cells, p.pitch, p.cell_count, f).abcd);
    return out;
}

/// ABCD to S at a real reference impedance. Pass the determinant when it is
/// known more accurately than a*d - b*c.
inline SParams abcd_to_s(const Abcd& m, double z0, std::optional<cplx> determinant = std::nullopt) {
    if (!(z0 > 0.0)) throw std::domain_error("reference impedance must be positive");
    const cplx den = m.a + m.b / z0 + m.c * z0 + m.d;
    if (den == cplx{0.0} || !std::isfinite(std::abs(den)))
        throw NumericalError("singular ABCD to S conversion");
    const cplx det = determinant.value_or(m.determinant());
    return {(m.a + m.b / z0 - m.c * z0 - m.d) / den, 2.0 * det / den, 2.0 / den,
            (-m.a + m.b / z0 - m.c * z0 + m.d) / den};
}

/// S-parameters of a chain built from explicit cell pairs.
inline TwoPortResponse simulate_cells(const CellPair& cells, int pitch, int cell_count,
                                      std::span<const double> freqs, double z0 = 50.0) {
    if (cell_count <= 0) throw ConfigError("cell count must be positive");
    TwoPortResponse r;
    r.ref_impedance = z0;
    r.freqs.assign(freqs.begin(), freqs.end());
    r.s11.resize(freqs.size());
    r.s12.resize(freqs.size());
    r.s21.resize(freqs.size());
    r.s22.resize(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        const auto total = cascade_at(cells, pitch, cell_count, freqs[i]);
        SParams s;
        try {
            s = abcd_to_s(total.abcd, z0, total.determinant);
        } catch (const NumericalError&) {
            std::ostringstream msg;
            msg << "singular ABCD to S conversion at " << freqs[i] << " Hz";
            throw NumericalError(msg.str());
        }
        r.s11[i] = s.s11;
        r.s12[i] = s.s12;
        r.s21[i] = s.s21;
        r.s22[i] = s.s22;
    }
    return r;
}

/// Linear response S(p) of the device at a fixed flux bias.
inline TwoPortResponse simulate_linear(const DeviceParams& p, double flux_ext, const FrequencyGrid& grid,
                                       const CellConfig& cfg, double z0 = 50.0) {
    p.validate();
    const auto freqs = grid.points();
    return simulate_cells(build_cells(p, flux_ext, cfg), p.pitch, p.cell_count, freqs, z0);
}

/// k(f) = -arg S21(f) / N, unwrapped upward from DC.
inline DispersionCurve dispersion(const TwoPortResponse& resp, int n_cells) {
    if (resp.freqs.empty() || resp.freqs.front() != 0.0)
        throw ConfigError("dispersion requires DC-anchored grid");
    if (n_cells <= 0) throw ConfigError("cell count must be positive");
    DispersionCurve d;
    d.freqs = resp.freqs;
    d.k.resize(resp.size());
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double prev = std::arg(resp.s21[0]);
    double unwrapped = prev;
    const double offset = prev;
    for (std::size_t i = 0; i < resp.size(); ++i) {
        const double ph = std::arg(resp.s21[i]);
        if (i > 0) {
            double delta = ph - prev;
            delta -= two_pi * std::round(delta / two_pi);
            unwrapped += delta;
        }
        prev = ph;
        d.k[i] = -(unwrapped - offset) / n_cells;
    }
    d.k[0] = 0.0;
    return d;
}

} // namespace jtwpa
