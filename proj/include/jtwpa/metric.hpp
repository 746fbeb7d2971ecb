#pragma once

// Device metric for the linear stages:
//
//   M = matching + b * dk + c * |S11(2 f_p)|
//
// where matching is a / |<S11>_BW| (verbatim) or a * |<S11>_BW| (direct)
// and dk = |k(f_p) - 2 k(f_p / 2)|. The total is summed in that order:
// (matching + phase) + harmonic.

#include "jtwpa/errors.hpp"
#include "jtwpa/network.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <sstream>
#include <string>

namespace jtwpa {

enum class MatchingMode { verbatim, direct };

inline std::string to_string(MatchingMode m) { return m == MatchingMode::verbatim ? "verbatim" : "direct"; }

inline MatchingMode matching_mode_from_string(const std::string& s) {
    if (s == "verbatim") return MatchingMode::verbatim;
    if (s == "direct") return MatchingMode::direct;
    throw ConfigError("matching_mode must be \"verbatim\" or \"direct\", got \"" + s + "\"");
}

struct MetricConfig {
    double weight_a = 10.0;
    double weight_b = 1.0;
    double weight_c = 10.0;
    double band_lo = 4.75e9;  ///< Hz
    double band_hi = 6.75e9;  ///< Hz
    double pump_freq = 11.5e9; ///< Hz
    MatchingMode matching_mode;
    std::optional<double> cutoff;
    bool harmonic_uses_s21 = false;

    explicit MetricConfig(MatchingMode mode) : matching_mode(mode) {}

    void validate() const {
        if (!(band_lo < band_hi)) throw ConfigError("metric band must satisfy f_lo < f_hi");
        if (!(weight_a > 0.0 && weight_b > 0.0 && weight_c > 0.0))
            throw ConfigError("metric weights must be positive");
        if (!(pump_freq > 0.0)) throw ConfigError("pump frequency must be positive");
    }
};

struct MetricBreakdown {
    double matching_term = 0.0;
    double phase_term = 0.0;
    double harmonic_term = 0.0;
    double total = 0.0;
    cplx band_mean_s11{0.0};
    double delta_k = 0.0;
    bool matching_capped = false;
};

namespace detail {

inline void require_coverage(std::span<const double> freqs, double f, const char* what) {
    if (freqs.empty() || f < freqs.front() || f > freqs.back()) {
        std::ostringstream msg;
        msg << what << " at " << f << " Hz lies outside the simulated grid";
        if (!freqs.empty()) msg << " [" << freqs.front() << ", " << freqs.back() << "] Hz";
        throw CoverageError(msg.str());
    }
}

/// Index i with freqs[i] <= f < freqs[i + 1] (clamped to the last interval).
inline std::size_t bracket(std::span<const double> freqs, double f) {
    auto it = std::upper_bound(freqs.begin(), freqs.end(), f);
    std::size_t i = it == freqs.begin() ? 0 : static_cast<std::size_t>(it - freqs.begin()) - 1;
    return std::min(i, freqs.size() >= 2 ? freqs.size() - 2 : 0);
}

} // namespace detail

/// Linear interpolation; exact grid hits return the stored value unchanged.
template <typename T>
T interpolate(std::span<const double> freqs, std::span<const T> values, double f, const char* what = "frequency") {
    detail::require_coverage(freqs, f, what);
    if (freqs.size() == 1) return values[0];
    const std::size_t i = detail::bracket(freqs, f);
    if (freqs[i] == f) return values[i];
    if (freqs[i + 1] == f) return values[i + 1];
    const double t = (f - freqs[i]) / (freqs[i + 1] - freqs[i]);
    return values[i] + (values[i + 1] - values[i]) * t;
}

/// Trapezoidal mean of `values` over [lo, hi], edges interpolated.
template <typename T>
T band_mean(std::span<const double> freqs, std::span<const T> values, double lo, double hi) {
    detail::require_coverage(freqs, lo, "band lower edge");
    detail::require_coverage(freqs, hi, "band upper edge");
    if (!(hi > lo)) throw ConfigError("band must satisfy f_lo < f_hi");
    T integral{};
    double x_prev = lo;
    T y_prev = interpolate(freqs, values, lo);
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        if (freqs[i] <= lo) continue;
        if (freqs[i] >= hi) break;
        integral += (y_prev + values[i]) * (0.5 * (freqs[i] - x_prev));
        x_prev = freqs[i];
        y_prev = values[i];
    }
    const T y_hi = interpolate(freqs, values, hi);
    integral += (y_prev + y_hi) * (0.5 * (hi - x_prev));
    return integral / (hi - lo);
}

inline cplx band_mean_s11(const TwoPortResponse& resp, double lo, double hi) {
    return band_mean<cplx>(resp.freqs, resp.s11, lo, hi);
}

inline double wavenumber_at(const DispersionCurve& disp, double f) {
    return interpolate<double>(disp.freqs, disp.k, f, "wavenumber");
}

/// |k(f_p) - 2 k(f_p / 2)|.
inline double delta_k(const DispersionCurve& disp, double pump_freq) {
    return std::abs(wavenumber_at(disp, pump_freq) - 2.0 * wavenumber_at(disp, 0.5 * pump_freq));
}

inline MetricBreakdown evaluate_metric(const TwoPortResponse& resp, const DispersionCurve& disp,
                                       const MetricConfig& cfg) {
    cfg.validate();
    detail::require_coverage(resp.freqs, 2.0 * cfg.pump_freq, "second pump harmonic");
    MetricBreakdown m;
    m.band_mean_s11 = band_mean_s11(resp, cfg.band_lo, cfg.band_hi);
    const double mean_mag = std::abs(m.band_mean_s11);
    if (cfg.matching_mode == MatchingMode::verbatim) {
        constexpr double floor = 1e-15;
        m.matching_capped = mean_mag < floor;
        m.matching_term = cfg.weight_a / (m.matching_capped ? floor : mean_mag);
    } else {
        m.matching_term = cfg.weight_a * mean_mag;
    }
    m.delta_k = delta_k(disp, cfg.pump_freq);
    m.phase_term = cfg.weight_b * m.delta_k;
    const auto& harmonic_trace = cfg.harmonic_uses_s21 ? resp.s21 : resp.s11;
    m.harmonic_term = cfg.weight_c * std::abs(interpolate<cplx>(resp.freqs, harmonic_trace, 2.0 * cfg.pump_freq));
    m.total = m.matching_term + m.phase_term + m.harmonic_term;
    return m;
}

} // namespace jtwpa
