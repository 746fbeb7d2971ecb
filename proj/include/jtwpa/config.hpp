#pragma once

// Run configuration: one JSON document, user-facing units (um^2, uA/um^2,
// nm, GHz, uA, fF), converted to the library's units here and nowhere else.
// Unknown keys are errors.

#include "jtwpa/cme.hpp"
#include "jtwpa/errors.hpp"
#include "jtwpa/io.hpp"
#include "jtwpa/metric.hpp"
#include "jtwpa/sweep.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace jtwpa {

struct OptimizeSettings {
    std::size_t budget = 60; ///< new evaluations per enumeration combination
    std::uint64_t seed = 1;
    bool log_transform = true;
};

struct DriveSweep {
    std::vector<double> pump_amplitudes_uA;
    std::optional<double> flux_phi0;
    std::optional<double> flux_bias_uA;
    double band_lo = 4.75e9;
    double band_hi = 6.75e9;
    double signal_step = 10e6;
};

struct RunConfig {
    std::filesystem::path output_dir;
    unsigned workers = 0;
    ParameterGrid grid = ParameterGrid::table_one();
    SimulationConfig sim;
    std::optional<double> flux_mutual_phi0_per_uA;
    MetricConfig metric{MatchingMode::direct};
    OptimizeSettings optimize;
    DriveSweep drive;

    /// Simulation grid including the second pump harmonic.
    FrequencyGrid simulation_grid() const { return extend_for_metric(sim.grid, metric.pump_freq); }

    SimulationConfig simulation() const {
        SimulationConfig s = sim;
        s.grid = simulation_grid();
        return s;
    }
};

namespace detail {

using nlohmann::json;

/// Strict view of one JSON object: every key must be read or it is reported.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& at(const std::string& key) {
        if (!has(key)) throw ConfigError(where(key) + "required field is missing");
        return j_.at(key);
    }

    double number(const std::string& key) {
        const auto& v = at(key);
        if (!v.is_number()) throw ConfigError(where(key) + "expected a number");
        return v.get<double>();
    }
    double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
    std::optional<double> maybe_number(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return number(key);
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(where(key) + "expected an integer");
        return v.get<std::int64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_boolean()) throw ConfigError(where(key) + "expected true or false");
        return v.get<bool>();
    }

    std::string string(const std::string& key) {
        const auto& v = at(key);
        if (!v.is_string()) throw ConfigError(where(key) + "expected a string");
        return v.get<std::string>();
    }

    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.contains(key)) throw ConfigError(where(key) + "unknown key");
    }

    std::string where(const std::string& key = {}) const {
        const std::string p = key.empty() ? path_ : child_path(key);
        return p.empty() ? std::string("config: ") : "config field '" + p + "': ";
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::pair<double, double> parse_band(Fields& f, const std::string& key, std::pair<double, double> fallback) {
    if (!f.has(key)) return fallback;
    const auto& v = f.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(f.where(key) + "expected [lo, hi] in GHz");
    return {v[0].get<double>() * constants::giga, v[1].get<double>() * constants::giga};
}

inline GridDimension parse_dimension(const json& j, const std::string& path, const GridDimension& fallback) {
    Fields f(j, path);
    GridDimension d = fallback;
    d.min = f.number("min", fallback.min);
    d.max = f.number("max", fallback.max);
    const bool has_step = f.has("step"), has_count = f.has("count");
    if (has_step && has_count) throw ConfigError(f.where() + "give either step or count, not both");
    if (has_count) {
        const auto n = f.integer("count", 1);
        if (n < 1) throw ConfigError(f.where("count") + "must be at least 1");
        d = GridDimension::with_count(d.name, d.min, d.max, static_cast<int>(n));
    } else {
        d.step = f.number("step", fallback.step);
    }
    f.finish();
    try {
        d.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(f.where() + e.what());
    }
    return d;
}

inline std::vector<double> parse_amplitudes(const json& v, const std::string& path) {
    std::vector<double> out;
    if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError("config field '" + path + "': expected numbers in uA");
            out.push_back(e.get<double>());
        }
    } else {
        const auto d = parse_dimension(v, path, {"pump", 0.0, 0.0, 1.0});
        out = d.values();
    }
    if (out.empty()) throw ConfigError("config field '" + path + "': no pump amplitudes");
    for (double a : out)
        if (!(a >= 0.0)) throw ConfigError("config field '" + path + "': amplitudes must be nonnegative");
    return out;
}

inline std::string json_error_location(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

} // namespace detail

/// Parses a configuration document. Relative output paths resolve against
/// `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config is not valid JSON at " + detail::json_error_location(text, e.byte) + ": " +
                          e.what());
    }
    detail::Fields root(doc, "");
    RunConfig c;

    const auto out = root.string("output_dir");
    if (out.empty()) throw ConfigError(root.where("output_dir") + "must not be empty");
    c.output_dir = std::filesystem::path(out).is_absolute() ? std::filesystem::path(out) : base_dir / out;

    const auto workers = root.integer("workers", 0);
    if (workers < 0) throw ConfigError(root.where("workers") + "must be nonnegative");
    c.workers = static_cast<unsigned>(workers);

    const auto cells = root.integer("cell_count", 360);
    if (cells < 1) throw ConfigError(root.where("cell_count") + "must be positive");
    c.sim.cell_count = static_cast<int>(cells);
    c.sim.ref_impedance = root.number("reference_impedance_ohm", 50.0);
    if (!(c.sim.ref_impedance > 0.0)) throw ConfigError(root.where("reference_impedance_ohm") + "must be positive");
    c.sim.flux_override = root.maybe_number("flux_phi0");
    c.sim.record_wall_time = root.boolean("record_wall_time", false);

    if (root.has("frequency_GHz")) {
        detail::Fields f(root.at("frequency_GHz"), "frequency_GHz");
        c.sim.grid.start = f.number("start", 0.0) * constants::giga;
        c.sim.grid.stop = f.number("stop", 20.0) * constants::giga;
        c.sim.grid.step = f.number("step", 0.01) * constants::giga;
        f.finish();
    } else {
        c.sim.grid = {0.0, 20e9, 10e6};
    }
    try {
        c.sim.grid.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(root.where("frequency_GHz") + e.what());
    }
    if (c.sim.grid.start != 0.0) throw ConfigError(root.where("frequency_GHz") + "start must be 0 GHz");

    if (root.has("cell")) {
        detail::Fields f(root.at("cell"), "cell");
        c.sim.cell.relative_permittivity = f.number("relative_permittivity", 9.8);
        c.sim.cell.pad_area_um2 = f.number("pad_area_um2", 30.0);
        c.sim.cell.junction_capacitance = f.number("junction_capacitance_fF", 0.0) * 1e-15;
        c.flux_mutual_phi0_per_uA = f.maybe_number("flux_mutual_phi0_per_uA");
        f.finish();
        if (!(c.sim.cell.relative_permittivity > 0.0 && c.sim.cell.pad_area_um2 > 0.0))
            throw ConfigError(f.where() + "permittivity and pad area must be positive");
        if (c.sim.cell.junction_capacitance < 0.0)
            throw ConfigError(f.where("junction_capacitance_fF") + "must be nonnegative");
    }

    if (root.has("grid")) {
        detail::Fields f(root.at("grid"), "grid");
        static const std::array<std::string, design_dims> keys{"A_J_um2", "rho_Ic_uA_um2", "alpha", "t_nm",
                                                               "L_load", "C_load", "pitch"};
        for (std::size_t d = 0; d < design_dims; ++d)
            if (f.has(keys[d])) c.grid.dims[d] = detail::parse_dimension(f.at(keys[d]), "grid." + keys[d], c.grid.dims[d]);
        f.finish();
        for (double p : c.grid.dims[6].values())
            if (std::abs(p - std::round(p)) > 1e-9 || p < 1.0)
                throw ConfigError("config field 'grid.pitch': values must be positive integers");
        for (double a : c.grid.dims[2].values())
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("config field 'grid.alpha': values must lie in (0, 1)");
    }

    {
        detail::Fields f(root.at("metric"), "metric");
        c.metric = MetricConfig{matching_mode_from_string(f.string("matching_mode"))};
        c.metric.weight_a = f.number("a", 10.0);
        c.metric.weight_b = f.number("b", 1.0);
        c.metric.weight_c = f.number("c", 10.0);
        const auto band = detail::parse_band(f, "band_GHz", {4.75e9, 6.75e9});
        c.metric.band_lo = band.first;
        c.metric.band_hi = band.second;
        c.metric.pump_freq = f.number("pump_GHz", 11.5) * constants::giga;
        c.metric.cutoff = f.maybe_number("cutoff");
        c.metric.harmonic_uses_s21 = f.boolean("harmonic_uses_s21", false);
        f.finish();
        try {
            c.metric.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(f.where() + e.what());
        }
        if (c.metric.band_lo < c.sim.grid.start || c.metric.band_hi > c.simulation_grid().stop)
            throw ConfigError(f.where("band_GHz") + "band lies outside the simulated frequency range");
    }

    if (root.has("optimize")) {
        detail::Fields f(root.at("optimize"), "optimize");
        const auto budget = f.integer("budget", 60);
        if (budget < 0) throw ConfigError(f.where("budget") + "must be nonnegative");
        c.optimize.budget = static_cast<std::size_t>(budget);
        const auto seed = f.integer("seed", 1);
        if (seed < 0) throw ConfigError(f.where("seed") + "must be nonnegative");
        c.optimize.seed = static_cast<std::uint64_t>(seed);
        c.optimize.log_transform = f.boolean("log_transform", true);
        f.finish();
    }

    c.drive.band_lo = c.metric.band_lo;
    c.drive.band_hi = c.metric.band_hi;
    if (root.has("drive")) {
        detail::Fields f(root.at("drive"), "drive");
        if (f.has("pump_amplitudes_uA"))
            c.drive.pump_amplitudes_uA = detail::parse_amplitudes(f.at("pump_amplitudes_uA"), "drive.pump_amplitudes_uA");
        c.drive.flux_phi0 = f.maybe_number("flux_phi0");
        c.drive.flux_bias_uA = f.maybe_number("flux_bias_uA");
        const auto band = detail::parse_band(f, "band_GHz", {c.drive.band_lo, c.drive.band_hi});
        c.drive.band_lo = band.first;
        c.drive.band_hi = band.second;
        c.drive.signal_step = f.number("signal_step_GHz", 0.01) * constants::giga;
        f.finish();
        if (c.drive.flux_phi0 && c.drive.flux_bias_uA)
            throw ConfigError(f.where() + "give either flux_phi0 or flux_bias_uA, not both");
        if (c.drive.flux_bias_uA && !c.flux_mutual_phi0_per_uA)
            throw ConfigError(f.where("flux_bias_uA") + "needs cell.flux_mutual_phi0_per_uA to convert to flux");
    }
    if (c.drive.pump_amplitudes_uA.empty())
        c.drive.pump_amplitudes_uA = GridDimension{"pump", 0.1, 0.5, 0.05}.values();
    try {
        DriveSpec{c.metric.pump_freq, 0.0, 0.0, c.drive.band_lo, c.drive.band_hi, c.drive.signal_step}.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config field 'drive': ") + e.what());
    }

    root.finish();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path.parent_path());
}

} // namespace jtwpa
