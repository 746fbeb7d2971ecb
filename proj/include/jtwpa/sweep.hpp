#pragma once

// Uniform grid sweep over the design space: linear simulation plus metric at
// every point, with an append-only checkpoint log so long sweeps can resume.

#include "jtwpa/io.hpp"
#include "jtwpa/metric.hpp"
#include "jtwpa/network.hpp"
#include "jtwpa/parallel.hpp"
#include "jtwpa/snail.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace jtwpa {

inline constexpr std::size_t design_dims = 7;

/// Parameter names in design-space order.
inline const std::array<std::string, design_dims>& design_dim_names() {
    static const std::array<std::string, design_dims> names{"A_J", "rho_Ic", "alpha", "t", "L_load", "C_load", "P"};
    return names;
}

inline std::array<double, design_dims> design_vector(const DeviceParams& p) {
    return {p.junction_area_um2, p.current_density_uA_per_um2, p.alpha, p.dielectric_thickness_nm,
            p.inductance_load_ratio, p.capacitance_load_ratio, static_cast<double>(p.pitch)};
}

struct GridDimension {
    std::string name;
    double min = 0.0;
    double max = 0.0;
    double step = 0.0;

    /// Dimension sampling `count` evenly spaced values from min to max.
    static GridDimension with_count(std::string name, double min, double max, int count) {
        if (count < 1) throw ConfigError("dimension " + name + " needs at least one value");
        if (count == 1) return {std::move(name), min, min, 1.0};
        return {std::move(name), min, max, (max - min) / (count - 1)};
    }

    void validate() const {
        if (!(step > 0.0)) throw ConfigError("dimension " + name + ": step must be positive");
        if (!(min <= max)) throw ConfigError("dimension " + name + ": min must not exceed max");
    }
    std::size_t count() const {
        validate();
        return static_cast<std::size_t>(std::llround((max - min) / step)) + 1;
    }
    double value(std::size_t i) const { return min + static_cast<double>(i) * step; }
    std::vector<double> values() const {
        std::vector<double> v(count());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = value(i);
        return v;
    }
};

struct ParameterGrid {
    std::array<GridDimension, design_dims> dims;

    /// Fabrication ranges: A_J, rho_Ic, alpha, t, L_l, C_l, P.
    static ParameterGrid table_one() {
        return {{{{"A_J", 0.1, 0.6, 0.05},
                  {"rho_Ic", 0.5, 1.5, 0.1},
                  {"alpha", 0.23, 0.25, 0.02},
                  {"t", 1.0, 20.0, 1.0},
                  {"L_load", 1.5, 2.0, 0.5},
                  {"C_load", 1.0, 1.5, 0.5},
                  {"P", 2.0, 3.0, 1.0}}}};
    }

    std::size_t size() const {
        std::size_t n = 1;
        for (const auto& d : dims) n *= d.count();
        return n;
    }
};

/// Lexicographic enumeration, first dimension slowest.
inline std::vector<DeviceParams> enumerate_grid(const ParameterGrid& g, int cell_count) {
    std::array<std::vector<double>, design_dims> values;
    for (std::size_t d = 0; d < design_dims; ++d) {
        values[d] = g.dims[d].values();
        if (values[d].empty()) throw ConfigError("grid dimension " + g.dims[d].name + " is empty");
    }
    const std::size_t total = g.size();
    std::vector<DeviceParams> out;
    out.reserve(total);
    std::array<std::size_t, design_dims> idx{};
    for (std::size_t n = 0; n < total; ++n) {
        DeviceParams p;
        p.junction_area_um2 = values[0][idx[0]];
        p.current_density_uA_per_um2 = values[1][idx[1]];
        p.alpha = values[2][idx[2]];
        p.dielectric_thickness_nm = values[3][idx[3]];
        p.inductance_load_ratio = values[4][idx[4]];
        p.capacitance_load_ratio = values[5][idx[5]];
        p.pitch = static_cast<int>(std::lround(values[6][idx[6]]));
        p.cell_count = cell_count;
        out.push_back(p);
        for (std::size_t d = design_dims; d-- > 0;) {
            if (++idx[d] < values[d].size()) break;
            idx[d] = 0;
        }
    }
    return out;
}

struct SimulationConfig {
    int cell_count = 360;
    CellConfig cell;
    FrequencyGrid grid{0.0, 24e9, 10e6};
    double ref_impedance = 50.0;
    std::optional<double> flux_override; ///< Phi0; default is the Kerr-free point of each alpha
    bool record_wall_time = false;
};

/// Frequency grid covering both the requested range and 2 f_p + 1 GHz.
inline FrequencyGrid extend_for_metric(FrequencyGrid range, double pump_freq) {
    range.stop = std::max(range.stop, 2.0 * pump_freq + 1e9);
    return range;
}

struct SweepRecord {
    std::size_t index = 0;
    DeviceParams params;
    double flux_ext = 0.0;
    MetricBreakdown metric;
    bool failed = false;
    double wall_time = 0.0;
};

/// Flux bias of a device: the override if set, otherwise the Kerr-free point.
inline double bias_flux(const DeviceParams& p, const SimulationConfig& sim) {
    if (sim.flux_override) return *sim.flux_override;
    return kerr_free_flux(p.alpha, p.junction());
}

/// Simulates one device and evaluates its metric. Failures produce a flagged
/// record with total = +inf instead of an exception.
inline SweepRecord evaluate_point(std::size_t index, const DeviceParams& p, double flux,
                                  const SimulationConfig& sim, const MetricConfig& metric) {
    SweepRecord rec;
    rec.index = index;
    rec.params = p;
    rec.flux_ext = flux;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto resp = simulate_linear(p, flux, sim.grid, sim.cell, sim.ref_impedance);
        rec.metric = evaluate_metric(resp, dispersion(resp, p.cell_count), metric);
        if (!std::isfinite(rec.metric.total)) throw NumericalError("non-finite metric");
    } catch (const std::exception&) {
        rec.failed = true;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        rec.metric = MetricBreakdown{};
        rec.metric.matching_term = rec.metric.phase_term = rec.metric.harmonic_term = nan;
        rec.metric.delta_k = nan;
        rec.metric.total = std::numeric_limits<double>::infinity();
    }
    if (sim.record_wall_time)
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// ---------------------------------------------------------------------------
// CSV

inline const char* sweep_csv_header() {
    return "index,A_J_um2,rho_Ic_uA_um2,alpha,t_nm,L_load,C_load,pitch,flux_ext_phi0,"
           "matching_term,phase_term,harmonic_term,metric_total,failed,wall_time_s";
}

inline std::string format_sweep_row(const SweepRecord& r) {
    const auto& p = r.params;
    std::string s = std::to_string(r.index);
    for (double v : {p.junction_area_um2, p.current_density_uA_per_um2, p.alpha, p.dielectric_thickness_nm,
                     p.inductance_load_ratio, p.capacitance_load_ratio})
        s += ',' + format_double(v);
    s += ',' + std::to_string(p.pitch);
    for (double v : {r.flux_ext, r.metric.matching_term, r.metric.phase_term, r.metric.harmonic_term,
                     r.metric.total})
        s += ',' + format_double(v);
    s += r.failed ? ",1," : ",0,";
    s += format_double(r.wall_time);
    return s;
}

/// Parses one data row; returns nullopt for malformed (e.g. truncated) rows.
inline std::optional<SweepRecord> parse_sweep_row(const std::string& line, int cell_count, double weight_b = 1.0) {
    const auto f = split_csv_line(line);
    if (f.size() != 15) return std::nullopt;
    try {
        SweepRecord r;
        std::size_t pos = 0;
        r.index = std::stoull(f[0], &pos);
        if (pos != f[0].size()) return std::nullopt;
        auto num = [&](std::size_t i) {
            std::size_t used = 0;
            const double v = std::stod(f[i], &used);
            if (used != f[i].size()) throw std::invalid_argument("trailing characters");
            return v;
        };
        r.params.junction_area_um2 = num(1);
        r.params.current_density_uA_per_um2 = num(2);
        r.params.alpha = num(3);
        r.params.dielectric_thickness_nm = num(4);
        r.params.inductance_load_ratio = num(5);
        r.params.capacitance_load_ratio = num(6);
        r.params.pitch = std::stoi(f[7]);
        r.params.cell_count = cell_count;
        r.flux_ext = num(8);
        r.metric.matching_term = num(9);
        r.metric.phase_term = num(10);
        r.metric.harmonic_term = num(11);
        r.metric.total = num(12);
        r.metric.delta_k = r.metric.phase_term / weight_b;
        if (f[13] != "0" && f[13] != "1") return std::nullopt;
        r.failed = f[13] == "1";
        r.wall_time = num(14);
        return r;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline std::string format_sweep_csv(const std::vector<SweepRecord>& records) {
    std::string out = sweep_csv_header();
    out += '\n';
    for (const auto& r : records) {
        out += format_sweep_row(r);
        out += '\n';
    }
    return out;
}

inline std::vector<SweepRecord> read_sweep_csv(const std::filesystem::path& path, int cell_count,
                                               double weight_b = 1.0) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != sweep_csv_header())
        throw std::runtime_error(path.string() + ": unexpected Stage-1 CSV header");
    std::vector<SweepRecord> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto r = parse_sweep_row(line, cell_count, weight_b);
        if (!r) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        out.push_back(*r);
    }
    return out;
}

/// Completed records in a checkpoint log, keyed by grid index. A truncated
/// trailing line (interrupted write) is ignored.
inline std::map<std::size_t, SweepRecord> load_checkpoint(const std::filesystem::path& path, int cell_count,
                                                          double weight_b = 1.0) {
    std::map<std::size_t, SweepRecord> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line;
    while (std::getline(in, line)) {
        if (in.eof()) break; // no newline: the write never finished
        if (auto r = parse_sweep_row(line, cell_count, weight_b)) done.emplace(r->index, *r);
    }
    return done;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepOptions {
    unsigned workers = 0;
    std::optional<std::filesystem::path> checkpoint;
    /// Stop claiming new points after this many have been computed (for
    /// exercising resume); the result is then incomplete.
    std::optional<std::size_t> stop_after;
};

struct SweepResult {
    std::vector<SweepRecord> records; ///< grid order; only complete sweeps hold every index
    bool complete = true;
    std::size_t computed = 0;
    std::size_t resumed = 0;
    std::size_t failed = 0;
};

inline SweepResult run_sweep(const ParameterGrid& grid, const SimulationConfig& sim, const MetricConfig& metric,
                             const SweepOptions& opts = {}) {
    metric.validate();
    const auto points = enumerate_grid(grid, sim.cell_count);

    // Flux per distinct alpha, computed up front so workers only read it.
    std::map<double, double> flux_by_alpha;
    for (const auto& p : points) {
        if (!flux_by_alpha.contains(p.alpha)) {
            try {
                flux_by_alpha[p.alpha] = bias_flux(p, sim);
            } catch (const std::exception&) {
                flux_by_alpha[p.alpha] = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }

    std::vector<std::optional<SweepRecord>> slots(points.size());
    SweepResult result;
    if (opts.checkpoint) {
        for (auto& [i, rec] : load_checkpoint(*opts.checkpoint, sim.cell_count, metric.weight_b)) {
            if (i < slots.size()) {
                slots[i] = rec;
                ++result.resumed;
            }
        }
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!slots[i]) todo.push_back(i);

    std::ofstream log;
    if (opts.checkpoint) {
        if (opts.checkpoint->has_parent_path()) std::filesystem::create_directories(opts.checkpoint->parent_path());
        log.open(*opts.checkpoint, std::ios::app);
        if (!log) throw std::runtime_error("cannot open checkpoint " + opts.checkpoint->string());
    }
    std::mutex log_mutex;
    std::atomic<std::size_t> claimed{0};
    const std::size_t limit = opts.stop_after.value_or(todo.size());

    parallel_for(todo.size(), opts.workers, [&](std::size_t n) {
        if (claimed.fetch_add(1) >= limit) return;
        const std::size_t i = todo[n];
        const auto& p = points[i];
        const double flux = flux_by_alpha.at(p.alpha);
        SweepRecord rec = std::isnan(flux) ? evaluate_point(i, p, -1.0, sim, metric)
                                           : evaluate_point(i, p, flux, sim, metric);
        if (std::isnan(flux)) rec.flux_ext = flux;
        if (log.is_open()) {
            const std::string row = format_sweep_row(rec) + '\n';
            std::lock_guard lock(log_mutex);
            log << row << std::flush;
        }
        slots[i] = std::move(rec);
    });

    for (auto& s : slots) {
        if (!s) {
            result.complete = false;
            continue;
        }
        if (s->failed) ++result.failed;
        result.records.push_back(std::move(*s));
    }
    result.computed = std::min(limit, todo.size());
    return result;
}

// ---------------------------------------------------------------------------
// Analysis

/// Records with total metric below the cutoff, order preserved. An infinite
/// cutoff keeps everything, including failed records.
inline std::vector<SweepRecord> filter_by_cutoff(const std::vector<SweepRecord>& records, double cutoff) {
    if (std::isinf(cutoff) && cutoff > 0) return records;
    std::vector<SweepRecord> out;
    for (const auto& r : records)
        if (r.metric.total < cutoff) out.push_back(r);
    return out;
}

struct CorrelationResult {
    std::array<std::array<double, design_dims>, design_dims> matrix{};
    std::array<bool, design_dims> constant{}; ///< columns with zero variance
};

/// Pearson correlation of the design parameters. Constant columns correlate
/// 0 with everything else; the diagonal is 1.
inline CorrelationResult correlation_matrix(const std::vector<SweepRecord>& subset) {
    if (subset.empty()) throw std::invalid_argument("correlation needs a nonempty subset");
    const double n = static_cast<double>(subset.size());
    std::array<double, design_dims> mean{};
    for (const auto& r : subset) {
        const auto v = design_vector(r.params);
        for (std::size_t d = 0; d < design_dims; ++d) mean[d] += v[d];
    }
    for (auto& m : mean) m /= n;
    std::array<std::array<double, design_dims>, design_dims> cov{};
    for (const auto& r : subset) {
        const auto v = design_vector(r.params);
        for (std::size_t a = 0; a < design_dims; ++a)
            for (std::size_t b = a; b < design_dims; ++b) cov[a][b] += (v[a] - mean[a]) * (v[b] - mean[b]);
    }
    CorrelationResult out;
    for (std::size_t a = 0; a < design_dims; ++a) {
        const double scale = std::max(1.0, std::abs(mean[a]));
        out.constant[a] = cov[a][a] <= 1e-24 * scale * scale * n;
    }
    for (std::size_t a = 0; a < design_dims; ++a) {
        out.matrix[a][a] = 1.0;
        for (std::size_t b = a + 1; b < design_dims; ++b) {
            double r = 0.0;
            if (!out.constant[a] && !out.constant[b])
                r = std::clamp(cov[a][b] / std::sqrt(cov[a][a] * cov[b][b]), -1.0, 1.0);
            out.matrix[a][b] = out.matrix[b][a] = r;
        }
    }
    return out;
}

struct HistogramResult {
    /// Per dimension: grid value -> sum of 1 / M over records holding it.
    std::array<std::map<double, double>, design_dims> weights;
    std::size_t excluded = 0; ///< records with nonpositive or non-finite metric
};

inline HistogramResult weighted_histograms(const std::vector<SweepRecord>& subset) {
    if (subset.empty()) throw std::invalid_argument("histograms need a nonempty subset");
    HistogramResult out;
    for (const auto& r : subset) {
        const double m = r.metric.total;
        if (!(m > 0.0) || !std::isfinite(m)) {
            ++out.excluded;
            continue;
        }
        const auto v = design_vector(r.params);
        for (std::size_t d = 0; d < design_dims; ++d) out.weights[d][v[d]] += 1.0 / m;
    }
    return out;
}

struct AnalysisReport {
    CorrelationResult correlation;
    HistogramResult histograms;
    std::size_t filtered_count = 0;
    double cutoff = std::numeric_limits<double>::infinity();
};

inline AnalysisReport analyze(const std::vector<SweepRecord>& records, std::optional<double> cutoff) {
    AnalysisReport rep;
    rep.cutoff = cutoff.value_or(std::numeric_limits<double>::infinity());
    std::vector<SweepRecord> subset;
    for (const auto& r : filter_by_cutoff(records, rep.cutoff))
        if (!r.failed) subset.push_back(r);
    rep.filtered_count = subset.size();
    if (subset.empty()) throw std::runtime_error("no successful records below the metric cutoff");
    rep.correlation = correlation_matrix(subset);
    rep.histograms = weighted_histograms(subset);
    return rep;
}

inline nlohmann::json to_json(const AnalysisReport& rep) {
    using nlohmann::json;
    json j;
    j["parameters"] = design_dim_names();
    json corr = json::array();
    for (const auto& row : rep.correlation.matrix) corr.push_back(row);
    j["correlation"] = corr;
    j["constant_columns"] = rep.correlation.constant;
    json hist = json::object();
    for (std::size_t d = 0; d < design_dims; ++d) {
        json rows = json::array();
        for (const auto& [value, w] : rep.histograms.weights[d]) rows.push_back({{"value", value}, {"weight", w}});
        hist[design_dim_names()[d]] = rows;
    }
    j["histograms"] = hist;
    j["excluded_count"] = rep.histograms.excluded;
    j["filtered_count"] = rep.filtered_count;
    if (std::isfinite(rep.cutoff))
        j["cutoff"] = rep.cutoff;
    else
        j["cutoff"] = nullptr;
    return j;
}

} // namespace jtwpa
