#pragma once

// The three-stage workflow on a run directory:
//   stage1/  grid sweep and its analysis
//   stage2/  Bayesian refinement, p*
//   stage3/  pump sweep at p*, q*
//   report/  plot-ready tables
// Every command takes the run-directory lock and records its inputs and
// outputs in manifest.json.

#include "jtwpa/bayesopt.hpp"
#include "jtwpa/cme.hpp"
#include "jtwpa/config.hpp"
#include "jtwpa/io.hpp"
#include "jtwpa/manifest.hpp"
#include "jtwpa/metric.hpp"
#include "jtwpa/network.hpp"
#include "jtwpa/snail.hpp"
#include "jtwpa/sweep.hpp"
#include "jtwpa/touchstone.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace jtwpa {

namespace fs = std::filesystem;
using nlohmann::json;

struct Overrides {
    std::optional<unsigned> workers;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> budget;
};

struct RunContext {
    RunConfig cfg;
    fs::path config_path;
    std::string config_bytes;
    std::string config_hash;

    const fs::path& dir() const { return cfg.output_dir; }
};

inline RunContext open_config(const fs::path& config_path, const Overrides& o = {}) {
    RunContext ctx;
    ctx.config_path = config_path;
    try {
        ctx.config_bytes = read_file(config_path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    ctx.config_hash = sha256_hex(ctx.config_bytes);
    ctx.cfg = parse_config(ctx.config_bytes, config_path.parent_path());
    if (o.workers) ctx.cfg.workers = *o.workers;
    if (o.seed) ctx.cfg.optimize.seed = *o.seed;
    if (o.budget) ctx.cfg.optimize.budget = *o.budget;
    return ctx;
}

namespace detail {

inline const std::array<const char*, 4> stage_names{"stage1", "stage2", "stage3", "report"};

inline fs::path checkpoint_path(const fs::path& dir) { return dir / "stage1" / "sweep.checkpoint.csv"; }

/// Binds a run directory to the configuration. An existing directory created
/// from different config bytes is refused unless `force`, which wipes it.
inline void bind_config(Manifest& m, const RunContext& ctx, bool force) {
    const auto recorded = m.config_hash();
    if (m.existed() && recorded && *recorded != ctx.config_hash) {
        if (!force)
            throw ConfigError("run directory " + ctx.dir().string() + " was created from a different config (sha256 " +
                              *recorded + ", now " + ctx.config_hash +
                              "); use `pipeline --force` or another output_dir");
        for (const char* s : stage_names) m.discard_stage(s);
        std::error_code ec;
        fs::remove(checkpoint_path(ctx.dir()), ec);
        m.reset();
    }
    write_file_atomic(ctx.dir() / "config.json", ctx.config_bytes);
    m.set_config(ctx.config_hash, "config.json");
    m.save();
}

/// Path of `p` as recorded in the manifest: relative when inside the run dir.
inline std::string manifest_path(const fs::path& dir, const fs::path& p) {
    const auto rel = fs::weakly_canonical(p).lexically_relative(fs::weakly_canonical(dir));
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return fs::absolute(p).string();
}

template <typename Fn>
auto run_stage(Manifest& m, const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        m.fail_stage(stage, e.what());
        throw;
    }
}

inline json device_json(const DeviceParams& p) {
    return {{"A_J_um2", p.junction_area_um2},
            {"rho_Ic_uA_um2", p.current_density_uA_per_um2},
            {"alpha", p.alpha},
            {"t_nm", p.dielectric_thickness_nm},
            {"L_load", p.inductance_load_ratio},
            {"C_load", p.capacitance_load_ratio},
            {"pitch", p.pitch},
            {"cell_count", p.cell_count}};
}

inline DeviceParams device_from_json(const json& j) {
    DeviceParams p;
    p.junction_area_um2 = j.at("A_J_um2").get<double>();
    p.current_density_uA_per_um2 = j.at("rho_Ic_uA_um2").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.dielectric_thickness_nm = j.at("t_nm").get<double>();
    p.inductance_load_ratio = j.at("L_load").get<double>();
    p.capacitance_load_ratio = j.at("C_load").get<double>();
    p.pitch = j.at("pitch").get<int>();
    p.cell_count = j.at("cell_count").get<int>();
    p.validate();
    p.junction().validate();
    return p;
}

inline double snap(const GridDimension& d, double v) {
    double best = d.value(0);
    for (double x : d.values())
        if (std::abs(x - v) < std::abs(best - v)) best = x;
    return best;
}

/// Nearest point of the fabrication grid, dimension by dimension.
inline DeviceParams nearest_table_point(const DeviceParams& p) {
    const auto g = ParameterGrid::table_one();
    DeviceParams q = p;
    q.junction_area_um2 = snap(g.dims[0], p.junction_area_um2);
    q.current_density_uA_per_um2 = snap(g.dims[1], p.current_density_uA_per_um2);
    q.alpha = snap(g.dims[2], p.alpha);
    q.dielectric_thickness_nm = snap(g.dims[3], p.dielectric_thickness_nm);
    q.inductance_load_ratio = snap(g.dims[4], p.inductance_load_ratio);
    q.capacitance_load_ratio = snap(g.dims[5], p.capacitance_load_ratio);
    q.pitch = static_cast<int>(std::lround(snap(g.dims[6], p.pitch)));
    return q;
}

/// A_J, rho_Ic and t are searched continuously over their grid range; the
/// other parameters (and any degenerate range) are enumerated.
struct DesignSpace {
    SearchSpace space;
    std::array<int, design_dims> continuous_slot{};
    std::array<int, design_dims> enumerated_slot{};

    explicit DesignSpace(const ParameterGrid& g) {
        continuous_slot.fill(-1);
        enumerated_slot.fill(-1);
        for (std::size_t d = 0; d < design_dims; ++d) {
            const auto& dim = g.dims[d];
            const bool continuous = (d == 0 || d == 1 || d == 3) && dim.min < dim.max;
            if (continuous) {
                continuous_slot[d] = static_cast<int>(space.continuous.size());
                space.continuous.push_back({dim.name, dim.min, dim.max});
            } else {
                enumerated_slot[d] = static_cast<int>(space.enumerated.size());
                space.enumerated.push_back({dim.name, dim.values()});
            }
        }
    }

    double get(const SpacePoint& sp, std::size_t d) const {
        return continuous_slot[d] >= 0 ? sp.continuous[static_cast<std::size_t>(continuous_slot[d])]
                                       : sp.enumerated[static_cast<std::size_t>(enumerated_slot[d])];
    }

    DeviceParams device(const SpacePoint& sp, int cell_count) const {
        DeviceParams p;
        p.junction_area_um2 = get(sp, 0);
        p.current_density_uA_per_um2 = get(sp, 1);
        p.alpha = get(sp, 2);
        p.dielectric_thickness_nm = get(sp, 3);
        p.inductance_load_ratio = get(sp, 4);
        p.capacitance_load_ratio = get(sp, 5);
        p.pitch = static_cast<int>(std::lround(get(sp, 6)));
        p.cell_count = cell_count;
        return p;
    }

    SpacePoint point(const DeviceParams& p) const {
        SpacePoint sp;
        sp.continuous.resize(space.continuous.size());
        sp.enumerated.resize(space.enumerated.size());
        const auto v = design_vector(p);
        for (std::size_t d = 0; d < design_dims; ++d) {
            if (continuous_slot[d] >= 0)
                sp.continuous[static_cast<std::size_t>(continuous_slot[d])] = v[d];
            else
                sp.enumerated[static_cast<std::size_t>(enumerated_slot[d])] = v[d];
        }
        return sp;
    }
};

inline json metric_json(const MetricBreakdown& m, MatchingMode mode) {
    return {{"matching_mode", to_string(mode)},
            {"matching_term", m.matching_term},
            {"phase_term", m.phase_term},
            {"harmonic_term", m.harmonic_term},
            {"total", m.total},
            {"delta_k_rad_per_cell", m.delta_k},
            {"band_mean_s11", {m.band_mean_s11.real(), m.band_mean_s11.imag()}},
            {"matching_capped", m.matching_capped}};
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

struct PStar {
    DeviceParams device;
    double flux = 0.0;
};

inline PStar read_pstar(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("p* file " + path.string() + " does not exist");
    try {
        const auto j = read_json(path);
        PStar p;
        p.device = device_from_json(j.at("device"));
        p.flux = j.at("flux_phi0").get<double>();
        return p;
    } catch (const ConfigError& e) {
        throw ConfigError("invalid p* file " + path.string() + ": " + e.what());
    } catch (const std::exception& e) {
        throw ConfigError("invalid p* file " + path.string() + ": " + e.what());
    }
}

inline std::string join_row(std::initializer_list<double> values) {
    std::string s;
    for (double v : values) {
        if (!s.empty()) s += ',';
        s += format_double(v);
    }
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Stage 1

struct Stage1Summary {
    std::size_t points = 0;
    std::size_t failed = 0;
    std::size_t resumed = 0;
    bool analysis_ok = true;
};

inline Stage1Summary run_stage1(const RunContext& ctx, Manifest& m, std::ostream& log = std::cerr) {
    const auto& cfg = ctx.cfg;
    m.begin_stage("stage1", {"config.json"});
    return detail::run_stage(m, "stage1", [&] {
        const fs::path out = ctx.dir() / "stage1";
        fs::create_directories(out);
        const auto checkpoint = detail::checkpoint_path(ctx.dir());
        const auto sweep = run_sweep(cfg.grid, cfg.simulation(), cfg.metric, {cfg.workers, checkpoint, std::nullopt});

        Stage1Summary s;
        s.points = sweep.records.size();
        s.failed = sweep.failed;
        s.resumed = sweep.resumed;
        write_file_atomic(out / "sweep.csv", format_sweep_csv(sweep.records));
        json analysis;
        try {
            analysis = to_json(analyze(sweep.records, cfg.metric.cutoff));
        } catch (const std::exception& e) {
            s.analysis_ok = false;
            analysis = {{"error", e.what()}};
            log << "warning: stage 1 analysis failed: " << e.what() << '\n';
        }
        detail::write_json(out / "analysis.json", analysis);
        fs::remove(checkpoint);
        if (s.failed > 0) log << "warning: " << s.failed << " of " << s.points << " grid points failed\n";
        m.finish_stage("stage1", {"stage1/sweep.csv", "stage1/analysis.json"});
        return s;
    });
}

// ---------------------------------------------------------------------------
// Stage 2

inline const char* trace_csv_header() {
    return "combo_id,iteration,A_J_um2,rho_Ic_uA_um2,t_nm,alpha,L_load,C_load,pitch,metric_total,failed,is_incumbent";
}

inline json stage2_settings(const RunConfig& cfg, bool cold_start) {
    return {{"seed", cfg.optimize.seed},
            {"budget", cfg.optimize.budget},
            {"log_transform", cfg.optimize.log_transform},
            {"cold_start", cold_start}};
}

struct Stage2Summary {
    DeviceParams best;
    double flux = 0.0;
    MetricBreakdown metric;
    std::size_t new_evaluations = 0;
};

/// Bayesian refinement. `stage1_csv` warm-starts every combination; without
/// it `cold_start` must be set.
inline Stage2Summary run_stage2(const RunContext& ctx, Manifest& m, const std::optional<fs::path>& stage1_csv,
                                bool cold_start, std::ostream& log = std::cerr) {
    const auto& cfg = ctx.cfg;
    if (!stage1_csv && !cold_start) throw ConfigError("optimize needs --stage1 <csv> or --cold-start");
    if (stage1_csv && !fs::exists(*stage1_csv))
        throw ConfigError("stage-1 CSV " + stage1_csv->string() + " does not exist (use --cold-start to run without it)");

    std::vector<std::string> inputs{"config.json"};
    if (stage1_csv) inputs.push_back(detail::manifest_path(ctx.dir(), *stage1_csv));
    m.set_seed("optimize", cfg.optimize.seed);
    m.begin_stage("stage2", inputs, stage2_settings(cfg, cold_start));
    return detail::run_stage(m, "stage2", [&] {
        const int n = cfg.sim.cell_count;
        const detail::DesignSpace design(cfg.grid);
        const auto sim = cfg.simulation();

        std::map<double, double> flux_by_alpha;
        for (double a : cfg.grid.dims[2].values()) {
            DeviceParams probe;
            probe.alpha = a;
            probe.junction_area_um2 = 1.0;
            probe.current_density_uA_per_um2 = 1.0;
            try {
                flux_by_alpha[a] = bias_flux(probe, sim);
            } catch (const std::exception& e) {
                log << "warning: no bias flux for alpha=" << a << ": " << e.what() << '\n';
                flux_by_alpha[a] = std::numeric_limits<double>::quiet_NaN();
            }
        }
        auto flux_of = [&](double alpha) {
            const auto it = flux_by_alpha.find(alpha);
            return it == flux_by_alpha.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
        };

        std::vector<std::pair<SpacePoint, double>> warm;
        double best_stage1 = std::numeric_limits<double>::infinity();
        if (stage1_csv) {
            for (const auto& r : read_sweep_csv(*stage1_csv, n, cfg.metric.weight_b)) {
                if (r.params.pitch <= 0 || n % r.params.pitch != 0) continue;
                const double metric = r.failed ? std::numeric_limits<double>::infinity() : r.metric.total;
                warm.emplace_back(design.point(r.params), metric);
                if (!r.failed) best_stage1 = std::min(best_stage1, r.metric.total);
            }
        }

        const Objective objective = [&](const SpacePoint& sp) {
            const DeviceParams p = design.device(sp, n);
            const double flux = flux_of(p.alpha);
            if (!std::isfinite(flux)) return std::numeric_limits<double>::infinity();
            return evaluate_point(0, p, flux, sim, cfg.metric).metric.total;
        };

        BoOptions bo;
        bo.budget = cfg.optimize.budget;
        bo.seed = cfg.optimize.seed;
        bo.log_transform = cfg.optimize.log_transform;
        bo.workers = cfg.workers;
        const auto result = optimize_metric(design.space, objective, bo, warm);

        Stage2Summary s;
        s.best = design.device(result.best, n);
        s.flux = flux_of(s.best.alpha);
        s.metric = evaluate_point(0, s.best, s.flux, sim, cfg.metric).metric;
        s.new_evaluations = result.new_evaluations;

        const fs::path out = ctx.dir() / "stage2";
        fs::create_directories(out);
        std::string trace = trace_csv_header();
        trace += '\n';
        for (const auto& e : result.history) {
            const auto p = design.device(e.point, n);
            trace += std::to_string(e.combo) + ',' + std::to_string(e.iteration) + ',' +
                     detail::join_row({p.junction_area_um2, p.current_density_uA_per_um2, p.dielectric_thickness_nm,
                                       p.alpha, p.inductance_load_ratio, p.capacitance_load_ratio}) +
                     ',' + std::to_string(p.pitch) + ',' + format_double(e.metric) + (e.failed ? ",1" : ",0") +
                     (e.incumbent ? ",1\n" : ",0\n");
        }
        write_file_atomic(out / "trace.csv", trace);

        json pstar;
        pstar["device"] = detail::device_json(s.best);
        pstar["flux_phi0"] = s.flux;
        pstar["metric"] = detail::metric_json(s.metric, cfg.metric.matching_mode);
        pstar["nearest_table_point"] = detail::device_json(detail::nearest_table_point(s.best));
        pstar["best_stage1_metric"] = std::isfinite(best_stage1) ? json(best_stage1) : json(nullptr);
        pstar["optimizer"] = {{"seed", cfg.optimize.seed},
                              {"budget_per_combination", cfg.optimize.budget},
                              {"combinations", design.space.combo_count()},
                              {"new_evaluations", result.new_evaluations},
                              {"warm_start_records", warm.size()},
                              {"log_transform", cfg.optimize.log_transform}};
        detail::write_json(out / "pstar.json", pstar);

        const auto failed = std::count_if(result.history.begin(), result.history.end(),
                                          [](const Evaluation& e) { return e.failed && e.iteration > 0; });
        if (failed > 0) log << "warning: " << failed << " optimizer evaluations failed\n";
        m.finish_stage("stage2", {"stage2/pstar.json", "stage2/trace.csv"});
        return s;
    });
}

// ---------------------------------------------------------------------------
// Stage 3

inline const char* gain_csv_header() { return "f_signal_Hz,gain_dB,pump_depletion"; }

inline std::string format_gain_csv(const GainProfile& g) {
    std::string s = gain_csv_header();
    s += '\n';
    for (std::size_t i = 0; i < g.freqs.size(); ++i) s += detail::join_row({g.freqs[i], g.gain_db[i], g.depletion[i]}) + '\n';
    return s;
}

inline std::string gain_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "gain_%02zu.csv", i);
    return buf;
}

/// Flux at which the pump sweep runs: the drive setting, else the p* bias.
inline double drive_flux(const RunConfig& cfg, double pstar_flux) {
    if (cfg.drive.flux_phi0) return *cfg.drive.flux_phi0;
    if (cfg.drive.flux_bias_uA) return *cfg.drive.flux_bias_uA * *cfg.flux_mutual_phi0_per_uA;
    return pstar_flux;
}

struct Stage3Summary {
    WorkingPointResult result;
    double flux = 0.0;
};

inline Stage3Summary run_stage3(const RunContext& ctx, Manifest& m, const fs::path& pstar_path,
                                std::ostream& log = std::cerr) {
    const auto& cfg = ctx.cfg;
    const auto pstar = detail::read_pstar(pstar_path);
    m.begin_stage("stage3", {"config.json", detail::manifest_path(ctx.dir(), pstar_path)});
    return detail::run_stage(m, "stage3", [&] {
        const auto& p = pstar.device;
        Stage3Summary s;
        s.flux = drive_flux(cfg, pstar.flux);
        const auto resp = simulate_linear(p, s.flux, cfg.simulation_grid(), cfg.sim.cell, cfg.sim.ref_impedance);
        const auto disp = dispersion(resp, p.cell_count);
        SnailSpec snail;
        snail.small_junction = p.junction();
        snail.alpha = p.alpha;
        snail.flux_ext = s.flux;
        const auto expansion = expand_potential(snail);

        DriveSpec base;
        base.pump_freq = cfg.metric.pump_freq;
        base.flux = s.flux;
        base.band_lo = cfg.drive.band_lo;
        base.band_hi = cfg.drive.band_hi;
        base.signal_step = cfg.drive.signal_step;
        s.result = optimize_working_point(disp, expansion, p.cell_count, critical_current(p.junction()), base,
                                          cfg.drive.pump_amplitudes_uA, cfg.workers);

        const fs::path out = ctx.dir() / "stage3";
        fs::create_directories(out);
        std::vector<std::string> outputs;
        std::string table = "pump_amplitude_uA,xi,flux_phi0,performance_dB,failed\n";
        json profiles = json::array();
        for (std::size_t i = 0; i < s.result.table.size(); ++i) {
            const auto& w = s.result.table[i];
            table += detail::join_row({w.pump_amplitude_uA, w.xi, w.flux, w.performance_db}) +
                     (w.failed ? ",1\n" : ",0\n");
            if (w.failed) {
                log << "warning: working point " << w.pump_amplitude_uA << " uA failed: " << w.error << '\n';
                continue;
            }
            const auto name = gain_file_name(i);
            write_file_atomic(out / name, format_gain_csv(s.result.profiles[i]));
            outputs.push_back("stage3/" + name);
            profiles.push_back({{"pump_amplitude_uA", w.pump_amplitude_uA}, {"file", "stage3/" + name}});
        }
        write_file_atomic(out / "working_point.csv", table);

        const auto& best = s.result.table[s.result.best];
        const auto& prof = s.result.profiles[s.result.best];
        const auto peak = std::max_element(prof.gain_db.begin(), prof.gain_db.end()) - prof.gain_db.begin();
        json q;
        q["pump_amplitude_uA"] = best.pump_amplitude_uA;
        q["xi"] = best.xi;
        q["flux_phi0"] = best.flux;
        if (cfg.drive.flux_bias_uA) q["flux_bias_uA"] = *cfg.drive.flux_bias_uA;
        q["performance_dB"] = best.performance_db;
        q["peak_gain_dB"] = prof.gain_db[static_cast<std::size_t>(peak)];
        q["peak_frequency_Hz"] = prof.freqs[static_cast<std::size_t>(peak)];
        q["gain_file"] = "stage3/" + gain_file_name(s.result.best);
        q["band_GHz"] = {cfg.drive.band_lo / constants::giga, cfg.drive.band_hi / constants::giga};
        q["pump_GHz"] = cfg.metric.pump_freq / constants::giga;
        q["profiles"] = profiles;
        detail::write_json(out / "qstar.json", q);

        outputs.push_back("stage3/working_point.csv");
        outputs.push_back("stage3/qstar.json");
        m.finish_stage("stage3", outputs);
        return s;
    });
}

// ---------------------------------------------------------------------------
// Report

struct DispersionRow {
    double f = 0.0;
    double k = 0.0;
    double reference = 0.0;
};

/// Dispersion table: the simulated grid plus rows at f_p and f_p/2 when the
/// grid misses them. The reference line through k(f_p/2) is k_ref(f) =
/// f k(f_p/2) / (f_p/2), so phase matching means k(f_p) = k_ref(f_p).
inline std::vector<DispersionRow> dispersion_table(const DispersionCurve& disp, double pump_freq) {
    const double half = 0.5 * pump_freq;
    const double slope = wavenumber_at(disp, half) / half;
    std::vector<DispersionRow> rows;
    for (std::size_t i = 0; i < disp.freqs.size(); ++i) rows.push_back({disp.freqs[i], disp.k[i], disp.freqs[i] * slope});
    for (double f : {half, pump_freq}) {
        const bool present = std::binary_search(disp.freqs.begin(), disp.freqs.end(), f);
        if (!present) rows.push_back({f, wavenumber_at(disp, f), f * slope});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.f < b.f; });
    return rows;
}

inline void run_report(const fs::path& run_dir, std::ostream& log = std::cerr) {
    for (const char* f : {"config.json", "stage1/sweep.csv", "stage2/pstar.json", "stage3/qstar.json",
                          "stage3/working_point.csv"})
        if (!fs::exists(run_dir / f)) throw std::runtime_error("report input missing: " + (run_dir / f).string());

    RunLock lock(run_dir);
    Manifest m(run_dir);
    const auto cfg = parse_config(read_file(run_dir / "config.json"), run_dir);
    const auto qstar = detail::read_json(run_dir / "stage3" / "qstar.json");
    std::vector<std::string> inputs{"config.json", "stage1/sweep.csv", "stage2/pstar.json", "stage3/qstar.json",
                                    "stage3/working_point.csv"};
    for (const auto& p : qstar.at("profiles")) inputs.push_back(p.at("file").get<std::string>());
    m.begin_stage("report", inputs);
    detail::run_stage(m, "report", [&] {
        const auto pstar = detail::read_pstar(run_dir / "stage2" / "pstar.json");
        const auto& p = pstar.device;
        const fs::path out = run_dir / "report";
        fs::create_directories(out);

        const auto resp = simulate_linear(p, pstar.flux, cfg.simulation_grid(), cfg.sim.cell, cfg.sim.ref_impedance);
        const auto disp = dispersion(resp, p.cell_count);
        const double fp = cfg.metric.pump_freq;
        std::string table = "f_Hz,k_rad_per_cell,k_reference_rad_per_cell\n";
        for (const auto& r : dispersion_table(disp, fp)) table += detail::join_row({r.f, r.k, r.reference}) + '\n';
        write_file_atomic(out / "dispersion.csv", table);

        const double k_half = wavenumber_at(disp, 0.5 * fp);
        std::string markers = "marker,f_Hz,k_rad_per_cell,k_reference_rad_per_cell\n";
        markers += "half_pump," + detail::join_row({0.5 * fp, k_half, k_half}) + '\n';
        markers += "pump," + detail::join_row({fp, wavenumber_at(disp, fp), 2.0 * k_half}) + '\n';
        for (const auto& [name, f] : {std::pair{"band_lo", cfg.metric.band_lo}, std::pair{"band_hi", cfg.metric.band_hi}})
            markers += std::string(name) + ',' + detail::join_row({f, wavenumber_at(disp, f), f * k_half / (0.5 * fp)}) + '\n';
        write_file_atomic(out / "markers.csv", markers);

        const auto records = read_sweep_csv(run_dir / "stage1" / "sweep.csv", cfg.sim.cell_count, cfg.metric.weight_b);
        const auto& names = design_dim_names();
        std::string corr = "parameter";
        for (const auto& n : names) corr += ',' + n;
        corr += '\n';
        std::string hist = "parameter,value,weight\n";
        try {
            const auto rep = analyze(records, cfg.metric.cutoff);
            for (std::size_t a = 0; a < design_dims; ++a) {
                corr += names[a];
                for (std::size_t b = 0; b < design_dims; ++b) corr += ',' + format_double(rep.correlation.matrix[a][b]);
                corr += '\n';
            }
            for (std::size_t d = 0; d < design_dims; ++d)
                for (const auto& [value, w] : rep.histograms.weights[d])
                    hist += names[d] + ',' + detail::join_row({value, w}) + '\n';
        } catch (const std::exception& e) {
            log << "warning: no correlation or histogram data: " << e.what() << '\n';
        }
        write_file_atomic(out / "correlation.csv", corr);
        write_file_atomic(out / "histograms.csv", hist);

        std::string gain = "pump_amplitude_uA,f_signal_Hz,gain_dB,pump_depletion\n";
        for (const auto& prof : qstar.at("profiles")) {
            const auto amp = format_double(prof.at("pump_amplitude_uA").get<double>());
            std::istringstream in(read_file(run_dir / prof.at("file").get<std::string>()));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty()) gain += amp + ',' + line + '\n';
        }
        write_file_atomic(out / "gain.csv", gain);
        write_file_atomic(out / "working_point.csv", read_file(run_dir / "stage3" / "working_point.csv"));
        export_touchstone(resp, out / "pstar.s2p");

        m.finish_stage("report", {"report/dispersion.csv", "report/markers.csv", "report/correlation.csv",
                                  "report/histograms.csv", "report/gain.csv", "report/working_point.csv",
                                  "report/pstar.s2p"});
        return 0;
    });
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_stage1(const fs::path& config, const Overrides& o = {}, std::ostream& log = std::cerr) {
    const auto ctx = open_config(config, o);
    RunLock lock(ctx.dir());
    Manifest m(ctx.dir());
    detail::bind_config(m, ctx, false);
    run_stage1(ctx, m, log);
}

inline void cmd_optimize(const fs::path& config, const std::optional<fs::path>& stage1_csv, bool cold_start,
                         const Overrides& o = {}, std::ostream& log = std::cerr) {
    const auto ctx = open_config(config, o);
    if (!stage1_csv && !cold_start) throw ConfigError("optimize needs --stage1 <csv> or --cold-start");
    if (stage1_csv && !fs::exists(*stage1_csv))
        throw ConfigError("stage-1 CSV " + stage1_csv->string() + " does not exist (use --cold-start to run without it)");
    RunLock lock(ctx.dir());
    Manifest m(ctx.dir());
    detail::bind_config(m, ctx, false);
    run_stage2(ctx, m, stage1_csv, cold_start, log);
}

inline void cmd_stage3(const fs::path& config, const fs::path& pstar, const Overrides& o = {},
                       std::ostream& log = std::cerr) {
    const auto ctx = open_config(config, o);
    detail::read_pstar(pstar);
    RunLock lock(ctx.dir());
    Manifest m(ctx.dir());
    detail::bind_config(m, ctx, false);
    run_stage3(ctx, m, pstar, log);
}

/// All stages in order. A stage whose recorded inputs and outputs still hash
/// to the manifest values is skipped.
inline void cmd_pipeline(const fs::path& config, bool force, const Overrides& o = {}, std::ostream& log = std::cerr) {
    const auto ctx = open_config(config, o);
    const auto& dir = ctx.dir();
    auto timed = [&log](const char* stage, auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s: done in %.1f s\n", stage,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        log << buf;
    };
    {
        RunLock lock(dir);
        Manifest m(dir);
        detail::bind_config(m, ctx, force);

        if (m.stage_current("stage1")) {
            log << "stage1: up to date\n";
        } else {
            log << "stage1: sweeping " << ctx.cfg.grid.size() << " grid points\n";
            timed("stage1", [&] { run_stage1(ctx, m, log); });
        }
        if (m.stage_current("stage2", stage2_settings(ctx.cfg, false))) {
            log << "stage2: up to date\n";
        } else {
            log << "stage2: optimizing\n";
            timed("stage2", [&] { run_stage2(ctx, m, dir / "stage1" / "sweep.csv", false, log); });
        }
        if (m.stage_current("stage3")) {
            log << "stage3: up to date\n";
        } else {
            log << "stage3: pump sweep\n";
            timed("stage3", [&] { run_stage3(ctx, m, dir / "stage2" / "pstar.json", log); });
        }
        if (m.stage_current("report")) {
            log << "report: up to date\n";
            return;
        }
    }
    log << "report: writing tables\n";
    timed("report", [&] { run_report(dir, log); });
}

inline void cmd_report(const fs::path& run_dir, std::ostream& log = std::cerr) { run_report(run_dir, log); }

} // namespace jtwpa
