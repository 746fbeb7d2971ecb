#include "jtwpa/sweep.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace jtwpa;
namespace fs = std::filesystem;

namespace {

ParameterGrid small_grid() {
    auto g = ParameterGrid::table_one();
    g.dims[0] = GridDimension::with_count("A_J", 0.3, 0.6, 2);
    g.dims[1] = GridDimension::with_count("rho_Ic", 0.8, 1.2, 2);
    g.dims[3] = GridDimension::with_count("t", 6, 12, 2);
    g.dims[4] = {"L_load", 1.5, 1.5, 1};
    g.dims[5] = {"C_load", 1.0, 1.0, 1};
    return g; // 2 * 2 * 2 * 2 * 1 * 1 * 2 = 32
}

SimulationConfig quick_sim() {
    SimulationConfig s;
    s.cell_count = 36;
    s.grid = {0.0, 24e9, 100e6};
    return s;
}

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("jtwpa_sweep_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

SweepRecord with_params(std::array<double, design_dims> v, double metric) {
    SweepRecord r;
    r.params.junction_area_um2 = v[0];
    r.params.current_density_uA_per_um2 = v[1];
    r.params.alpha = v[2];
    r.params.dielectric_thickness_nm = v[3];
    r.params.inductance_load_ratio = v[4];
    r.params.capacitance_load_ratio = v[5];
    r.params.pitch = static_cast<int>(v[6]);
    r.metric.total = metric;
    return r;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

} // namespace

TEST(Grid, TableOneSize) {
    const auto g = ParameterGrid::table_one();
    const std::array<std::size_t, design_dims> n{11, 11, 2, 20, 2, 2, 2};
    for (std::size_t d = 0; d < design_dims; ++d) EXPECT_EQ(g.dims[d].count(), n[d]) << g.dims[d].name;
    EXPECT_EQ(g.size(), 38720u);
    EXPECT_EQ(enumerate_grid(g, 360).size(), 38720u);
}

TEST(Grid, LexicographicOrderFirstDimensionSlowest) {
    ParameterGrid g = small_grid();
    const auto pts = enumerate_grid(g, 36);
    ASSERT_EQ(pts.size(), 32u);
    EXPECT_EQ(pts[0].pitch, 2);
    EXPECT_EQ(pts[1].pitch, 3);
    EXPECT_EQ(pts[1].dielectric_thickness_nm, 6.0);
    EXPECT_EQ(pts[2].dielectric_thickness_nm, 12.0);
    EXPECT_EQ(pts[15].junction_area_um2, 0.3);
    EXPECT_EQ(pts[16].junction_area_um2, 0.6);
    EXPECT_NEAR(pts[31].alpha, 0.25, 1e-15);
    for (const auto& p : pts) EXPECT_EQ(p.cell_count, 36);
}

TEST(Grid, ExtendedForSecondHarmonic) {
    const auto g = extend_for_metric({0, 20e9, 10e6}, 11.5e9);
    EXPECT_EQ(g.stop, 24e9);
    EXPECT_EQ(g.size(), 2401u);
    EXPECT_EQ(extend_for_metric({0, 30e9, 10e6}, 11.5e9).stop, 30e9);
}

TEST(Grid, RejectsBadDimension) {
    GridDimension d{"x", 2.0, 1.0, 0.5};
    EXPECT_THROW(d.count(), ConfigError);
    d = {"x", 1.0, 2.0, 0.0};
    EXPECT_THROW(d.count(), ConfigError);
}

TEST(Sweep, SinglePointMatchesDirectCall) {
    auto g = small_grid();
    for (auto& d : g.dims) d.max = d.min;
    const auto sim = quick_sim();
    const MetricConfig mc{MatchingMode::direct};
    const auto res = run_sweep(g, sim, mc, {.workers = 1});
    ASSERT_EQ(res.records.size(), 1u);
    const auto p = enumerate_grid(g, sim.cell_count)[0];
    const double flux = kerr_free_flux(p.alpha, p.junction());
    const auto resp = simulate_linear(p, flux, sim.grid, sim.cell, sim.ref_impedance);
    const auto m = evaluate_metric(resp, dispersion(resp, p.cell_count), mc);
    EXPECT_EQ(res.records[0].metric.total, m.total);
    EXPECT_EQ(res.records[0].flux_ext, flux);
    EXPECT_FALSE(res.records[0].failed);
}

TEST(Sweep, WorkerCountDoesNotChangeResults) {
    const auto sim = quick_sim();
    const MetricConfig mc{MatchingMode::direct};
    const auto a = run_sweep(small_grid(), sim, mc, {.workers = 1});
    const auto b = run_sweep(small_grid(), sim, mc, {.workers = 4});
    ASSERT_EQ(a.records.size(), 32u);
    ASSERT_EQ(b.records.size(), 32u);
    for (std::size_t i = 0; i < 32; ++i) {
        EXPECT_EQ(a.records[i].index, i);
        EXPECT_TRUE(same_bits(a.records[i].metric.total, b.records[i].metric.total));
    }
}

TEST(Sweep, FailedPointsAreFlaggedNotDropped) {
    auto sim = quick_sim();
    sim.grid = {0.0, 20e9, 100e6}; // does not reach 2 f_p
    const auto res = run_sweep(small_grid(), sim, MetricConfig{MatchingMode::direct}, {.workers = 2});
    EXPECT_EQ(res.records.size(), 32u);
    EXPECT_EQ(res.failed, 32u);
    for (const auto& r : res.records) {
        EXPECT_TRUE(r.failed);
        EXPECT_TRUE(std::isinf(r.metric.total));
        EXPECT_TRUE(std::isnan(r.metric.matching_term));
    }
}

TEST(Sweep, ResumeReproducesUninterruptedRun) {
    const auto sim = quick_sim();
    const MetricConfig mc{MatchingMode::direct};
    const auto log = temp_path("resume.csv");
    fs::remove(log);

    const auto partial = run_sweep(small_grid(), sim, mc, {.workers = 2, .checkpoint = log, .stop_after = 11});
    EXPECT_FALSE(partial.complete);
    EXPECT_EQ(partial.computed, 11u);

    // Simulate a crash mid-write.
    {
        std::ofstream out(log, std::ios::app);
        out << "31,0.6,1.2,0.25";
    }
    const auto resumed = run_sweep(small_grid(), sim, mc, {.workers = 3, .checkpoint = log});
    EXPECT_TRUE(resumed.complete);
    EXPECT_EQ(resumed.resumed, 11u);
    EXPECT_EQ(resumed.computed, 21u);

    const auto fresh = run_sweep(small_grid(), sim, mc, {.workers = 1});
    ASSERT_EQ(resumed.records.size(), fresh.records.size());
    EXPECT_EQ(format_sweep_csv(resumed.records), format_sweep_csv(fresh.records));
    fs::remove(log);
}

TEST(Csv, HeaderAndRoundTrip) {
    EXPECT_STREQ(sweep_csv_header(),
                 "index,A_J_um2,rho_Ic_uA_um2,alpha,t_nm,L_load,C_load,pitch,flux_ext_phi0,matching_term,"
                 "phase_term,harmonic_term,metric_total,failed,wall_time_s");
    auto r = with_params({0.45, 1.1, 0.23, 7, 2, 1.5, 3}, 0.1 + 0.2);
    r.index = 17;
    r.flux_ext = 0.38447123456789;
    r.metric.matching_term = 1.0 / 3.0;
    r.metric.phase_term = 2.0 / 7.0;
    r.metric.harmonic_term = 1e-300;
    const auto back = parse_sweep_row(format_sweep_row(r), 360, 2.0);
    ASSERT_TRUE(back);
    EXPECT_EQ(back->index, 17u);
    EXPECT_EQ(back->params.pitch, 3);
    EXPECT_TRUE(same_bits(back->metric.total, r.metric.total));
    EXPECT_TRUE(same_bits(back->metric.matching_term, r.metric.matching_term));
    EXPECT_TRUE(same_bits(back->flux_ext, r.flux_ext));
    EXPECT_EQ(back->metric.delta_k, r.metric.phase_term / 2.0);
    EXPECT_FALSE(parse_sweep_row("1,2,3", 360));
    EXPECT_FALSE(parse_sweep_row(format_sweep_row(r) + "x", 360));
}

TEST(Csv, FailedRowSurvivesRoundTrip) {
    auto r = with_params({0.45, 1.1, 0.23, 7, 2, 1.5, 3}, std::numeric_limits<double>::infinity());
    r.failed = true;
    r.metric.matching_term = std::numeric_limits<double>::quiet_NaN();
    const auto back = parse_sweep_row(format_sweep_row(r), 360);
    ASSERT_TRUE(back);
    EXPECT_TRUE(back->failed);
    EXPECT_TRUE(std::isinf(back->metric.total));
    EXPECT_TRUE(std::isnan(back->metric.matching_term));
}

TEST(Analysis, CutoffFilterKeepsOrder) {
    std::vector<SweepRecord> rs;
    for (double m : {3.0, 1.0, 5.0, 2.0}) rs.push_back(with_params({0.1, 0.5, 0.23, 1, 1.5, 1, 2}, m));
    const auto f = filter_by_cutoff(rs, 3.0);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f[0].metric.total, 1.0);
    EXPECT_EQ(f[1].metric.total, 2.0);
    EXPECT_EQ(filter_by_cutoff(rs, std::numeric_limits<double>::infinity()).size(), 4u);
    EXPECT_TRUE(filter_by_cutoff(rs, 0.5).empty());
}

TEST(Analysis, CorrelationCases) {
    std::vector<SweepRecord> rs;
    for (int i = 0; i < 5; ++i) rs.push_back(with_params({0.1 * i, 0.2 * i, 0.23, -3.0 * i, 1.5, 1, 2}, 1));
    const auto c = correlation_matrix(rs);
    EXPECT_NEAR(c.matrix[0][1], 1.0, 1e-12);
    EXPECT_NEAR(c.matrix[0][3], -1.0, 1e-12);
    EXPECT_TRUE(c.constant[2]);
    EXPECT_EQ(c.matrix[0][2], 0.0);
    EXPECT_EQ(c.matrix[2][2], 1.0);
}

TEST(Analysis, CorrelationMatchesPearsonOracle) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SweepRecord> rs;
    for (int i = 0; i < 200; ++i) {
        const double a = u(rng), b = u(rng);
        rs.push_back(with_params({a, a + 0.5 * b, u(rng), 10 * b, u(rng), u(rng), 2.0 + (i % 2)}, 1));
    }
    const auto c = correlation_matrix(rs);
    auto pearson = [&](std::size_t x, std::size_t y) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        const double n = static_cast<double>(rs.size());
        for (const auto& r : rs) {
            const auto v = design_vector(r.params);
            sx += v[x];
            sy += v[y];
            sxx += v[x] * v[x];
            syy += v[y] * v[y];
            sxy += v[x] * v[y];
        }
        return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    };
    for (std::size_t a = 0; a < design_dims; ++a) {
        EXPECT_NEAR(c.matrix[a][a], 1.0, 1e-12);
        for (std::size_t b = 0; b < design_dims; ++b) {
            EXPECT_EQ(c.matrix[a][b], c.matrix[b][a]);
            EXPECT_LE(std::abs(c.matrix[a][b]), 1.0);
            if (a != b) EXPECT_NEAR(c.matrix[a][b], pearson(a, b), 1e-10);
        }
    }
}

TEST(Analysis, HistogramWeights) {
    const auto one = weighted_histograms({with_params({0.1, 0.5, 0.23, 1, 1.5, 1, 2}, 2.0)});
    EXPECT_EQ(one.weights[0].at(0.1), 0.5);
    EXPECT_EQ(one.weights[6].at(2.0), 0.5);
    const auto two = weighted_histograms(
        {with_params({0.1, 0.5, 0.23, 1, 1.5, 1, 2}, 1.0), with_params({0.1, 0.5, 0.23, 1, 1.5, 1, 2}, 1.0)});
    EXPECT_EQ(two.weights[3].at(1.0), 2.0);
    const auto bad = weighted_histograms(
        {with_params({0.1, 0.5, 0.23, 1, 1.5, 1, 2}, -1.0), with_params({0.2, 0.5, 0.23, 1, 1.5, 1, 2}, 4.0)});
    EXPECT_EQ(bad.excluded, 1u);
    EXPECT_EQ(bad.weights[0].count(0.1), 0u);
    EXPECT_EQ(bad.weights[0].at(0.2), 0.25);
}

TEST(Analysis, HistogramMatchesBruteForce) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(0, 3);
    std::uniform_real_distribution<double> metric(0.1, 10.0);
    std::vector<SweepRecord> rs;
    for (int i = 0; i < 300; ++i)
        rs.push_back(with_params({0.1 * pick(rng), 0.5, 0.23, 1.0 + pick(rng), 1.5, 1, 2.0 + pick(rng) % 2},
                                 metric(rng)));
    const auto h = weighted_histograms(rs);
    for (int v = 0; v < 4; ++v) {
        double sum = 0;
        for (const auto& r : rs)
            if (r.params.dielectric_thickness_nm == 1.0 + v) sum += 1.0 / r.metric.total;
        EXPECT_NEAR(h.weights[3].at(1.0 + v), sum, 1e-12);
    }
}

TEST(Analysis, ReportSkipsFailedAndSerializes) {
    std::vector<SweepRecord> rs;
    for (int i = 0; i < 4; ++i) rs.push_back(with_params({0.1 * (i + 1), 0.5, 0.23, 1.0 + i, 1.5, 1, 2}, i + 1.0));
    rs.back().failed = true;
    rs.back().metric.total = std::numeric_limits<double>::infinity();
    const auto rep = analyze(rs, 3.5);
    EXPECT_EQ(rep.filtered_count, 3u);
    const auto j = to_json(rep);
    EXPECT_EQ(j["filtered_count"], 3);
    EXPECT_EQ(j["parameters"].size(), design_dims);
    EXPECT_THROW(analyze(rs, 0.5), std::runtime_error);
}
