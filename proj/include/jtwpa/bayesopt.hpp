#pragma once

// Expected-improvement Bayesian minimization. Low-cardinality dimensions
// are enumerated; each combination runs its own GP loop over the
// continuous dimensions, min-max normalized to [0, 1].

#include "jtwpa/errors.hpp"
#include "jtwpa/gp.hpp"
#include "jtwpa/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace jtwpa {

struct ContinuousDim {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
};

struct EnumeratedDim {
    std::string name;
    std::vector<double> values;
};

struct SearchSpace {
    std::vector<ContinuousDim> continuous;
    std::vector<EnumeratedDim> enumerated;

    void validate() const {
        std::set<std::string> names;
        for (const auto& c : continuous) {
            if (!(c.lo < c.hi)) throw ConfigError("search dimension " + c.name + ": lo must be below hi");
            if (!names.insert(c.name).second) throw ConfigError("duplicate search dimension " + c.name);
        }
        for (const auto& e : enumerated) {
            if (e.values.empty()) throw ConfigError("search dimension " + e.name + " has no values");
            if (!names.insert(e.name).second) throw ConfigError("duplicate search dimension " + e.name);
        }
    }

    std::size_t combo_count() const {
        std::size_t n = 1;
        for (const auto& e : enumerated) n *= e.values.size();
        return n;
    }

    /// Enumerated values of combination `id`; the first dimension varies slowest.
    std::vector<double> combo_values(std::size_t id) const {
        std::vector<double> v(enumerated.size());
        for (std::size_t d = enumerated.size(); d-- > 0;) {
            const auto& vals = enumerated[d].values;
            v[d] = vals[id % vals.size()];
            id /= vals.size();
        }
        return v;
    }

    Eigen::RowVectorXd normalize(const std::vector<double>& raw) const {
        Eigen::RowVectorXd x(static_cast<Eigen::Index>(continuous.size()));
        for (std::size_t i = 0; i < continuous.size(); ++i)
            x(static_cast<Eigen::Index>(i)) =
                std::clamp((raw[i] - continuous[i].lo) / (continuous[i].hi - continuous[i].lo), 0.0, 1.0);
        return x;
    }

    std::vector<double> denormalize(const Eigen::RowVectorXd& x) const {
        std::vector<double> raw(continuous.size());
        for (std::size_t i = 0; i < continuous.size(); ++i) {
            const double t = std::clamp(x(static_cast<Eigen::Index>(i)), 0.0, 1.0);
            raw[i] = continuous[i].lo + t * (continuous[i].hi - continuous[i].lo);
        }
        return raw;
    }
};

struct SpacePoint {
    std::vector<double> continuous;
    std::vector<double> enumerated;
};

struct Evaluation {
    SpacePoint point;
    double metric = 0.0;
    std::size_t combo = 0;
    int iteration = 0; ///< 0 for warm-start records
    bool failed = false;
    bool incumbent = false; ///< best of its combination when recorded
};

struct OptResult {
    SpacePoint best;
    double best_metric = std::numeric_limits<double>::infinity();
    std::vector<Evaluation> history;    ///< combination order, then iteration order
    std::vector<Evaluation> combo_bests;
    std::size_t new_evaluations = 0;
};

struct BoOptions {
    /// New objective evaluations per enumeration combination. Warm-start
    /// records are free; without them the Latin-hypercube seeds count here.
    std::size_t budget = 60;
    std::uint64_t seed = 1;
    bool log_transform = true;
    unsigned workers = 0;
    std::size_t initial_design = 8;
    int candidates = 4096;
    int perturbations = 16;
    double perturbation_sigma = 0.05;
    /// Iterations between full multi-start hyperparameter fits; in between, a
    /// single start refines the previous hyperparameters.
    int full_refit_interval = 10;
};

using Objective = std::function<double(const SpacePoint&)>;

/// Argmax of EI over uniform random candidates plus Gaussian perturbations of
/// the incumbent, all in normalized coordinates.
inline Eigen::RowVectorXd propose_next(const GpModel& model, const Eigen::RowVectorXd& incumbent, double best_y,
                                       std::mt19937_64& rng, int candidates = 4096, int perturbations = 16,
                                       double sigma = 0.05) {
    const Eigen::Index d = model.dims();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, sigma);
    Eigen::MatrixXd x(candidates + perturbations, d);
    for (int c = 0; c < candidates + perturbations; ++c) {
        if (c < candidates) {
            for (Eigen::Index i = 0; i < d; ++i) x(c, i) = unit(rng);
        } else {
            for (Eigen::Index i = 0; i < d; ++i) x(c, i) = std::clamp(incumbent(i) + normal(rng), 0.0, 1.0);
        }
    }
    const auto post = posterior_batch(model, x);
    Eigen::Index best = -1;
    double best_ei = -1.0;
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const double ei = expected_improvement(post[static_cast<std::size_t>(c)].mean,
                                               post[static_cast<std::size_t>(c)].variance, best_y);
        if (ei > best_ei) {
            best_ei = ei;
            best = c;
        }
    }
    return best < 0 ? Eigen::RowVectorXd(incumbent) : Eigen::RowVectorXd(x.row(best));
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Eigen::MatrixXd latin_hypercube(std::size_t n, Eigen::Index d, std::mt19937_64& rng) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> perm(n);
    for (Eigen::Index j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < n; ++i)
            x(static_cast<Eigen::Index>(i), j) = (static_cast<double>(perm[i]) + unit(rng)) / static_cast<double>(n);
    }
    return x;
}

struct ComboRun {
    std::vector<Evaluation> history;
    std::size_t new_evaluations = 0;
};

inline ComboRun optimize_combo(const SearchSpace& space, const Objective& objective, const BoOptions& opts,
                               std::size_t combo, const std::vector<std::pair<SpacePoint, double>>& warm) {
    ComboRun run;
    const auto enum_values = space.combo_values(combo);
    const Eigen::Index d = static_cast<Eigen::Index>(space.continuous.size());
    std::mt19937_64 rng(mix_seed(opts.seed, combo));

    std::vector<Eigen::RowVectorXd> xs;
    std::vector<double> metrics;
    double best = std::numeric_limits<double>::infinity();
    double worst = -std::numeric_limits<double>::infinity();

    auto record = [&](const Eigen::RowVectorXd& x, std::vector<double> raw, double metric, bool failed,
                      int iteration) {
        Evaluation e;
        e.point = {std::move(raw), enum_values};
        e.metric = metric;
        e.combo = combo;
        e.iteration = iteration;
        e.failed = failed;
        e.incumbent = metric < best;
        if (e.incumbent) best = metric;
        if (!failed) worst = std::max(worst, metric);
        xs.push_back(x);
        metrics.push_back(metric);
        run.history.push_back(std::move(e));
    };
    auto evaluate = [&](const Eigen::RowVectorXd& x, int iteration) {
        double m;
        bool failed = false;
        auto raw = space.denormalize(x);
        try {
            m = objective({raw, enum_values});
            failed = !std::isfinite(m);
        } catch (const std::exception&) {
            failed = true;
        }
        if (failed) m = std::isfinite(worst) ? 10.0 * std::abs(worst) + 1.0 : 1e10;
        ++run.new_evaluations;
        record(x, std::move(raw), m, failed, iteration);
    };

    for (const auto& [p, m] : warm) {
        const bool failed = !std::isfinite(m);
        record(space.normalize(p.continuous), p.continuous,
               failed ? (std::isfinite(worst) ? 10.0 * std::abs(worst) + 1.0 : 1e10) : m, failed, 0);
    }

    if (d == 0) {
        if (warm.empty() && opts.budget > 0) evaluate(Eigen::RowVectorXd(0), 1);
        return run;
    }

    int iteration = 0;
    if (warm.empty()) {
        const std::size_t n0 = std::min(opts.initial_design, opts.budget);
        const Eigen::MatrixXd seeds = latin_hypercube(n0, d, rng);
        for (std::size_t i = 0; i < n0; ++i) evaluate(seeds.row(static_cast<Eigen::Index>(i)), ++iteration);
    }

    auto transform = [&](double m) { return opts.log_transform ? std::log(std::max(m, 1e-300)) : m; };
    std::optional<GpHyperparameters> hyper;
    int fits = 0;
    while (run.new_evaluations < opts.budget) {
        if (xs.size() < 2) {
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            Eigen::RowVectorXd x(d);
            for (Eigen::Index i = 0; i < d; ++i) x(i) = unit(rng);
            evaluate(x, ++iteration);
            continue;
        }
        Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), d);
        Eigen::VectorXd y(static_cast<Eigen::Index>(xs.size()));
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            X.row(static_cast<Eigen::Index>(i)) = xs[i];
            y(static_cast<Eigen::Index>(i)) = transform(metrics[i]);
            if (metrics[i] < metrics[best_i]) best_i = i;
        }
        GpFitOptions fo;
        fo.seed = mix_seed(opts.seed ^ 0xA5A5A5A5ULL, combo * 100003 + static_cast<std::uint64_t>(fits));
        fo.initial = hyper;
        if (hyper && fits % std::max(1, opts.full_refit_interval) != 0) fo.starts = 1;
        const GpModel model = fit_gp(X, y, fo);
        hyper = model.hyper;
        ++fits;
        const Eigen::RowVectorXd next = propose_next(model, xs[best_i], y(static_cast<Eigen::Index>(best_i)), rng,
                                                     opts.candidates, opts.perturbations, opts.perturbation_sigma);
        evaluate(next, ++iteration);
    }
    return run;
}

} // namespace detail

/// Minimizes `objective` over the space. `warm_start` holds prior
/// evaluations (e.g. Stage-1 grid records); each one seeds the combination
/// whose enumerated values it matches.
inline OptResult optimize_metric(const SearchSpace& space, const Objective& objective, const BoOptions& opts,
                                 const std::vector<std::pair<SpacePoint, double>>& warm_start = {}) {
    space.validate();
    const std::size_t combos = space.combo_count();
    std::vector<std::vector<std::pair<SpacePoint, double>>> warm(combos);
    for (const auto& w : warm_start) {
        for (std::size_t c = 0; c < combos; ++c) {
            if (space.combo_values(c) == w.first.enumerated) {
                warm[c].push_back(w);
                break;
            }
        }
    }
    std::vector<detail::ComboRun> runs(combos);
    parallel_for(combos, opts.workers,
                 [&](std::size_t c) { runs[c] = detail::optimize_combo(space, objective, opts, c, warm[c]); });

    OptResult result;
    for (auto& run : runs) {
        const Evaluation* combo_best = nullptr;
        for (const auto& e : run.history)
            if (!e.failed && (!combo_best || e.metric < combo_best->metric)) combo_best = &e;
        if (combo_best) {
            result.combo_bests.push_back(*combo_best);
            if (combo_best->metric < result.best_metric) {
                result.best_metric = combo_best->metric;
                result.best = combo_best->point;
            }
        }
        result.new_evaluations += run.new_evaluations;
        result.history.insert(result.history.end(), run.history.begin(), run.history.end());
    }
    if (!std::isfinite(result.best_metric)) throw NumericalError("every objective evaluation failed");
    return result;
}

} // namespace jtwpa
