#pragma once

// Gaussian-process regression with an anisotropic squared-exponential
// kernel. Inputs live in [0, 1]^d; targets are standardized internally.
// Hyperparameters (log signal variance, log length scales, log noise
// variance) maximize the log marginal likelihood by multi-start compass
// search inside fixed bounds.

#include "jtwpa/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace jtwpa {

struct GpHyperparameters {
    double signal_variance = 1.0;
    Eigen::VectorXd length_scales;
    double noise_variance = 1e-6;
};

struct GpBounds {
    double length_min = 0.01, length_max = 10.0;
    double signal_min = 1e-2, signal_max = 1e2;
    double noise_min = 1e-10, noise_max = 1.0;
};

struct GpFitOptions {
    int starts = 8;
    int max_iterations = 200;
    double min_step = 1e-2; ///< compass step (log units) at which the search stops
    double screen_step = 0.125; ///< step at which the starts are compared
    std::uint64_t seed = 0;
    GpBounds bounds;
    /// First start; the remaining starts are drawn uniformly in log space.
    std::optional<GpHyperparameters> initial;
};

struct GpModel {
    Eigen::MatrixXd inputs;  ///< n x d, rows in [0, 1]^d
    Eigen::VectorXd targets; ///< standardized
    double target_mean = 0.0;
    double target_scale = 1.0;
    GpHyperparameters hyper;
    Eigen::LLT<Eigen::MatrixXd> factor;
    Eigen::VectorXd weights; ///< K^-1 y
    double jitter = 0.0;
    double log_marginal_likelihood = -std::numeric_limits<double>::infinity();
    std::vector<double> start_likelihoods; ///< converged value of each start

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dims() const { return inputs.cols(); }
};

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
    bool clamped = false; ///< round-off made the variance negative
};

namespace detail {

inline double se_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
                        const GpHyperparameters& h) {
    const double r2 = ((a - b).array() / h.length_scales.transpose().array()).square().sum();
    return h.signal_variance * std::exp(-0.5 * r2);
}

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const GpHyperparameters& h) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = h.signal_variance + h.noise_variance;
        for (Eigen::Index j = 0; j < i; ++j) k(i, j) = k(j, i) = se_kernel(x.row(i), x.row(j), h);
    }
    return k;
}

/// Squared coordinate differences, one n x n matrix per input dimension.
inline std::vector<Eigen::MatrixXd> pairwise_squares(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::MatrixXd> out;
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const Eigen::VectorXd c = x.col(d);
        out.emplace_back((c.replicate(1, n) - c.transpose().replicate(n, 1)).array().square().matrix());
    }
    return out;
}

inline Eigen::MatrixXd covariance(const std::vector<Eigen::MatrixXd>& sq, const GpHyperparameters& h) {
    Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(sq.front().rows(), sq.front().cols());
    for (std::size_t d = 0; d < sq.size(); ++d) {
        const double l = h.length_scales(static_cast<Eigen::Index>(d));
        r2 += sq[d] / (l * l);
    }
    Eigen::MatrixXd k = h.signal_variance * (-0.5 * r2.array()).exp().matrix();
    k.diagonal().array() += h.noise_variance;
    return k;
}

/// Cholesky with escalating diagonal jitter 0, 1e-10, ..., 1e-6.
inline std::optional<std::pair<Eigen::LLT<Eigen::MatrixXd>, double>> factorize(const Eigen::MatrixXd& k) {
    for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(kj);
        if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all())
            return std::make_pair(std::move(llt), jitter);
    }
    return std::nullopt;
}

inline double log_likelihood(const Eigen::MatrixXd& k, const Eigen::VectorXd& y) {
    auto f = factorize(k);
    if (!f) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = f->first.solve(y);
    const double log_det = 2.0 * f->first.matrixLLT().diagonal().array().log().sum();
    const double n = static_cast<double>(y.size());
    const double v = -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

inline double log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpHyperparameters& h) {
    return log_likelihood(covariance(x, h), y);
}

/// theta = [log signal, log lengths..., log noise]
inline GpHyperparameters unpack(const Eigen::VectorXd& theta) {
    const Eigen::Index d = theta.size() - 2;
    GpHyperparameters h;
    h.signal_variance = std::exp(theta(0));
    h.length_scales = theta.segment(1, d).array().exp();
    h.noise_variance = std::exp(theta(d + 1));
    return h;
}

inline Eigen::VectorXd pack(const GpHyperparameters& h) {
    const Eigen::Index d = h.length_scales.size();
    Eigen::VectorXd theta(d + 2);
    theta(0) = std::log(h.signal_variance);
    theta.segment(1, d) = h.length_scales.array().log();
    theta(d + 1) = std::log(h.noise_variance);
    return theta;
}

} // namespace detail

/// Fits hyperparameters and factorizes the covariance. Needs at least two
/// points and finite targets.
inline GpModel fit_gp(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GpFitOptions& opts = {}) {
    if (inputs.rows() < 2) throw std::invalid_argument("GP fit needs at least two points");
    if (inputs.rows() != targets.size()) throw std::invalid_argument("GP inputs and targets differ in length");
    if (!targets.allFinite()) throw std::invalid_argument("GP targets must be finite");
    const Eigen::Index d = inputs.cols();

    GpModel m;
    m.inputs = inputs;
    m.target_mean = targets.mean();
    const double sd = std::sqrt((targets.array() - m.target_mean).square().mean());
    m.target_scale = sd > 1e-12 * std::max(1.0, std::abs(m.target_mean)) ? sd : 1.0;
    m.targets = (targets.array() - m.target_mean) / m.target_scale;

    const auto& b = opts.bounds;
    Eigen::VectorXd lo(d + 2), hi(d + 2);
    lo(0) = std::log(b.signal_min);
    hi(0) = std::log(b.signal_max);
    lo.segment(1, d).setConstant(std::log(b.length_min));
    hi.segment(1, d).setConstant(std::log(b.length_max));
    lo(d + 1) = std::log(b.noise_min);
    hi(d + 1) = std::log(b.noise_max);

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto sq = detail::pairwise_squares(m.inputs);
    auto lml = [&](const Eigen::VectorXd& theta) {
        return detail::log_likelihood(detail::covariance(sq, detail::unpack(theta)), m.targets);
    };

    // Compass search on theta from `step` down to `stop`.
    struct Search {
        Eigen::VectorXd theta;
        double value = 0.0;
        double step = 1.0;
        int iterations = 0;
    };
    auto compass = [&](Search& sr, double stop) {
        for (; sr.iterations < opts.max_iterations && sr.step >= stop; ++sr.iterations) {
            bool improved = false;
            for (Eigen::Index i = 0; i < sr.theta.size(); ++i) {
                for (double dir : {1.0, -1.0}) {
                    Eigen::VectorXd trial = sr.theta;
                    trial(i) = std::clamp(sr.theta(i) + dir * sr.step, lo(i), hi(i));
                    if (trial(i) == sr.theta(i)) continue;
                    const double v = lml(trial);
                    if (v > sr.value) {
                        sr.value = v;
                        sr.theta = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if (!improved) sr.step *= 0.5;
        }
    };

    // Every start is screened to a coarse step; only the leader is refined.
    std::vector<Search> searches;
    std::size_t lead = 0;
    for (int s = 0; s < std::max(1, opts.starts); ++s) {
        Eigen::VectorXd theta(d + 2);
        if (s == 0) {
            GpHyperparameters h0;
            if (opts.initial && opts.initial->length_scales.size() == d) {
                h0 = *opts.initial;
            } else {
                h0.signal_variance = 1.0;
                h0.length_scales = Eigen::VectorXd::Constant(d, 0.3);
                h0.noise_variance = 1e-6;
            }
            theta = detail::pack(h0);
        } else {
            for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = lo(i) + unit(rng) * (hi(i) - lo(i));
        }
        theta = theta.cwiseMax(lo).cwiseMin(hi);
        Search sr{theta, lml(theta), 1.0, 0};
        compass(sr, std::max(opts.screen_step, opts.min_step));
        searches.push_back(sr);
        if (sr.value > searches[lead].value) lead = searches.size() - 1;
    }
    compass(searches[lead], opts.min_step);
    for (const auto& sr : searches) m.start_likelihoods.push_back(sr.value);
    const Eigen::VectorXd best_theta = searches[lead].theta;
    const double best = searches[lead].value;

    m.hyper = detail::unpack(best_theta);
    m.log_marginal_likelihood = best;
    const Eigen::MatrixXd k = detail::covariance(m.inputs, m.hyper);
    auto f = detail::factorize(k);
    if (!f) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(k);
        const auto& sv = svd.singularValues();
        std::ostringstream msg;
        msg << "GP covariance is singular after jitter (n=" << k.rows()
            << ", condition ~ " << sv(0) / sv(sv.size() - 1) << ")";
        throw NumericalError(msg.str());
    }
    m.factor = std::move(f->first);
    m.jitter = f->second;
    m.weights = m.factor.solve(m.targets);
    return m;
}

/// Posterior mean and latent variance at x, in the original target units.
inline GpPrediction posterior(const GpModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const Eigen::Index n = m.size();
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = detail::se_kernel(m.inputs.row(i), x, m.hyper);
    GpPrediction p;
    p.mean = m.target_mean + m.target_scale * ks.dot(m.weights);
    const Eigen::VectorXd v = m.factor.matrixL().solve(ks);
    double var = m.hyper.signal_variance - v.squaredNorm();
    if (var < 0.0) {
        p.clamped = true;
        var = 0.0;
    }
    p.variance = var * m.target_scale * m.target_scale;
    return p;
}

/// Posterior at every row of x; same results as calling posterior() per row.
inline std::vector<GpPrediction> posterior_batch(const GpModel& m, const Eigen::MatrixXd& x) {
    const Eigen::Index n = m.size(), q = x.rows();
    Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(n, q);
    for (Eigen::Index d = 0; d < m.dims(); ++d) {
        const double l = m.hyper.length_scales(d);
        r2 += ((m.inputs.col(d).replicate(1, q) - x.col(d).transpose().replicate(n, 1)) / l).array().square().matrix();
    }
    const Eigen::MatrixXd ks = m.hyper.signal_variance * (-0.5 * r2.array()).exp().matrix();
    const Eigen::VectorXd means = ks.transpose() * m.weights;
    const Eigen::MatrixXd v = m.factor.matrixL().solve(ks);
    const Eigen::VectorXd explained = v.colwise().squaredNorm().transpose();
    std::vector<GpPrediction> out(static_cast<std::size_t>(q));
    for (Eigen::Index i = 0; i < q; ++i) {
        auto& p = out[static_cast<std::size_t>(i)];
        p.mean = m.target_mean + m.target_scale * means(i);
        double var = m.hyper.signal_variance - explained(i);
        if (var < 0.0) {
            p.clamped = true;
            var = 0.0;
        }
        p.variance = var * m.target_scale * m.target_scale;
    }
    return out;
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Expected improvement below best_y for a Gaussian with the given mean and
/// variance.
inline double expected_improvement(double mean, double variance, double best_y) {
    const double gap = best_y - mean;
    const double sigma = variance > 0.0 ? std::sqrt(variance) : 0.0;
    if (sigma <= 0.0) return std::max(gap, 0.0);
    const double z = gap / sigma;
    return std::max(0.0, gap * normal_cdf(z) + sigma * normal_pdf(z));
}

inline double expected_improvement(const GpModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x, double best_y) {
    const auto p = posterior(m, x);
    return expected_improvement(p.mean, p.variance, best_y);
}

} // namespace jtwpa
