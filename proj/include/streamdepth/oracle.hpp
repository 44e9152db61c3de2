#pragma once

// Monte-Carlo checks of the samplers against the exact Gaussian world: sampler
// fidelity, bias of the conditioning strategies and seam discontinuities.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "streamdepth/gaussian_prior.hpp"
#include "streamdepth/parallel.hpp"
#include "streamdepth/streaming.hpp"

namespace streamdepth {

struct OracleConfig {
    std::size_t frames = 10;
    std::size_t frame_dim = 4;
    double rho_time = 0.9;
    double rho_space = 0.5;
    std::size_t context = 5;
    std::size_t samples = 10000;
    std::size_t steps = 64;
    double sigma_eps = std::exp(-4.0);
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const {
        detail::require(frames >= 2 && frame_dim >= 1, "OracleConfig: need >= 2 frames and >= 1 dim");
        detail::require(context >= 1 && context < frames, "OracleConfig: context must lie in [1, frames)");
        detail::require(samples >= 2, "OracleConfig: need at least 2 samples");
        detail::require(steps >= 1, "OracleConfig: need at least one sampling step");
        detail::require(rho_time > -1.0 && rho_time < 1.0 && rho_space > -1.0 && rho_space < 1.0,
                        "OracleConfig: correlations must lie in (-1, 1)");
    }
};

/// AR(1) prior over time with frame covariance rho_space^|i-j| and a ramp mean.
inline GaussianVideoPrior make_oracle_prior(const OracleConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<Eigen::Index>(cfg.frame_dim);
    Eigen::MatrixXd frame_cov(d, d);
    Eigen::VectorXd frame_mean(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        frame_mean(i) = d == 1 ? 0.0 : -0.5 + static_cast<double>(i) / static_cast<double>(d - 1);
        for (Eigen::Index j = 0; j < d; ++j) frame_cov(i, j) = std::pow(cfg.rho_space, static_cast<double>(std::abs(i - j)));
    }
    return GaussianVideoPrior::ar1(cfg.frames, frame_cov, cfg.rho_time, frame_mean);
}

/// Point estimate with a 95% interval.
struct Estimate {
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    [[nodiscard]] bool below(const Estimate& o) const { return hi < o.lo; }
};

struct SamplerFidelity {
    double mean_error = 0.0;  // max |empirical mean - prior mean|
    double cov_error = 0.0;   // max |empirical cov - prior cov|
};

struct StrategyBias {
    Strategy strategy;
    Estimate bias;  // max over coordinates of |empirical mean - conditional mean|
};

struct SeamStats {
    Strategy strategy;
    double seam = 0.0;    // mean squared step across the first clip boundary, per coordinate
    double within = 0.0;  // same, averaged over steps inside the first clip
    [[nodiscard]] double ratio() const { return seam / within; }
};

struct ContextReport {
    std::vector<StrategyBias> bias;
    std::vector<SeamStats> seams;
    [[nodiscard]] const StrategyBias& bias_of(Strategy s) const {
        for (const auto& b : bias)
            if (b.strategy == s) return b;
        throw std::invalid_argument("ContextReport: strategy not evaluated");
    }
    [[nodiscard]] const SeamStats& seam_of(Strategy s) const {
        for (const auto& b : seams)
            if (b.strategy == s) return b;
        throw std::invalid_argument("ContextReport: strategy not evaluated");
    }
};

namespace detail {

inline Clip dummy_condition(const GaussianVideoPrior& prior, std::size_t frames) {
    return Clip(frames, 1, 1, prior.frame_dim());
}

/// Rows are samples.
inline Eigen::MatrixXd collect(std::size_t samples, std::size_t dim, std::size_t threads,
                               const std::function<Eigen::VectorXd(std::size_t)>& draw) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(dim));
    parallel_for(samples, threads, [&](std::size_t i) { out.row(static_cast<Eigen::Index>(i)) = draw(i).transpose(); });
    return out;
}

} // namespace detail

/// Runs the unconditional sampler `samples` times and compares moments with the prior.
inline SamplerFidelity sampler_fidelity(const GaussianVideoPrior& prior, const OracleConfig& cfg) {
    cfg.validate();
    const GaussianOracleDenoiser oracle(prior);
    const NoiseSchedule schedule = make_schedule(ScheduleParams{cfg.steps});
    const Clip cond = detail::dummy_condition(prior, prior.frames());
    const Eigen::MatrixXd x = detail::collect(cfg.samples, prior.dim(), cfg.threads, [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, i));
        return Eigen::VectorXd(prior.flatten(infer_clip(oracle, cond, schedule, rng)));
    });
    const Eigen::VectorXd mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(cfg.samples - 1);
    return {(mean - prior.mean()).cwiseAbs().maxCoeff(), (cov - prior.cov()).cwiseAbs().maxCoeff()};
}

/// Fixes the first `context` frames to one prior draw and measures, per
/// strategy, how far the sampled continuations' mean is from the exact
/// conditional mean. Also runs each strategy over a two-clip video to compare
/// the step across the clip boundary with steps inside a clip.
inline ContextReport context_check(const GaussianVideoPrior& prior, const OracleConfig& cfg) {
    cfg.validate();
    detail::require(prior.frames() == cfg.frames, "context_check: prior length differs from the config");
    const GaussianOracleDenoiser oracle(prior);
    const NoiseSchedule schedule = make_schedule(ScheduleParams{cfg.steps});
    const std::size_t f_n = cfg.frames, w = cfg.context, d = prior.frame_dim();

    Rng ctx_rng(cfg.seed);
    const Clip context = prior.sample(ctx_rng).slice(0, w);
    std::vector<std::size_t> known(w);
    for (std::size_t f = 0; f < w; ++f) known[f] = f;
    const Eigen::VectorXd known_values =
        Eigen::Map<const Eigen::VectorXd>(context.data().data(), static_cast<Eigen::Index>(context.size()));
    const ConditionalStats truth = conditional_stats(prior, known, known_values);
    const Clip cond = detail::dummy_condition(prior, f_n);

    ContextReport report;
    const std::array<Strategy, 3> strategies{Strategy::naive, Strategy::replacement, Strategy::context_aware};
    for (std::size_t si = 0; si < strategies.size(); ++si) {
        const Strategy strategy = strategies[si];
        const std::uint64_t base = derive_seed(cfg.seed, si + 1);
        const Eigen::MatrixXd x = detail::collect(cfg.samples, (f_n - w) * d, cfg.threads, [&](std::size_t i) {
            Rng rng(derive_seed(base, i));
            const Clip full = infer_continuation(oracle, cond, context, strategy, cfg.sigma_eps, schedule, rng);
            const Clip fresh = full.slice(w, f_n - w);
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(fresh.data().data(), static_cast<Eigen::Index>(fresh.size())));
        });
        const Eigen::VectorXd mean = x.colwise().mean().transpose();
        const Eigen::VectorXd dev = (mean - truth.mean).cwiseAbs();
        Eigen::Index k = 0;
        const double worst = dev.maxCoeff(&k);
        const Eigen::VectorXd col = x.col(k).array() - mean(k);
        const double se = std::sqrt(col.squaredNorm() / static_cast<double>(cfg.samples - 1) / static_cast<double>(cfg.samples));
        report.bias.push_back({strategy, {worst, std::max(0.0, worst - 1.96 * se), worst + 1.96 * se}});

        // Two clips: frames [0, F) then [F - W, 2F - W); the boundary step is (F-1, F).
        const std::size_t video_len = 2 * f_n - w;
        const Clip video_cond = detail::dummy_condition(prior, video_len);
        const std::uint64_t seam_base = derive_seed(base, cfg.samples);
        const Eigen::MatrixXd steps = detail::collect(cfg.samples, video_len - 1, cfg.threads, [&](std::size_t i) {
            StreamConfig sc;
            sc.clip_length = f_n;
            sc.overlap = w;
            sc.strategy = strategy;
            sc.sigma_eps = cfg.sigma_eps;
            sc.schedule = ScheduleParams{cfg.steps};
            sc.seed = derive_seed(seam_base, i);
            const Clip v = sliding_window(oracle, video_cond, sc);
            Eigen::VectorXd out(static_cast<Eigen::Index>(video_len - 1));
            for (std::size_t f = 0; f + 1 < video_len; ++f) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = v.frame(f + 1)[j] - v.frame(f)[j];
                    s += diff * diff;
                }
                out(static_cast<Eigen::Index>(f)) = s / static_cast<double>(d);
            }
            return out;
        });
        const Eigen::VectorXd mean_steps = steps.colwise().mean().transpose();
        const double within = mean_steps.head(static_cast<Eigen::Index>(f_n - 1)).mean();
        report.seams.push_back({strategy, mean_steps(static_cast<Eigen::Index>(f_n - 1)), within});
    }
    return report;
}

} // namespace streamdepth
