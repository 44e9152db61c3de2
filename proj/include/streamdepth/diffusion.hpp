#pragma once

// Continuous-time (EDM-style) diffusion primitives generalized to one noise
// level per frame.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "streamdepth/tensor.hpp"

namespace streamdepth {

/// Default data standard deviation used by the preconditioner.
inline constexpr double kDefaultSigmaData = 0.5;

struct PreconditionWeights {
    double c_skip;
    double c_out;
    double c_in;
    double c_noise;
};

/// EDM preconditioning at one noise level.
inline PreconditionWeights precondition(double sigma, double sigma_data = kDefaultSigmaData) {
    detail::require(std::isfinite(sigma) && sigma > 0.0, "precondition: sigma must be positive");
    detail::require(std::isfinite(sigma_data) && sigma_data > 0.0, "precondition: sigma_data must be positive");
    const double s2 = sigma * sigma;
    const double d2 = sigma_data * sigma_data;
    const double norm = std::sqrt(s2 + d2);
    return {d2 / (s2 + d2), sigma * sigma_data / norm, 1.0 / norm, std::log(sigma) / 4.0};
}

/// Loss weight lambda(sigma) = (1 + sigma^2) / sigma^2.
inline double dsm_weight(double sigma) {
    detail::require(std::isfinite(sigma) && sigma > 0.0, "dsm_weight: sigma must be positive");
    return (1.0 + sigma * sigma) / (sigma * sigma);
}

inline void fill_standard_normal(std::span<double> out, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out) v = normal(rng);
}

/// Independent log-normal noise level per frame: log sigma_i ~ N(p_mean, p_std^2).
inline SigmaVector sample_sigma_per_frame(std::size_t frames, double p_mean, double p_std, Rng& rng) {
    detail::require(frames >= 1, "sample_sigma_per_frame: frame count must be >= 1");
    detail::require(std::isfinite(p_mean) && std::isfinite(p_std) && p_std >= 0.0,
                    "sample_sigma_per_frame: invalid log-normal parameters");
    std::vector<double> s(frames);
    if (p_std == 0.0) {
        std::fill(s.begin(), s.end(), std::exp(p_mean));
    } else {
        std::normal_distribution<double> normal(p_mean, p_std);
        for (double& v : s) v = std::exp(normal(rng));
    }
    return SigmaVector(std::move(s));
}

/// z_t = z_0 + sigma_i * eps, eps ~ N(0, I), drawn in row-major order.
inline Clip forward_diffuse(const Clip& z0, const SigmaVector& sigma, Rng& rng) {
    detail::require(sigma.size() == z0.frames(), "forward_diffuse: sigma length must equal frame count");
    Clip out = z0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t f = 0; f < out.frames(); ++f) {
        const double s = sigma[f];
        for (double& v : out.frame(f)) v += s * normal(rng);
    }
    return out;
}

/// Clip-level forward process: one noise level for every frame.
inline Clip forward_diffuse(const Clip& z0, double sigma, Rng& rng) {
    detail::require(std::isfinite(sigma) && sigma > 0.0, "forward_diffuse: sigma must be positive");
    Clip out = z0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out.data()) v += sigma * normal(rng);
    return out;
}

/// Residual network F_theta: (c_in-scaled input clip, per-frame c_noise, condition) -> residual clip.
template <class Net>
concept ResidualNetwork = requires(const Net& net, const Clip& z, std::span<const double> c_noise, const Clip& cond) {
    { net(z, c_noise, cond) } -> std::convertible_to<Clip>;
};

/// Any x0-predictor D(z_t; sigma, cond) usable by the samplers.
template <class D>
concept Denoiser = requires(const D& d, const Clip& z, const SigmaVector& s, const Clip& cond) {
    { d.denoise(z, s, cond) } -> std::convertible_to<Clip>;
};

/// D(z_t; sigma, cond) = c_skip z_t + c_out F(c_in z_t; c_noise, cond), applied frame by frame.
template <ResidualNetwork Net>
Clip apply_denoiser(const Net& net, const Clip& z_t, const SigmaVector& sigma, const Clip& cond,
                    double sigma_data = kDefaultSigmaData) {
    detail::require(sigma.size() == z_t.frames(), "apply_denoiser: sigma length must equal frame count");
    detail::require(cond.frames() == z_t.frames() && cond.same_spatial(z_t),
                    "apply_denoiser: condition shape does not match the depth clip");
    std::vector<PreconditionWeights> w(sigma.size());
    std::vector<double> c_noise(sigma.size());
    for (std::size_t f = 0; f < sigma.size(); ++f) {
        w[f] = precondition(sigma[f], sigma_data);
        c_noise[f] = w[f].c_noise;
    }
    Clip scaled = z_t;
    for (std::size_t f = 0; f < scaled.frames(); ++f)
        for (double& v : scaled.frame(f)) v *= w[f].c_in;
    Clip residual = net(scaled, std::span<const double>(c_noise), cond);
    detail::require(residual.same_shape(z_t), "apply_denoiser: network output shape mismatch");
    Clip out = z_t;
    for (std::size_t f = 0; f < out.frames(); ++f) {
        auto o = out.frame(f);
        auto r = residual.frame(f);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = w[f].c_skip * o[i] + w[f].c_out * r[i];
    }
    return out;
}

/// Clip-level denoiser: a single noise level shared by all frames.
template <ResidualNetwork Net>
Clip apply_denoiser(const Net& net, const Clip& z_t, double sigma, const Clip& cond,
                    double sigma_data = kDefaultSigmaData) {
    detail::require(cond.frames() == z_t.frames() && cond.same_spatial(z_t),
                    "apply_denoiser: condition shape does not match the depth clip");
    const PreconditionWeights w = precondition(sigma, sigma_data);
    Clip scaled = z_t;
    for (double& v : scaled.data()) v *= w.c_in;
    const std::vector<double> c_noise(z_t.frames(), w.c_noise);
    Clip residual = net(scaled, std::span<const double>(c_noise), cond);
    detail::require(residual.same_shape(z_t), "apply_denoiser: network output shape mismatch");
    Clip out = z_t;
    auto& o = out.data();
    const auto& r = residual.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = w.c_skip * o[i] + w.c_out * r[i];
    return out;
}

/// Sum of squared differences of frame f. Every loss reduction in the library
/// sums frame-major: per-frame sums first, then across frames in index order.
inline double frame_sse(const Clip& a, const Clip& b, std::size_t f) {
    auto x = a.frame(f);
    auto y = b.frame(f);
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        sse += d * d;
    }
    return sse;
}

/// Mean over frames of lambda(sigma_i) * MSE(frame i).
inline double dsm_loss(const Clip& pred_z0, const Clip& z0, const SigmaVector& sigma) {
    detail::require(pred_z0.same_shape(z0), "dsm_loss: shape mismatch");
    detail::require(sigma.size() == z0.frames(), "dsm_loss: sigma length must equal frame count");
    const double denom = static_cast<double>(z0.frames()) * static_cast<double>(z0.frame_size());
    double total = 0.0;
    for (std::size_t f = 0; f < z0.frames(); ++f) total += dsm_weight(sigma[f]) * frame_sse(pred_z0, z0, f);
    return total / denom;
}

/// Clip-level loss lambda(sigma) * MSE, reduced in the same frame-major order.
inline double dsm_loss(const Clip& pred_z0, const Clip& z0, double sigma) {
    detail::require(pred_z0.same_shape(z0), "dsm_loss: shape mismatch");
    const double lambda = dsm_weight(sigma);
    const double denom = static_cast<double>(z0.frames()) * static_cast<double>(z0.frame_size());
    double total = 0.0;
    for (std::size_t f = 0; f < z0.frames(); ++f) total += lambda * frame_sse(pred_z0, z0, f);
    return total / denom;
}

/// One Euler step of the probability-flow ODE from sigma_t to sigma_prev.
/// Frames whose mask entry is false are copied through unchanged.
inline Clip euler_step(const Clip& z_t, const Clip& z0_pred, double sigma_t, double sigma_prev,
                       const std::vector<bool>& frame_mask) {
    detail::require(std::isfinite(sigma_t) && sigma_t > 0.0, "euler_step: sigma_t must be positive");
    detail::require(std::isfinite(sigma_prev) && sigma_prev >= 0.0, "euler_step: sigma_prev must be >= 0");
    detail::require(z_t.same_shape(z0_pred), "euler_step: shape mismatch");
    detail::require(frame_mask.size() == z_t.frames(), "euler_step: mask length must equal frame count");
    Clip out = z_t;
    const double ds = sigma_prev - sigma_t;
    for (std::size_t f = 0; f < out.frames(); ++f) {
        if (!frame_mask[f]) continue;
        auto o = out.frame(f);
        auto d = z0_pred.frame(f);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (o[i] - d[i]) / sigma_t * ds + o[i];
    }
    return out;
}

inline Clip euler_step(const Clip& z_t, const Clip& z0_pred, double sigma_t, double sigma_prev) {
    return euler_step(z_t, z0_pred, sigma_t, sigma_prev, std::vector<bool>(z_t.frames(), true));
}

struct ScheduleParams {
    std::size_t steps = 25;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
};

/// Noise levels sigma_0 = 0 < sigma_1 < ... < sigma_T = sigma_max, indexed by step t.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(ScheduleParams params, std::vector<double> by_step)
        : params_(params), sigmas_(std::move(by_step)) {}

    [[nodiscard]] std::size_t steps() const noexcept { return sigmas_.empty() ? 0 : sigmas_.size() - 1; }
    [[nodiscard]] double operator[](std::size_t t) const { return sigmas_.at(t); }
    [[nodiscard]] double sigma_max() const { return sigmas_.back(); }
    [[nodiscard]] const ScheduleParams& params() const noexcept { return params_; }

    /// [sigma_T, ..., sigma_0], the order the sampler visits them.
    [[nodiscard]] std::vector<double> descending() const { return {sigmas_.rbegin(), sigmas_.rend()}; }

private:
    ScheduleParams params_{};
    std::vector<double> sigmas_;
};

/// Karras rho-schedule: sigma_i = (smax^(1/rho) + (1 - i/T)(smin^(1/rho) - smax^(1/rho)))^rho for i = T..1, sigma_0 = 0.
inline NoiseSchedule make_schedule(const ScheduleParams& p) {
    detail::require(p.steps >= 1, "make_schedule: need at least one step");
    detail::require(std::isfinite(p.sigma_min) && std::isfinite(p.sigma_max) && p.sigma_min > 0.0 &&
                        p.sigma_min < p.sigma_max,
                    "make_schedule: need 0 < sigma_min < sigma_max");
    detail::require(std::isfinite(p.rho) && p.rho > 0.0, "make_schedule: rho must be positive");
    const double hi = std::pow(p.sigma_max, 1.0 / p.rho);
    const double lo = std::pow(p.sigma_min, 1.0 / p.rho);
    const double T = static_cast<double>(p.steps);
    std::vector<double> s(p.steps + 1, 0.0);
    for (std::size_t i = 1; i <= p.steps; ++i) {
        const double frac = 1.0 - static_cast<double>(i) / T;
        s[i] = std::pow(hi + frac * (lo - hi), p.rho);
    }
    s[p.steps] = p.sigma_max;
    return NoiseSchedule(p, std::move(s));
}

inline NoiseSchedule make_schedule(std::size_t steps, double sigma_min, double sigma_max, double rho) {
    return make_schedule(ScheduleParams{steps, sigma_min, sigma_max, rho});
}

} // namespace streamdepth
