#pragma once

// Denoising score matching with per-frame noise levels and the two-stage
// protocol: stage 1 fits spatial layers on single frames, stage 2 freezes
// them and fits the temporal layers on clips of random length.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "streamdepth/diffusion.hpp"
#include "streamdepth/network.hpp"
#include "streamdepth/parallel.hpp"
#include "streamdepth/tensor.hpp"

namespace streamdepth {

struct TrainConfig {
    double learning_rate = 3e-5;
    std::size_t batch_size = 8;
    std::size_t spatial_steps = 1000;
    std::size_t temporal_steps = 1000;
    std::size_t f_max = 10;
    double p_mean = 0.7;
    double p_std = 1.6;
    double sigma_data = kDefaultSigmaData;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const {
        detail::require(f_max >= 1, "TrainConfig: f_max must be >= 1");
        detail::require(std::isfinite(learning_rate) && learning_rate > 0.0, "TrainConfig: learning rate must be positive");
        detail::require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
        detail::require(p_std >= 0.0 && sigma_data > 0.0, "TrainConfig: invalid noise parameters");
    }
};

/// Uniform clip length in [1, f_max].
inline std::size_t sample_clip_length(std::size_t f_max, Rng& rng) {
    detail::require(f_max >= 1, "sample_clip_length: f_max must be >= 1");
    return std::uniform_int_distribution<std::size_t>(1, f_max)(rng);
}

/// A depth clip (F x 1 x H x W, normalized) with its condition clip.
struct TrainingExample {
    Clip depth;
    Clip cond;
};

struct LossGradient {
    double loss = 0.0;
    ParamSet grads;
};

/// Loss of one example at fixed noise levels and a fixed standard-normal draw.
inline double loss_value(const DenoiserModel& model, const TrainingExample& ex, const SigmaVector& sigma,
                         const Clip& noise, double sigma_data = kDefaultSigmaData) {
    detail::require(noise.same_shape(ex.depth), "loss_value: noise shape mismatch");
    Clip z_t = ex.depth;
    for (std::size_t f = 0; f < z_t.frames(); ++f) {
        auto z = z_t.frame(f);
        auto e = noise.frame(f);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += sigma[f] * e[i];
    }
    const Clip pred = apply_denoiser(NetworkResidual{model}, z_t, sigma, ex.cond, sigma_data);
    return dsm_loss(pred, ex.depth, sigma);
}

/// Exact gradient of dsm_loss(apply_denoiser(z0 + sigma * noise)) with respect to
/// the parameter groups selected by `mask`. Unselected groups stay exactly zero.
inline LossGradient loss_gradient(const DenoiserModel& model, const TrainingExample& ex, const SigmaVector& sigma,
                                  const Clip& noise, GroupMask mask = {}, double sigma_data = kDefaultSigmaData) {
    detail::require(ex.depth.channels() == 1, "loss_gradient: depth must have one channel");
    detail::require(noise.same_shape(ex.depth), "loss_gradient: noise shape mismatch");
    detail::require(sigma.size() == ex.depth.frames(), "loss_gradient: sigma length must equal frame count");
    const std::size_t f_n = ex.depth.frames();
    const std::size_t n = ex.depth.frame_size();

    std::vector<PreconditionWeights> w(f_n);
    std::vector<double> c_noise(f_n);
    Clip z_t = ex.depth;
    Clip z_in = ex.depth;
    for (std::size_t f = 0; f < f_n; ++f) {
        w[f] = precondition(sigma[f], sigma_data);
        c_noise[f] = w[f].c_noise;
        auto z = z_t.frame(f);
        auto zi = z_in.frame(f);
        auto e = noise.frame(f);
        for (std::size_t i = 0; i < n; ++i) {
            z[i] += sigma[f] * e[i];
            zi[i] = w[f].c_in * z[i];
        }
    }
    const auto cache = net::forward(model, z_in, c_noise, ex.cond, true);

    LossGradient out;
    out.grads = model.params().zeros_like();
    Clip pred = z_t;
    Mat d_out(static_cast<Eigen::Index>(f_n * n), 1);
    const double denom = static_cast<double>(f_n) * static_cast<double>(n);
    for (std::size_t f = 0; f < f_n; ++f) {
        auto p = pred.frame(f);
        auto z0 = ex.depth.frame(f);
        const double lambda = dsm_weight(sigma[f]);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = w[f].c_skip * p[i] + w[f].c_out * cache.out(static_cast<Eigen::Index>(f * n + i), 0);
            d_out(static_cast<Eigen::Index>(f * n + i), 0) = 2.0 * lambda * (p[i] - z0[i]) / denom * w[f].c_out;
        }
    }
    out.loss = dsm_loss(pred, ex.depth, sigma);
    net::backward(model, cache, d_out, out.grads, mask);
    return out;
}

/// Adam over the groups selected at construction.
class AdamOptimizer {
public:
    AdamOptimizer(const ParamSet& params, const TrainConfig& cfg, GroupMask mask)
        : cfg_(cfg), mask_(mask), m_(params.zeros_like()), v_(params.zeros_like()) {}

    void step(ParamSet& params, const ParamSet& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!mask_(params.tensors[i].group)) continue;
            auto& m = m_[i];
            auto& v = v_[i];
            const auto& g = grads[i];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            params[i].array() -= cfg_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_eps);
        }
    }

private:
    TrainConfig cfg_;
    GroupMask mask_;
    ParamSet m_;
    ParamSet v_;
    std::size_t t_ = 0;
};

struct LossPoint {
    std::string stage;
    std::size_t step;
    double loss;
};

using LossCurve = std::vector<LossPoint>;

/// A whole sequence used for clip sampling (F x ... tensors, depth normalized).
struct TrainingSequence {
    Clip depth;
    Clip cond;
};

namespace detail {

struct DrawnItem {
    TrainingExample example;
    SigmaVector sigma;
    Clip noise;
};

/// Averages per-item gradients in item order and applies one optimizer step.
inline double apply_batch(DenoiserModel& model, AdamOptimizer& opt, const std::vector<DrawnItem>& batch,
                          GroupMask mask, const TrainConfig& cfg) {
    std::vector<LossGradient> results(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
        results[i] = loss_gradient(model, batch[i].example, batch[i].sigma, batch[i].noise, mask, cfg.sigma_data);
    });
    ParamSet total = model.params().zeros_like();
    double loss = 0.0;
    for (const auto& r : results) {
        total.accumulate(r.grads);
        loss += r.loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& t : total.tensors) t.value *= inv;
    opt.step(model.params(), total);
    return loss * inv;
}

inline Clip noise_like(const Clip& c, Rng& rng) {
    Clip n(c.frames(), c.channels(), c.height(), c.width());
    fill_standard_normal(n.data(), rng);
    return n;
}

} // namespace detail

/// Stage 1: spatial layers on single frames. Temporal parameters are untouched.
inline DenoiserModel train_spatial(DenoiserModel model, const std::vector<TrainingExample>& frames,
                                   const TrainConfig& cfg, LossCurve* curve = nullptr) {
    cfg.validate();
    detail::require(!frames.empty(), "train_spatial: empty dataset");
    for (const auto& ex : frames)
        detail::require(ex.depth.frames() == 1 && ex.cond.frames() == 1, "train_spatial: examples must be single frames");
    const GroupMask mask{true, false};
    AdamOptimizer opt(model.params(), cfg, mask);
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
    for (std::size_t step = 0; step < cfg.spatial_steps; ++step) {
        std::vector<detail::DrawnItem> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& ex = frames[pick(rng)];
            SigmaVector sigma = sample_sigma_per_frame(1, cfg.p_mean, cfg.p_std, rng);
            Clip noise = detail::noise_like(ex.depth, rng);
            batch.push_back({ex, std::move(sigma), std::move(noise)});
        }
        const double loss = detail::apply_batch(model, opt, batch, mask, cfg);
        if (curve) curve->push_back({"spatial", step, loss});
    }
    return model;
}

/// Stage 2: temporal layers on clips of length F ~ U[1, f_max] with per-frame
/// noise. With `joint` the spatial layers are trained as well.
inline DenoiserModel train_temporal(DenoiserModel model, const std::vector<TrainingSequence>& sequences,
                                    const TrainConfig& cfg, LossCurve* curve = nullptr, bool joint = false) {
    cfg.validate();
    detail::require(!sequences.empty(), "train_temporal: empty dataset");
    for (const auto& s : sequences) {
        detail::require(!s.depth.empty() && s.depth.frames() >= 1, "train_temporal: sequence shorter than one frame");
        detail::require(s.depth.frames() >= cfg.f_max, "train_temporal: sequence shorter than f_max");
        detail::require(s.cond.frames() == s.depth.frames(), "train_temporal: condition/depth length mismatch");
    }
    const GroupMask mask{joint, true};
    AdamOptimizer opt(model.params(), cfg, mask);
    Rng rng(cfg.seed + 1);
    std::uniform_int_distribution<std::size_t> pick(0, sequences.size() - 1);
    for (std::size_t step = 0; step < cfg.temporal_steps; ++step) {
        std::vector<detail::DrawnItem> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t len = sample_clip_length(cfg.f_max, rng);
            const auto& seq = sequences[pick(rng)];
            const std::size_t start =
                std::uniform_int_distribution<std::size_t>(0, seq.depth.frames() - len)(rng);
            TrainingExample ex{seq.depth.slice(start, len), seq.cond.slice(start, len)};
            SigmaVector sigma = sample_sigma_per_frame(len, cfg.p_mean, cfg.p_std, rng);
            Clip noise = detail::noise_like(ex.depth, rng);
            batch.push_back({std::move(ex), std::move(sigma), std::move(noise)});
        }
        const double loss = detail::apply_batch(model, opt, batch, mask, cfg);
        if (curve) curve->push_back({joint ? "joint" : "temporal", step, loss});
    }
    return model;
}

/// Single-frame examples extracted from every frame of every sequence.
inline std::vector<TrainingExample> single_frames(const std::vector<TrainingSequence>& sequences) {
    std::vector<TrainingExample> out;
    for (const auto& s : sequences)
        for (std::size_t f = 0; f < s.depth.frames(); ++f) out.push_back({s.depth.slice(f, 1), s.cond.slice(f, 1)});
    return out;
}

} // namespace streamdepth
