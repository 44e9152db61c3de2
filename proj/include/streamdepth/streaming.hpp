#pragma once

// Arbitrary-length inference: single-clip sampling and the three
// sliding-window strategies (independent clips, replacement conditioning and
// clean-context conditioning with per-frame noise levels).

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "streamdepth/diffusion.hpp"
#include "streamdepth/tensor.hpp"

namespace streamdepth {

enum class Strategy { naive, replacement, context_aware };

inline std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::naive: return "naive";
    case Strategy::replacement: return "replacement";
    case Strategy::context_aware: return "context";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view name) {
    if (name == "naive") return Strategy::naive;
    if (name == "replacement") return Strategy::replacement;
    if (name == "context" || name == "context_aware") return Strategy::context_aware;
    throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected naive|replacement|context)");
}

struct StreamConfig {
    std::size_t clip_length = 10;
    std::size_t overlap = 5;
    Strategy strategy = Strategy::context_aware;
    double sigma_eps = std::exp(-4.0);
    ScheduleParams schedule{};
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(clip_length >= 1, "StreamConfig: clip length must be >= 1");
        detail::require(overlap < clip_length, "StreamConfig: overlap must be smaller than the clip length");
        if (strategy != Strategy::naive)
            detail::require(overlap >= 1, "StreamConfig: strategy '" + std::string(to_string(strategy)) +
                                              "' needs at least one overlapping frame");
        if (strategy == Strategy::context_aware)
            detail::require(std::isfinite(sigma_eps) && sigma_eps > 0.0, "StreamConfig: sigma_eps must be positive");
    }
};

/// Last W emitted depth frames plus the number of frames emitted so far.
struct WindowState {
    std::optional<Clip> context_frames;
    std::size_t global_frame_index = 0;
};

struct ClipRecord {
    std::size_t index;
    std::size_t first_frame;
    std::size_t emitted_first;
    std::size_t emitted_count;
    std::size_t denoiser_calls;
};

struct StreamHooks {
    std::function<void(std::size_t clip, std::size_t step)> on_step;
    std::function<void(const ClipRecord&)> on_clip;
};

namespace detail {

inline Clip depth_noise(std::size_t frames, const Clip& cond, double sigma, Rng& rng) {
    Clip z(frames, 1, cond.height(), cond.width());
    fill_standard_normal(z.data(), rng);
    for (double& v : z.data()) v *= sigma;
    return z;
}

inline std::vector<bool> update_mask(std::size_t frames, std::size_t first_updated) {
    std::vector<bool> m(frames, false);
    for (std::size_t f = first_updated; f < frames; ++f) m[f] = true;
    return m;
}

/// Condition frames [start, start + length), repeating the last frame past the end.
inline Clip padded_window(const Clip& video, std::size_t start, std::size_t length) {
    Clip out(length, video.channels(), video.height(), video.width());
    for (std::size_t f = 0; f < length; ++f) {
        const std::size_t src = std::min(start + f, video.frames() - 1);
        std::copy(video.frame(src).begin(), video.frame(src).end(), out.frame(f).begin());
    }
    return out;
}

} // namespace detail

/// Samples one depth clip from pure noise: z_T ~ N(0, sigma_T^2 I), then Euler
/// steps t = T..1 with the denoiser evaluated at a shared noise level.
template <Denoiser D>
Clip infer_clip(const D& denoiser, const Clip& cond, const NoiseSchedule& schedule, Rng& rng,
                const std::function<void(std::size_t)>& on_step = {}) {
    detail::require(!cond.empty(), "infer_clip: empty condition clip");
    detail::require(schedule.steps() >= 1, "infer_clip: empty schedule");
    const std::size_t frames = cond.frames();
    Clip z = detail::depth_noise(frames, cond, schedule.sigma_max(), rng);
    const std::vector<bool> all(frames, true);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
        const Clip z0 = denoiser.denoise(z, SigmaVector(frames, schedule[t]), cond);
        z = euler_step(z, z0, schedule[t], schedule[t - 1], all);
        if (on_step) on_step(t);
    }
    return z;
}

/// Samples frames W..F of a clip whose first W frames are `context`
/// (previously emitted predictions). Returns the full F-frame clip.
template <Denoiser D>
Clip infer_continuation(const D& denoiser, const Clip& cond, const Clip& context, Strategy strategy,
                        double sigma_eps, const NoiseSchedule& schedule, Rng& rng,
                        const std::function<void(std::size_t)>& on_step = {}) {
    const std::size_t frames = cond.frames();
    const std::size_t w = context.frames();
    detail::require(w < frames, "infer_continuation: context must be shorter than the clip");
    detail::require(context.channels() == 1 && context.same_spatial(cond),
                    "infer_continuation: context shape does not match the condition");
    if (strategy == Strategy::naive) return infer_clip(denoiser, cond, schedule, rng, on_step);

    Clip fresh = detail::depth_noise(frames - w, cond, schedule.sigma_max(), rng);
    const std::vector<bool> mask = detail::update_mask(frames, w);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
        const double sigma_t = schedule[t];
        Clip z;
        Clip z0;
        if (strategy == Strategy::replacement) {
            z = Clip::concat(forward_diffuse(context, SigmaVector(w, sigma_t), rng), fresh);
            z0 = denoiser.denoise(z, SigmaVector(frames, sigma_t), cond);
        } else {
            z = Clip::concat(context, fresh);
            z0 = denoiser.denoise(z, SigmaVector::mixed(w, sigma_eps, frames, sigma_t), cond);
        }
        z = euler_step(z, z0, sigma_t, schedule[t - 1], mask);
        fresh = z.slice(w, frames - w);
        if (on_step) on_step(t);
    }
    return Clip::concat(context, fresh);
}

/// Number of clip inferences needed for a video of `frames` frames.
inline std::size_t clip_count(std::size_t frames, std::size_t clip_length, std::size_t overlap) {
    detail::require(overlap < clip_length, "clip_count: overlap must be smaller than the clip length");
    if (frames <= clip_length) return frames == 0 ? 0 : 1;
    const std::size_t stride = clip_length - overlap;
    return 1 + (frames - clip_length + stride - 1) / stride;
}

/// Processes one window and appends its new frames to `out` (frames-so-far
/// is `state.global_frame_index`). Shared by the batch and stream drivers.
template <Denoiser D>
void run_window(const D& denoiser, const Clip& cond_window, std::size_t available, const StreamConfig& cfg,
                const NoiseSchedule& schedule, Rng& rng, WindowState& state, std::size_t clip_index,
                std::vector<Clip>& emitted, const StreamHooks& hooks) {
    const std::size_t first = state.global_frame_index - (state.context_frames ? cfg.overlap : 0);
    std::size_t steps = 0;
    auto on_step = [&](std::size_t t) {
        ++steps;
        if (hooks.on_step) hooks.on_step(clip_index, t);
    };
    Clip depth = state.context_frames
                     ? infer_continuation(denoiser, cond_window, *state.context_frames, cfg.strategy, cfg.sigma_eps,
                                          schedule, rng, on_step)
                     : infer_clip(denoiser, cond_window, schedule, rng, on_step);
    const std::size_t skip = state.context_frames ? cfg.overlap : 0;
    const std::size_t last = std::min(cfg.clip_length, available);
    const std::size_t count = last - skip;
    emitted.push_back(depth.slice(skip, count));
    state.global_frame_index += count;

    // Context for the next window: the last W emitted frames. These always lie
    // inside the current window because W < F.
    if (cfg.overlap > 0 && last >= cfg.overlap) state.context_frames = depth.slice(last - cfg.overlap, cfg.overlap);
    if (hooks.on_clip) hooks.on_clip({clip_index, first, first + skip, count, steps});
}

namespace detail {

inline Clip concat_all(const std::vector<Clip>& parts) {
    std::size_t total = 0;
    for (const auto& p : parts) total += p.frames();
    Clip out(total, parts.front().channels(), parts.front().height(), parts.front().width());
    std::size_t at = 0;
    for (const auto& p : parts) {
        out.assign_frames(at, p);
        at += p.frames();
    }
    return out;
}

} // namespace detail

/// Batch driver: runs the configured strategy over a whole condition video.
/// Output has exactly as many frames as the input.
template <Denoiser D>
Clip sliding_window(const D& denoiser, const Clip& video_cond, const StreamConfig& cfg, const StreamHooks& hooks = {}) {
    cfg.validate();
    detail::require(!video_cond.empty(), "sliding_window: empty video");
    const NoiseSchedule schedule = make_schedule(cfg.schedule);
    Rng rng(cfg.seed);
    WindowState state;
    std::vector<Clip> emitted;
    const std::size_t n = video_cond.frames();
    for (std::size_t k = 0; state.global_frame_index < n; ++k) {
        const std::size_t start = k == 0 ? 0 : state.global_frame_index - cfg.overlap;
        const Clip window = detail::padded_window(video_cond, start, cfg.clip_length);
        run_window(denoiser, window, n - start, cfg, schedule, rng, state, k, emitted, hooks);
    }
    return detail::concat_all(emitted);
}

template <Denoiser D>
Clip naive_sliding_window(const D& denoiser, const Clip& video_cond, StreamConfig cfg, const StreamHooks& hooks = {}) {
    cfg.strategy = Strategy::naive;
    return sliding_window(denoiser, video_cond, cfg, hooks);
}

template <Denoiser D>
Clip replacement_sliding_window(const D& denoiser, const Clip& video_cond, StreamConfig cfg,
                                const StreamHooks& hooks = {}) {
    cfg.strategy = Strategy::replacement;
    return sliding_window(denoiser, video_cond, cfg, hooks);
}

template <Denoiser D>
Clip context_aware_sliding_window(const D& denoiser, const Clip& video_cond, StreamConfig cfg,
                                  const StreamHooks& hooks = {}) {
    cfg.strategy = Strategy::context_aware;
    return sliding_window(denoiser, video_cond, cfg, hooks);
}

/// Incremental driver: frames are pushed one at a time and depth frames are
/// released as soon as a window can run. `finish` flushes the final partial
/// window (padded by repeating its last condition frame).
template <Denoiser D>
class StreamRunner {
public:
    StreamRunner(const D& denoiser, StreamConfig cfg, StreamHooks hooks = {})
        : denoiser_(denoiser), cfg_(std::move(cfg)), hooks_(std::move(hooks)), rng_(cfg_.seed) {
        cfg_.validate();
        schedule_ = make_schedule(cfg_.schedule);
    }

    /// Accepts one condition frame (1 x C x H x W). Returns newly emitted depth frames, if any.
    std::optional<Clip> push(const Clip& frame) {
        detail::require(!finished_, "StreamRunner::push: stream already finished");
        detail::require(frame.frames() == 1, "StreamRunner::push: expected a single frame");
        if (buffer_.empty()) {
            channels_ = frame.channels();
            height_ = frame.height();
            width_ = frame.width();
        } else {
            detail::require(frame.channels() == channels_ && frame.height() == height_ && frame.width() == width_,
                            "StreamRunner::push: frame " + std::to_string(received_) +
                                " does not match the stream's frame shape");
        }
        buffer_.push_back(frame);
        ++received_;
        std::vector<Clip> out;
        while (received_ >= window_start() + cfg_.clip_length) run(out);
        if (out.empty()) return std::nullopt;
        return detail::concat_all(out);
    }

    /// Flushes the remaining frames. Returns the last emitted frames, if any.
    std::optional<Clip> finish() {
        finished_ = true;
        std::vector<Clip> out;
        if (state_.global_frame_index < received_) run(out);
        if (out.empty()) return std::nullopt;
        return detail::concat_all(out);
    }

    [[nodiscard]] const WindowState& state() const noexcept { return state_; }
    [[nodiscard]] std::size_t clips_run() const noexcept { return clips_; }

private:
    [[nodiscard]] std::size_t window_start() const {
        return clips_ == 0 ? 0 : state_.global_frame_index - cfg_.overlap;
    }

    void run(std::vector<Clip>& out) {
        const std::size_t start = window_start();
        // buffer_ holds frames [buffer_offset_, received_).
        Clip window(cfg_.clip_length, channels_, height_, width_);
        for (std::size_t f = 0; f < cfg_.clip_length; ++f) {
            const std::size_t src = std::min(start + f, received_ - 1) - buffer_offset_;
            window.assign_frames(f, buffer_[src]);
        }
        run_window(denoiser_, window, received_ - start, cfg_, schedule_, rng_, state_, clips_, out, hooks_);
        ++clips_;
        const std::size_t keep_from = state_.global_frame_index - std::min(cfg_.overlap, state_.global_frame_index);
        while (buffer_offset_ < keep_from && !buffer_.empty()) {
            buffer_.erase(buffer_.begin());
            ++buffer_offset_;
        }
    }

    const D& denoiser_;
    StreamConfig cfg_;
    StreamHooks hooks_;
    Rng rng_;
    NoiseSchedule schedule_;
    WindowState state_;
    std::vector<Clip> buffer_;
    std::size_t buffer_offset_ = 0;
    std::size_t received_ = 0;
    std::size_t clips_ = 0;
    std::size_t channels_ = 0, height_ = 0, width_ = 0;
    bool finished_ = false;
};

} // namespace streamdepth
