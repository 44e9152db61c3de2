#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace streamdepth {

/// Seeded generator used by every stochastic operation in the library.
using Rng = std::mt19937_64;

/// Raised when an input is well-formed but carries too little information
/// (empty masks, too few valid pixels, short sequences).
class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by readers when a file does not match its declared format.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Independent child seed number `index` of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::size_t index) {
    return detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(index) + 1));
}

/// Dense F x C x H x W tensor of finite doubles, row-major.
///
/// One clip is the unit that the diffusion process acts on: depth clips
/// carry C = 1, condition clips carry C >= 1. Frames are contiguous, so
/// `frame(f)` is a cheap span over C*H*W values.
class Clip {
public:
    Clip() = default;

    Clip(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
        : frames_(frames), channels_(channels), height_(height), width_(width),
          data_(frames * channels * height * width, fill) {
        detail::require(frames >= 1 && channels >= 1 && height >= 1 && width >= 1,
                        "Clip: all dimensions must be >= 1");
        detail::require(std::isfinite(fill), "Clip: fill value must be finite");
    }

    Clip(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
        : frames_(frames), channels_(channels), height_(height), width_(width), data_(std::move(data)) {
        detail::require(frames >= 1 && channels >= 1 && height >= 1 && width >= 1,
                        "Clip: all dimensions must be >= 1");
        detail::require(data_.size() == frames * channels * height * width, "Clip: data size does not match dims");
        for (double v : data_) detail::require(std::isfinite(v), "Clip: non-finite element");
    }

    [[nodiscard]] std::size_t frames() const noexcept { return frames_; }
    [[nodiscard]] std::size_t channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t height() const noexcept { return height_; }
    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t pixels() const noexcept { return height_ * width_; }
    [[nodiscard]] std::size_t frame_size() const noexcept { return channels_ * height_ * width_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<double> frame(std::size_t f) {
        return {data_.data() + f * frame_size(), frame_size()};
    }
    [[nodiscard]] std::span<const double> frame(std::size_t f) const {
        return {data_.data() + f * frame_size(), frame_size()};
    }

    double& at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((f * channels_ + c) * height_ + y) * width_ + x];
    }
    [[nodiscard]] double at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((f * channels_ + c) * height_ + y) * width_ + x];
    }

    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    [[nodiscard]] bool same_shape(const Clip& o) const noexcept {
        return frames_ == o.frames_ && channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    [[nodiscard]] bool same_spatial(const Clip& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_;
    }

    [[nodiscard]] bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Frames [first, first + count) as a new clip.
    [[nodiscard]] Clip slice(std::size_t first, std::size_t count) const {
        detail::require(count >= 1 && first + count <= frames_, "Clip::slice: range out of bounds");
        Clip out(count, channels_, height_, width_);
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(first * frame_size()),
                  data_.begin() + static_cast<std::ptrdiff_t>((first + count) * frame_size()), out.data_.begin());
        return out;
    }

    /// Writes `src` over frames starting at `first`.
    void assign_frames(std::size_t first, const Clip& src) {
        detail::require(src.channels_ == channels_ && src.same_spatial(*this), "Clip::assign_frames: shape mismatch");
        detail::require(first + src.frames_ <= frames_, "Clip::assign_frames: range out of bounds");
        std::copy(src.data_.begin(), src.data_.end(),
                  data_.begin() + static_cast<std::ptrdiff_t>(first * frame_size()));
    }

    /// Frame-axis concatenation.
    [[nodiscard]] static Clip concat(const Clip& a, const Clip& b) {
        detail::require(a.channels_ == b.channels_ && a.same_spatial(b), "Clip::concat: shape mismatch");
        Clip out(a.frames_ + b.frames_, a.channels_, a.height_, a.width_);
        out.assign_frames(0, a);
        out.assign_frames(a.frames_, b);
        return out;
    }

    friend bool operator==(const Clip&, const Clip&) = default;

private:
    std::size_t frames_ = 0;
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// One positive noise level per frame.
class SigmaVector {
public:
    SigmaVector() = default;

    explicit SigmaVector(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
        detail::require(!sigmas_.empty(), "SigmaVector: must hold at least one level");
        for (double s : sigmas_)
            detail::require(std::isfinite(s) && s > 0.0, "SigmaVector: noise levels must be positive and finite");
    }

    SigmaVector(std::initializer_list<double> sigmas) : SigmaVector(std::vector<double>(sigmas)) {}

    SigmaVector(std::size_t frames, double sigma) : SigmaVector(std::vector<double>(frames, sigma)) {}

    /// W context frames at `sigma_context` followed by F - W frames at `sigma`.
    static SigmaVector mixed(std::size_t context, double sigma_context, std::size_t frames, double sigma) {
        detail::require(context <= frames, "SigmaVector::mixed: context longer than clip");
        std::vector<double> s(frames, sigma);
        for (std::size_t i = 0; i < context; ++i) s[i] = sigma_context;
        return SigmaVector(std::move(s));
    }

    [[nodiscard]] std::size_t size() const noexcept { return sigmas_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return sigmas_[i]; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return sigmas_; }
    [[nodiscard]] auto begin() const noexcept { return sigmas_.begin(); }
    [[nodiscard]] auto end() const noexcept { return sigmas_.end(); }

    friend bool operator==(const SigmaVector&, const SigmaVector&) = default;

private:
    std::vector<double> sigmas_;
};

} // namespace streamdepth
