#pragma once

// Small factorized video denoiser F_theta.
//
// Layout: input conv -> [spatial residual block -> temporal block] x N -> output conv,
// plus a linear 1x1 skip from the input channels to the output. Spatial layers
// treat the clip as a batch of independent images; temporal blocks mix along
// the frame axis per pixel with a neighbour-frame convolution followed by
// single-head self-attention over value differences. Both terms vanish for a
// single frame, and temporal blocks start as the identity (zero output
// projections), so a fresh model is a per-frame model.
//
// Activations are stored as one row-major (F*H*W) x channels matrix per layer,
// frame-major, so spatial convolutions become one im2col GEMM per layer.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamdepth/diffusion.hpp"
#include "streamdepth/tensor.hpp"

namespace streamdepth {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ParamGroup : std::uint8_t { spatial = 0, temporal = 1 };

struct NetConfig {
    std::size_t cond_channels = 1;
    std::size_t width = 16;
    std::size_t attn_dim = 8;
    std::size_t embed_freqs = 8;
    std::vector<std::size_t> dilations{1, 2, 4};
    bool coord_channels = true;
    std::uint64_t init_seed = 0;

    [[nodiscard]] std::size_t input_channels() const { return 1 + cond_channels + (coord_channels ? 2 : 0); }

    void validate() const {
        detail::require(cond_channels >= 1 && width >= 1 && attn_dim >= 1 && embed_freqs >= 1,
                        "NetConfig: channel counts must be >= 1");
        detail::require(!dilations.empty(), "NetConfig: need at least one block");
        for (auto d : dilations) detail::require(d >= 1, "NetConfig: dilation must be >= 1");
    }

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct ParamTensor {
    std::string name;
    ParamGroup group;
    Mat value;
};

/// Ordered list of named parameter tensors; also used for gradients and
/// optimizer moments (same names and shapes).
class ParamSet {
public:
    std::vector<ParamTensor> tensors;

    [[nodiscard]] std::size_t size() const noexcept { return tensors.size(); }
    Mat& operator[](std::size_t i) { return tensors[i].value; }
    const Mat& operator[](std::size_t i) const { return tensors[i].value; }

    [[nodiscard]] std::size_t scalar_count(std::optional<ParamGroup> group = std::nullopt) const {
        std::size_t n = 0;
        for (const auto& t : tensors)
            if (!group || t.group == *group) n += static_cast<std::size_t>(t.value.size());
        return n;
    }

    [[nodiscard]] ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& t : tensors) out.tensors.push_back({t.name, t.group, Mat::Zero(t.value.rows(), t.value.cols())});
        return out;
    }

    void set_zero() {
        for (auto& t : tensors) t.value.setZero();
    }

    /// this += other (same layout).
    void accumulate(const ParamSet& other, double scale = 1.0) {
        for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].value += scale * other.tensors[i].value;
    }

    [[nodiscard]] double squared_norm() const {
        double s = 0.0;
        for (const auto& t : tensors) s += t.value.squaredNorm();
        return s;
    }

    [[nodiscard]] bool group_equal(const ParamSet& other, ParamGroup group) const {
        if (other.tensors.size() != tensors.size()) return false;
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (tensors[i].group != group) continue;
            const auto& a = tensors[i].value;
            const auto& b = other.tensors[i].value;
            if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
            if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
        }
        return true;
    }
};

/// Which parameter groups receive gradients / updates.
struct GroupMask {
    bool spatial = true;
    bool temporal = true;
    [[nodiscard]] bool operator()(ParamGroup g) const { return g == ParamGroup::spatial ? spatial : temporal; }
};

class DenoiserModel {
public:
    struct SpatialIdx {
        std::size_t w, b;
    };
    struct TemporalIdx {
        std::size_t conv_w, q, k, v, o;
    };

    explicit DenoiserModel(NetConfig cfg = {}) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build();
        initialize();
    }

    [[nodiscard]] const NetConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] ParamSet& params() noexcept { return params_; }
    [[nodiscard]] const ParamSet& params() const noexcept { return params_; }

    /// When false, temporal blocks are bypassed entirely.
    bool temporal_enabled = true;

    /// Restores the identity mapping of every temporal block.
    void reset_temporal() {
        Rng rng(cfg_.init_seed ^ 0x9e3779b97f4a7c15ULL);
        for (const auto& t : temporal_) init_temporal(t, rng);
    }

    [[nodiscard]] std::size_t in_w() const { return in_w_; }
    [[nodiscard]] std::size_t in_b() const { return in_b_; }
    [[nodiscard]] std::size_t emb_w() const { return emb_w_; }
    [[nodiscard]] std::size_t emb_b() const { return emb_b_; }
    [[nodiscard]] std::size_t out_w() const { return out_w_; }
    [[nodiscard]] std::size_t out_b() const { return out_b_; }
    [[nodiscard]] std::size_t skip_w() const { return skip_w_; }
    [[nodiscard]] const std::vector<SpatialIdx>& spatial_blocks() const { return spatial_; }
    [[nodiscard]] const std::vector<TemporalIdx>& temporal_blocks() const { return temporal_; }

private:
    std::size_t add(std::string name, ParamGroup g, std::size_t rows, std::size_t cols) {
        params_.tensors.push_back({std::move(name), g, Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))});
        return params_.size() - 1;
    }

    void build() {
        const std::size_t c = cfg_.width;
        const std::size_t a = cfg_.attn_dim;
        in_w_ = add("in.w", ParamGroup::spatial, 9 * cfg_.input_channels(), c);
        in_b_ = add("in.b", ParamGroup::spatial, 1, c);
        emb_w_ = add("emb.w", ParamGroup::spatial, 2 * cfg_.embed_freqs, c);
        emb_b_ = add("emb.b", ParamGroup::spatial, 1, c);
        for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
            const std::string s = "block" + std::to_string(i);
            spatial_.push_back({add(s + ".w", ParamGroup::spatial, 9 * c, c), add(s + ".b", ParamGroup::spatial, 1, c)});
            const std::string t = "temporal" + std::to_string(i);
            temporal_.push_back({add(t + ".conv.w", ParamGroup::temporal, 2 * c, c),
                                 add(t + ".q", ParamGroup::temporal, c, a), add(t + ".k", ParamGroup::temporal, c, a),
                                 add(t + ".v", ParamGroup::temporal, c, a), add(t + ".o", ParamGroup::temporal, a, c)});
        }
        out_w_ = add("out.w", ParamGroup::spatial, 9 * c, 1);
        out_b_ = add("out.b", ParamGroup::spatial, 1, 1);
        skip_w_ = add("skip.w", ParamGroup::spatial, cfg_.input_channels(), 1);
    }

    static void randn(Mat& m, double stddev, Rng& rng) {
        std::normal_distribution<double> n(0.0, stddev);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    }

    void init_temporal(const TemporalIdx& t, Rng& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
        params_[t.conv_w].setZero();
        randn(params_[t.q], s, rng);
        randn(params_[t.k], s, rng);
        randn(params_[t.v], s, rng);
        params_[t.o].setZero();
    }

    void initialize() {
        Rng rng(cfg_.init_seed);
        const auto fan = [](const Mat& m) { return 1.0 / std::sqrt(static_cast<double>(m.rows())); };
        randn(params_[in_w_], fan(params_[in_w_]), rng);
        randn(params_[emb_w_], fan(params_[emb_w_]), rng);
        for (const auto& b : spatial_) randn(params_[b.w], 0.5 * fan(params_[b.w]), rng);
        randn(params_[out_w_], 0.1 * fan(params_[out_w_]), rng);
        reset_temporal();
    }

    NetConfig cfg_;
    ParamSet params_;
    std::size_t in_w_ = 0, in_b_ = 0, emb_w_ = 0, emb_b_ = 0, out_w_ = 0, out_b_ = 0, skip_w_ = 0;
    std::vector<SpatialIdx> spatial_;
    std::vector<TemporalIdx> temporal_;
};

namespace net {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

/// 3x3 neighbour table with dilation; -1 marks zero padding.
inline std::vector<int> conv_taps(std::size_t h, std::size_t w, std::size_t dilation) {
    std::vector<int> taps(h * w * 9, -1);
    const auto d = static_cast<long>(dilation);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (int k = 0; k < 9; ++k) {
                const long yy = static_cast<long>(y) + (k / 3 - 1) * d;
                const long xx = static_cast<long>(x) + (k % 3 - 1) * d;
                if (yy >= 0 && yy < static_cast<long>(h) && xx >= 0 && xx < static_cast<long>(w))
                    taps[(y * w + x) * 9 + static_cast<std::size_t>(k)] = static_cast<int>(yy * static_cast<long>(w) + xx);
            }
    return taps;
}

/// (F*P x C) -> (F*P x 9C) patch matrix.
inline Mat im2col(const Mat& x, std::size_t frames, std::size_t pixels, const std::vector<int>& taps) {
    const auto c = static_cast<std::size_t>(x.cols());
    Mat out = Mat::Zero(x.rows(), static_cast<Eigen::Index>(9 * c));
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t p = 0; p < pixels; ++p) {
            double* dst = out.data() + (f * pixels + p) * 9 * c;
            for (std::size_t k = 0; k < 9; ++k) {
                const int n = taps[p * 9 + k];
                if (n < 0) continue;
                const double* src = x.data() + (f * pixels + static_cast<std::size_t>(n)) * c;
                std::copy(src, src + c, dst + k * c);
            }
        }
    return out;
}

/// Adjoint of im2col: scatters patch gradients back onto the input grid.
inline void col2im_add(const Mat& dpatch, std::size_t frames, std::size_t pixels, const std::vector<int>& taps, Mat& dx) {
    const auto c = static_cast<std::size_t>(dx.cols());
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t p = 0; p < pixels; ++p) {
            const double* src = dpatch.data() + (f * pixels + p) * 9 * c;
            for (std::size_t k = 0; k < 9; ++k) {
                const int n = taps[p * 9 + k];
                if (n < 0) continue;
                double* dst = dx.data() + (f * pixels + static_cast<std::size_t>(n)) * c;
                for (std::size_t j = 0; j < c; ++j) dst[j] += src[k * c + j];
            }
        }
}

/// (F*P x C) -> (F*P x 2C): frames f-1 and f+1 at the same pixel, zero outside the clip.
inline Mat time_patches(const Mat& x, std::size_t frames, std::size_t pixels) {
    const auto c = static_cast<Eigen::Index>(x.cols());
    const auto p = static_cast<Eigen::Index>(pixels);
    Mat out = Mat::Zero(x.rows(), 2 * c);
    for (std::size_t f = 0; f < frames; ++f)
        for (int k = 0; k < 2; ++k) {
            const long g = static_cast<long>(f) + 2 * k - 1;
            if (g < 0 || g >= static_cast<long>(frames)) continue;
            out.block(static_cast<Eigen::Index>(f) * p, k * c, p, c) = x.middleRows(g * p, p);
        }
    return out;
}

inline void time_patches_adjoint_add(const Mat& dpatch, std::size_t frames, std::size_t pixels, Mat& dx) {
    const auto c = dx.cols();
    const auto p = static_cast<Eigen::Index>(pixels);
    for (std::size_t f = 0; f < frames; ++f)
        for (int k = 0; k < 2; ++k) {
            const long g = static_cast<long>(f) + 2 * k - 1;
            if (g < 0 || g >= static_cast<long>(frames)) continue;
            dx.middleRows(g * p, p) += dpatch.block(static_cast<Eigen::Index>(f) * p, k * c, p, c);
        }
}

// Frequencies 2^(k/2 - 2): the fastest completes about one cycle over the
// c_noise range of the schedule, so rarely trained levels such as sigma_eps
// get features close to those of trained neighbours.
inline Eigen::RowVectorXd noise_features(double c_noise, std::size_t freqs) {
    Eigen::RowVectorXd e(static_cast<Eigen::Index>(2 * freqs));
    for (std::size_t k = 0; k < freqs; ++k) {
        const double omega = std::pow(2.0, 0.5 * static_cast<double>(k) - 2.0);
        e(static_cast<Eigen::Index>(k)) = std::sin(omega * c_noise);
        e(static_cast<Eigen::Index>(freqs + k)) = std::cos(omega * c_noise);
    }
    return e;
}

struct TemporalCache {
    Mat input;      // block input
    Mat tpatch;     // time patches of input
    Mat mixed;      // input + temporal conv
    Mat q, k, v;    // projections of `mixed`
    std::vector<double> attn;  // pixels x F x F softmax weights
    Mat attended;   // sum_g a_fg (v_g - v_f), before the output projection
};

struct ForwardCache {
    std::size_t frames = 0, height = 0, width = 0;
    Mat x0;                        // input channels
    Mat emb;                       // F x 2K noise features
    Mat h_in;                      // pre-activation after the input conv
    std::vector<Mat> block_in;     // spatial block inputs
    std::vector<Mat> block_pre;    // spatial block conv outputs (pre-activation)
    std::vector<TemporalCache> temporal;
    Mat head;                      // features fed to the output conv
    Mat out;                       // F*P x 1
};

inline Mat build_input(const NetConfig& cfg, const Clip& z_in, const Clip& cond) {
    const std::size_t f_n = z_in.frames(), h = z_in.height(), w = z_in.width(), p_n = h * w;
    Mat x0(static_cast<Eigen::Index>(f_n * p_n), static_cast<Eigen::Index>(cfg.input_channels()));
    for (std::size_t f = 0; f < f_n; ++f)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const auto r = static_cast<Eigen::Index>(f * p_n + y * w + x);
                Eigen::Index c = 0;
                x0(r, c++) = z_in.at(f, 0, y, x);
                for (std::size_t k = 0; k < cfg.cond_channels; ++k) x0(r, c++) = cond.at(f, k, y, x);
                if (cfg.coord_channels) {
                    x0(r, c++) = w > 1 ? 2.0 * static_cast<double>(x) / static_cast<double>(w - 1) - 1.0 : 0.0;
                    x0(r, c++) = h > 1 ? 2.0 * static_cast<double>(y) / static_cast<double>(h - 1) - 1.0 : 0.0;
                }
            }
    return x0;
}

inline void attention_forward(TemporalCache& tc, std::size_t frames, std::size_t pixels, std::size_t adim) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(adim));
    tc.attn.assign(pixels * frames * frames, 0.0);
    tc.attended = Mat::Zero(tc.q.rows(), tc.q.cols());
    std::vector<double> s(frames);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t f = 0; f < frames; ++f) {
            const auto rf = static_cast<Eigen::Index>(f * pixels + p);
            double mx = -1e300;
            for (std::size_t g = 0; g < frames; ++g) {
                const auto rg = static_cast<Eigen::Index>(g * pixels + p);
                s[g] = scale * tc.q.row(rf).dot(tc.k.row(rg));
                mx = std::max(mx, s[g]);
            }
            double z = 0.0;
            for (std::size_t g = 0; g < frames; ++g) {
                s[g] = std::exp(s[g] - mx);
                z += s[g];
            }
            double* a = tc.attn.data() + (p * frames + f) * frames;
            for (std::size_t g = 0; g < frames; ++g) {
                a[g] = s[g] / z;
                tc.attended.row(rf) += a[g] * tc.v.row(static_cast<Eigen::Index>(g * pixels + p));
            }
            tc.attended.row(rf) -= tc.v.row(rf);
        }
    }
}

/// Runs F_theta. With keep = false the cache only holds the output.
inline ForwardCache forward(const DenoiserModel& model, const Clip& z_in, std::span<const double> c_noise,
                            const Clip& cond, bool keep = true) {
    const NetConfig& cfg = model.config();
    const ParamSet& ps = model.params();
    detail::require(z_in.channels() == 1, "net_forward: depth clip must have one channel");
    detail::require(cond.frames() == z_in.frames() && cond.same_spatial(z_in),
                    "net_forward: condition shape does not match the depth clip");
    detail::require(cond.channels() == cfg.cond_channels, "net_forward: condition channel count mismatch");
    detail::require(c_noise.size() == z_in.frames(), "net_forward: c_noise length must equal frame count");

    ForwardCache cache;
    const std::size_t f_n = z_in.frames(), p_n = z_in.pixels();
    cache.frames = f_n;
    cache.height = z_in.height();
    cache.width = z_in.width();
    cache.x0 = build_input(cfg, z_in, cond);

    cache.emb = Mat(static_cast<Eigen::Index>(f_n), static_cast<Eigen::Index>(2 * cfg.embed_freqs));
    for (std::size_t f = 0; f < f_n; ++f) cache.emb.row(static_cast<Eigen::Index>(f)) = noise_features(c_noise[f], cfg.embed_freqs);
    const Mat emb_c = (cache.emb * ps[model.emb_w()]).rowwise() + ps[model.emb_b()].row(0);

    const auto taps1 = conv_taps(cache.height, cache.width, 1);
    Mat h = im2col(cache.x0, f_n, p_n, taps1) * ps[model.in_w()];
    h.rowwise() += ps[model.in_b()].row(0);
    for (std::size_t f = 0; f < f_n; ++f)
        h.middleRows(static_cast<Eigen::Index>(f * p_n), static_cast<Eigen::Index>(p_n)).rowwise() +=
            emb_c.row(static_cast<Eigen::Index>(f));
    Mat x = h.unaryExpr([](double v) { return silu(v); });
    if (keep) cache.h_in = std::move(h);

    for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
        const auto& sb = model.spatial_blocks()[b];
        const auto taps = conv_taps(cache.height, cache.width, cfg.dilations[b]);
        Mat pre = im2col(x, f_n, p_n, taps) * ps[sb.w];
        pre.rowwise() += ps[sb.b].row(0);
        Mat y = x + pre.unaryExpr([](double v) { return silu(v); });
        if (keep) {
            cache.block_in.push_back(std::move(x));
            cache.block_pre.push_back(std::move(pre));
        }
        x = std::move(y);

        if (!model.temporal_enabled) continue;
        const auto& tb = model.temporal_blocks()[b];
        TemporalCache tc;
        tc.tpatch = time_patches(x, f_n, p_n);
        tc.mixed = x + tc.tpatch * ps[tb.conv_w];
        tc.q = tc.mixed * ps[tb.q];
        tc.k = tc.mixed * ps[tb.k];
        tc.v = tc.mixed * ps[tb.v];
        attention_forward(tc, f_n, p_n, cfg.attn_dim);
        Mat y2 = tc.mixed + tc.attended * ps[tb.o];
        if (keep) {
            tc.input = std::move(x);
            cache.temporal.push_back(std::move(tc));
        }
        x = std::move(y2);
    }

    Mat out = im2col(x, f_n, p_n, taps1) * ps[model.out_w()] + cache.x0 * ps[model.skip_w()];
    out.array() += ps[model.out_b()](0, 0);
    if (keep) cache.head = std::move(x);
    cache.out = std::move(out);
    return cache;
}

inline Clip to_clip(const Mat& out, std::size_t frames, std::size_t h, std::size_t w) {
    return Clip(frames, 1, h, w, std::vector<double>(out.data(), out.data() + out.size()));
}

inline void attention_backward(const TemporalCache& tc, const Mat& d_att, std::size_t frames, std::size_t pixels,
                               std::size_t adim, Mat& dq, Mat& dk, Mat& dv) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(adim));
    dq = Mat::Zero(tc.q.rows(), tc.q.cols());
    dk = Mat::Zero(tc.k.rows(), tc.k.cols());
    dv = Mat::Zero(tc.v.rows(), tc.v.cols());
    std::vector<double> da(frames), ds(frames);
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t f = 0; f < frames; ++f) {
            const auto rf = static_cast<Eigen::Index>(f * pixels + p);
            const double* a = tc.attn.data() + (p * frames + f) * frames;
            double dot = 0.0;
            for (std::size_t g = 0; g < frames; ++g) {
                const auto rg = static_cast<Eigen::Index>(g * pixels + p);
                da[g] = d_att.row(rf).dot(tc.v.row(rg));
                dv.row(rg) += a[g] * d_att.row(rf);
                dot += a[g] * da[g];
            }
            dv.row(rf) -= d_att.row(rf);
            for (std::size_t g = 0; g < frames; ++g) {
                const auto rg = static_cast<Eigen::Index>(g * pixels + p);
                ds[g] = a[g] * (da[g] - dot) * scale;
                dq.row(rf) += ds[g] * tc.k.row(rg);
                dk.row(rg) += ds[g] * tc.q.row(rf);
            }
        }
}

/// Accumulates d(loss)/d(params) into `grads` for the groups selected by `mask`,
/// given d(loss)/d(output) as an F*P x 1 matrix.
inline void backward(const DenoiserModel& model, const ForwardCache& cache, const Mat& d_out, ParamSet& grads,
                     GroupMask mask) {
    const NetConfig& cfg = model.config();
    const ParamSet& ps = model.params();
    const std::size_t f_n = cache.frames, p_n = cache.height * cache.width;
    const auto taps1 = conv_taps(cache.height, cache.width, 1);

    if (mask.spatial) {
        grads[model.out_w()] += im2col(cache.head, f_n, p_n, taps1).transpose() * d_out;
        grads[model.out_b()](0, 0) += d_out.sum();
        grads[model.skip_w()] += cache.x0.transpose() * d_out;
    }
    Mat dx = Mat::Zero(cache.head.rows(), cache.head.cols());
    col2im_add(d_out * ps[model.out_w()].transpose(), f_n, p_n, taps1, dx);

    for (std::size_t bi = cfg.dilations.size(); bi-- > 0;) {
        if (model.temporal_enabled) {
            const auto& tb = model.temporal_blocks()[bi];
            const TemporalCache& tc = cache.temporal[bi];
            if (mask.temporal) {
                grads[tb.o] += tc.attended.transpose() * dx;
            }
            const Mat d_att = dx * ps[tb.o].transpose();
            Mat dq, dk, dv;
            attention_backward(tc, d_att, f_n, p_n, cfg.attn_dim, dq, dk, dv);
            if (mask.temporal) {
                grads[tb.q] += tc.mixed.transpose() * dq;
                grads[tb.k] += tc.mixed.transpose() * dk;
                grads[tb.v] += tc.mixed.transpose() * dv;
            }
            Mat d_mixed = dx + dq * ps[tb.q].transpose() + dk * ps[tb.k].transpose() + dv * ps[tb.v].transpose();
            if (mask.temporal) {
                grads[tb.conv_w] += tc.tpatch.transpose() * d_mixed;
            }
            dx = d_mixed;
            time_patches_adjoint_add(d_mixed * ps[tb.conv_w].transpose(), f_n, p_n, dx);
        }
        // Stop once every layer below is frozen.
        const bool below_trainable = mask.spatial || (mask.temporal && model.temporal_enabled && bi > 0);
        if (!below_trainable) return;

        const auto& sb = model.spatial_blocks()[bi];
        const auto taps = conv_taps(cache.height, cache.width, cfg.dilations[bi]);
        const Mat& pre = cache.block_pre[bi];
        Mat d_pre = dx.array() * pre.unaryExpr([](double v) { return silu_grad(v); }).array();
        if (mask.spatial) {
            grads[sb.w] += im2col(cache.block_in[bi], f_n, p_n, taps).transpose() * d_pre;
            grads[sb.b] += d_pre.colwise().sum();
        }
        col2im_add(d_pre * ps[sb.w].transpose(), f_n, p_n, taps, dx);
    }
    if (!mask.spatial) return;

    Mat d_h = dx.array() * cache.h_in.unaryExpr([](double v) { return silu_grad(v); }).array();
    grads[model.in_w()] += im2col(cache.x0, f_n, p_n, taps1).transpose() * d_h;
    grads[model.in_b()] += d_h.colwise().sum();
    for (std::size_t f = 0; f < f_n; ++f) {
        const Eigen::RowVectorXd d_emb =
            d_h.middleRows(static_cast<Eigen::Index>(f * p_n), static_cast<Eigen::Index>(p_n)).colwise().sum();
        grads[model.emb_w()] += cache.emb.row(static_cast<Eigen::Index>(f)).transpose() * d_emb;
        grads[model.emb_b()] += d_emb;
    }
}

} // namespace net

/// F_theta(z_in; c_noise, cond) -> residual clip (F x 1 x H x W).
inline Clip net_forward(const DenoiserModel& model, const Clip& z_in, std::span<const double> c_noise, const Clip& cond) {
    const auto cache = net::forward(model, z_in, c_noise, cond, false);
    return net::to_clip(cache.out, z_in.frames(), z_in.height(), z_in.width());
}

/// Adapter exposing a model as F_theta for apply_denoiser.
struct NetworkResidual {
    const DenoiserModel& model;
    Clip operator()(const Clip& z_in, std::span<const double> c_noise, const Clip& cond) const {
        return net_forward(model, z_in, c_noise, cond);
    }
};

/// Preconditioned denoiser D_theta built from a trained model.
struct NetworkDenoiser {
    const DenoiserModel& model;
    double sigma_data = kDefaultSigmaData;

    [[nodiscard]] Clip denoise(const Clip& z_t, const SigmaVector& sigma, const Clip& cond) const {
        return apply_denoiser(NetworkResidual{model}, z_t, sigma, cond, sigma_data);
    }
};

} // namespace streamdepth
