#pragma once

// Affine-invariant depth evaluation: one global scale/shift per video,
// AbsRel, delta1, and multi-frame consistency through camera poses (MFC) or
// optical flow (MFC*).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamdepth/parallel.hpp"
#include "streamdepth/tensor.hpp"
#include "streamdepth/worldgen.hpp"

namespace streamdepth {

/// Per-pixel validity, laid out like the depth clip it belongs to.
using Mask = std::vector<std::uint8_t>;

inline constexpr double kAlignFloor = 1e-3;
inline constexpr double kOcclusionTolerance = 0.05;

struct AlignFit {
    double scale = 1.0;
    double shift = 0.0;
    bool constant_prediction = false;
};

namespace detail {

inline Mask full_mask(const Clip& c) { return Mask(c.size(), 1); }

inline void check_pair(const Clip& pred, const Clip& gt, const Mask& mask, const char* who) {
    require(pred.same_shape(gt), std::string(who) + ": prediction and ground truth shapes differ");
    require(mask.size() == gt.size(), std::string(who) + ": mask size does not match the depth clip");
}

} // namespace detail

/// argmin_{s,b} sum over valid pixels of (s * pred + b - gt)^2, solved jointly over all frames.
inline AlignFit fit_scale_shift_global(const Clip& pred, const Clip& gt, const Mask& mask) {
    detail::check_pair(pred, gt, mask, "fit_scale_shift_global");
    const auto& p = pred.data();
    const auto& g = gt.data();
    std::size_t n = 0;
    double pm = 0.0, gm = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (mask[i]) {
            ++n;
            pm += p[i];
            gm += g[i];
        }
    if (n < 2) throw DegenerateInputError("fit_scale_shift_global: fewer than 2 valid pixels");
    pm /= static_cast<double>(n);
    gm /= static_cast<double>(n);
    double spp = 0.0, spg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (mask[i]) {
            spp += (p[i] - pm) * (p[i] - pm);
            spg += (p[i] - pm) * (g[i] - gm);
        }
    if (!(spp > 1e-24 * static_cast<double>(n) * (1.0 + pm * pm))) return {1.0, gm - pm, true};
    const double s = spg / spp;
    return {s, gm - s * pm, false};
}

/// max(s * pred + b, floor) elementwise.
inline Clip apply_alignment(const Clip& pred, const AlignFit& fit, double floor = kAlignFloor) {
    Clip out = pred;
    for (double& v : out.data()) v = std::max(fit.scale * v + fit.shift, floor);
    return out;
}

/// Mean of |p - g| / g over valid pixels.
inline double abs_rel(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask) {
    detail::require(pred.size() == gt.size() && mask.size() == gt.size(), "abs_rel: size mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!mask[i]) continue;
        detail::require(gt[i] > 0.0, "abs_rel: ground truth must be positive on the mask");
        sum += std::abs(pred[i] - gt[i]) / gt[i];
        ++n;
    }
    if (n == 0) throw DegenerateInputError("abs_rel: empty mask");
    return sum / static_cast<double>(n);
}

inline double abs_rel(const Clip& pred, const Clip& gt, const Mask& mask) {
    detail::check_pair(pred, gt, mask, "abs_rel");
    return abs_rel(pred.data(), gt.data(), mask);
}

struct Delta1Result {
    double value = 0.0;
    std::size_t counted = 0;
    std::size_t excluded = 0;  // valid pixels dropped for a non-positive prediction
};

/// Fraction of valid pixels with max(p/g, g/p) < threshold.
inline Delta1Result delta1(std::span<const double> pred, std::span<const double> gt,
                           std::span<const std::uint8_t> mask, double threshold = 1.25) {
    detail::require(pred.size() == gt.size() && mask.size() == gt.size(), "delta1: size mismatch");
    Delta1Result r;
    std::size_t hits = 0;
    bool any = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!mask[i]) continue;
        any = true;
        detail::require(gt[i] > 0.0, "delta1: ground truth must be positive on the mask");
        if (!(pred[i] > 0.0)) {
            ++r.excluded;
            continue;
        }
        ++r.counted;
        if (std::max(pred[i] / gt[i], gt[i] / pred[i]) < threshold) ++hits;
    }
    if (!any) throw DegenerateInputError("delta1: empty mask");
    if (r.counted == 0) throw DegenerateInputError("delta1: every valid pixel has a non-positive prediction");
    r.value = static_cast<double>(hits) / static_cast<double>(r.counted);
    return r;
}

inline Delta1Result delta1(const Clip& pred, const Clip& gt, const Mask& mask, double threshold = 1.25) {
    detail::check_pair(pred, gt, mask, "delta1");
    return delta1(pred.data(), gt.data(), mask, threshold);
}

struct WarpResult {
    std::vector<double> depth;  // H x W, camera-n z
    Mask mask;
};

namespace detail {

/// Local quadratic model of inverse depth around one source pixel.
struct SurfacePatch {
    double w0, gx, gy, hxx, hxy, hyy;

    [[nodiscard]] double value(double dx, double dy) const {
        return w0 + gx * dx + gy * dy + 0.5 * hxx * dx * dx + hxy * dx * dy + 0.5 * hyy * dy * dy;
    }
    [[nodiscard]] double ddx(double dx, double dy) const { return gx + hxx * dx + hxy * dy; }
    [[nodiscard]] double ddy(double dx, double dy) const { return gy + hxy * dx + hyy * dy; }
};

struct AxisFit {
    double d1 = 0.0;
    double d2 = 0.0;
    int side = 0;  // -1 left, 0 central, +1 right
};

/// First and second derivative along one axis from offsets -2..2, taking the
/// three-point stencil with the smallest curvature so that estimates do not
/// straddle creases or occlusion edges.
inline AxisFit fit_axis(const std::array<double, 5>& w, const std::array<bool, 5>& ok) {
    std::optional<AxisFit> best;
    auto offer = [&](AxisFit c) {
        if (!best || std::abs(c.d2) < std::abs(best->d2)) best = c;
    };
    if (ok[1] && ok[3]) offer({0.5 * (w[3] - w[1]), w[3] - 2.0 * w[2] + w[1], 0});
    if (ok[0] && ok[1]) offer({0.5 * (3.0 * w[2] - 4.0 * w[1] + w[0]), w[2] - 2.0 * w[1] + w[0], -1});
    if (ok[3] && ok[4]) offer({0.5 * (-3.0 * w[2] + 4.0 * w[3] - w[4]), w[2] - 2.0 * w[3] + w[4], 1});
    if (best) return *best;
    if (ok[3]) return {w[3] - w[2], 0.0, 1};
    if (ok[1]) return {w[2] - w[1], 0.0, -1};
    return {};
}

inline std::vector<SurfacePatch> surface_patches(std::span<const double> depth, const Mask& valid, std::size_t h,
                                                 std::size_t w) {
    std::vector<double> inv(h * w, 0.0);
    for (std::size_t i = 0; i < h * w; ++i)
        if (valid[i]) inv[i] = 1.0 / depth[i];
    auto ok = [&](long y, long x) {
        return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) &&
               valid[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    auto at = [&](long y, long x) { return inv[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)]; };
    std::vector<SurfacePatch> out(h * w, SurfacePatch{0, 0, 0, 0, 0, 0});
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            if (!ok(y, x)) continue;
            std::array<double, 5> wx{}, wy{};
            std::array<bool, 5> okx{}, oky{};
            for (long k = -2; k <= 2; ++k) {
                okx[static_cast<std::size_t>(k + 2)] = ok(y, x + k);
                oky[static_cast<std::size_t>(k + 2)] = ok(y + k, x);
                if (okx[static_cast<std::size_t>(k + 2)]) wx[static_cast<std::size_t>(k + 2)] = at(y, x + k);
                if (oky[static_cast<std::size_t>(k + 2)]) wy[static_cast<std::size_t>(k + 2)] = at(y + k, x);
            }
            const AxisFit fx = fit_axis(wx, okx);
            const AxisFit fy = fit_axis(wy, oky);
            // Mixed term from the quadrants on the sides chosen by the axis fits.
            double hxy = 0.0;
            int used = 0;
            for (int sx : {-1, 1})
                for (int sy : {-1, 1}) {
                    if ((fx.side != 0 && sx != fx.side) || (fy.side != 0 && sy != fy.side)) continue;
                    if (!ok(y, x + sx) || !ok(y + sy, x) || !ok(y + sy, x + sx)) continue;
                    hxy += sx * sy * (at(y + sy, x + sx) - at(y, x + sx) - at(y + sy, x) + at(y, x));
                    ++used;
                }
            if (used > 0) hxy /= used;
            out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = {at(y, x), fx.d1, fy.d1, fx.d2, hxy, fy.d2};
        }
    return out;
}

inline constexpr double kExactFitTolerance = 1e-6;

/// Plane (n.X = 1) or sphere fitted exactly to a 3x3 window of back-projected
/// points, in source camera coordinates.
struct ExactSurface {
    enum class Kind { none, plane, sphere };
    Kind kind = Kind::none;
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
    Eigen::Vector3d centre = Eigen::Vector3d::Zero();
    double radius = 0.0;

    [[nodiscard]] bool contains(const Eigen::Vector3d& p) const {
        if (kind == Kind::plane) return std::abs(normal.dot(p) - 1.0) <= kExactFitTolerance;
        if (kind == Kind::sphere)
            return std::abs((p - centre).norm() - radius) <= kExactFitTolerance * std::max(1.0, p.norm());
        return false;
    }

    /// |cos| of the angle between the surface normal at `p` and the viewing ray to `p`.
    [[nodiscard]] double facing(const Eigen::Vector3d& p) const {
        const Eigen::Vector3d n = kind == Kind::plane ? normal : Eigen::Vector3d(p - centre);
        return std::abs(n.normalized().dot(p.normalized()));
    }

    /// Nearest positive ray parameter s with origin + s * dir on the surface.
    [[nodiscard]] std::optional<double> intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
        if (kind == Kind::plane) {
            const double denom = normal.dot(dir);
            if (denom == 0.0) return std::nullopt;
            const double s = (1.0 - normal.dot(origin)) / denom;
            return s > 0.0 ? std::optional<double>(s) : std::nullopt;
        }
        if (kind == Kind::sphere) {
            const Eigen::Vector3d oc = origin - centre;
            const double a = dir.squaredNorm();
            const double b = oc.dot(dir);
            const double disc = b * b - a * (oc.squaredNorm() - radius * radius);
            if (disc < 0.0) return std::nullopt;
            const double sq = std::sqrt(disc);
            double s = (-b - sq) / a;
            if (s <= 0.0) s = (-b + sq) / a;
            return s > 0.0 ? std::optional<double>(s) : std::nullopt;
        }
        return std::nullopt;
    }
};

using PointSet = std::vector<Eigen::Vector3d>;

inline std::optional<ExactSurface> fit_plane(const PointSet& pts) {
    const auto n_pts = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd a(n_pts, 3);
    for (Eigen::Index i = 0; i < n_pts; ++i) a.row(i) = pts[static_cast<std::size_t>(i)].transpose();
    const Eigen::Vector3d n = a.colPivHouseholderQr().solve(Eigen::VectorXd::Ones(n_pts));
    const ExactSurface out{ExactSurface::Kind::plane, n, Eigen::Vector3d::Zero(), 0.0};
    if (!n.allFinite()) return std::nullopt;
    for (const auto& p : pts)
        if (!out.contains(p)) return std::nullopt;
    return out;
}

inline std::optional<ExactSurface> fit_sphere(const PointSet& pts) {
    if (pts.size() < 5) return std::nullopt;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    // |q|^2 + a.q + d = 0 with q = p - mean.
    const auto n_pts = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd a(n_pts, 4);
    Eigen::VectorXd b(n_pts);
    for (Eigen::Index i = 0; i < n_pts; ++i) {
        const Eigen::Vector3d q = pts[static_cast<std::size_t>(i)] - mean;
        a.row(i) << q.x(), q.y(), q.z(), 1.0;
        b(i) = -q.squaredNorm();
    }
    const Eigen::Vector4d x = a.colPivHouseholderQr().solve(b);
    if (!x.allFinite()) return std::nullopt;
    const Eigen::Vector3d c = -0.5 * x.head<3>();
    const double r2 = c.squaredNorm() - x(3);
    if (!(r2 > 0.0)) return std::nullopt;
    const ExactSurface out{ExactSurface::Kind::sphere, Eigen::Vector3d::Zero(), c + mean, std::sqrt(r2)};
    for (const auto& p : pts)
        if (!out.contains(p)) return std::nullopt;
    return out;
}

/// For every valid pixel, a plane or sphere passing exactly through the
/// back-projected points of a small window. Windows covering the pixel are
/// preferred, largest first; failing that, a nearby window whose surface passes
/// through the pixel's own point (creases, narrow strips).
inline std::vector<ExactSurface> exact_surfaces(std::span<const double> depth, const Mask& valid, std::size_t h,
                                                std::size_t w, const Eigen::Matrix3d& k_inv) {
    struct Shape {
        std::size_t rows, cols;
    };
    static constexpr std::array<Shape, 4> kShapes{{{3, 3}, {3, 2}, {2, 3}, {2, 2}}};
    constexpr long kReach = 3;
    std::vector<ExactSurface> out(h * w);
    auto usable = [&](std::size_t i) { return valid[i] && depth[i] > 0.0; };
    auto point = [&](std::size_t y, std::size_t x) {
        return Eigen::Vector3d(depth[y * w + x] *
                               (k_inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0)));
    };
    // Surfaces fitted once per window, indexed by shape and top-left corner.
    std::array<std::vector<ExactSurface>, kShapes.size()> fits;
    for (std::size_t si = 0; si < kShapes.size(); ++si) {
        const auto [rows, cols] = kShapes[si];
        fits[si].resize(h * w);
        if (h < rows || w < cols) continue;
        for (std::size_t y = 0; y + rows <= h; ++y)
            for (std::size_t x = 0; x + cols <= w; ++x) {
                PointSet pts;
                bool ok = true;
                for (std::size_t py = y; py < y + rows && ok; ++py)
                    for (std::size_t px = x; px < x + cols && ok; ++px) {
                        ok = usable(py * w + px);
                        if (ok) pts.push_back(point(py, px));
                    }
                if (!ok) continue;
                if (auto pl = fit_plane(pts)) {
                    fits[si][y * w + x] = *pl;
                } else if (auto sp = fit_sphere(pts)) {
                    fits[si][y * w + x] = *sp;
                }
            }
    }
    auto lookup = [&](std::size_t si, long y0, long x0) -> const ExactSurface* {
        const auto [rows, cols] = kShapes[si];
        if (y0 < 0 || x0 < 0 || y0 + static_cast<long>(rows) > static_cast<long>(h) ||
            x0 + static_cast<long>(cols) > static_cast<long>(w))
            return nullptr;
        const ExactSurface& s = fits[si][static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x0)];
        return s.kind == ExactSurface::Kind::none ? nullptr : &s;
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (!usable(y * w + x)) continue;
            const long py = static_cast<long>(y), px = static_cast<long>(x);
            const Eigen::Vector3d own = point(y, x);
            const ExactSurface* pick = nullptr;
            // A 3x3 window wins outright. Narrower windows straddling a depth
            // edge also admit an exact plane, one nearly parallel to the rays,
            // so among those the surface facing the camera most squarely wins.
            for (long oy = 0; oy < 3 && !pick; ++oy)
                for (long ox = 0; ox < 3 && !pick; ++ox) pick = lookup(0, py - oy, px - ox);
            double best_facing = -1.0;
            for (std::size_t si = 1; si < kShapes.size() && !pick; ++si) {
                const auto [rows, cols] = kShapes[si];
                for (long oy = 0; oy < static_cast<long>(rows); ++oy)
                    for (long ox = 0; ox < static_cast<long>(cols); ++ox)
                        if (const ExactSurface* cand = lookup(si, py - oy, px - ox)) {
                            const double facing = cand->facing(own);
                            if (facing > best_facing) {
                                best_facing = facing;
                                out[y * w + x] = *cand;
                            }
                        }
            }
            if (best_facing >= 0.0) continue;
            if (!pick) {
                for (long ring = 1; ring <= kReach && !pick; ++ring)
                    for (std::size_t si = 0; si < kShapes.size() && !pick; ++si)
                        for (long dy = -ring; dy <= ring && !pick; ++dy)
                            for (long dx = -ring; dx <= ring && !pick; ++dx) {
                                if (std::max(std::abs(dy), std::abs(dx)) != ring) continue;
                                const ExactSurface* cand = lookup(si, py + dy, px + dx);
                                if (cand && cand->contains(own)) pick = cand;
                            }
            }
            if (pick) out[y * w + x] = *pick;
        }
    return out;
}

} // namespace detail

/// Forward warp of depth_m into camera n with z-buffering.
///
/// Each valid source pixel carries a local surface: a plane or sphere when one
/// passes exactly through a 3x3 neighbourhood of back-projected points,
/// otherwise a quadratic model of inverse depth. Pixels without an exact
/// surface whose neighbours have one are dropped. Its footprint, one pixel in
/// every direction, is mapped into frame n and every target pixel centre
/// inside it is solved for the surface point that lands on it. Among arrivals
/// the nearest depth wins; arrivals within a relative 1e-3 of it are treated as
/// the same surface and the one closest to its source pixel centre is kept.
inline WarpResult warp_depth(std::span<const double> depth_m, const Mask& valid_m, std::size_t height,
                             std::size_t width, const CameraFrame& cam_m, const CameraFrame& cam_n) {
    cam_m.validate();
    cam_n.validate();
    detail::require(depth_m.size() == height * width && valid_m.size() == height * width,
                    "warp_depth: depth map size does not match dims");
    constexpr double kFootprint = 1.0;
    constexpr double kSameSurface = 1e-3;
    const auto patches = detail::surface_patches(depth_m, valid_m, height, width);
    const Eigen::Matrix3d k_inv = cam_m.K.inverse();
    const auto exact = detail::exact_surfaces(depth_m, valid_m, height, width, k_inv);
    const auto [r_rel, t_rel] = relative_pose(cam_m, cam_n);
    const Eigen::Vector3d origin_n = -r_rel.transpose() * t_rel;  // camera n centre in frame m
    const Eigen::Matrix3d back_n = r_rel.transpose() * cam_n.K.inverse();
    const Eigen::Matrix3d proj = cam_n.K * r_rel * k_inv;  // acts on (u, v, 1) in frame m
    const Eigen::Vector3d shift = cam_n.K * t_rel;

    struct Arrival {
        double depth;
        double offset;
    };
    // Frame m only observes the region spanned by its pixel centres.
    auto observed = [&](double u, double v) {
        constexpr double kEdge = 1e-9;
        return u >= -kEdge && v >= -kEdge && u <= static_cast<double>(width - 1) + kEdge &&
               v <= static_cast<double>(height - 1) + kEdge;
    };
    // A pixel without a surface of its own next to fitted ones is a sliver
    // whose orientation the depth map leaves undetermined.
    auto fitted_neighbour = [&](std::size_t y, std::size_t x) {
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<long>(height) || nx >= static_cast<long>(width)) continue;
                if (exact[static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx)].kind !=
                    detail::ExactSurface::Kind::none)
                    return true;
            }
        return false;
    };
    std::vector<std::uint8_t> slivers(height * width, 0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t i = y * width + x;
            slivers[i] = valid_m[i] && depth_m[i] > 0.0 && exact[i].kind == detail::ExactSurface::Kind::none &&
                         fitted_neighbour(y, x);
        }
    auto sliver = [&](std::size_t i) { return slivers[i] != 0; };
    std::vector<std::vector<Arrival>> arrivals(height * width);

    for (std::size_t sy = 0; sy < height; ++sy)
        for (std::size_t sx = 0; sx < width; ++sx) {
            const std::size_t si = sy * width + sx;
            if (!valid_m[si] || !(depth_m[si] > 0.0)) continue;
            const auto& patch = patches[si];
            // H(d) = proj * (u, v, 1) + w(d) * shift; the target position is H_xy / H_z and its depth H_z / w.
            auto homog = [&](double dx, double dy) -> Eigen::Vector3d {
                return proj * Eigen::Vector3d(static_cast<double>(sx) + dx, static_cast<double>(sy) + dy, 1.0) +
                       patch.value(dx, dy) * shift;
            };
            const auto& surface = exact[si];
            const bool analytic = surface.kind != detail::ExactSurface::Kind::none;
            if (sliver(si)) continue;
            // Past the midpoint towards a dropped sliver lies ground the depth map does not describe.
            auto beyond_edge = [&](std::size_t x, std::size_t y, double ox, double oy) {
                const long nx = static_cast<long>(x) + (ox > 0.5 ? 1 : ox < -0.5 ? -1 : 0);
                const long ny = static_cast<long>(y) + (oy > 0.5 ? 1 : oy < -0.5 ? -1 : 0);
                if ((nx == static_cast<long>(x) && ny == static_cast<long>(y)) || nx < 0 || ny < 0 ||
                    nx >= static_cast<long>(width) || ny >= static_cast<long>(height))
                    return false;
                const auto ni = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
                return sliver(ni);
            };
            // Source-frame point at offset (dx, dy) from the pixel centre.
            auto source_point = [&](double dx, double dy) -> std::optional<Eigen::Vector3d> {
                const Eigen::Vector3d ray =
                    k_inv * Eigen::Vector3d(static_cast<double>(sx) + dx, static_cast<double>(sy) + dy, 1.0);
                if (analytic) {
                    const auto s = surface.intersect(Eigen::Vector3d::Zero(), ray);
                    if (!s) return std::nullopt;
                    return *s * ray;
                }
                const double wv = patch.value(dx, dy);
                if (!(wv > 0.0)) return std::nullopt;
                return ray / wv;
            };
            double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x, lo_y = lo_x, hi_y = -lo_x;
            for (double dy : {-kFootprint, 0.0, kFootprint})
                for (double dx : {-kFootprint, 0.0, kFootprint}) {
                    const auto p = source_point(dx, dy);
                    if (!p) continue;
                    const Eigen::Vector3d hv = cam_n.K * (r_rel * *p + t_rel);
                    if (!(hv.z() > 0.0)) continue;
                    lo_x = std::min(lo_x, hv.x() / hv.z());
                    hi_x = std::max(hi_x, hv.x() / hv.z());
                    lo_y = std::min(lo_y, hv.y() / hv.z());
                    hi_y = std::max(hi_y, hv.y() / hv.z());
                }
            if (!(hi_x >= lo_x)) continue;
            const double margin = analytic ? 1.5 : 0.5;
            const double x0 = std::max(0.0, std::ceil(lo_x - margin));
            const double x1 = std::min(static_cast<double>(width - 1), std::floor(hi_x + margin));
            const double y0 = std::max(0.0, std::ceil(lo_y - margin));
            const double y1 = std::min(static_cast<double>(height - 1), std::floor(hi_y + margin));
            if (x1 < x0 || y1 < y0 || x1 - x0 > 16.0 || y1 - y0 > 16.0) continue;
            for (double ty = y0; ty <= y1; ty += 1.0)
                for (double tx = x0; tx <= x1; tx += 1.0) {
                    const auto ti = static_cast<std::size_t>(ty) * width + static_cast<std::size_t>(tx);
                    if (analytic) {
                        const Eigen::Vector3d dir = back_n * Eigen::Vector3d(tx, ty, 1.0);
                        const auto s = surface.intersect(origin_n, dir);
                        if (!s) continue;
                        const Eigen::Vector3d x = origin_n + *s * dir;
                        if (!(x.z() > 0.0)) continue;
                        const Eigen::Vector3d uv = cam_m.K * (x / x.z());
                        const double off =
                            std::max(std::abs(uv.x() - static_cast<double>(sx)), std::abs(uv.y() - static_cast<double>(sy)));
                        if (off > kFootprint || !observed(uv.x(), uv.y()) ||
                            beyond_edge(sx, sy, uv.x() - static_cast<double>(sx), uv.y() - static_cast<double>(sy)))
                            continue;
                        arrivals[ti].push_back({*s, off});
                        continue;
                    }
                    double dx = 0.0, dy = 0.0;
                    bool converged = false;
                    for (int it = 0; it < 12; ++it) {
                        const double wv = patch.value(dx, dy);
                        const Eigen::Vector3d hv = homog(dx, dy);
                        if (!(wv > 0.0) || !(hv.z() > 0.0)) break;
                        const double ex = hv.x() / hv.z() - tx;
                        const double ey = hv.y() / hv.z() - ty;
                        if (std::abs(ex) < 1e-10 && std::abs(ey) < 1e-10) {
                            converged = true;
                            break;
                        }
                        const Eigen::Vector3d ha = proj.col(0) + patch.ddx(dx, dy) * shift;
                        const Eigen::Vector3d hb = proj.col(1) + patch.ddy(dx, dy) * shift;
                        const double iz = 1.0 / hv.z();
                        Eigen::Matrix2d j;
                        j << (ha.x() - hv.x() * iz * ha.z()) * iz, (hb.x() - hv.x() * iz * hb.z()) * iz,
                            (ha.y() - hv.y() * iz * ha.z()) * iz, (hb.y() - hv.y() * iz * hb.z()) * iz;
                        const double det = j.determinant();
                        if (!(std::abs(det) > 1e-14)) break;
                        const Eigen::Vector2d step = j.inverse() * Eigen::Vector2d(ex, ey);
                        dx -= step.x();
                        dy -= step.y();
                        if (std::abs(dx) > 4.0 * kFootprint || std::abs(dy) > 4.0 * kFootprint) break;
                    }
                    if (!converged || std::abs(dx) > kFootprint || std::abs(dy) > kFootprint ||
                        !observed(static_cast<double>(sx) + dx, static_cast<double>(sy) + dy))
                        continue;
                    const double wv = patch.value(dx, dy);
                    const double z = homog(dx, dy).z() / wv;
                    arrivals[ti].push_back({z, std::max(std::abs(dx), std::abs(dy))});
                }
        }

    WarpResult out{std::vector<double>(height * width, 0.0), Mask(height * width, 0)};
    for (std::size_t i = 0; i < arrivals.size(); ++i) {
        const auto& a = arrivals[i];
        if (a.empty()) continue;
        double zmin = a.front().depth;
        for (const auto& c : a) zmin = std::min(zmin, c.depth);
        double best_offset = std::numeric_limits<double>::infinity();
        for (const auto& c : a)
            if (c.depth <= zmin * (1.0 + kSameSurface) && c.offset < best_offset) {
                best_offset = c.offset;
                out.depth[i] = c.depth;
            }
        out.mask[i] = 1;
    }
    return out;
}

struct PairTerm {
    std::size_t frame_m = 0;
    std::size_t frame_n = 0;
    double value = 0.0;
    std::size_t valid_pixels = 0;
};

struct MfcResult {
    double value = 0.0;
    std::vector<PairTerm> pairs;
};

/// Pixels of frame m+1 usable for comparing frame m against frame m+1: the
/// ground-truth warp lands there and agrees with the ground truth within 5%.
inline std::vector<Mask> consistency_masks(const Clip& gt, const Mask& gt_valid, const std::vector<CameraFrame>& cams,
                                           std::size_t threads = 1) {
    detail::require(gt.channels() == 1, "consistency_masks: depth must have one channel");
    detail::require(cams.size() == gt.frames(), "consistency_masks: one camera per frame required");
    detail::require(gt_valid.size() == gt.size(), "consistency_masks: mask size does not match the depth clip");
    const std::size_t n = gt.frame_size();
    std::vector<Mask> out(gt.frames() > 0 ? gt.frames() - 1 : 0);
    parallel_for(out.size(), threads, [&](std::size_t m) {
        const Mask src(gt_valid.begin() + static_cast<std::ptrdiff_t>(m * n),
                       gt_valid.begin() + static_cast<std::ptrdiff_t>((m + 1) * n));
        const WarpResult wr = warp_depth(gt.frame(m), src, gt.height(), gt.width(), cams[m], cams[m + 1]);
        Mask mk(n, 0);
        const auto target = gt.frame(m + 1);
        for (std::size_t i = 0; i < n; ++i)
            mk[i] = wr.mask[i] && gt_valid[(m + 1) * n + i] &&
                    std::abs(wr.depth[i] - target[i]) <= kOcclusionTolerance * target[i];
        out[m] = std::move(mk);
    });
    return out;
}

/// Mean over adjacent pairs of the mean |D^{m->m+1} - D^{m+1}| on the joint
/// valid mask. `pair_masks` (from consistency_masks) restrict the comparison;
/// `source_valid` marks pixels of the prediction that may be warped.
inline MfcResult mfc(const Clip& pred, const std::vector<CameraFrame>& cams, const std::vector<Mask>* pair_masks = nullptr,
                     const Mask* source_valid = nullptr, std::size_t threads = 1) {
    detail::require(pred.channels() == 1, "mfc: depth must have one channel");
    if (pred.frames() < 2) throw DegenerateInputError("mfc: need at least 2 frames");
    detail::require(cams.size() == pred.frames(), "mfc: one camera per frame required");
    detail::require(!pair_masks || pair_masks->size() == pred.frames() - 1, "mfc: one mask per frame pair required");
    detail::require(!source_valid || source_valid->size() == pred.size(), "mfc: source mask size mismatch");
    const std::size_t n = pred.frame_size();
    MfcResult r;
    r.pairs.resize(pred.frames() - 1);
    parallel_for(r.pairs.size(), threads, [&](std::size_t m) {
        Mask src(n, 1);
        if (source_valid)
            src.assign(source_valid->begin() + static_cast<std::ptrdiff_t>(m * n),
                       source_valid->begin() + static_cast<std::ptrdiff_t>((m + 1) * n));
        const WarpResult wr = warp_depth(pred.frame(m), src, pred.height(), pred.width(), cams[m], cams[m + 1]);
        const auto target = pred.frame(m + 1);
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!wr.mask[i] || (pair_masks && !(*pair_masks)[m][i])) continue;
            sum += std::abs(wr.depth[i] - target[i]);
            ++count;
        }
        r.pairs[m] = {m, m + 1, count ? sum / static_cast<double>(count) : 0.0, count};
    });
    for (const auto& p : r.pairs) {
        if (p.valid_pixels == 0)
            throw DegenerateInputError("mfc: no valid pixels for frame pair " + std::to_string(p.frame_m) + "->" +
                                       std::to_string(p.frame_n));
        r.value += p.value;
    }
    r.value /= static_cast<double>(r.pairs.size());
    return r;
}

namespace detail {

/// Bilinear sample of inverse depth (exact on planes); nullopt if a corner is invalid.
inline std::optional<double> sample_depth(std::span<const double> depth, const std::uint8_t* valid, std::size_t h,
                                          std::size_t w, double x, double y) {
    if (!(x >= 0.0 && y >= 0.0 && x <= static_cast<double>(w - 1) && y <= static_cast<double>(h - 1))) return std::nullopt;
    const auto x0 = std::min(static_cast<std::size_t>(x), w > 1 ? w - 2 : 0);
    const auto y0 = std::min(static_cast<std::size_t>(y), h > 1 ? h - 2 : 0);
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const std::array<std::size_t, 4> idx{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
    const std::array<double, 4> wt{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    double inv = 0.0;
    for (int k = 0; k < 4; ++k) {
        if (wt[static_cast<std::size_t>(k)] == 0.0) continue;
        if ((valid && !valid[idx[static_cast<std::size_t>(k)]]) || !(depth[idx[static_cast<std::size_t>(k)]] > 0.0))
            return std::nullopt;
        inv += wt[static_cast<std::size_t>(k)] / depth[idx[static_cast<std::size_t>(k)]];
    }
    return 1.0 / inv;
}

} // namespace detail

/// Flow-based consistency: D^{m+1} sampled at p + flow_m(p) against D^m(p).
/// `flows` is (F-1) x 3 x H x W holding u, v and a validity channel. With a
/// ground truth, pixels whose ground truth disagrees by more than 5% after the
/// same resampling are excluded.
inline MfcResult mfc_flow(const Clip& pred, const Clip& flows, const Clip* gt = nullptr, const Mask* gt_valid = nullptr) {
    detail::require(pred.channels() == 1, "mfc_flow: depth must have one channel");
    if (pred.frames() < 2) throw DegenerateInputError("mfc_flow: need at least 2 frames");
    detail::require(!flows.empty() && flows.frames() == pred.frames() - 1 && flows.channels() == 3 &&
                        flows.same_spatial(pred),
                    "mfc_flow: need one 3-channel flow field per adjacent frame pair");
    detail::require(!gt || gt->same_shape(pred), "mfc_flow: ground truth shape mismatch");
    detail::require(!gt_valid || gt_valid->size() == pred.size(), "mfc_flow: mask size mismatch");
    const std::size_t h = pred.height(), w = pred.width(), n = h * w;
    MfcResult r;
    for (std::size_t m = 0; m + 1 < pred.frames(); ++m) {
        const std::uint8_t* valid_n = gt_valid ? gt_valid->data() + (m + 1) * n : nullptr;
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (flows.at(m, 2, i / w, i % w) < 0.5) continue;
            if (gt_valid && !(*gt_valid)[m * n + i]) continue;
            const double x = static_cast<double>(i % w) + flows.at(m, 0, i / w, i % w);
            const double y = static_cast<double>(i / w) + flows.at(m, 1, i / w, i % w);
            const auto sampled = detail::sample_depth(pred.frame(m + 1), valid_n, h, w, x, y);
            if (!sampled) continue;
            if (gt) {
                const auto g = detail::sample_depth(gt->frame(m + 1), valid_n, h, w, x, y);
                const double ref = gt->frame(m)[i];
                if (!g || std::abs(*g - ref) > kOcclusionTolerance * ref) continue;
            }
            sum += std::abs(*sampled - pred.frame(m)[i]);
            ++count;
        }
        if (count == 0)
            throw DegenerateInputError("mfc_flow: no valid pixels for frame pair " + std::to_string(m) + "->" +
                                       std::to_string(m + 1));
        r.pairs.push_back({m, m + 1, sum / static_cast<double>(count), count});
        r.value += r.pairs.back().value;
    }
    r.value /= static_cast<double>(r.pairs.size());
    return r;
}

struct FrameRow {
    std::size_t frame = 0;
    double abs_rel = 0.0;
    double delta1 = 0.0;
    std::size_t valid_pixels = 0;
};

struct EvalReport {
    double abs_rel = 0.0;
    double delta1 = 0.0;
    std::size_t delta1_excluded = 0;
    double mfc = 0.0;
    std::optional<double> mfc_flow;
    double scale = 1.0;
    double shift = 0.0;
    bool constant_prediction = false;
    std::size_t valid_pixels = 0;
    std::vector<FrameRow> frames;
    std::vector<PairTerm> pairs;
    std::vector<PairTerm> flow_pairs;
};

/// Global alignment, floor at 1e-3, then AbsRel, delta1, MFC and optionally MFC*.
/// `gt_valid` defaults to pixels with positive ground truth.
inline EvalReport evaluate(const Clip& pred, const Clip& gt, const std::vector<CameraFrame>& cams,
                           const Clip* flows = nullptr, const Mask* gt_valid = nullptr, std::size_t threads = 1) {
    detail::require(pred.same_shape(gt), "evaluate: prediction and ground truth shapes differ");
    detail::require(gt.channels() == 1, "evaluate: depth must have one channel");
    detail::require(cams.size() == gt.frames(), "evaluate: one camera per frame required");
    Mask mask(gt.size(), 0);
    for (std::size_t i = 0; i < gt.size(); ++i)
        mask[i] = (gt_valid ? (*gt_valid)[i] != 0 : true) && gt.data()[i] > 0.0;
    if (gt_valid) detail::require(gt_valid->size() == gt.size(), "evaluate: mask size does not match the depth clip");
    const std::size_t n = gt.frame_size();
    for (std::size_t f = 0; f < gt.frames(); ++f)
        if (std::none_of(mask.begin() + static_cast<std::ptrdiff_t>(f * n),
                         mask.begin() + static_cast<std::ptrdiff_t>((f + 1) * n), [](std::uint8_t v) { return v; }))
            throw DegenerateInputError("evaluate: empty mask on frame " + std::to_string(f));

    EvalReport rep;
    const AlignFit fit = fit_scale_shift_global(pred, gt, mask);
    rep.scale = fit.scale;
    rep.shift = fit.shift;
    rep.constant_prediction = fit.constant_prediction;
    const Clip aligned = apply_alignment(pred, fit);
    rep.abs_rel = abs_rel(aligned, gt, mask);
    const Delta1Result d1 = delta1(aligned, gt, mask);
    rep.delta1 = d1.value;
    rep.delta1_excluded = d1.excluded;
    rep.valid_pixels = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    for (std::size_t f = 0; f < gt.frames(); ++f) {
        const std::span<const std::uint8_t> mf(mask.data() + f * n, n);
        rep.frames.push_back({f, abs_rel(aligned.frame(f), gt.frame(f), mf), delta1(aligned.frame(f), gt.frame(f), mf).value,
                              static_cast<std::size_t>(std::count(mf.begin(), mf.end(), 1))});
    }
    if (gt.frames() >= 2) {
        const auto pair_masks = consistency_masks(gt, mask, cams, threads);
        const MfcResult m = mfc(aligned, cams, &pair_masks, &mask, threads);
        rep.mfc = m.value;
        rep.pairs = m.pairs;
        if (flows) {
            const MfcResult mf = mfc_flow(aligned, *flows, &gt, &mask);
            rep.mfc_flow = mf.value;
            rep.flow_pairs = mf.pairs;
        }
    }
    return rep;
}

} // namespace streamdepth
