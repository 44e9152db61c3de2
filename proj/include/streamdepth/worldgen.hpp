#pragma once

// Procedural rooms with analytic ground truth: ray-cast depth, Lambertian
// condition images, camera trajectories and optical flow.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "streamdepth/parallel.hpp"
#include "streamdepth/tensor.hpp"

namespace streamdepth {

/// Pinhole camera with a world-to-camera pose: X_c = R X_w + t, +z forward.
/// Pixel (x, y) has its centre at integer coordinates.
struct CameraFrame {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    static Eigen::Matrix3d intrinsics(std::size_t height, std::size_t width, double focal_scale = 0.9) {
        Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
        k(0, 0) = k(1, 1) = focal_scale * static_cast<double>(width);
        k(0, 2) = 0.5 * (static_cast<double>(width) - 1.0);
        k(1, 2) = 0.5 * (static_cast<double>(height) - 1.0);
        return k;
    }

    void validate() const {
        detail::require(K.allFinite() && R.allFinite() && t.allFinite(), "CameraFrame: non-finite entries");
        detail::require(K(0, 0) > 0.0 && K(1, 1) > 0.0, "CameraFrame: focal lengths must be positive");
        detail::require(K(1, 0) == 0.0 && K(2, 0) == 0.0 && K(2, 1) == 0.0 && K(2, 2) == 1.0,
                        "CameraFrame: intrinsics must be upper triangular with K(2,2) = 1");
        detail::require((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9,
                        "CameraFrame: rotation is not orthonormal");
        detail::require(std::abs(R.determinant() - 1.0) <= 1e-9, "CameraFrame: rotation determinant is not 1");
    }

    [[nodiscard]] Eigen::Vector3d center() const { return -R.transpose() * t; }
    [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return R * world + t; }

    /// World-space direction of the ray through pixel (x, y), scaled so its camera z is 1.
    [[nodiscard]] Eigen::Vector3d ray(double x, double y) const {
        return R.transpose() * K.inverse() * Eigen::Vector3d(x, y, 1.0);
    }

    friend bool operator==(const CameraFrame&, const CameraFrame&) = default;
};

/// Relative pose (R, t) mapping camera-m coordinates to camera-n coordinates.
inline std::pair<Eigen::Matrix3d, Eigen::Vector3d> relative_pose(const CameraFrame& m, const CameraFrame& n) {
    const Eigen::Matrix3d r = n.R * m.R.transpose();
    return {r, n.t - r * m.t};
}

struct Primitive {
    enum class Kind { plane, sphere };
    Kind kind = Kind::plane;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();  // plane point or sphere centre
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    double radius = 1.0;
    double albedo = 1.0;
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // sphere centre drift per frame

    static Primitive plane(Eigen::Vector3d point, Eigen::Vector3d normal, double albedo) {
        return {Kind::plane, point, normal, 1.0, albedo, Eigen::Vector3d::Zero()};
    }
    static Primitive sphere(Eigen::Vector3d centre, double radius, double albedo,
                            Eigen::Vector3d velocity = Eigen::Vector3d::Zero()) {
        return {Kind::sphere, centre, Eigen::Vector3d::UnitZ(), radius, albedo, velocity};
    }

    [[nodiscard]] Eigen::Vector3d centre_at(double time) const { return point + time * velocity; }
    [[nodiscard]] bool moving() const { return kind == Kind::sphere && velocity.squaredNorm() > 0.0; }
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    Eigen::Vector3d light = Eigen::Vector3d(0.0, -1.0, -1.0).normalized();  // towards the light

    void validate() const {
        detail::require(!primitives.empty(), "SceneSpec: at least one primitive required");
        for (const auto& p : primitives) {
            if (p.kind == Primitive::Kind::sphere)
                detail::require(p.radius > 0.0, "SceneSpec: sphere radius must be positive");
            else
                detail::require(std::abs(p.normal.norm() - 1.0) <= 1e-9, "SceneSpec: plane normal must be unit length");
        }
        detail::require(std::abs(light.norm() - 1.0) <= 1e-9, "SceneSpec: light direction must be unit length");
    }

    [[nodiscard]] bool is_static() const {
        return std::none_of(primitives.begin(), primitives.end(), [](const Primitive& p) { return p.moving(); });
    }
};

struct Hit {
    double depth;  // camera-frame z
    int primitive;
    Eigen::Vector3d point;
    Eigen::Vector3d normal;  // facing the viewer
};

/// Nearest intersection of the ray from `origin` along `dir` (parameter = camera z when dir.z_cam = 1).
inline std::optional<Hit> intersect(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                    double time = 0.0) {
    constexpr double kMinT = 1e-9;
    std::optional<Hit> best;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const Primitive& p = scene.primitives[i];
        double t = -1.0;
        Eigen::Vector3d n;
        if (p.kind == Primitive::Kind::plane) {
            const double denom = p.normal.dot(dir);
            if (denom == 0.0) continue;
            t = p.normal.dot(p.point - origin) / denom;
            n = p.normal;
        } else {
            const Eigen::Vector3d c = p.centre_at(time);
            const Eigen::Vector3d oc = origin - c;
            const double a = dir.squaredNorm();
            const double b = oc.dot(dir);
            const double disc = b * b - a * (oc.squaredNorm() - p.radius * p.radius);
            if (disc < 0.0) continue;
            const double sq = std::sqrt(disc);
            t = (-b - sq) / a;
            if (t <= kMinT) t = (-b + sq) / a;
            n = (origin + t * dir - c) / p.radius;
        }
        if (t <= kMinT || (best && t >= best->depth)) continue;
        if (n.dot(dir) > 0.0) n = -n;
        best = Hit{t, static_cast<int>(i), origin + t * dir, n};
    }
    return best;
}

/// Per-pixel render output, row-major H x W.
struct RenderResult {
    std::size_t height = 0, width = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> mask;
    std::vector<double> shade;
    std::vector<int> primitive;
};

inline RenderResult render(const SceneSpec& scene, const CameraFrame& cam, std::size_t height, std::size_t width,
                           double time = 0.0) {
    scene.validate();
    cam.validate();
    detail::require(height >= 1 && width >= 1, "render: image must be at least 1x1");
    RenderResult r{height, width, std::vector<double>(height * width, 0.0),
                   std::vector<std::uint8_t>(height * width, 0), std::vector<double>(height * width, 0.0),
                   std::vector<int>(height * width, -1)};
    const Eigen::Vector3d origin = cam.center();
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const auto hit = intersect(scene, origin, cam.ray(static_cast<double>(x), static_cast<double>(y)), time);
            if (!hit) continue;
            const std::size_t i = y * width + x;
            r.depth[i] = hit->depth;
            r.mask[i] = 1;
            r.primitive[i] = hit->primitive;
            r.shade[i] = std::max(0.0, hit->normal.dot(scene.light)) * scene.primitives[hit->primitive].albedo;
        }
    return r;
}

/// Camera-frame z of the nearest hit per pixel; mask false where the ray escapes.
inline RenderResult render_depth(const SceneSpec& scene, const CameraFrame& cam, std::size_t height, std::size_t width,
                                 double time = 0.0) {
    return render(scene, cam, height, width, time);
}

/// Lambertian shading max(0, n.l) * albedo at the nearest hit, 0 on background.
inline std::vector<double> render_condition(const SceneSpec& scene, const CameraFrame& cam, std::size_t height,
                                            std::size_t width, double time = 0.0) {
    return render(scene, cam, height, width, time).shade;
}

/// Per-pixel displacement from frame m to frame n, row-major H x W.
struct FlowField {
    std::size_t height = 0, width = 0;
    std::vector<double> u, v;
    std::vector<std::uint8_t> mask;
};

/// Flow induced by camera motion alone: unproject with depth_m, move to camera n, project.
inline FlowField flow_from_depth(const std::vector<double>& depth_m, const std::vector<std::uint8_t>& valid_m,
                                 std::size_t height, std::size_t width, const CameraFrame& cam_m,
                                 const CameraFrame& cam_n) {
    cam_m.validate();
    cam_n.validate();
    detail::require(depth_m.size() == height * width && valid_m.size() == height * width,
                    "flow_from_depth: depth map size does not match dims");
    const Eigen::Matrix3d k_inv = cam_m.K.inverse();
    const auto [r, t] = relative_pose(cam_m, cam_n);
    FlowField f{height, width, std::vector<double>(height * width, 0.0), std::vector<double>(height * width, 0.0),
                std::vector<std::uint8_t>(height * width, 0)};
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t i = y * width + x;
            if (!valid_m[i] || !(depth_m[i] > 0.0)) continue;
            const Eigen::Vector3d xm = depth_m[i] * (k_inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0));
            const Eigen::Vector3d xn = r * xm + t;
            if (xn.z() <= 0.0) continue;
            const Eigen::Vector3d p = cam_n.K * (xn / xn.z());
            f.u[i] = p.x() - static_cast<double>(x);
            f.v[i] = p.y() - static_cast<double>(y);
            f.mask[i] = p.x() >= 0.0 && p.x() <= static_cast<double>(width - 1) && p.y() >= 0.0 &&
                        p.y() <= static_cast<double>(height - 1);
        }
    return f;
}

/// Ground-truth flow from scene geometry, including object motion between
/// time_m and time_n. Pixels whose surface point is hidden in frame n are masked.
inline FlowField scene_flow(const SceneSpec& scene, const CameraFrame& cam_m, const CameraFrame& cam_n,
                            std::size_t height, std::size_t width, double time_m, double time_n) {
    const RenderResult rm = render(scene, cam_m, height, width, time_m);
    FlowField f{height, width, std::vector<double>(height * width, 0.0), std::vector<double>(height * width, 0.0),
                std::vector<std::uint8_t>(height * width, 0)};
    const Eigen::Vector3d origin_n = cam_n.center();
    for (std::size_t i = 0; i < height * width; ++i) {
        if (!rm.mask[i]) continue;
        const Eigen::Vector3d ray_m = cam_m.ray(static_cast<double>(i % width), static_cast<double>(i / width));
        Eigen::Vector3d world = cam_m.center() + rm.depth[i] * ray_m;
        const Primitive& prim = scene.primitives[static_cast<std::size_t>(rm.primitive[i])];
        if (prim.kind == Primitive::Kind::sphere) world += (time_n - time_m) * prim.velocity;
        const Eigen::Vector3d xn = cam_n.to_camera(world);
        if (xn.z() <= 0.0) continue;
        const Eigen::Vector3d p = cam_n.K * (xn / xn.z());
        f.u[i] = p.x() - static_cast<double>(i % width);
        f.v[i] = p.y() - static_cast<double>(i / width);
        if (p.x() < 0.0 || p.x() > static_cast<double>(width - 1) || p.y() < 0.0 || p.y() > static_cast<double>(height - 1))
            continue;
        const auto hit = intersect(scene, origin_n, cam_n.ray(p.x(), p.y()), time_n);
        f.mask[i] = hit && hit->primitive == rm.primitive[i] && std::abs(hit->depth - xn.z()) <= 1e-6 * xn.z();
    }
    return f;
}

/// Smooth camera path: drift plus bounded yaw oscillation and vertical bob.
struct TrajectorySpec {
    Eigen::Vector3d start = Eigen::Vector3d::Zero();
    Eigen::Vector3d velocity = Eigen::Vector3d(0.0, 0.0, 0.03);
    double yaw0 = 0.0;
    double yaw_amplitude = 0.0;
    double yaw_period = 60.0;
    double bob_amplitude = 0.0;
    double bob_period = 30.0;
    double pitch = 0.0;

    [[nodiscard]] Eigen::Vector3d position(double f) const {
        const double two_pi = 2.0 * std::numbers::pi;
        return start + f * velocity + Eigen::Vector3d(0.0, bob_amplitude * std::sin(two_pi * f / bob_period), 0.0);
    }

    [[nodiscard]] double yaw(double f) const {
        return yaw0 + yaw_amplitude * std::sin(2.0 * std::numbers::pi * f / yaw_period);
    }

    /// Upper bound on the camera-centre displacement between consecutive frames.
    [[nodiscard]] double max_step() const {
        const double two_pi = 2.0 * std::numbers::pi;
        return velocity.norm() + std::abs(bob_amplitude) * two_pi / bob_period;
    }

    /// Upper bound on the rotation angle between consecutive frames.
    [[nodiscard]] double max_turn() const { return std::abs(yaw_amplitude) * 2.0 * std::numbers::pi / yaw_period; }

    [[nodiscard]] CameraFrame camera(double f, std::size_t height, std::size_t width) const {
        const Eigen::Matrix3d cam_to_world = (Eigen::AngleAxisd(yaw(f), Eigen::Vector3d::UnitY()) *
                                              Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
                                                 .toRotationMatrix();
        CameraFrame c;
        c.K = CameraFrame::intrinsics(height, width);
        c.R = cam_to_world.transpose();
        c.t = -c.R * position(f);
        return c;
    }
};

/// Settings for the procedural room family.
struct WorldConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t frames = 60;
    std::size_t sequences = 20;
    bool moving_sphere = false;
    double speed = 0.03;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(height >= 2 && width >= 2, "WorldConfig: image must be at least 2x2");
        detail::require(frames >= 1, "WorldConfig: frames must be >= 1");
        detail::require(sequences >= 1, "WorldConfig: n_sequences must be >= 1");
        detail::require(std::isfinite(speed) && speed >= 0.0, "WorldConfig: speed must be non-negative");
    }
};

/// One rendered sequence. Depth is metric camera z; `cond` is the shading mapped to [-1, 1].
struct Sequence {
    SceneSpec scene;
    TrajectorySpec trajectory;
    std::vector<CameraFrame> cameras;
    Clip depth;  // F x 1 x H x W
    Clip cond;   // F x 1 x H x W
    Clip flows;  // (F-1) x 3 x H x W: u, v, mask; empty for single frames
    double norm_lo = 0.0;
    double norm_hi = 1.0;

    /// Depth mapped affinely so the 2nd/98th percentiles land on -1 and 1.
    [[nodiscard]] Clip normalized_depth() const {
        Clip out = depth;
        const double scale = 2.0 / (norm_hi - norm_lo);
        for (double& v : out.data()) v = scale * (v - norm_lo) - 1.0;
        return out;
    }
};

/// Independent seed for sequence `index` of a dataset seeded with `seed`.
inline std::uint64_t sequence_seed(std::uint64_t seed, std::size_t index) { return derive_seed(seed, index); }

/// Linear-interpolation percentile (q in [0, 100]).
inline double percentile(std::vector<double> values, double q) {
    detail::require(!values.empty(), "percentile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Random room: floor, ceiling, side walls, a tilted back wall and 1-3 spheres on the floor.
inline SceneSpec random_room(Rng& rng, bool moving_sphere) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double a, double b) { return a + (b - a) * u(rng); };
    SceneSpec s;
    const double floor_y = range(1.2, 1.8);
    const double ceil_y = -range(2.0, 3.0);
    const double left = -range(3.0, 4.5);
    const double right = range(3.0, 4.5);
    const double back = range(9.0, 12.0);
    const double tilt = range(-0.35, 0.35);
    s.primitives.push_back(Primitive::plane({0.0, floor_y, 0.0}, {0.0, -1.0, 0.0}, range(0.4, 1.0)));
    s.primitives.push_back(Primitive::plane({0.0, ceil_y, 0.0}, {0.0, 1.0, 0.0}, range(0.4, 1.0)));
    s.primitives.push_back(Primitive::plane({left, 0.0, 0.0}, {1.0, 0.0, 0.0}, range(0.4, 1.0)));
    s.primitives.push_back(Primitive::plane({right, 0.0, 0.0}, {-1.0, 0.0, 0.0}, range(0.4, 1.0)));
    s.primitives.push_back(
        Primitive::plane({0.0, 0.0, back}, Eigen::Vector3d(std::sin(tilt), 0.0, -std::cos(tilt)), range(0.4, 1.0)));
    const int spheres = 1 + static_cast<int>(u(rng) * 3.0);
    for (int i = 0; i < spheres; ++i) {
        const double r = range(0.4, 1.0);
        const Eigen::Vector3d c(range(left + r + 0.5, right - r - 0.5), floor_y - r, range(5.0, 8.0));
        Eigen::Vector3d vel = Eigen::Vector3d::Zero();
        if (moving_sphere && i == 0) vel = Eigen::Vector3d(range(-0.03, 0.03), 0.0, range(-0.02, 0.02));
        s.primitives.push_back(Primitive::sphere(c, r, range(0.4, 1.0), vel));
    }
    s.light = Eigen::Vector3d(range(-0.5, 0.5), -range(0.5, 1.0), -range(0.2, 0.8)).normalized();
    return s;
}

inline TrajectorySpec random_trajectory(Rng& rng, double speed) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double a, double b) { return a + (b - a) * u(rng); };
    TrajectorySpec t;
    t.start = Eigen::Vector3d(range(-0.8, 0.8), range(-0.3, 0.3), range(-0.5, 0.5));
    const double heading = range(-0.3, 0.3);
    t.velocity = speed * Eigen::Vector3d(std::sin(heading), 0.0, std::cos(heading));
    t.yaw0 = range(-0.15, 0.15);
    t.yaw_amplitude = range(0.0, 0.12);
    t.yaw_period = range(40.0, 80.0);
    t.bob_amplitude = range(0.0, 0.05);
    t.bob_period = range(20.0, 40.0);
    t.pitch = range(-0.08, 0.08);
    return t;
}

/// Renders one sequence of a scene along a trajectory.
inline Sequence render_sequence(SceneSpec scene, TrajectorySpec trajectory, std::size_t frames, std::size_t height,
                                std::size_t width) {
    Sequence seq;
    seq.scene = std::move(scene);
    seq.trajectory = trajectory;
    seq.depth = Clip(frames, 1, height, width);
    seq.cond = Clip(frames, 1, height, width);
    const std::size_t n = height * width;
    std::vector<double> valid_depths;
    for (std::size_t f = 0; f < frames; ++f) {
        seq.cameras.push_back(trajectory.camera(static_cast<double>(f), height, width));
        const RenderResult r = render(seq.scene, seq.cameras.back(), height, width, static_cast<double>(f));
        for (std::size_t i = 0; i < n; ++i) {
            seq.depth.frame(f)[i] = r.depth[i];
            seq.cond.frame(f)[i] = 2.0 * r.shade[i] - 1.0;
            if (r.mask[i]) valid_depths.push_back(r.depth[i]);
        }
    }
    detail::require(!valid_depths.empty(), "render_sequence: no pixel hits the scene");
    seq.norm_lo = percentile(valid_depths, 2.0);
    seq.norm_hi = percentile(valid_depths, 98.0);
    if (!(seq.norm_hi > seq.norm_lo)) seq.norm_hi = seq.norm_lo + 1.0;
    if (frames >= 2) {
        seq.flows = Clip(frames - 1, 3, height, width);
        for (std::size_t f = 0; f + 1 < frames; ++f) {
            const FlowField fl = scene_flow(seq.scene, seq.cameras[f], seq.cameras[f + 1], height, width,
                                            static_cast<double>(f), static_cast<double>(f + 1));
            for (std::size_t i = 0; i < n; ++i) {
                seq.flows.at(f, 0, i / width, i % width) = fl.u[i];
                seq.flows.at(f, 1, i / width, i % width) = fl.v[i];
                seq.flows.at(f, 2, i / width, i % width) = fl.mask[i];
            }
        }
    }
    return seq;
}

/// Sequence `index` of the dataset described by `cfg`.
inline Sequence generate_sequence(const WorldConfig& cfg, std::size_t index) {
    cfg.validate();
    Rng rng(sequence_seed(cfg.seed, index));
    SceneSpec scene = random_room(rng, cfg.moving_sphere);
    const TrajectorySpec traj = random_trajectory(rng, cfg.speed);
    return render_sequence(std::move(scene), traj, cfg.frames, cfg.height, cfg.width);
}

/// All sequences of the dataset; each uses its own derived seed, so the result
/// does not depend on `threads`.
inline std::vector<Sequence> generate_dataset(const WorldConfig& cfg, std::size_t threads = 1) {
    cfg.validate();
    std::vector<Sequence> out(cfg.sequences);
    parallel_for(cfg.sequences, threads, [&](std::size_t i) { out[i] = generate_sequence(cfg, i); });
    return out;
}

} // namespace streamdepth
