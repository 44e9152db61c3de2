#pragma once

// Exact Gaussian world: a prior over flattened clips, its posterior-mean
// denoiser and the Schur-complement conditionals used as ground truth for the
// sliding-window samplers.

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "streamdepth/diffusion.hpp"
#include "streamdepth/tensor.hpp"

namespace streamdepth {

class GaussianVideoPrior {
public:
    GaussianVideoPrior(std::size_t frames, std::size_t frame_dim, Eigen::VectorXd mean, Eigen::MatrixXd cov,
                       std::string structure = "dense")
        : frames_(frames), frame_dim_(frame_dim), mean_(std::move(mean)), cov_(std::move(cov)),
          structure_(std::move(structure)) {
        const auto n = static_cast<Eigen::Index>(frames * frame_dim);
        detail::require(frames >= 1 && frame_dim >= 1, "GaussianVideoPrior: empty dimensions");
        detail::require(mean_.size() == n && cov_.rows() == n && cov_.cols() == n,
                        "GaussianVideoPrior: mean/cov size does not match frames * frame_dim");
        detail::require((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
                        "GaussianVideoPrior: covariance is not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_, Eigen::EigenvaluesOnly);
        detail::require(eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() > 0.0,
                        "GaussianVideoPrior: covariance is not positive definite");
        chol_ = Eigen::LLT<Eigen::MatrixXd>(cov_).matrixL();
    }

    /// Block (i, j) = rho_time^|i-j| * frame_cov.
    static GaussianVideoPrior ar1(std::size_t frames, const Eigen::MatrixXd& frame_cov, double rho_time,
                                  const Eigen::VectorXd& frame_mean) {
        detail::require(rho_time > -1.0 && rho_time < 1.0, "GaussianVideoPrior::ar1: |rho_time| must be < 1");
        const auto d = frame_cov.rows();
        detail::require(frame_cov.cols() == d && frame_mean.size() == d, "GaussianVideoPrior::ar1: bad frame stats");
        const auto n = static_cast<Eigen::Index>(frames) * d;
        Eigen::MatrixXd cov(n, n);
        Eigen::VectorXd mean(n);
        for (std::size_t i = 0; i < frames; ++i) {
            mean.segment(static_cast<Eigen::Index>(i) * d, d) = frame_mean;
            for (std::size_t j = 0; j < frames; ++j) {
                const double w = std::pow(rho_time, static_cast<double>(i > j ? i - j : j - i));
                cov.block(static_cast<Eigen::Index>(i) * d, static_cast<Eigen::Index>(j) * d, d, d) = w * frame_cov;
            }
        }
        return {frames, static_cast<std::size_t>(d), std::move(mean), std::move(cov), "ar1"};
    }

    [[nodiscard]] std::size_t frames() const noexcept { return frames_; }
    [[nodiscard]] std::size_t frame_dim() const noexcept { return frame_dim_; }
    [[nodiscard]] std::size_t dim() const noexcept { return frames_ * frame_dim_; }
    [[nodiscard]] const Eigen::VectorXd& mean() const noexcept { return mean_; }
    [[nodiscard]] const Eigen::MatrixXd& cov() const noexcept { return cov_; }
    [[nodiscard]] const std::string& structure() const noexcept { return structure_; }

    /// Clip of shape F x 1 x 1 x D laid out like the flattened prior vector.
    [[nodiscard]] Clip to_clip(const Eigen::VectorXd& v) const {
        detail::require(static_cast<std::size_t>(v.size()) == dim(), "GaussianVideoPrior::to_clip: size mismatch");
        return Clip(frames_, 1, 1, frame_dim_, std::vector<double>(v.data(), v.data() + v.size()));
    }

    [[nodiscard]] Eigen::VectorXd flatten(const Clip& c) const {
        detail::require(c.frames() == frames_ && c.frame_size() == frame_dim_,
                        "GaussianVideoPrior: clip dims do not match the prior");
        return Eigen::Map<const Eigen::VectorXd>(c.data().data(), static_cast<Eigen::Index>(c.size()));
    }

    /// Draws one clip from the prior.
    [[nodiscard]] Clip sample(Rng& rng) const {
        Eigen::VectorXd eps(static_cast<Eigen::Index>(dim()));
        fill_standard_normal({eps.data(), dim()}, rng);
        return to_clip(mean_ + chol_ * eps);
    }

private:
    std::size_t frames_;
    std::size_t frame_dim_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    std::string structure_;
    Eigen::MatrixXd chol_;
};

namespace detail {

/// Gain Sigma (Sigma + N)^-1 with N = blockdiag(sigma_i^2 I_D).
inline Eigen::MatrixXd posterior_gain(const GaussianVideoPrior& prior, const SigmaVector& sigma) {
    const auto n = static_cast<Eigen::Index>(prior.dim());
    const auto d = static_cast<Eigen::Index>(prior.frame_dim());
    Eigen::MatrixXd a = prior.cov();
    for (Eigen::Index i = 0; i < n; ++i) a(i, i) += sigma[static_cast<std::size_t>(i / d)] * sigma[static_cast<std::size_t>(i / d)];
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    require(llt.info() == Eigen::Success, "gaussian_oracle_denoise: Sigma + N is not positive definite");
    // Sigma (Sigma+N)^-1 = ((Sigma+N)^-1 Sigma)^T since both are symmetric.
    return llt.solve(prior.cov()).transpose();
}

} // namespace detail

/// Posterior mean E[z_0 | z_t] under per-frame noise levels.
inline Clip gaussian_oracle_denoise(const GaussianVideoPrior& prior, const Clip& z_t, const SigmaVector& sigma) {
    detail::require(sigma.size() == prior.frames(), "gaussian_oracle_denoise: sigma length must equal frame count");
    const Eigen::VectorXd z = prior.flatten(z_t);
    const Eigen::VectorXd out = prior.mean() + detail::posterior_gain(prior, sigma) * (z - prior.mean());
    return prior.to_clip(out);
}

/// Oracle denoiser for the samplers. Caches the gain matrix per noise vector;
/// the cache is guarded so one instance can be shared between threads.
class GaussianOracleDenoiser {
public:
    explicit GaussianOracleDenoiser(GaussianVideoPrior prior) : prior_(std::move(prior)) {}

    [[nodiscard]] const GaussianVideoPrior& prior() const noexcept { return prior_; }

    [[nodiscard]] Clip denoise(const Clip& z_t, const SigmaVector& sigma, const Clip& /*cond*/) const {
        detail::require(sigma.size() == prior_.frames(), "GaussianOracleDenoiser: sigma length must equal frame count");
        const Eigen::VectorXd z = prior_.flatten(z_t);
        const Eigen::VectorXd out = prior_.mean() + (*gain(sigma)) * (z - prior_.mean());
        return prior_.to_clip(out);
    }

private:
    std::shared_ptr<const Eigen::MatrixXd> gain(const SigmaVector& sigma) const {
        std::lock_guard lock(mutex_);
        auto it = cache_.find(sigma.values());
        if (it != cache_.end()) return it->second;
        if (cache_.size() >= kMaxCached) cache_.clear();
        auto g = std::make_shared<const Eigen::MatrixXd>(detail::posterior_gain(prior_, sigma));
        cache_.emplace(sigma.values(), g);
        return g;
    }

    static constexpr std::size_t kMaxCached = 4096;
    GaussianVideoPrior prior_;
    mutable std::mutex mutex_;
    mutable std::map<std::vector<double>, std::shared_ptr<const Eigen::MatrixXd>> cache_;
};

struct ConditionalStats {
    std::vector<std::size_t> unknown_frames;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Gaussian conditional of the unknown frames given `known_values` at
/// `known_frames` (values laid out frame-major in the order given).
inline ConditionalStats conditional_stats(const GaussianVideoPrior& prior, const std::vector<std::size_t>& known_frames,
                                          const Eigen::VectorXd& known_values) {
    const std::set<std::size_t> known(known_frames.begin(), known_frames.end());
    detail::require(!known.empty(), "conditional_stats: known frame set is empty");
    detail::require(known.size() == known_frames.size(), "conditional_stats: duplicate known frames");
    detail::require(known.size() < prior.frames(), "conditional_stats: known set must be a proper subset");
    for (auto f : known) detail::require(f < prior.frames(), "conditional_stats: frame index out of range");
    const auto d = static_cast<Eigen::Index>(prior.frame_dim());
    detail::require(known_values.size() == static_cast<Eigen::Index>(known_frames.size()) * d,
                    "conditional_stats: known values have the wrong length");

    std::vector<Eigen::Index> ki;
    std::vector<Eigen::Index> ui;
    ConditionalStats out;
    for (std::size_t f : known_frames)
        for (Eigen::Index j = 0; j < d; ++j) ki.push_back(static_cast<Eigen::Index>(f) * d + j);
    for (std::size_t f = 0; f < prior.frames(); ++f) {
        if (known.count(f)) continue;
        out.unknown_frames.push_back(f);
        for (Eigen::Index j = 0; j < d; ++j) ui.push_back(static_cast<Eigen::Index>(f) * d + j);
    }
    const auto nk = static_cast<Eigen::Index>(ki.size());
    const auto nu = static_cast<Eigen::Index>(ui.size());
    Eigen::MatrixXd s_kk(nk, nk), s_uk(nu, nk), s_uu(nu, nu);
    Eigen::VectorXd mu_k(nk), mu_u(nu);
    for (Eigen::Index a = 0; a < nk; ++a) {
        mu_k(a) = prior.mean()(ki[a]);
        for (Eigen::Index b = 0; b < nk; ++b) s_kk(a, b) = prior.cov()(ki[a], ki[b]);
    }
    for (Eigen::Index a = 0; a < nu; ++a) {
        mu_u(a) = prior.mean()(ui[a]);
        for (Eigen::Index b = 0; b < nk; ++b) s_uk(a, b) = prior.cov()(ui[a], ki[b]);
        for (Eigen::Index b = 0; b < nu; ++b) s_uu(a, b) = prior.cov()(ui[a], ui[b]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(s_kk);
    detail::require(llt.info() == Eigen::Success, "conditional_stats: known block is not positive definite");
    out.mean = mu_u + s_uk * llt.solve(known_values - mu_k);
    out.cov = s_uu - s_uk * llt.solve(s_uk.transpose());
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    return out;
}

} // namespace streamdepth
