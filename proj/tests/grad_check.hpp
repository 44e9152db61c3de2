#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "streamdepth/training.hpp"

namespace streamdepth::testing {

struct ProbeResult {
    std::size_t tensor;
    Eigen::Index index;
    double analytic;
    double numeric;
    double rel_error;
};

/// Central differences of loss_value against loss_gradient at `probes`
/// coordinates drawn uniformly over the tensors selected by `mask`.
inline std::vector<ProbeResult> finite_difference_probe(DenoiserModel model, const TrainingExample& ex,
                                                        const SigmaVector& sigma, const Clip& noise, GroupMask mask,
                                                        std::size_t probes, double h, Rng& rng) {
    const auto g = loss_gradient(model, ex, sigma, noise, mask);
    std::vector<std::pair<std::size_t, Eigen::Index>> coords;
    for (std::size_t t = 0; t < model.params().size(); ++t)
        if (mask(model.params().tensors[t].group))
            for (Eigen::Index i = 0; i < model.params()[t].size(); ++i) coords.emplace_back(t, i);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(probes, coords.size()));
    std::vector<ProbeResult> out;
    for (auto [t, i] : coords) {
        double& p = model.params()[t].data()[i];
        const double keep = p;
        p = keep + h;
        const double up = loss_value(model, ex, sigma, noise);
        p = keep - h;
        const double down = loss_value(model, ex, sigma, noise);
        p = keep;
        const double num = (up - down) / (2.0 * h);
        const double ana = g.grads[t].data()[i];
        const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
        out.push_back({t, i, ana, num, rel});
    }
    return out;
}

/// Gives every temporal tensor small random values so temporal paths carry signal.
inline void randomize_temporal(DenoiserModel& model, double scale, Rng& rng) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto& t : model.params().tensors)
        if (t.group == ParamGroup::temporal)
            for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = n(rng);
}

} // namespace streamdepth::testing
