#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dualctl/gaussian.hpp"
#include "dualctl/plant.hpp"
#include "dualctl/rng.hpp"
#include "dualctl/text.hpp"
#include "dualctl/ukf.hpp"

namespace dualctl {

struct BoundingParams {
    double beta_des = 6.0;  // desired bound on the next physical-state norm
    double alpha = 0.05;    // significance of both confidence regions
    int n_u = 50;           // action candidates per filter call
    int n_b = 100;          // belief samples per bound evaluation

    void validate() const {
        if (!(beta_des > 0.0)) throw ConfigError("beta_des must be > 0");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
        if (n_u < 1) throw ConfigError("n_u must be >= 1");
        if (n_b < 1) throw ConfigError("n_b must be >= 1");
    }
};

// Worst-case contribution of one step of process noise: the longest semi-axis
// of its confidence ellipsoid over the physical-state block. The full-block
// quantile slightly over-covers the rank-deficient noise (no spin-rate kick),
// which keeps the bound valid.
inline double beta_w(const PlantSpec& spec, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
    if (spec.process_var == 0.0) return 0.0;
    return std::sqrt(spec.process_var * chi2_quantile(kPhysDim, 1.0 - alpha));
}

// Conservative norm of the noise-free successor: the largest physical-state
// norm reached from belief samples inside the confidence ellipsoid. Samples
// with any parameter below the floor are discarded; if every sample is
// discarded the clamped belief mean stands in as the sole sample.
inline double beta_b(const BeliefState& b, const Control& u, const BoundingParams& params,
                     const PlantSpec& spec, Rng& rng) {
    params.validate();
    // Filter outputs can sit a hair below PSD; project before the ellipsoid.
    const BeliefState cleaned{b.mean, psd_projection(b.cov)};
    const Ellipsoid region = confidence_ellipsoid(cleaned, params.alpha);
    const std::vector<Vector> samples = sample_in_ellipsoid(region, params.n_b, rng);

    double best = 0.0;
    bool any = false;
    for (const Vector& s : samples) {
        const Hyperstate xi(s);
        if (ParamVec(params_of(xi)).minCoeff() < spec.param_floor) continue;
        const Hyperstate next = step_deterministic(xi, u, spec);
        best = std::max(best, PhysState(phys_of(next)).norm());
        any = true;
    }
    if (any) return best;

    Hyperstate xi(b.mean);
    xi.tail<kParamDim>() = clamp_params(ParamVec(xi.tail<kParamDim>()), spec.param_floor);
    return PhysState(phys_of(step_deterministic(xi, u, spec))).norm();
}

// Rejection loop over uniform box actions: the first candidate whose combined
// bound stays within beta_des is accepted. After n_u misses the last candidate
// is returned anyway, flagged as unbounded.
inline std::pair<Control, bool> filter_action(const BeliefState& b, const BoundingParams& params,
                                              const PlantSpec& spec, Rng& rng) {
    params.validate();
    const double noise_term = beta_w(spec, params.alpha);
    Control u = Control::Zero();
    for (int attempt = 0; attempt < params.n_u; ++attempt) {
        for (int c = 0; c < kControlDim; ++c) u[c] = rng.uniform(-spec.u_max, spec.u_max);
        if (noise_term + beta_b(b, u, params, spec, rng) <= params.beta_des) {
            return {u, true};
        }
    }
    return {u, false};
}

}  // namespace dualctl
