#pragma once

#include <cmath>

#include "dualctl/gaussian.hpp"
#include "dualctl/plant.hpp"
#include "dualctl/rng.hpp"
#include "dualctl/ukf.hpp"

namespace dualctl {

struct BeliefTransition {
    BeliefState belief;
    double reward = 0.0;
};

struct MeanTransition {
    Hyperstate state;
    double reward = 0.0;
};

// Generative belief transition: imagine one world consistent with the belief,
// step it without process noise, observe it with the filter's measurement
// floor (so imagined updates match real ones), and filter. Reward is taken at
// the pre-step belief mean. Filter failures escape to the caller.
inline BeliefTransition generative(const BeliefState& b, const Control& u, const PlantSpec& spec,
                                   Rng& rng) {
    Hyperstate xi(sample_mvn(b, rng));
    xi.tail<kParamDim>() = clamp_params(ParamVec(xi.tail<kParamDim>()), spec.param_floor);
    const Hyperstate next = step_deterministic(xi, u, spec);

    Observation o = observe_deterministic(next, u, spec);
    const double sd = std::sqrt(filter_meas_var(spec));
    for (int i = 0; i < kObsDim; ++i) {
        o[i] += sd * rng.normal();
    }

    BeliefTransition out;
    const Hyperstate mean_xi(b.mean);
    out.reward = reward(PhysState(phys_of(mean_xi)), u, spec);
    out.belief = ukf_step(b, u, o, spec);
    return out;
}

// Fully-observed surrogate transition: the mean is treated as the true state
// and propagated exactly, with the same pre-step reward convention.
inline MeanTransition mean_propagate(const Hyperstate& xi_hat, const Control& u,
                                     const PlantSpec& spec) {
    MeanTransition out;
    out.reward = reward(PhysState(phys_of(xi_hat)), u, spec);
    out.state = step_deterministic(xi_hat, u, spec);
    return out;
}

}  // namespace dualctl
