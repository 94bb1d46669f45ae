#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dualctl/lp.hpp"
#include "dualctl/plant.hpp"
#include "dualctl/text.hpp"

namespace dualctl {

enum class MpcVariant { standard, oracle, cautious };

struct MpcParams {
    int horizon = 12;  // matched to the planner's tree depth
    double lp_tolerance = 1e-7;
    MpcVariant variant = MpcVariant::standard;
    double cautious_inflation = 4.0;

    void validate() const {
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (!(lp_tolerance > 0.0)) throw ConfigError("lp_tolerance must be > 0");
        if (!(cautious_inflation >= 1.0)) throw ConfigError("cautious_inflation must be >= 1");
    }
};

struct MpcPlan {
    std::vector<Control> inputs;  // horizon entries, callers apply the first
    double planned_reward = 0.0;  // linear-model reward of the returned inputs
    bool lp_failed = false;       // solver gave up, inputs fell back to zero
    bool unique_optimum = false;
    int lp_iterations = 0;
};

// Split-variable linear program for the receding-horizon plan. With
// x_{k+1} = A x_k + B u_k and per-step reward
// r_pos'|p| + r_vel'|v| + r_u'|u| (all weights nonpositive), writing
// u = u+ - u- and x = e+ - e- with positive costs on every split half makes
// the split tight at any optimum, so minimizing recovers the L1 objective
// exactly. Each step contributes six equality rows; columns are
// [u+ | u- | e+ | e-] with successor-state blocks e_{k+1} at offset 6k.
struct MpcProgram {
    LpProblem lp;
    std::vector<int> warm_basis;  // free-response basis, skips LP phase 1
    int horizon = 0;
};

inline MpcProgram mpc_lp_build(const PhysState& x_hat, const ParamVec& theta_hat,
                               const MpcParams& params, const PlantSpec& spec) {
    params.validate();
    spec.validate();
    if (spec.r_pos > 0.0 || spec.r_vel > 0.0 || spec.r_u > 0.0) {
        throw ConfigError("reward weights must be penalties for the plan reformulation");
    }
    const LinearDynamics dyn = linearize(theta_hat, x_hat[kPtheta], spec);

    const int h = params.horizon;
    const int rows = kPhysDim * h;
    const int u_cols = kControlDim * h;
    const int e_cols = kPhysDim * h;
    const int cols = 2 * u_cols + 2 * e_cols;
    const int e_plus = 2 * u_cols;
    const int e_minus = 2 * u_cols + e_cols;

    MpcProgram prog;
    prog.horizon = h;
    prog.lp.eq = Eigen::MatrixXd::Zero(rows, cols);
    prog.lp.rhs = Eigen::VectorXd::Zero(rows);
    prog.lp.cost = Eigen::VectorXd::Zero(cols);
    prog.lp.upper = Eigen::VectorXd::Constant(cols, std::numeric_limits<double>::infinity());

    for (int k = 0; k < h; ++k) {
        const int row = kPhysDim * k;
        for (int i = 0; i < kPhysDim; ++i) {
            prog.lp.eq(row + i, e_plus + kPhysDim * k + i) = 1.0;
            prog.lp.eq(row + i, e_minus + kPhysDim * k + i) = -1.0;
        }
        prog.lp.eq.block(row, kControlDim * k, kPhysDim, kControlDim) = -dyn.b;
        prog.lp.eq.block(row, u_cols + kControlDim * k, kPhysDim, kControlDim) = dyn.b;
        if (k > 0) {
            prog.lp.eq.block(row, e_plus + kPhysDim * (k - 1), kPhysDim, kPhysDim) = -dyn.a;
            prog.lp.eq.block(row, e_minus + kPhysDim * (k - 1), kPhysDim, kPhysDim) = dyn.a;
        }
    }
    prog.lp.rhs.head(kPhysDim) = dyn.a * x_hat;

    for (int k = 0; k < h; ++k) {
        for (int c = 0; c < kControlDim; ++c) {
            prog.lp.cost(kControlDim * k + c) = -spec.r_u;
            prog.lp.cost(u_cols + kControlDim * k + c) = -spec.r_u;
            prog.lp.upper(kControlDim * k + c) = spec.u_max;
            prog.lp.upper(u_cols + kControlDim * k + c) = spec.u_max;
        }
        for (int i = 0; i < kPhysDim; ++i) {
            const double weight = i < 3 ? -spec.r_pos : -spec.r_vel;
            prog.lp.cost(e_plus + kPhysDim * k + i) = weight;
            prog.lp.cost(e_minus + kPhysDim * k + i) = weight;
        }
    }

    // zero-input free response picks the sign of each state split, giving a
    // feasible lower-triangular starting basis
    prog.warm_basis.resize(rows);
    PhysState x = x_hat;
    for (int k = 0; k < h; ++k) {
        x = dyn.a * x;
        for (int i = 0; i < kPhysDim; ++i) {
            const int side = x[i] >= 0.0 ? e_plus : e_minus;
            prog.warm_basis[kPhysDim * k + i] = side + kPhysDim * k + i;
        }
    }
    return prog;
}

namespace detail {

inline double linear_plan_reward(const std::vector<Control>& inputs, const PhysState& x_hat,
                                 const LinearDynamics& dyn, const PlantSpec& spec) {
    double total = 0.0;
    PhysState x = x_hat;
    for (const Control& u : inputs) {
        x = dyn.a * x + dyn.b * u;
        total += reward(x, u, spec);
    }
    return total;
}

}  // namespace detail

// Certainty-equivalent plan from the current state and parameter estimates.
// On solver failure the plan falls back to all-zero inputs with the flag set.
inline MpcPlan mpc_plan(const PhysState& x_hat, const ParamVec& theta_hat,
                        const MpcParams& params, const PlantSpec& spec) {
    const MpcProgram prog = mpc_lp_build(x_hat, theta_hat, params, spec);
    const LinearDynamics dyn = linearize(theta_hat, x_hat[kPtheta], spec);
    const int h = prog.horizon;
    const int u_cols = kControlDim * h;

    MpcPlan plan;
    plan.inputs.assign(h, Control::Zero());
    try {
        LpOptions opt;
        opt.tolerance = params.lp_tolerance;
        opt.initial_basis = prog.warm_basis;
        const LpSolution sol = solve_lp(prog.lp, opt);
        plan.unique_optimum = sol.unique_optimum;
        plan.lp_iterations = sol.iterations;
        for (int k = 0; k < h; ++k) {
            for (int c = 0; c < kControlDim; ++c) {
                const double u = sol.z(kControlDim * k + c) - sol.z(u_cols + kControlDim * k + c);
                plan.inputs[k][c] = std::min(std::max(u, -spec.u_max), spec.u_max);
            }
        }
    } catch (const LpError&) {
        plan.lp_failed = true;
        plan.inputs.assign(h, Control::Zero());
    }
    plan.planned_reward = detail::linear_plan_reward(plan.inputs, x_hat, dyn, spec);
    return plan;
}

// Fully-observed baseline: plan against the true state and parameters.
inline Control oracle_policy(const Hyperstate& xi_true, const MpcParams& params,
                             const PlantSpec& spec) {
    const PhysState x(phys_of(xi_true));
    const ParamVec theta = clamp_params(ParamVec(params_of(xi_true)), spec.param_floor);
    return mpc_plan(x, theta, params, spec).inputs.front();
}

// The cautious variant runs the estimator with inflated process noise while
// the truth model keeps the original spec.
inline PlantSpec cautious_inflation_hook(const PlantSpec& spec, double factor) {
    if (!(factor >= 1.0)) throw ConfigError("inflation factor must be >= 1");
    PlantSpec inflated = spec;
    inflated.process_var *= factor;
    return inflated;
}

}  // namespace dualctl
