#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dualctl/bounding.hpp"
#include "dualctl/cross_entropy.hpp"
#include "dualctl/mpc.hpp"
#include "dualctl/planner.hpp"
#include "dualctl/plant.hpp"
#include "dualctl/rng.hpp"
#include "dualctl/text.hpp"
#include "dualctl/ukf.hpp"

namespace dualctl {

enum class Policy { mcts, qmdp_ts, mpc, mpc_cautious, mpc_oracle };

inline const char* policy_name(Policy p) {
    switch (p) {
        case Policy::mcts: return "MCTS";
        case Policy::qmdp_ts: return "QMDP_TS";
        case Policy::mpc: return "MPC";
        case Policy::mpc_cautious: return "MPC_CAUTIOUS";
        case Policy::mpc_oracle: return "MPC_ORACLE";
    }
    return "?";
}

inline Policy parse_policy(const std::string& name) {
    for (Policy p : {Policy::mcts, Policy::qmdp_ts, Policy::mpc, Policy::mpc_cautious,
                     Policy::mpc_oracle}) {
        if (name == policy_name(p)) return p;
    }
    throw ConfigError("unknown policy: " + name);
}

enum class SweepAxis { noise, floor };

inline const char* axis_name(SweepAxis a) {
    return a == SweepAxis::noise ? "noise" : "floor";
}

struct ExperimentConfig {
    Policy policy = Policy::mcts;
    int steps = 50;
    int trials = 20;
    std::uint64_t seed = 1;
    PlantSpec spec;
    SearchParams search;
    MpcParams mpc;
    std::optional<BoundingParams> bounding;  // set => tree policies run the action filter
    std::vector<double> sweep_values;

    void validate() const {
        if (steps < 1) throw ConfigError("steps must be >= 1");
        if (trials < 1) throw ConfigError("trials must be >= 1");
        spec.validate();
        search.validate();
        mpc.validate();
        if (bounding) bounding->validate();
    }
};

// Reduced-scale defaults for single-machine runs.
inline ExperimentConfig desk_preset() {
    ExperimentConfig cfg;
    cfg.trials = 20;
    cfg.search.node_budget = 600;
    return cfg;
}

// Full-scale protocol: 100 trials and 3000-node trees.
inline ExperimentConfig full_scale_preset() {
    ExperimentConfig cfg;
    cfg.trials = 100;
    cfg.search.node_budget = 3000;
    return cfg;
}

struct StepRecord {
    Hyperstate truth = Hyperstate::Zero();  // hyperstate the policy acted from
    Vector belief_mean = Vector::Zero(kHyperDim);
    double cov_trace = 0.0;
    Control action = Control::Zero();
    double reward = 0.0;
    double state_norm = 0.0;  // physical-state norm after the step
};

struct TrialRecord {
    std::vector<StepRecord> steps;
    double total_reward = 0.0;      // undiscounted
    std::vector<double> param_mae;  // per-step mean |estimate - truth| over the parameters
    bool diverged = false;
    bool aborted = false;  // filter failure cut the trial short; record is partial
    int oob_steps = 0;     // steps ending outside the configured bound
};

// One splitmix hop per trial keeps nearby indices uncorrelated; the same
// schedule is reused for every policy so comparisons share random numbers.
inline std::uint64_t trial_seed(std::uint64_t master_seed, int trial_index) {
    return mix_seed(master_seed, static_cast<std::uint64_t>(trial_index));
}

namespace detail {
constexpr std::uint64_t kEnvStream = 0x656e76;     // environment noise
constexpr std::uint64_t kPolicyStream = 0x706f6c;  // planner internals
}  // namespace detail

// Truth: physical state near the origin with spread init_state_var, unknown
// parameters i.i.d. N(1, 0.5) clamped at the floor. Belief: the same prior
// the truth was drawn from, so the filter starts calibrated rather than
// informed.
inline std::pair<Hyperstate, BeliefState> init_trial(const PlantSpec& spec, Rng& rng) {
    const double state_sd = std::sqrt(spec.init_state_var);
    const double param_sd = std::sqrt(0.5);
    Hyperstate xi;
    for (int i = 0; i < kPhysDim; ++i) {
        xi[i] = state_sd * rng.normal();
    }
    for (int i = kPhysDim; i < kHyperDim; ++i) {
        xi[i] = 1.0 + param_sd * rng.normal();
    }
    params_of(xi) = clamp_params(params_of(xi), spec.param_floor);

    BeliefState b;
    b.mean = Vector::Zero(kHyperDim);
    b.mean.segment<kParamDim>(kPhysDim).setOnes();
    b.cov = Matrix::Zero(kHyperDim, kHyperDim);
    b.cov.topLeftCorner(kPhysDim, kPhysDim) =
        spec.init_state_var * Matrix::Identity(kPhysDim, kPhysDim);
    b.cov.bottomRightCorner(kParamDim, kParamDim) =
        0.5 * Matrix::Identity(kParamDim, kParamDim);
    return {xi, b};
}

inline Control policy_action(const ExperimentConfig& cfg, const BeliefState& belief,
                             const Hyperstate& xi_true, Rng& rng) {
    switch (cfg.policy) {
        case Policy::mcts:
        case Policy::qmdp_ts: {
            SearchParams sp = cfg.search;
            sp.mode = cfg.policy == Policy::qmdp_ts ? SearchMode::qmdp_ts : SearchMode::mcts;
            if (cfg.bounding) {
                const BoundingParams bp = *cfg.bounding;
                const PlantSpec spec = cfg.spec;
                sp.action_filter = [bp, spec](const BeliefState& b, Rng& r) {
                    return filter_action(b, bp, spec, r);
                };
            }
            const SearchResult res = plan(belief, sp, cfg.spec, rng);
            return res.no_action ? Control(Control::Zero()) : res.action;
        }
        case Policy::mpc:
        case Policy::mpc_cautious: {
            const Hyperstate xi_hat(belief.mean);
            const PhysState x(phys_of(xi_hat));
            const ParamVec theta =
                clamp_params(ParamVec(params_of(xi_hat)), cfg.spec.param_floor);
            return mpc_plan(x, theta, cfg.mpc, cfg.spec).inputs.front();
        }
        case Policy::mpc_oracle:
            return oracle_policy(xi_true, cfg.mpc, cfg.spec);
    }
    throw ConfigError("unreachable policy");
}

// Closed loop: act, accrue reward at the pre-step state, step the truth,
// observe, filter. The environment stream is consumed identically no matter
// which policy runs, so paired seeds stay paired.
inline TrialRecord run_trial_from(const ExperimentConfig& cfg, Hyperstate xi,
                                  BeliefState belief, Rng& env_rng, Rng& policy_rng) {
    cfg.validate();
    const PlantSpec filter_spec =
        cfg.policy == Policy::mpc_cautious
            ? cautious_inflation_hook(cfg.spec, cfg.mpc.cautious_inflation)
            : cfg.spec;

    TrialRecord rec;
    rec.steps.reserve(cfg.steps);
    rec.param_mae.reserve(cfg.steps);
    for (int k = 0; k < cfg.steps; ++k) {
        StepRecord row;
        row.truth = xi;
        row.belief_mean = belief.mean;
        row.cov_trace = belief.cov.trace();

        try {
            row.action = policy_action(cfg, belief, xi, policy_rng);
        } catch (const EstimationError&) {
            rec.aborted = true;
            break;
        }
        row.reward = reward(PhysState(phys_of(xi)), row.action, cfg.spec);
        rec.param_mae.push_back(
            (ParamVec(params_of(xi)) - belief.mean.segment<kParamDim>(kPhysDim))
                .cwiseAbs()
                .mean());

        xi = step_truth(xi, row.action, cfg.spec, env_rng);
        const Observation obs = observe(xi, row.action, cfg.spec, env_rng);
        row.state_norm = PhysState(phys_of(xi)).norm();
        if (cfg.bounding && row.state_norm > cfg.bounding->beta_des) {
            rec.oob_steps += 1;
        }
        rec.steps.push_back(row);
        rec.total_reward += row.reward;

        try {
            belief = ukf_step(belief, row.action, obs, filter_spec);
        } catch (const EstimationError&) {
            rec.aborted = true;
            break;
        }
        if (divergence_check(belief, Vector(xi))) rec.diverged = true;
    }
    return rec;
}

inline TrialRecord run_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng env_rng(mix_seed(seed, detail::kEnvStream));
    Rng policy_rng(mix_seed(seed, detail::kPolicyStream));
    auto [xi, belief] = init_trial(cfg.spec, env_rng);
    return run_trial_from(cfg, xi, belief, env_rng, policy_rng);
}

struct PointSummary {
    Policy policy = Policy::mcts;
    SweepAxis axis = SweepAxis::noise;
    double value = 0.0;
    double mean_reward = 0.0;
    double sem = 0.0;  // sample stddev over sqrt(trials)
    int trials = 0;    // completed trials behind the mean
    int failed = 0;    // aborted trials, excluded from the mean
    int diverged = 0;
    double oob_frac = 0.0;
};

using SweepTable = std::vector<PointSummary>;

// Noise sweep values are standard deviations (the axis the summaries report);
// the plant stores the variance.
inline PlantSpec with_axis(PlantSpec spec, SweepAxis axis, double value) {
    if (axis == SweepAxis::noise) {
        spec.process_var = value * value;
    } else {
        spec.param_floor = value;
    }
    return spec;
}

inline std::pair<double, double> mean_and_sem(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (const double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (const double x : xs) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(xs.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

inline PointSummary summarize(const std::vector<TrialRecord>& records, Policy policy,
                              SweepAxis axis, double value) {
    PointSummary out;
    out.policy = policy;
    out.axis = axis;
    out.value = value;
    std::vector<double> rewards;
    long long steps = 0;
    long long oob = 0;
    for (const TrialRecord& rec : records) {
        if (rec.diverged) out.diverged += 1;
        if (rec.aborted) {
            out.failed += 1;
            continue;
        }
        rewards.push_back(rec.total_reward);
        steps += static_cast<long long>(rec.steps.size());
        oob += rec.oob_steps;
    }
    std::tie(out.mean_reward, out.sem) = mean_and_sem(rewards);
    out.trials = static_cast<int>(rewards.size());
    out.oob_frac = steps == 0 ? 0.0 : static_cast<double>(oob) / static_cast<double>(steps);
    return out;
}

inline std::vector<TrialRecord> run_point(const ExperimentConfig& cfg) {
    std::vector<TrialRecord> records;
    records.reserve(cfg.trials);
    for (int i = 0; i < cfg.trials; ++i) {
        records.push_back(run_trial(cfg, trial_seed(cfg.seed, i)));
    }
    return records;
}

inline SweepTable sweep(const ExperimentConfig& cfg, SweepAxis axis,
                        const std::vector<double>& values,
                        const std::vector<Policy>& policies) {
    SweepTable table;
    for (const double value : values) {
        for (const Policy policy : policies) {
            ExperimentConfig pt = cfg;
            pt.policy = policy;
            pt.spec = with_axis(cfg.spec, axis, value);
            table.push_back(summarize(run_point(pt), policy, axis, value));
        }
    }
    return table;
}

struct BoundingRow {
    double bound = 0.0;
    double oob_plain = 0.0;      // fraction of steps outside, unfiltered search
    double oob_heuristic = 0.0;  // same with the action filter installed
    double mean_plain = 0.0;
    double sem_plain = 0.0;
    double mean_heuristic = 0.0;
    double sem_heuristic = 0.0;
};

inline double fraction_outside(const std::vector<TrialRecord>& records, double bound) {
    long long steps = 0;
    long long outside = 0;
    for (const TrialRecord& rec : records) {
        if (rec.aborted) continue;
        for (const StepRecord& row : rec.steps) {
            steps += 1;
            if (row.state_norm > bound) outside += 1;
        }
    }
    return steps == 0 ? 0.0 : static_cast<double>(outside) / static_cast<double>(steps);
}

// Filtered-versus-plain search at each bound, on the study's fixed protocol:
// 300-node trees, noise level 0.01, parameter floor 0.1. Both arms share the
// trial seed schedule.
inline std::vector<BoundingRow> bounding_study(const ExperimentConfig& cfg,
                                               const std::vector<double>& bounds) {
    ExperimentConfig base = cfg;
    base.policy = Policy::mcts;
    base.spec.process_var = 1e-4;
    base.spec.param_floor = 0.1;
    base.search.node_budget = 300;

    std::vector<BoundingRow> table;
    for (const double bound : bounds) {
        BoundingRow row;
        row.bound = bound;

        ExperimentConfig plain = base;
        plain.bounding.reset();
        const std::vector<TrialRecord> plain_records = run_point(plain);

        ExperimentConfig heuristic = base;
        BoundingParams bp = cfg.bounding.value_or(BoundingParams{});
        bp.beta_des = bound;
        heuristic.bounding = bp;
        const std::vector<TrialRecord> heuristic_records = run_point(heuristic);

        row.oob_plain = fraction_outside(plain_records, bound);
        row.oob_heuristic = fraction_outside(heuristic_records, bound);
        const PointSummary ps = summarize(plain_records, Policy::mcts, SweepAxis::noise,
                                          base.spec.process_var);
        const PointSummary hs = summarize(heuristic_records, Policy::mcts, SweepAxis::noise,
                                          base.spec.process_var);
        row.mean_plain = ps.mean_reward;
        row.sem_plain = ps.sem;
        row.mean_heuristic = hs.mean_reward;
        row.sem_heuristic = hs.sem;
        table.push_back(row);
    }
    return table;
}

// Hyperparameter-tuning objective: mean total reward of a few seeded MCTS
// trials at noise level 0.01. Every candidate reuses the same trial seeds,
// and a candidate that aborts any trial scores negative infinity.
inline CeObjective make_tune_objective(const ExperimentConfig& cfg, int trials_per_sample) {
    ExperimentConfig base = cfg;
    base.policy = Policy::mcts;
    base.spec.process_var = 1e-4;
    return [base, trials_per_sample](const CeIntVector& v) -> double {
        ExperimentConfig candidate = base;
        candidate.search.k_action = static_cast<double>(v[0]);
        candidate.search.k_state = static_cast<double>(v[1]);
        candidate.search.depth = v[2];
        candidate.search.explore_c = static_cast<double>(v[3]);
        double sum = 0.0;
        for (int i = 0; i < trials_per_sample; ++i) {
            const TrialRecord rec = run_trial(candidate, trial_seed(base.seed, i));
            if (rec.aborted) return -std::numeric_limits<double>::infinity();
            sum += rec.total_reward;
        }
        return sum / static_cast<double>(trials_per_sample);
    };
}

}  // namespace dualctl
