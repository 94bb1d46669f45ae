#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "dualctl/belief_mdp.hpp"
#include "dualctl/gaussian.hpp"
#include "dualctl/mpc.hpp"
#include "dualctl/plant.hpp"
#include "dualctl/rng.hpp"
#include "dualctl/text.hpp"
#include "dualctl/ukf.hpp"

namespace dualctl {

enum class SearchMode { mcts, qmdp_ts };

// Bounding hook: proposes an action and reports whether it passed the bound.
using ActionFilter = std::function<std::pair<Control, bool>(const BeliefState&, Rng&)>;

struct SearchParams {
    double k_action = 22.0;
    double k_state = 5.0;
    double dpw_exponent = 1.0 / 30.0;
    int depth = 12;
    double explore_c = 27.0;
    int node_budget = 3000;
    double epsilon_mpc = 0.8;  // chance of a uniform proposal; otherwise MPC on a sampled state
    double discount = 0.99;
    SearchMode mode = SearchMode::mcts;
    ActionFilter action_filter;
    MpcParams mpc;
    double reward_offset = 0.0;  // constant added to every per-step reward

    void validate() const {
        if (!(k_action > 0.0) || !(k_state > 0.0)) {
            throw ConfigError("dpw coefficients must be > 0");
        }
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (!(explore_c >= 0.0)) throw ConfigError("explore_c must be >= 0");
        if (node_budget < 1) throw ConfigError("node_budget must be >= 1");
        if (!(epsilon_mpc >= 0.0 && epsilon_mpc <= 1.0)) {
            throw ConfigError("epsilon_mpc must be in [0,1]");
        }
        if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must be in (0,1]");
        mpc.validate();
    }
};

struct ActionChild {
    int belief_id = -1;
    double reward = 0.0;
};

struct ActionNode {
    Control u = Control::Zero();
    int visits = 0;
    double q = 0.0;
    double return_sum = 0.0;  // q must stay the mean of backed-up returns
    bool within_bound = true;
    std::vector<ActionChild> children;
};

struct BeliefNode {
    BeliefState belief;
    int visits = 0;
    std::vector<int> actions;
};

struct SearchTree {
    std::vector<BeliefNode> beliefs;
    std::vector<ActionNode> actions;
    int filter_failures = 0;    // generative aborts turned into penalty leaves
    int unbounded_actions = 0;  // bounding fall-through proposals inserted

    int total_nodes() const {
        return static_cast<int>(beliefs.size() + actions.size());
    }
};

struct SearchResult {
    Control action = Control::Zero();
    bool no_action = false;  // budget too small to expand any root action
    double root_value = 0.0;
    SearchTree tree;
};

inline int dpw_cap(double k, int visits, double exponent) {
    return static_cast<int>(std::ceil(k * std::pow(static_cast<double>(std::max(visits, 1)), exponent)));
}

// Upper-confidence pick among a node's actions. Unvisited actions win first in
// insertion order; ties keep the earliest action.
inline int ucb_select(const SearchTree& tree, int belief_id, double explore_c) {
    const BeliefNode& node = tree.beliefs[belief_id];
    for (int aid : node.actions) {
        if (tree.actions[aid].visits == 0) return aid;
    }
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    const double log_n = std::log(static_cast<double>(std::max(node.visits, 1)));
    for (int aid : node.actions) {
        const ActionNode& a = tree.actions[aid];
        const double score = a.q + explore_c * std::sqrt(log_n / a.visits);
        if (score > best_score) {
            best_score = score;
            best = aid;
        }
    }
    return best;
}

// Action proposal: a uniform box sample with probability epsilon_mpc, else the
// first planned input for a state imagined from the belief. A configured
// bounding filter replaces the whole proposal mechanism.
inline Control propose_action(const BeliefState& b, const SearchParams& search,
                              const PlantSpec& spec, Rng& rng, bool* within_bound = nullptr) {
    if (within_bound) *within_bound = true;
    if (search.action_filter) {
        auto [u, ok] = search.action_filter(b, rng);
        if (within_bound) *within_bound = ok;
        return u;
    }
    if (rng.uniform() < search.epsilon_mpc) {
        Control u;
        for (int c = 0; c < kControlDim; ++c) u[c] = rng.uniform(-spec.u_max, spec.u_max);
        return u;
    }
    Hyperstate xi(sample_mvn(b, rng));
    xi.tail<kParamDim>() = clamp_params(ParamVec(xi.tail<kParamDim>()), spec.param_floor);
    return mpc_plan(PhysState(phys_of(xi)), ParamVec(params_of(xi)), search.mpc, spec)
        .inputs.front();
}

// Leaf evaluation: plan once from the mean, then replay the inputs open-loop
// through the nonlinear mean dynamics for the requested number of steps. The
// plan horizon never exceeds the replay depth.
inline double rollout(const Hyperstate& mean, int depth, const SearchParams& search,
                      const PlantSpec& spec) {
    if (depth <= 0) return 0.0;
    Hyperstate xi = mean;
    xi.tail<kParamDim>() = clamp_params(ParamVec(xi.tail<kParamDim>()), spec.param_floor);

    MpcParams horizon_fit = search.mpc;
    horizon_fit.horizon = std::min(search.mpc.horizon, depth);
    const MpcPlan plan =
        mpc_plan(PhysState(phys_of(xi)), ParamVec(params_of(xi)), horizon_fit, spec);

    double value = 0.0;
    double weight = 1.0;
    for (int k = 0; k < depth; ++k) {
        const Control u =
            k < static_cast<int>(plan.inputs.size()) ? plan.inputs[k] : Control::Zero();
        const MeanTransition t = mean_propagate(xi, u, spec);
        value += weight * (t.reward + search.reward_offset);
        weight *= search.discount;
        xi = t.state;
    }
    return value;
}

namespace detail {

class TreeSearch {
  public:
    TreeSearch(const BeliefState& root, const SearchParams& search, const PlantSpec& spec,
               Rng& rng)
        : search_(search),
          spec_(spec),
          action_rng_(rng.spawn()),
          transition_rng_(rng.spawn()) {
        search_.validate();
        tree_.beliefs.push_back(BeliefNode{root, 0, {}});
    }

    SearchResult run() {
        int safety = 0;
        const int limit = 50 * search_.node_budget + 100;
        while (tree_.total_nodes() < search_.node_budget && ++safety < limit) {
            simulate(0, search_.depth);
        }

        SearchResult result;
        int best = -1;
        for (int aid : tree_.beliefs[0].actions) {
            if (best < 0) {
                best = aid;
                continue;
            }
            const ActionNode& a = tree_.actions[aid];
            const ActionNode& b = tree_.actions[best];
            if (a.q > b.q || (a.q == b.q && a.visits > b.visits)) best = aid;
        }
        if (best < 0) {
            result.no_action = true;
        } else {
            result.action = tree_.actions[best].u;
            result.root_value = tree_.actions[best].q;
        }
        result.tree = std::move(tree_);
        return result;
    }

  private:
    SearchParams search_;
    const PlantSpec& spec_;
    Rng action_rng_;
    Rng transition_rng_;
    SearchTree tree_;
    double worst_rollout_ = 0.0;

    bool can_allocate() const { return tree_.total_nodes() < search_.node_budget; }

    double penalty() const { return 10.0 * worst_rollout_; }

    double tracked_rollout(const Hyperstate& mean, int depth) {
        const double value = rollout(mean, depth, search_, spec_);
        worst_rollout_ = std::min(worst_rollout_, value);
        return value;
    }

    // planning state of a node: the belief mean with parameters held at the floor
    Hyperstate mean_of(int bid) const {
        Hyperstate xi(tree_.beliefs[bid].belief.mean);
        xi.tail<kParamDim>() = clamp_params(ParamVec(xi.tail<kParamDim>()), spec_.param_floor);
        return xi;
    }

    static BeliefState point_mass(const Hyperstate& xi) {
        return BeliefState{Vector(xi), Matrix::Zero(kHyperDim, kHyperDim)};
    }

    int alloc_belief(BeliefState b) {
        tree_.beliefs.push_back(BeliefNode{std::move(b), 0, {}});
        return static_cast<int>(tree_.beliefs.size()) - 1;
    }

    double simulate(int bid, int depth_remaining) {
        if (depth_remaining == 0) return 0.0;

        const int action_cap =
            dpw_cap(search_.k_action, tree_.beliefs[bid].visits + 1, search_.dpw_exponent);
        if (static_cast<int>(tree_.beliefs[bid].actions.size()) < action_cap && can_allocate()) {
            bool ok = true;
            const Control u =
                propose_action(tree_.beliefs[bid].belief, search_, spec_, action_rng_, &ok);
            ActionNode node;
            node.u = u;
            node.within_bound = ok;
            if (!ok) tree_.unbounded_actions += 1;
            tree_.actions.push_back(std::move(node));
            tree_.beliefs[bid].actions.push_back(static_cast<int>(tree_.actions.size()) - 1);
        }
        if (tree_.beliefs[bid].actions.empty()) {
            // budget refused even the first action; evaluate without growing
            return tracked_rollout(mean_of(bid), depth_remaining);
        }

        tree_.beliefs[bid].visits += 1;
        const int aid = ucb_select(tree_, bid, search_.explore_c);

        const bool fully_observed = search_.mode == SearchMode::qmdp_ts && bid != 0;
        const double value = fully_observed ? descend_mean(bid, aid, depth_remaining)
                                            : descend_belief(bid, aid, depth_remaining);

        ActionNode& a = tree_.actions[aid];
        a.visits += 1;
        a.return_sum += value;
        a.q += (value - a.q) / a.visits;
        return value;
    }

    // full belief transition with progressive widening on outcomes
    double descend_belief(int bid, int aid, int depth_remaining) {
        const int state_cap =
            dpw_cap(search_.k_state, tree_.actions[aid].visits + 1, search_.dpw_exponent);
        const int child_count = static_cast<int>(tree_.actions[aid].children.size());

        if (child_count < state_cap && can_allocate()) {
            const Control u = tree_.actions[aid].u;
            try {
                const BeliefTransition t =
                    generative(tree_.beliefs[bid].belief, u, spec_, transition_rng_);
                const double r = t.reward + search_.reward_offset;
                // a deterministic transition reproduces an existing child
                // exactly; descend it rather than storing a twin
                int match = -1;
                for (const ActionChild& child : tree_.actions[aid].children) {
                    const BeliefNode& stored = tree_.beliefs[child.belief_id];
                    if (child.reward == r && stored.belief.mean == t.belief.mean &&
                        stored.belief.cov == t.belief.cov) {
                        match = child.belief_id;
                        break;
                    }
                }
                if (match >= 0) {
                    return r + search_.discount * simulate(match, depth_remaining - 1);
                }
                const int cid = alloc_belief(t.belief);
                tree_.actions[aid].children.push_back(ActionChild{cid, r});
                return r + search_.discount * tracked_rollout(mean_of(cid), depth_remaining - 1);
            } catch (const EstimationError&) {
                tree_.filter_failures += 1;
                return penalty();
            }
        }

        if (tree_.actions[aid].children.empty()) {
            // no room to store an outcome; evaluate one transiently
            const MeanTransition t = mean_propagate(mean_of(bid), tree_.actions[aid].u, spec_);
            return t.reward + search_.reward_offset +
                   search_.discount * tracked_rollout(t.state, depth_remaining - 1);
        }

        int pick = 0;
        const int n = static_cast<int>(tree_.actions[aid].children.size());
        if (n > 1) {
            pick = std::min(n - 1, static_cast<int>(transition_rng_.uniform() * n));
        }
        const ActionChild child = tree_.actions[aid].children[pick];
        return child.reward + search_.discount * simulate(child.belief_id, depth_remaining - 1);
    }

    // QMDP-TS below the root: the mean is the state, one deterministic child
    double descend_mean(int bid, int aid, int depth_remaining) {
        if (tree_.actions[aid].children.empty()) {
            const MeanTransition t = mean_propagate(mean_of(bid), tree_.actions[aid].u, spec_);
            const double r = t.reward + search_.reward_offset;
            if (!can_allocate()) {
                return r + search_.discount * tracked_rollout(t.state, depth_remaining - 1);
            }
            const int cid = alloc_belief(point_mass(t.state));
            tree_.actions[aid].children.push_back(ActionChild{cid, r});
            return r + search_.discount * tracked_rollout(mean_of(cid), depth_remaining - 1);
        }
        const ActionChild child = tree_.actions[aid].children.front();
        return child.reward + search_.discount * simulate(child.belief_id, depth_remaining - 1);
    }
};

}  // namespace detail

inline SearchResult plan(const BeliefState& b, const SearchParams& search, const PlantSpec& spec,
                         Rng& rng) {
    detail::TreeSearch engine(b, search, spec, rng);
    return engine.run();
}

}  // namespace dualctl
