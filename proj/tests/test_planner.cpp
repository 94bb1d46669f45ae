#include "dualctl/planner.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

namespace dualctl {
namespace {

// x-axis rig from the plan tests: unit mass, floor-level friction and offsets,
// vast inertia so force inputs do not couple into spin
ParamVec rig_params() {
    ParamVec theta;
    theta << 1.0, 0.0625, 1e12, 0.0625, 0.0625;
    return theta;
}

PlantSpec quiet_spec() {
    PlantSpec spec;
    spec.process_var = 0.0;
    spec.meas_var = 0.0;
    return spec;
}

Hyperstate make_state(const PhysState& x, const ParamVec& theta) {
    Hyperstate xi;
    xi << x, theta;
    return xi;
}

BeliefState point_belief(const Hyperstate& xi) {
    return BeliefState(Vector(xi), Matrix::Zero(kHyperDim, kHyperDim));
}

BeliefState fuzzy_belief(const Hyperstate& xi, double var) {
    return BeliefState(Vector(xi), var * Matrix::Identity(kHyperDim, kHyperDim));
}

double discounted_ones(int depth, double gamma) {
    double total = 0.0;
    double w = 1.0;
    for (int k = 0; k < depth; ++k) {
        total += w;
        w *= gamma;
    }
    return total;
}

// structural checks every finished search must satisfy
void check_tree(const SearchTree& tree, const SearchParams& search) {
    ASSERT_FALSE(tree.beliefs.empty());
    EXPECT_LE(tree.total_nodes(), search.node_budget);

    for (const BeliefNode& node : tree.beliefs) {
        int visit_sum = 0;
        for (int aid : node.actions) {
            ASSERT_GE(aid, 0);
            ASSERT_LT(aid, static_cast<int>(tree.actions.size()));
            visit_sum += tree.actions[aid].visits;
        }
        EXPECT_EQ(node.visits, visit_sum);
        EXPECT_LE(static_cast<int>(node.actions.size()),
                  dpw_cap(search.k_action, node.visits, search.dpw_exponent));
    }
    for (const ActionNode& a : tree.actions) {
        if (a.visits > 0) {
            const double mean_return = a.return_sum / a.visits;
            EXPECT_NEAR(a.q, mean_return, 1e-9 * (1.0 + std::abs(mean_return)));
        }
        EXPECT_LE(static_cast<int>(a.children.size()),
                  dpw_cap(search.k_state, a.visits, search.dpw_exponent));
        for (const ActionChild& child : a.children) {
            ASSERT_GE(child.belief_id, 0);
            ASSERT_LT(child.belief_id, static_cast<int>(tree.beliefs.size()));
        }
    }
}

TEST(SearchParamsCheck, RejectsBadValues) {
    SearchParams ok;
    EXPECT_NO_THROW(ok.validate());

    SearchParams p = ok;
    p.k_action = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.k_state = -1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.depth = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.explore_c = -0.5;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.node_budget = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.epsilon_mpc = 1.5;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.epsilon_mpc = -0.1;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.discount = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.discount = 1.01;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ok;
    p.mpc.horizon = 0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(DpwCapTest, HandValues) {
    const double exponent = 1.0 / 30.0;
    EXPECT_EQ(dpw_cap(5.0, 30, exponent), 6);  // ceil(5 * 30^(1/30)) = ceil(5.594)
    EXPECT_EQ(dpw_cap(5.0, 1, exponent), 5);
    EXPECT_EQ(dpw_cap(22.0, 1, exponent), 22);
    EXPECT_EQ(dpw_cap(3.0, 1000000, 0.0), 3);
    EXPECT_EQ(dpw_cap(1.0, 0, exponent), 1);  // unvisited nodes still admit one action
}

TEST(DpwCapTest, MonotoneInVisits) {
    for (int n = 1; n < 200; ++n) {
        EXPECT_LE(dpw_cap(5.0, n, 1.0 / 30.0), dpw_cap(5.0, n + 1, 1.0 / 30.0));
        EXPECT_LE(dpw_cap(22.0, n, 1.0 / 30.0), dpw_cap(22.0, n + 1, 1.0 / 30.0));
    }
}

SearchTree bandit_tree(const std::vector<double>& q, const std::vector<int>& visits) {
    SearchTree tree;
    BeliefNode root;
    int total = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        ActionNode a;
        a.q = q[i];
        a.visits = visits[i];
        a.return_sum = q[i] * visits[i];
        total += visits[i];
        tree.actions.push_back(a);
        root.actions.push_back(static_cast<int>(i));
    }
    root.visits = total;
    tree.beliefs.push_back(root);
    return tree;
}

TEST(UcbSelectTest, UnvisitedActionWinsInInsertionOrder) {
    const SearchTree tree = bandit_tree({5.0, 0.0, 0.0}, {2, 0, 0});
    EXPECT_EQ(ucb_select(tree, 0, 100.0), 1);
}

TEST(UcbSelectTest, ZeroExplorationIsGreedy) {
    const SearchTree tree = bandit_tree({1.0, 3.0, 2.0}, {1, 1, 1});
    EXPECT_EQ(ucb_select(tree, 0, 0.0), 1);
}

TEST(UcbSelectTest, BonusMatchesHandComputedScores) {
    // N = 4; arm 0: q 0, n 3; arm 1: q 0.2, n 1
    const SearchTree tree = bandit_tree({0.0, 0.2}, {3, 1});
    const double s0 = 0.0 + 1.0 * std::sqrt(std::log(4.0) / 3.0);
    const double s1 = 0.2 + 1.0 * std::sqrt(std::log(4.0) / 1.0);
    ASSERT_GT(s1, s0);
    EXPECT_EQ(ucb_select(tree, 0, 1.0), 1);
    // crank the gap so the less-visited arm loses on value
    const SearchTree tree2 = bandit_tree({10.0, 0.2}, {3, 1});
    EXPECT_EQ(ucb_select(tree2, 0, 1.0), 0);
}

TEST(UcbSelectTest, ExactTieKeepsTheEarliestAction) {
    const SearchTree tree = bandit_tree({1.5, 1.5, 1.5}, {2, 2, 2});
    EXPECT_EQ(ucb_select(tree, 0, 3.0), 0);
}

TEST(ProposeActionTest, PureRandomProposalsFillTheBox) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.epsilon_mpc = 1.0;
    const BeliefState b = point_belief(make_state(PhysState::Zero(), rig_params()));
    Rng rng(401);

    double largest = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Control u = propose_action(b, search, spec, rng);
        for (int c = 0; c < kControlDim; ++c) {
            EXPECT_LE(std::abs(u[c]), spec.u_max);
            largest = std::max(largest, std::abs(u[c]));
        }
    }
    EXPECT_GT(largest, 0.9 * spec.u_max);
}

TEST(ProposeActionTest, MpcBranchOnAPointMassMatchesThePlanOnTheMean) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.epsilon_mpc = 0.0;
    PhysState x;
    x << 0.4, -0.3, 0.2, 1.0, -0.6, 0.0;
    const Hyperstate xi = make_state(x, rig_params());
    const BeliefState b = point_belief(xi);
    Rng rng(402);

    const Control u = propose_action(b, search, spec, rng);
    const Control expected =
        mpc_plan(x, rig_params(), search.mpc, spec).inputs.front();
    EXPECT_EQ(u, expected);
}

TEST(ProposeActionTest, EpsilonControlsTheBranchFrequency) {
    // at the origin the planned input is exactly zero, a uniform draw never is
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.epsilon_mpc = 0.8;
    search.mpc.horizon = 1;
    const BeliefState b = point_belief(make_state(PhysState::Zero(), rig_params()));
    Rng rng(403);

    const int trials = 10000;
    int random_count = 0;
    for (int i = 0; i < trials; ++i) {
        const Control u = propose_action(b, search, spec, rng);
        if (u.norm() > 0.0) random_count += 1;
    }
    const double fraction = static_cast<double>(random_count) / trials;
    EXPECT_NEAR(fraction, search.epsilon_mpc, 0.02);
}

TEST(ProposeActionTest, ConfiguredFilterReplacesTheProposal) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    Control forced;
    forced << 1.25, -0.5, 0.75;
    search.action_filter = [forced](const BeliefState&, Rng&) {
        return std::make_pair(forced, false);
    };
    const BeliefState b = point_belief(make_state(PhysState::Zero(), rig_params()));
    Rng rng(404);

    bool ok = true;
    const Control u = propose_action(b, search, spec, rng, &ok);
    EXPECT_EQ(u, forced);
    EXPECT_FALSE(ok);
}

TEST(RolloutTest, ZeroDepthIsWorthZero) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    const Hyperstate xi = make_state(PhysState::Zero(), rig_params());
    EXPECT_EQ(rollout(xi, 0, search, spec), 0.0);
}

TEST(RolloutTest, RestAtTheOriginStaysWorthZero) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    const Hyperstate xi = make_state(PhysState::Zero(), rig_params());
    EXPECT_NEAR(rollout(xi, 5, search, spec), 0.0, 1e-12);
}

TEST(RolloutTest, DepthOneMatchesTheHandComputedReward) {
    // unit x-velocity: the one-step plan rails the input at -u_max, and the
    // step reward is charged at the pre-step state
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    PhysState x = PhysState::Zero();
    x[3] = 1.0;
    const Hyperstate xi = make_state(x, rig_params());
    const double expected = spec.r_vel * 1.0 + spec.r_u * spec.u_max;
    EXPECT_NEAR(rollout(xi, 1, search, spec), expected, 1e-9);
}

TEST(RolloutTest, OffsetShiftsTheValueByItsDiscountedSum) {
    const PlantSpec spec = quiet_spec();
    Rng rng(405);
    for (int trial = 0; trial < 5; ++trial) {
        PhysState x;
        for (int i = 0; i < kPhysDim; ++i) x[i] = rng.uniform(-1.0, 1.0);
        const Hyperstate xi = make_state(x, rig_params());
        SearchParams base;
        SearchParams shifted = base;
        shifted.reward_offset = 7.5;
        const int depth = 4;
        const double lift = 7.5 * discounted_ones(depth, base.discount);
        EXPECT_NEAR(rollout(xi, depth, shifted, spec),
                    rollout(xi, depth, base, spec) + lift, 1e-9);
    }
}

TEST(RolloutTest, PlanHorizonIsCappedByTheReplayDepth) {
    const PlantSpec spec = quiet_spec();
    PhysState x;
    x << 0.5, -0.8, 0.3, 0.7, -0.2, 0.0;
    const Hyperstate xi = make_state(x, rig_params());
    SearchParams wide;
    wide.mpc.horizon = 12;
    SearchParams tight;
    tight.mpc.horizon = 3;
    EXPECT_EQ(rollout(xi, 3, wide, spec), rollout(xi, 3, tight, spec));
}

TEST(PlanTest, BudgetOfOneReportsNoAction) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.node_budget = 1;
    Rng rng(406);
    const SearchResult result =
        plan(point_belief(make_state(PhysState::Zero(), rig_params())), search, spec, rng);
    EXPECT_TRUE(result.no_action);
    EXPECT_EQ(result.action, Control::Zero());
    EXPECT_EQ(result.tree.beliefs.size(), 1u);
    EXPECT_TRUE(result.tree.actions.empty());
}

TEST(PlanTest, BudgetOfTwoForcesTheSingleExpandedAction) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.node_budget = 2;
    search.epsilon_mpc = 1.0;
    Rng rng(407);
    const SearchResult result =
        plan(point_belief(make_state(PhysState::Zero(), rig_params())), search, spec, rng);
    EXPECT_FALSE(result.no_action);
    ASSERT_EQ(result.tree.actions.size(), 1u);
    EXPECT_EQ(result.action, result.tree.actions[0].u);
    EXPECT_EQ(result.tree.total_nodes(), 2);
    for (int c = 0; c < kControlDim; ++c) EXPECT_LE(std::abs(result.action[c]), spec.u_max);
}

TEST(PlanTest, DepthOneGreedyMatchesExhaustiveCandidateArgmax) {
    const PlantSpec spec = quiet_spec();
    SearchParams search;
    search.depth = 1;
    search.node_budget = 41;  // root + 20 action/outcome pairs
    search.epsilon_mpc = 1.0;
    PhysState x;
    x << 0.3, -0.2, 0.1, 0.8, -0.5, 0.2;
    const Hyperstate xi = make_state(x, rig_params());

    const std::uint64_t seed = 408;
    Rng rng(seed);
    const SearchResult result = plan(point_belief(xi), search, spec, rng);
    ASSERT_FALSE(result.no_action);
    const std::size_t n_actions = result.tree.beliefs[0].actions.size();
    ASSERT_EQ(n_actions, 20u);

    // replay the proposal stream: the engine takes the action stream first
    Rng mirror(seed);
    Rng action_stream = mirror.spawn();
    (void)mirror.spawn();
    Control best = Control::Zero();
    double best_reward = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_actions; ++i) {
        (void)action_stream.uniform();  // branch coin
        Control u;
        for (int c = 0; c < kControlDim; ++c) u[c] = action_stream.uniform(-spec.u_max, spec.u_max);
        const double r = reward(x, u, spec);
        if (r > best_reward) {
            best_reward = r;
            best = u;
        }
    }
    EXPECT_EQ(result.action, best);
    EXPECT_NEAR(result.root_value, best_reward, 1e-12);

    // with depth one every backup is the same pre-step reward
    for (int aid : result.tree.beliefs[0].actions) {
        const ActionNode& a = result.tree.actions[aid];
        EXPECT_NEAR(a.q, reward(x, a.u, spec), 1e-12);
    }
}

SearchParams noisy_search() {
    SearchParams search;
    search.node_budget = 201;
    search.depth = 6;
    search.k_action = 6.0;
    search.k_state = 3.0;
    search.mpc.horizon = 4;
    return search;
}

PlantSpec noisy_spec() {
    PlantSpec spec;
    spec.process_var = 0.01;
    spec.meas_var = 0.0;
    return spec;
}

TEST(PlanTest, SeededReplayIsIdentical) {
    const PlantSpec spec = noisy_spec();
    const SearchParams search = noisy_search();
    PhysState x;
    x << 0.5, 0.5, 0.2, -0.4, 0.3, 0.1;
    const BeliefState b = fuzzy_belief(make_state(x, rig_params()), 0.02);

    Rng rng_a(409);
    const SearchResult a = plan(b, search, spec, rng_a);
    Rng rng_b(409);
    const SearchResult bb = plan(b, search, spec, rng_b);

    EXPECT_EQ(a.action, bb.action);
    EXPECT_EQ(a.root_value, bb.root_value);
    EXPECT_EQ(a.tree.beliefs.size(), bb.tree.beliefs.size());
    EXPECT_EQ(a.tree.actions.size(), bb.tree.actions.size());
}

TEST(PlanTest, TreeInvariantsHoldAcrossSeeds) {
    const PlantSpec spec = noisy_spec();
    SearchParams search = noisy_search();
    search.node_budget = 301;
    PhysState x;
    x << 0.8, -0.6, 0.4, 0.5, -0.2, 0.3;
    const BeliefState b = fuzzy_belief(make_state(x, rig_params()), 0.05);

    for (std::uint64_t seed : {11u, 12u, 13u}) {
        Rng rng(seed);
        const SearchResult result = plan(b, search, spec, rng);
        ASSERT_FALSE(result.no_action);
        check_tree(result.tree, search);
        EXPECT_EQ(result.tree.filter_failures, 0);
    }
}

TEST(PlanTest, QmdpTsMatchesMctsOnADeterministicSurrogate) {
    // no process noise and a point-mass root: transitions are deterministic,
    // so widening on outcomes revisits one child and full search and
    // mean-propagation search must coincide
    const PlantSpec spec = quiet_spec();
    SearchParams search = noisy_search();
    search.node_budget = 151;
    search.mpc.horizon = 6;
    PhysState x;
    x << 0.6, -0.4, 0.2, 0.9, -0.7, 0.1;
    const BeliefState b = point_belief(make_state(x, rig_params()));

    SearchParams mcts = search;
    mcts.mode = SearchMode::mcts;
    SearchParams qmdp = search;
    qmdp.mode = SearchMode::qmdp_ts;

    Rng rng_a(410);
    const SearchResult full = plan(b, mcts, spec, rng_a);
    Rng rng_b(410);
    const SearchResult mean = plan(b, qmdp, spec, rng_b);

    ASSERT_FALSE(full.no_action);
    ASSERT_FALSE(mean.no_action);
    EXPECT_NEAR((full.action - mean.action).cwiseAbs().maxCoeff(), 0.0, 1e-9);
    EXPECT_NEAR(full.root_value, mean.root_value, 1e-9);

    const auto& ra = full.tree.beliefs[0].actions;
    const auto& rb = mean.tree.beliefs[0].actions;
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_NEAR(full.tree.actions[ra[i]].q, mean.tree.actions[rb[i]].q, 1e-9);
        EXPECT_EQ(full.tree.actions[ra[i]].visits, mean.tree.actions[rb[i]].visits);
    }
}

TEST(PlanTest, QmdpTsKeepsOneOutcomePerActionBelowTheRoot) {
    const PlantSpec spec = noisy_spec();
    SearchParams search = noisy_search();
    search.mode = SearchMode::qmdp_ts;
    search.node_budget = 401;
    PhysState x;
    x << 0.5, 0.5, 0.2, -0.4, 0.3, 0.1;
    const BeliefState b = fuzzy_belief(make_state(x, rig_params()), 0.05);

    Rng rng(411);
    const SearchResult result = plan(b, search, spec, rng);
    ASSERT_FALSE(result.no_action);

    std::vector<bool> at_root(result.tree.actions.size(), false);
    for (int aid : result.tree.beliefs[0].actions) at_root[aid] = true;

    int widened_root_actions = 0;
    for (std::size_t aid = 0; aid < result.tree.actions.size(); ++aid) {
        const auto n = result.tree.actions[aid].children.size();
        if (at_root[aid]) {
            widened_root_actions += n > 1 ? 1 : 0;
        } else {
            EXPECT_LE(n, 1u);
        }
    }
    EXPECT_GT(widened_root_actions, 0);  // the root keeps its full belief branching
}

TEST(PlanTest, RewardOffsetLeavesTheChoiceAlone) {
    const PlantSpec spec = noisy_spec();
    const SearchParams base = noisy_search();
    SearchParams shifted = base;
    shifted.reward_offset = 7.5;
    PhysState x;
    x << 0.7, -0.3, 0.1, 0.6, 0.2, -0.1;
    const BeliefState b = fuzzy_belief(make_state(x, rig_params()), 0.02);

    Rng rng_a(412);
    const SearchResult plain = plan(b, base, spec, rng_a);
    Rng rng_b(412);
    const SearchResult lifted = plan(b, shifted, spec, rng_b);

    ASSERT_FALSE(plain.no_action);
    EXPECT_EQ(plain.tree.filter_failures, 0);
    EXPECT_EQ(lifted.tree.filter_failures, 0);
    EXPECT_EQ(plain.action, lifted.action);
    const double lift = 7.5 * discounted_ones(base.depth, base.discount);
    EXPECT_NEAR(lifted.root_value, plain.root_value + lift, 1e-6);
}

TEST(PlanTest, FilterFailuresBecomePenaltyLeavesAndTheSearchSurvives) {
    // an absurd forced input overflows the covariance propagation, so every
    // transition aborts; the search must absorb that and still return
    PlantSpec spec = noisy_spec();
    SearchParams search;
    search.node_budget = 40;
    search.depth = 4;
    Control huge;
    huge << 1e200, 0.0, 0.0;
    search.action_filter = [huge](const BeliefState&, Rng&) {
        return std::make_pair(huge, false);
    };
    const BeliefState b =
        fuzzy_belief(make_state(PhysState::Zero(), rig_params()), 0.01);

    Rng rng(413);
    const SearchResult result = plan(b, search, spec, rng);
    EXPECT_FALSE(result.no_action);
    EXPECT_GT(result.tree.filter_failures, 0);
    EXPECT_EQ(result.tree.unbounded_actions,
              static_cast<int>(result.tree.actions.size()));
    // no rollout ever completed, so the failure penalty is exactly zero
    EXPECT_EQ(result.root_value, 0.0);
    for (const ActionNode& a : result.tree.actions) {
        EXPECT_FALSE(a.within_bound);
        EXPECT_TRUE(a.children.empty());
    }
}

TEST(PlanTest, DeskScaleSearchIsFastEnough) {
    const PlantSpec spec = noisy_spec();
    SearchParams search;
    search.node_budget = 600;
    PhysState x;
    x << 1.0, 1.0, 1.0, 1.0, 1.0, 1.0;
    ParamVec theta;
    theta << 1.2, 0.5, 0.8, 0.2, 0.1;
    const BeliefState b = fuzzy_belief(make_state(x, theta), 0.05);

    Rng rng(414);
    const auto start = std::chrono::steady_clock::now();
    const SearchResult result = plan(b, search, spec, rng);
    const auto stop = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(stop - start).count();

    ASSERT_FALSE(result.no_action);
    check_tree(result.tree, search);
    printf("desk-scale plan: %.1f ms, %d nodes, %d filter failures\n", ms,
           result.tree.total_nodes(), result.tree.filter_failures);
    EXPECT_LT(ms, 5000.0);
}

}  // namespace
}  // namespace dualctl
