#include "dualctl/ukf.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

namespace dualctl {
namespace {

PlantSpec quiet_spec() {
    PlantSpec spec;
    spec.process_var = 0.0;
    spec.meas_var = 0.0;
    return spec;
}

BeliefState some_belief() {
    Vector mean(kHyperDim);
    mean << 0.5, -0.3, 0.2, 0.1, -0.2, 0.3, 1.0, 1.0, 1.0, 1.0, 1.0;
    Matrix cov = 0.2 * Matrix::Identity(kHyperDim, kHyperDim);
    return BeliefState{mean, cov};
}

TEST(UkfPredict, PointMassFollowsDeterministicStep) {
    const PlantSpec spec = quiet_spec();
    Hyperstate xi = Hyperstate::Zero();
    params_of(xi) = ParamVec::Ones();
    xi[kVx] = 1.0;
    Control u;
    u << 2.0, 0.0, 1.0;

    const BeliefState b{Vector(xi), Matrix::Zero(kHyperDim, kHyperDim)};
    const BeliefState next = ukf_predict(b, u, spec);
    const Hyperstate expected = step_deterministic(xi, u, spec);
    EXPECT_LT((next.mean - Vector(expected)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(next.cov.isZero(0.0));
}

TEST(UkfPredict, ProcessNoiseInflatesParameterVariance) {
    PlantSpec spec = quiet_spec();
    spec.process_var = 0.01;
    const BeliefState b = some_belief();
    const BeliefState next = ukf_predict(b, Control::Zero(), spec);
    for (int i = kMass; i <= kRby; ++i) {
        EXPECT_GE(next.cov(i, i), spec.process_var - 1e-12);
    }
}

// With zero spread on the angle and all parameters, the hyperstate transition
// restricted to the remaining coordinates is exactly affine, so the
// unscented result must match the linear covariance propagation.
TEST(UkfPredict, MatchesLinearPropagationWhenAngleAndParamsFrozen) {
    PlantSpec spec = quiet_spec();
    spec.process_var = 0.003;
    Vector mean(kHyperDim);
    mean << 0.4, -0.2, 0.7, 0.3, 0.1, -0.5, 1.2, 0.9, 1.1, 0.8, 1.3;
    Vector diag(kHyperDim);
    diag << 0.2, 0.3, 0.0, 0.1, 0.15, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0;
    const BeliefState b{mean, Matrix(diag.asDiagonal())};
    Control u;
    u << 1.0, -2.0, 0.5;

    const BeliefState next = ukf_predict(b, u, spec);

    const ParamVec theta = mean.segment<kParamDim>(kPhysDim);
    const LinearDynamics lin = linearize(theta, mean[kPtheta], spec);
    const Matrix phys_cov = b.cov.topLeftCorner(kPhysDim, kPhysDim);
    const Matrix expected = lin.a * phys_cov * lin.a.transpose() +
                            Matrix(process_noise_cov(spec).topLeftCorner(kPhysDim, kPhysDim));
    EXPECT_LT((next.cov.topLeftCorner(kPhysDim, kPhysDim) - expected).cwiseAbs().maxCoeff(),
              1e-6);

    const PhysState expected_mean =
        lin.a * PhysState(mean.head<kPhysDim>()) + lin.b * u;
    EXPECT_LT((next.mean.head(kPhysDim) - Vector(expected_mean)).cwiseAbs().maxCoeff(), 1e-6);
}

// A narrow belief makes the observation map effectively linear over its
// support; an observation equal to the predicted one must not move the mean.
// (Wide beliefs legitimately shift by the second-order curvature term.)
TEST(UkfUpdate, ZeroInnovationLeavesMeanInPlace) {
    const PlantSpec spec = quiet_spec();
    BeliefState b = some_belief();
    b.cov = 1e-6 * Matrix::Identity(kHyperDim, kHyperDim);
    Control u;
    u << 1.0, 0.5, -0.5;
    const Observation o =
        observe_deterministic(Hyperstate(b.mean), u, spec);
    const BeliefState post = ukf_update(b, u, o, spec);
    EXPECT_LT((post.mean - b.mean).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(UkfUpdate, GenericCoreReproducesScalarKalmanGain) {
    const double prior_var = 2.0;
    const double r = 0.5;
    const double obs = 3.0;
    Gaussian b{Vector::Constant(1, 1.0), Matrix::Constant(1, 1, prior_var)};
    const Gaussian post = ukf_update(
        b, [](const Vector& x) { return x; }, Vector::Constant(1, obs),
        Matrix::Constant(1, 1, r));
    const double gain = prior_var / (prior_var + r);
    EXPECT_NEAR(post.mean(0), 1.0 + gain * (obs - 1.0), 1e-9);
    EXPECT_NEAR(post.cov(0, 0), (1.0 - gain) * prior_var, 1e-9);
}

TEST(UkfUpdate, InformativeObservationsShrinkParameterTrace) {
    const PlantSpec spec = quiet_spec();
    Hyperstate truth = Hyperstate::Zero();
    params_of(truth) = ParamVec::Ones() * 1.2;
    truth[kVx] = 0.5;

    BeliefState b = some_belief();
    Rng rng(21);
    double prev_trace = b.cov.bottomRightCorner(kParamDim, kParamDim).trace();
    for (int k = 0; k < 20; ++k) {
        Control u;
        u << rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0);
        truth = step_truth(truth, u, spec, rng);
        const Observation o = observe(truth, u, spec, rng);
        b = ukf_step(b, u, o, spec);
        const double trace = b.cov.bottomRightCorner(kParamDim, kParamDim).trace();
        ASSERT_LE(trace, prev_trace + 1e-9);
        prev_trace = trace;
    }
}

TEST(UkfStep, ComposesPredictThenUpdate) {
    const PlantSpec spec = quiet_spec();
    const BeliefState b = some_belief();
    Control u;
    u << 0.3, -0.7, 0.1;
    Rng rng(22);
    Hyperstate truth = Hyperstate(b.mean);
    const Observation o = observe(step_truth(truth, u, spec, rng), u, spec, rng);

    const BeliefState direct = ukf_step(b, u, o, spec);
    const BeliefState staged = ukf_update(ukf_predict(b, u, spec), u, o, spec);
    EXPECT_TRUE(direct.mean.isApprox(staged.mean, 0.0));
    EXPECT_TRUE(direct.cov.isApprox(staged.cov, 0.0));
}

TEST(UkfStep, SeededReplayIsBitIdentical) {
    PlantSpec spec = quiet_spec();
    spec.process_var = 0.01;
    auto run = [&]() {
        Rng rng(23);
        Hyperstate truth = Hyperstate::Ones();
        BeliefState b = some_belief();
        for (int k = 0; k < 10; ++k) {
            Control u;
            u << rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0);
            truth = step_truth(truth, u, spec, rng);
            b = ukf_step(b, u, observe(truth, u, spec, rng), spec);
        }
        return b;
    };
    const BeliefState a = run();
    const BeliefState c = run();
    EXPECT_TRUE(a.mean.isApprox(c.mean, 0.0));
    EXPECT_TRUE(a.cov.isApprox(c.cov, 0.0));
}

// Every belief the filter emits must be a valid floored Gaussian. The spin
// axis has no damping, so a long random-control run can still blow up
// physically; the accepted outcome there is a clean filter-failure abort,
// never an invalid belief.
TEST(UkfStep, FuzzedStepsKeepCovarianceSymmetricPsdAndMeansFloored) {
    PlantSpec spec = quiet_spec();
    spec.process_var = 0.005;
    Rng rng(24);
    Hyperstate truth = Hyperstate::Ones();
    BeliefState b = some_belief();
    int completed = 0;
    for (int k = 0; k < 1000; ++k) {
        Control u;
        u << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);
        truth = step_truth(truth, u, spec, rng);
        const Observation o = observe(truth, u, spec, rng);
        try {
            b = ukf_step(b, u, o, spec);
        } catch (const FilterFailure&) {
            break;
        }
        ASSERT_NO_THROW(b.validate()) << "step " << k;
        ASSERT_GE(b.mean.segment<kParamDim>(kPhysDim).minCoeff(), spec.param_floor);
        completed = k + 1;
    }
    EXPECT_GE(completed, 100);
}

// Frozen-linear surrogate: the generic unscented filter against the
// closed-form Kalman recursion on the same system.
TEST(UkfStep, EqualsClosedFormKalmanOnLinearSurrogate) {
    const PlantSpec spec = quiet_spec();
    const LinearDynamics lin = linearize(ParamVec::Ones(), 0.3, spec);
    const Matrix a = lin.a;
    const Matrix bmat = lin.b;
    const Matrix c = Matrix::Identity(kPhysDim, kPhysDim);
    const Matrix q = 0.01 * Matrix::Identity(kPhysDim, kPhysDim);
    const Matrix r = 1e-4 * Matrix::Identity(kPhysDim, kPhysDim);

    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        Vector truth(kPhysDim);
        for (int i = 0; i < kPhysDim; ++i) truth(i) = rng.normal();

        Gaussian ukf_b{Vector::Zero(kPhysDim), 0.5 * Matrix::Identity(kPhysDim, kPhysDim)};
        oracles::KalmanBelief kf_b{ukf_b.mean, ukf_b.cov};

        for (int k = 0; k < 50; ++k) {
            Vector u(kControlDim);
            u << rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0);
            truth = a * truth + bmat * u;
            for (int i = 0; i < kPhysDim; ++i) truth(i) += 0.1 * rng.normal();
            Vector o = truth;
            for (int i = 0; i < kPhysDim; ++i) o(i) += 0.01 * rng.normal();

            auto f = [&](const Vector& x) -> Vector { return a * x + bmat * u; };
            ukf_b = ukf_update(
                ukf_predict(ukf_b, f, q), [](const Vector& x) { return x; }, o, r);
            kf_b = oracles::kalman_update(oracles::kalman_predict(kf_b, a, bmat, u, q), c, o, r);

            ASSERT_LT((ukf_b.mean - kf_b.mean).cwiseAbs().maxCoeff(), 1e-6)
                << "seed " << seed << " step " << k;
            ASSERT_LT((ukf_b.cov - kf_b.cov).cwiseAbs().maxCoeff(), 1e-6);
        }
    }
}

TEST(UkfUpdate, NonFiniteObservationRaisesFilterFailure) {
    const PlantSpec spec = quiet_spec();
    Observation o = Observation::Zero();
    o[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(ukf_update(some_belief(), Control::Zero(), o, spec), FilterFailure);
}

TEST(DivergenceCheck, FlagsOnlyErrorsBeyondFiveSigma) {
    Vector mean = Vector::Zero(kHyperDim);
    BeliefState b{mean, Matrix::Identity(kHyperDim, kHyperDim)};
    EXPECT_FALSE(divergence_check(b, Hyperstate::Zero()));

    Hyperstate off = Hyperstate::Zero();
    off[3] = 6.0;
    EXPECT_TRUE(divergence_check(b, off));
    off[3] = 4.9;
    EXPECT_FALSE(divergence_check(b, off));
}

TEST(DivergenceCheck, UsesPerAxisEigenvalueScaling) {
    Gaussian g{Vector::Zero(2), Matrix::Zero(2, 2)};
    g.cov(0, 0) = 4.0;
    g.cov(1, 1) = 1.0;
    Vector err(2);
    err << 9.0, 0.0;
    EXPECT_FALSE(divergence_check(g, err));  // 9 < 5 * sqrt(4)
    err << 0.0, 9.0;
    EXPECT_TRUE(divergence_check(g, err));  // 9 > 5 * sqrt(1)
}

}  // namespace
}  // namespace dualctl
