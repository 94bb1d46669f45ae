#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "dualctl/gaussian.hpp"
#include "dualctl/plant.hpp"

namespace dualctl {

// Raised when an update produces non-finite values or the innovation
// covariance cannot be factored; callers abort and flag the trial.
struct FilterFailure : EstimationError {
    explicit FilterFailure(const std::string& what) : EstimationError(what) {}
};

using BeliefState = Gaussian;  // 11-dim hyperstate belief

// Generic additive-noise unscented predict: push sigma points through f and
// add the process covariance.
inline Gaussian ukf_predict(const Gaussian& b, const std::function<Vector(const Vector&)>& f,
                            const Matrix& process_cov) {
    Gaussian out = unscented_transform(sigma_points(b), f);
    out.cov = projected_psd(out.cov + process_cov);
    if (!out.mean.allFinite() || !out.cov.allFinite()) {
        throw FilterFailure("non-finite prediction");
    }
    return out;
}

// Generic unscented measurement update. Sigma points are regenerated from
// the prior b (the predicted belief), mapped through h, and the Kalman gain
// is formed from the cross covariance.
inline Gaussian ukf_update(const Gaussian& b, const std::function<Vector(const Vector&)>& h,
                           const Vector& observation, const Matrix& meas_cov) {
    if (b.cov.isZero(0.0)) {
        // point mass: zero cross covariance, zero gain, belief unchanged
        return b;
    }
    const SigmaPointSet s = sigma_points(b);
    std::vector<Vector> mapped;
    mapped.reserve(s.points.size());
    for (const Vector& x : s.points) mapped.push_back(h(x));

    const int zdim = static_cast<int>(mapped.front().size());
    Vector z_mean = Vector::Zero(zdim);
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        z_mean += s.weights_mean(static_cast<int>(i)) * mapped[i];
    }
    Matrix innovation = Matrix::Zero(zdim, zdim);
    Matrix cross = Matrix::Zero(b.dim(), zdim);
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        const Vector dz = mapped[i] - z_mean;
        const Vector dx = s.points[i] - b.mean;
        innovation += s.weights_cov(static_cast<int>(i)) * (dz * dz.transpose());
        cross += s.weights_cov(static_cast<int>(i)) * (dx * dz.transpose());
    }
    // rounding (or a caller-supplied negative center weight) can leave the
    // predicted measurement covariance a hair indefinite
    const Matrix s_cov = projected_psd(innovation) + meas_cov;

    Matrix chol;
    try {
        chol = jittered_cholesky(s_cov);
    } catch (const SingularCovarianceError&) {
        throw FilterFailure("innovation covariance not invertible after jitter");
    }
    // K = cross * s_cov^-1 via two triangular solves
    Matrix kt = chol.transpose().triangularView<Eigen::Upper>().solve(
        Matrix(chol.triangularView<Eigen::Lower>().solve(cross.transpose())));
    const Matrix gain = kt.transpose();

    Gaussian out;
    out.mean = b.mean + gain * (observation - z_mean);
    if (!out.mean.allFinite()) {
        throw FilterFailure("non-finite posterior");
    }
    out.cov = projected_psd(b.cov - gain * s_cov * gain.transpose());
    if (!out.cov.allFinite()) {
        throw FilterFailure("non-finite posterior");
    }
    return out;
}

// Floor keeps the innovation covariance invertible when the protocol runs
// with zero measurement noise.
inline double filter_meas_var(const PlantSpec& spec) {
    return std::max(spec.meas_var, 1e-6);
}

inline Matrix filter_meas_cov(const PlantSpec& spec) {
    return filter_meas_var(spec) * Matrix::Identity(kObsDim, kObsDim);
}

inline BeliefState ukf_predict(const BeliefState& b, const Control& u, const PlantSpec& spec) {
    auto f = [&](const Vector& x) -> Vector {
        return step_deterministic(Hyperstate(x), u, spec);
    };
    return ukf_predict(b, f, process_noise_cov(spec));
}

inline BeliefState ukf_update(const BeliefState& b, const Control& u, const Observation& o,
                              const PlantSpec& spec) {
    auto h = [&](const Vector& x) -> Vector {
        return observe_deterministic(Hyperstate(x), u, spec);
    };
    Gaussian out = ukf_update(b, h, Vector(o), filter_meas_cov(spec));
    out.mean.segment<kParamDim>(kPhysDim) =
        out.mean.segment<kParamDim>(kPhysDim).cwiseMax(spec.param_floor);
    return out;
}

inline BeliefState ukf_step(const BeliefState& b, const Control& u, const Observation& o,
                            const PlantSpec& spec) {
    return ukf_update(ukf_predict(b, u, spec), u, o, spec);
}

// Estimate health test: rotate the estimation error into the covariance
// eigenbasis and compare each component against five standard deviations.
inline bool divergence_check(const Gaussian& b, const Vector& xi_true) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(b.cov));
    const Vector rotated = es.eigenvectors().transpose() * (xi_true - b.mean);
    for (int i = 0; i < rotated.size(); ++i) {
        const double limit = 5.0 * std::sqrt(std::max(es.eigenvalues()(i), 0.0));
        if (std::abs(rotated(i)) > limit) return true;
    }
    return false;
}

}  // namespace dualctl
