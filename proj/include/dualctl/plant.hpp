#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>

#include "dualctl/rng.hpp"
#include "dualctl/text.hpp"

namespace dualctl {

using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Vec11 = Eigen::Matrix<double, 11, 1>;
using Mat6x6 = Eigen::Matrix<double, 6, 6>;
using Mat6x3 = Eigen::Matrix<double, 6, 3>;

using PhysState = Vec6;   // p_x, p_y, p_theta, v_x, v_y, v_w
using ParamVec = Vec5;    // m, mu_v, J, r_bx, r_by
using Hyperstate = Vec11; // PhysState then ParamVec
using Control = Vec3;     // F_x, F_y, T
using Observation = Vec9; // p (3), v (3), a (3) at the sensing point

enum HyperIndex : int {
    kPx = 0,
    kPy,
    kPtheta,
    kVx,
    kVy,
    kVw,
    kMass,
    kFriction,
    kInertia,
    kRbx,
    kRby,
};

constexpr int kPhysDim = 6;
constexpr int kParamDim = 5;
constexpr int kHyperDim = 11;
constexpr int kControlDim = 3;
constexpr int kObsDim = 9;

inline Eigen::VectorBlock<Hyperstate, kPhysDim> phys_of(Hyperstate& xi) {
    return xi.segment<kPhysDim>(0);
}
inline Eigen::VectorBlock<const Hyperstate, kPhysDim> phys_of(const Hyperstate& xi) {
    return xi.segment<kPhysDim>(0);
}
inline Eigen::VectorBlock<Hyperstate, kParamDim> params_of(Hyperstate& xi) {
    return xi.segment<kParamDim>(kPhysDim);
}
inline Eigen::VectorBlock<const Hyperstate, kParamDim> params_of(const Hyperstate& xi) {
    return xi.segment<kParamDim>(kPhysDim);
}

inline Hyperstate make_hyperstate(const PhysState& x, const ParamVec& theta) {
    Hyperstate xi;
    xi << x, theta;
    return xi;
}

// Physical and protocol constants of the planar pushing task.
struct PlantSpec {
    double dt = 0.1;
    double u_max = 5.0;
    double param_floor = 0.0625;
    // Per-step noise variance, shared by state and parameter drift. The noise
    // sweep axis is quoted as a standard deviation, so an axis value v lands
    // here as v*v; the default condition is axis 0.01.
    double process_var = 1e-4;
    double meas_var = 0.0;
    // Variance of the initial physical-state draw around the origin. The
    // parameter prior variance (0.5) is fixed; this knob only spreads the
    // starting pose and velocities.
    double init_state_var = 0.015625;
    double r_pos = -2.5;
    double r_vel = -50.0;
    double r_u = -0.3;
    int horizon_steps = 50;

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
        if (!(param_floor > 0.0)) throw ConfigError("param_floor must be > 0");
        if (process_var < 0.0) throw ConfigError("process_var must be >= 0");
        if (meas_var < 0.0) throw ConfigError("meas_var must be >= 0");
        if (init_state_var < 0.0) throw ConfigError("init_state_var must be >= 0");
        if (horizon_steps < 1) throw ConfigError("horizon_steps must be >= 1");
    }

    std::string to_config() const {
        std::ostringstream out;
        out << "dt = " << format_double(dt) << "\n"
            << "u_max = " << format_double(u_max) << "\n"
            << "param_floor = " << format_double(param_floor) << "\n"
            << "process_var = " << format_double(process_var) << "\n"
            << "meas_var = " << format_double(meas_var) << "\n"
            << "init_state_var = " << format_double(init_state_var) << "\n"
            << "r_pos = " << format_double(r_pos) << "\n"
            << "r_vel = " << format_double(r_vel) << "\n"
            << "r_u = " << format_double(r_u) << "\n"
            << "horizon_steps = " << horizon_steps << "\n";
        return out.str();
    }

    static PlantSpec from_config(const std::string& text) {
        PlantSpec spec;
        for (const auto& [key, value] : parse_key_value(text)) {
            if (key == "dt") spec.dt = parse_double(value);
            else if (key == "u_max") spec.u_max = parse_double(value);
            else if (key == "param_floor") spec.param_floor = parse_double(value);
            else if (key == "process_var") spec.process_var = parse_double(value);
            else if (key == "meas_var") spec.meas_var = parse_double(value);
            else if (key == "init_state_var") spec.init_state_var = parse_double(value);
            else if (key == "r_pos") spec.r_pos = parse_double(value);
            else if (key == "r_vel") spec.r_vel = parse_double(value);
            else if (key == "r_u") spec.r_u = parse_double(value);
            else if (key == "horizon_steps") spec.horizon_steps = static_cast<int>(parse_int(value));
            else throw ConfigError("unknown key '" + key + "'");
        }
        spec.validate();
        return spec;
    }
};

inline ParamVec clamp_params(const ParamVec& theta, double floor) {
    return theta.cwiseMax(floor);
}

// Body accelerations. The net pushing force subtracts viscous friction, and
// the torque couples to it through the angle-dependent moment arms c1, c2.
inline Vec3 accelerations(const Hyperstate& xi, const Control& u) {
    const double m = xi[kMass];
    const double mu_v = xi[kFriction];
    const double inertia = xi[kInertia];
    const double fbx = u[0] - mu_v * xi[kVx];
    const double fby = u[1] - mu_v * xi[kVy];
    const double c = std::cos(xi[kPtheta]);
    const double s = std::sin(xi[kPtheta]);
    const double c1 = c * xi[kRby] + s * xi[kRbx];
    const double c2 = c * xi[kRbx] - s * xi[kRby];
    Vec3 a;
    a << fbx / m, fby / m, (u[2] + c1 * fbx + c2 * fby) / inertia;
    return a;
}

// Noise-free transition: clamp parameters to the physical floor, semi-
// implicit-free forward Euler (positions advance on the pre-step velocity),
// parameters persist.
inline Hyperstate step_deterministic(const Hyperstate& xi, const Control& u,
                                     const PlantSpec& spec) {
    Hyperstate next = xi;
    params_of(next) = clamp_params(params_of(xi), spec.param_floor);
    const Vec3 a = accelerations(next, u);
    next[kPx] = xi[kPx] + xi[kVx] * spec.dt;
    next[kPy] = xi[kPy] + xi[kVy] * spec.dt;
    next[kPtheta] = xi[kPtheta] + xi[kVw] * spec.dt;
    next[kVx] = xi[kVx] + a[0] * spec.dt;
    next[kVy] = xi[kVy] + a[1] * spec.dt;
    next[kVw] = xi[kVw] + a[2] * spec.dt;
    return next;
}

// Ground-truth transition: deterministic step plus i.i.d. process noise on
// the full hyperstate, then the parameter floor. The 11 normal draws happen
// even at zero variance so paired runs consume identical streams.
// Per-component scale of the process noise. Disturbances act as planar forces
// on the pose and velocities plus parameter drift; nothing delivers a random
// torque impulse, so the spin rate only moves through the dynamics.
inline Vector process_noise_shape() {
    Vector shape = Vector::Ones(kHyperDim);
    shape[kVw] = 0.0;
    return shape;
}

inline Matrix process_noise_cov(const PlantSpec& spec) {
    return (spec.process_var * process_noise_shape()).asDiagonal();
}

inline Hyperstate step_truth(const Hyperstate& xi, const Control& u, const PlantSpec& spec,
                             Rng& rng) {
    Hyperstate next = step_deterministic(xi, u, spec);
    const double sd = std::sqrt(spec.process_var);
    const Vector shape = process_noise_shape();
    for (int i = 0; i < kHyperDim; ++i) {
        next[i] += sd * shape[i] * rng.normal();
    }
    params_of(next) = clamp_params(params_of(next), spec.param_floor);
    return next;
}

// Sensor model: the robot rides at the body-frame offset r_b, so position,
// velocity, and acceleration readings pick up lever-arm and centripetal
// terms from the box rotation.
inline Observation observe_deterministic(const Hyperstate& xi, const Control& u,
                                         const PlantSpec& spec) {
    Hyperstate clamped = xi;
    params_of(clamped) = clamp_params(params_of(xi), spec.param_floor);
    const double m = clamped[kMass];
    const double mu_v = clamped[kFriction];
    const double c = std::cos(clamped[kPtheta]);
    const double s = std::sin(clamped[kPtheta]);
    const double rbx_n = c * clamped[kRbx] - s * clamped[kRby];
    const double rby_n = s * clamped[kRbx] + c * clamped[kRby];
    const double fbx = u[0] - mu_v * clamped[kVx];
    const double fby = u[1] - mu_v * clamped[kVy];
    const double vw = clamped[kVw];
    const double a_alpha = accelerations(clamped, u)[2];

    Observation o;
    o[0] = clamped[kPx] + rbx_n;
    o[1] = clamped[kPy] + rby_n;
    o[2] = clamped[kPtheta];
    o[3] = clamped[kVx] - vw * rby_n;
    o[4] = clamped[kVy] + vw * rbx_n;
    o[5] = vw;
    o[6] = fbx / m - a_alpha * rby_n - vw * vw * rbx_n;
    o[7] = fby / m + a_alpha * rbx_n - vw * vw * rby_n;
    o[8] = a_alpha;
    return o;
}

inline Observation observe(const Hyperstate& xi, const Control& u, const PlantSpec& spec,
                           Rng& rng) {
    Observation o = observe_deterministic(xi, u, spec);
    const double sd = std::sqrt(spec.meas_var);
    for (int i = 0; i < kObsDim; ++i) {
        o[i] += sd * rng.normal();
    }
    return o;
}

// Weighted L1 penalty on position, speed, and effort. Always <= 0.
inline double reward(const PhysState& x, const Control& u, const PlantSpec& spec) {
    const double pos = std::abs(x[kPx]) + std::abs(x[kPy]) + std::abs(x[kPtheta]);
    const double vel = std::abs(x[kVx]) + std::abs(x[kVy]) + std::abs(x[kVw]);
    const double effort = std::abs(u[0]) + std::abs(u[1]) + std::abs(u[2]);
    return spec.r_pos * pos + spec.r_vel * vel + spec.r_u * effort;
}

struct LinearDynamics {
    Mat6x6 a;
    Mat6x3 b;
};

// Exact affine coefficients of the deterministic physical-state step with the
// parameters and the coupling angle frozen. Obtained by probing the frozen
// map on basis vectors; the map is linear in (x, u) once theta and p_theta
// are fixed, and f(0, 0) = 0.
inline LinearDynamics linearize(const ParamVec& theta_hat, double p_theta_hat,
                                const PlantSpec& spec) {
    if ((theta_hat.array() < spec.param_floor).any()) {
        throw std::invalid_argument("linearize: parameters below floor");
    }
    const double m = theta_hat[0];
    const double mu_v = theta_hat[1];
    const double inertia = theta_hat[2];
    const double c = std::cos(p_theta_hat);
    const double s = std::sin(p_theta_hat);
    const double c1 = c * theta_hat[4] + s * theta_hat[3];
    const double c2 = c * theta_hat[3] - s * theta_hat[4];

    auto frozen_step = [&](const PhysState& x, const Control& u) {
        const double fbx = u[0] - mu_v * x[kVx];
        const double fby = u[1] - mu_v * x[kVy];
        PhysState next;
        next[kPx] = x[kPx] + x[kVx] * spec.dt;
        next[kPy] = x[kPy] + x[kVy] * spec.dt;
        next[kPtheta] = x[kPtheta] + x[kVw] * spec.dt;
        next[kVx] = x[kVx] + fbx / m * spec.dt;
        next[kVy] = x[kVy] + fby / m * spec.dt;
        next[kVw] = x[kVw] + (u[2] + c1 * fbx + c2 * fby) / inertia * spec.dt;
        return next;
    };

    LinearDynamics lin;
    for (int i = 0; i < kPhysDim; ++i) {
        lin.a.col(i) = frozen_step(PhysState::Unit(i), Control::Zero());
    }
    for (int j = 0; j < kControlDim; ++j) {
        lin.b.col(j) = frozen_step(PhysState::Zero(), Control::Unit(j));
    }
    return lin;
}

}  // namespace dualctl
