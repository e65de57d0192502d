// Kinematic building blocks: skew operator, Z-Y-X Euler rotations, the
// velocity-frame transform and a fixed-step RK4 integrator.
//
// Everything is templated on the scalar so the same code runs on doubles and
// on forward-mode AD scalars during identification.
#pragma once

#include "blimp/errors.hpp"
#include "blimp/types.hpp"

#include <cmath>
#include <string>

namespace blimp {

/// Roll, pitch, yaw in radians (Z-Y-X convention).
template <class S> struct EulerT {
    S roll{0};
    S pitch{0};
    S yaw{0};
};
using EulerAngles = EulerT<double>;

/// Angle of attack, sideslip and airspeed of the body-frame velocity.
template <class S> struct FlowT {
    S alpha{0};
    S beta{0};
    S V{0};
};
using FlowState = FlowT<double>;

/// Pitch is rejected when within this distance of +/- pi/2.
inline constexpr double kGimbalTolerance = 1e-6;

template <class S> Mat3T<S> skew(const Vec3T<S>& a) {
    Mat3T<S> m;
    m << S(0), -a(2), a(1),
         a(2), S(0), -a(0),
         -a(1), a(0), S(0);
    return m;
}

/// R(eta_2): body -> inertial, R = Rz(yaw) Ry(pitch) Rx(roll).
template <class S> Mat3T<S> rotation_body_to_inertial(const EulerT<S>& e) {
    using std::cos;
    using std::sin;
    const S cf = cos(e.roll), sf = sin(e.roll);
    const S ct = cos(e.pitch), st = sin(e.pitch);
    const S cp = cos(e.yaw), sp = sin(e.yaw);
    Mat3T<S> r;
    r << cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf,
         sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf,
         -st, ct * sf, ct * cf;
    return r;
}

inline void check_gimbal(double pitch) {
    if (!(std::abs(pitch) < kPi / 2 - kGimbalTolerance)) {
        throw Error(ErrorKind::GimbalSingularity, "pitch " + std::to_string(pitch) + " rad");
    }
}

/// R_omega: body rates -> Euler-angle rates.
template <class S> Mat3T<S> euler_rate_map(const EulerT<S>& e) {
    using std::cos;
    using std::sin;
    using std::tan;
    check_gimbal(value_of(e.pitch));
    const S cf = cos(e.roll), sf = sin(e.roll);
    const S ct = cos(e.pitch), tt = tan(e.pitch);
    Mat3T<S> m;
    m << S(1), sf * tt, cf * tt,
         S(0), cf, -sf,
         S(0), sf / ct, cf / ct;
    return m;
}

/// Block-diagonal kinematic Jacobian J(eta) = diag(R, R_omega).
template <class S> Mat6T<S> jacobian(const EulerT<S>& e) {
    Mat6T<S> j = Mat6T<S>::Zero();
    j.template topLeftCorner<3, 3>() = rotation_body_to_inertial(e);
    j.template bottomRightCorner<3, 3>() = euler_rate_map(e);
    return j;
}

/// alpha = atan2(w, u), beta = asin(v / V); the zero-velocity case maps to (0, 0, 0).
template <class S> FlowT<S> flow_state(const Vec3T<S>& vb) {
    using std::asin;
    using std::atan2;
    using std::sqrt;
    const S v2 = vb.squaredNorm();
    if (value_of(v2) == 0.0) return {S(0), S(0), S(0)};
    const S V = sqrt(v2);
    S ratio = vb(1) / V;
    // Guard against |v/V| creeping past 1 by rounding.
    if (value_of(ratio) > 1.0) ratio = S(1);
    if (value_of(ratio) < -1.0) ratio = S(-1);
    return {atan2(vb(2), vb(0)), asin(ratio), V};
}

/// R_v^b: velocity frame -> body frame.
template <class S> Mat3T<S> rotation_velocity_to_body(const S& alpha, const S& beta) {
    using std::cos;
    using std::sin;
    const S ca = cos(alpha), sa = sin(alpha);
    const S cb = cos(beta), sb = sin(beta);
    Mat3T<S> r;
    r << ca * cb, -ca * sb, -sa,
         sb, cb, S(0),
         sa * cb, -sa * sb, ca;
    return r;
}

template <class S> Mat3T<S> rotation_velocity_to_body(const FlowT<S>& f) {
    return rotation_velocity_to_body(f.alpha, f.beta);
}

/// One classical RK4 step. Throws NonFiniteState if any stage is NaN/Inf.
template <class State, class Field> State rk4_step(Field&& f, const State& x, double dt) {
    const State k1 = f(x);
    if (!all_finite(k1)) throw Error(ErrorKind::NonFiniteState, "rk4 stage 1");
    const State k2 = f(State(x + (0.5 * dt) * k1));
    if (!all_finite(k2)) throw Error(ErrorKind::NonFiniteState, "rk4 stage 2");
    const State k3 = f(State(x + (0.5 * dt) * k2));
    if (!all_finite(k3)) throw Error(ErrorKind::NonFiniteState, "rk4 stage 3");
    const State k4 = f(State(x + dt * k3));
    if (!all_finite(k4)) throw Error(ErrorKind::NonFiniteState, "rk4 stage 4");
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Motion-capture sample period.
inline constexpr double kDefaultDt = 1.0 / 60.0;

}  // namespace blimp
