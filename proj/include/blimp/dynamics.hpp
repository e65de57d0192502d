// Hybrid equations of motion x_dot = h(x, u; phi, lambda) and trajectory
// rollouts under the five mixing modes.
//
// State layout: [x, y, z, roll, pitch, yaw, u, v, w, p, q, r].
#pragma once

#include "blimp/aero.hpp"
#include "blimp/mixer.hpp"
#include "blimp/regime.hpp"
#include "blimp/rigidbody.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace blimp {

using State = Vec12;

template <class S> EulerT<S> attitude(const Vec12T<S>& x) { return {x(3), x(4), x(5)}; }
inline FlowState flow_of(const State& x) { return flow_state(Vec3(x.segment<3>(6))); }

/// Finite state with |pitch| below the gimbal limit.
bool state_valid(const State& x);

/// eta_dot = J(eta) nu; nu_dot = M^-1 (tau + aero + F_bar + g(eta) - (C_RB + C_A) nu),
/// with g(eta) the restoring wrench acting on the body.
template <class S>
Vec12T<S> derivative_with_aero(const Vec12T<S>& x, const ControlInput& u, const PhysicalParams& p,
                               const MassModel& mm, const Wrench& tau, const WrenchT<S>& aero) {
    const EulerT<S> e = attitude(x);
    const Vec6T<S> nu = x.template tail<6>();
    const Vec3T<S> vel = nu.template head<3>();
    const Vec3T<S> omega = nu.template tail<3>();
    Vec12T<S> dx;
    dx.template head<3>() = rotation_body_to_inertial(e) * vel;
    dx.template segment<3>(3) = euler_rate_map(e) * omega;

    const WrenchT<S> g = gravity_buoyancy(p, u, e);
    const WrenchT<S> fb = gondola_reaction(p, u, nu);
    const Mat6T<S> c = coriolis_matrix(p, u, nu) + added_mass_terms(p, nu).C;
    const Vec6T<S> rhs = tau.stacked().template cast<S>() + aero.stacked() + fb.stacked() + g.stacked() - c * nu;
    const Mat6& minv = mm.inverse();
    for (int i = 0; i < 6; ++i) {
        S acc = minv(i, 0) * rhs(0);
        for (int j = 1; j < 6; ++j) acc = acc + minv(i, j) * rhs(j);
        dx(6 + i) = acc;
    }
    return dx;
}

/// (1 - lambda) F_ACM + lambda F_GDM.
template <class S> WrenchT<S> blend(const WrenchT<S>& acm, const WrenchT<S>& gdm, const S& lambda) {
    const S one_minus = S(1.0) - lambda;
    return {acm.force * one_minus + gdm.force * lambda, acm.moment * one_minus + gdm.moment * lambda};
}

/// Aerodynamic parameters as flat vectors so gradients can flow through them.
template <class S> struct AeroThetaT {
    std::vector<S> acm;  // AcmCoeffs::flatten layout
    std::vector<S> gdm;  // GdmCoeffs::flatten layout
};
using AeroTheta = AeroThetaT<double>;

AeroTheta aero_theta(const PhysicalParams& p);

template <class S>
Vec12T<S> hybrid_derivative_t(const Vec12T<S>& x, const ControlInput& u, const PhysicalParams& p,
                              const MassModel& mm, const Wrench& tau, const AeroThetaT<S>& th, const S& lambda) {
    const Vec6T<S> nu = x.template tail<6>();
    const WrenchT<S> fa = acm_wrench_t<S>(p.acm, th.acm, nu);
    const WrenchT<S> fg = gdm_wrench_t<S>(th.gdm, nu);
    return derivative_with_aero(x, u, p, mm, tau, blend(fa, fg, lambda));
}

template <class S>
Vec12T<S> acm_derivative_t(const Vec12T<S>& x, const ControlInput& u, const PhysicalParams& p, const MassModel& mm,
                           const Wrench& tau, const AeroThetaT<S>& th) {
    const Vec6T<S> nu = x.template tail<6>();
    return derivative_with_aero(x, u, p, mm, tau, acm_wrench_t<S>(p.acm, th.acm, nu));
}

template <class S>
Vec12T<S> gdm_derivative_t(const Vec12T<S>& x, const ControlInput& u, const PhysicalParams& p, const MassModel& mm,
                           const Wrench& tau, const AeroThetaT<S>& th) {
    const Vec6T<S> nu = x.template tail<6>();
    return derivative_with_aero(x, u, p, mm, tau, gdm_wrench_t<S>(th.gdm, nu));
}

/// Convenience wrappers that factor the mass matrix on every call.
State hybrid_derivative(const State& x, const ControlInput& u, const PhysicalParams& p, double lambda);
State acm_derivative(const State& x, const ControlInput& u, const PhysicalParams& p);
State gdm_derivative(const State& x, const ControlInput& u, const PhysicalParams& p);

/// One RK4 step of the blended model with lambda held over the four stages.
template <class S>
Vec12T<S> hybrid_step_t(const Vec12T<S>& x, const ControlInput& u, const PhysicalParams& p, const MassModel& mm,
                        const Wrench& tau, const AeroThetaT<S>& th, const S& lambda, double dt) {
    auto f = [&](const Vec12T<S>& s) { return hybrid_derivative_t<S>(s, u, p, mm, tau, th, lambda); };
    return rk4_step(f, x, dt);
}

enum class MixingMode { acm_only, gdm_only, hard, sigmoid_fixed, neural };

std::string_view to_string(MixingMode m);
/// Accepts acm | gdm | hard | sigmoid | neural; throws InvalidArgument otherwise.
MixingMode parse_mixing_mode(std::string_view s);

/// Lambda as a function of state for one mixing mode.
struct LambdaPolicy {
    MixingMode mode = MixingMode::neural;
    const MixerParams* xi = nullptr;
    const RegimePartition* part = nullptr;

    /// Throws InvalidArgument if the mode lacks its mixer or partition.
    void validate() const;
    double operator()(double alpha, double V) const;
    double operator()(const State& x) const {
        const FlowState f = flow_of(x);
        return (*this)(f.alpha, f.V);
    }
};

struct RolloutOptions {
    double dt = kDefaultDt;
    /// Re-evaluate lambda at each RK4 stage instead of once per step.
    bool lambda_per_stage = false;
};

/// One step from x under `policy`. acm_only / gdm_only use the dedicated
/// single-model derivatives.
State predict_step(const State& x, const ControlInput& u, const PhysicalParams& p, const MassModel& mm,
                   const LambdaPolicy& policy, const RolloutOptions& opt = {});

/// Free-running rollout; returns inputs.size() + 1 states starting with x0.
/// NonFiniteState messages carry the failing step index.
std::vector<State> rollout(const State& x0, std::span<const ControlInput> inputs, const PhysicalParams& p,
                           const LambdaPolicy& policy, const RolloutOptions& opt = {});

/// Reuses one factorisation while the gondola input stays fixed.
class MassCache {
public:
    explicit MassCache(const PhysicalParams& p) : p_(&p) {}
    const MassModel& get(const ControlInput& u);

private:
    const PhysicalParams* p_;
    std::optional<MassModel> model_;
    Vec3 r_bar_ = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
};

}  // namespace blimp
