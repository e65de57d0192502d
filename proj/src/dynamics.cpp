#include "blimp/dynamics.hpp"

#include "blimp/errors.hpp"

#include <string>

namespace blimp {

bool state_valid(const State& x) {
    return x.allFinite() && std::abs(x(4)) < kPi / 2 - kGimbalTolerance;
}

AeroTheta aero_theta(const PhysicalParams& p) { return {p.acm.flatten(), p.gdm.flatten()}; }

State hybrid_derivative(const State& x, const ControlInput& u, const PhysicalParams& p, double lambda) {
    const MassModel mm(p, u);
    return hybrid_derivative_t<double>(x, u, p, mm, control_wrench(p, u), aero_theta(p), lambda);
}

State acm_derivative(const State& x, const ControlInput& u, const PhysicalParams& p) {
    const MassModel mm(p, u);
    return acm_derivative_t<double>(x, u, p, mm, control_wrench(p, u), aero_theta(p));
}

State gdm_derivative(const State& x, const ControlInput& u, const PhysicalParams& p) {
    const MassModel mm(p, u);
    return gdm_derivative_t<double>(x, u, p, mm, control_wrench(p, u), aero_theta(p));
}

std::string_view to_string(MixingMode m) {
    switch (m) {
        case MixingMode::acm_only: return "acm";
        case MixingMode::gdm_only: return "gdm";
        case MixingMode::hard: return "hard";
        case MixingMode::sigmoid_fixed: return "sigmoid";
        case MixingMode::neural: return "neural";
    }
    return "?";
}

MixingMode parse_mixing_mode(std::string_view s) {
    if (s == "acm") return MixingMode::acm_only;
    if (s == "gdm") return MixingMode::gdm_only;
    if (s == "hard") return MixingMode::hard;
    if (s == "sigmoid") return MixingMode::sigmoid_fixed;
    if (s == "neural") return MixingMode::neural;
    throw Error(ErrorKind::InvalidArgument, "unknown mixing mode '" + std::string(s) + "'");
}

void LambdaPolicy::validate() const {
    const bool needs_part = mode == MixingMode::hard || mode == MixingMode::sigmoid_fixed || mode == MixingMode::neural;
    if (needs_part && part == nullptr) throw Error(ErrorKind::InvalidArgument, "mode requires a regime partition");
    if (mode == MixingMode::neural && xi == nullptr) throw Error(ErrorKind::InvalidArgument, "neural mode requires mixer weights");
}

double LambdaPolicy::operator()(double alpha, double V) const {
    switch (mode) {
        case MixingMode::acm_only: return 0.0;
        case MixingMode::gdm_only: return 1.0;
        case MixingMode::hard: return hard_lambda(*part, alpha, V);
        case MixingMode::sigmoid_fixed: return fixed_sigmoid_lambda(*part, alpha, V);
        case MixingMode::neural: return lambda_eval(*xi, alpha, V);
    }
    return 0.0;
}

const MassModel& MassCache::get(const ControlInput& u) {
    if (!model_ || u.r_bar != r_bar_) {
        model_.emplace(*p_, u);
        r_bar_ = u.r_bar;
    }
    return *model_;
}

namespace {

// Per-call copy of the flattened coefficients is cheap relative to RK4.
struct StepContext {
    const PhysicalParams& p;
    AeroTheta th;
};

State step_impl(const State& x, const ControlInput& u, const StepContext& ctx, const MassModel& mm,
                const LambdaPolicy& policy, const RolloutOptions& opt) {
    const Wrench tau = control_wrench(ctx.p, u);
    switch (policy.mode) {
        case MixingMode::acm_only:
            return rk4_step([&](const State& s) { return acm_derivative_t<double>(s, u, ctx.p, mm, tau, ctx.th); }, x,
                            opt.dt);
        case MixingMode::gdm_only:
            return rk4_step([&](const State& s) { return gdm_derivative_t<double>(s, u, ctx.p, mm, tau, ctx.th); }, x,
                            opt.dt);
        default: break;
    }
    if (opt.lambda_per_stage) {
        return rk4_step(
            [&](const State& s) { return hybrid_derivative_t<double>(s, u, ctx.p, mm, tau, ctx.th, policy(s)); }, x,
            opt.dt);
    }
    const double lambda = policy(x);
    return hybrid_step_t<double>(x, u, ctx.p, mm, tau, ctx.th, lambda, opt.dt);
}

}  // namespace

State predict_step(const State& x, const ControlInput& u, const PhysicalParams& p, const MassModel& mm,
                   const LambdaPolicy& policy, const RolloutOptions& opt) {
    policy.validate();
    const StepContext ctx{p, aero_theta(p)};
    return step_impl(x, u, ctx, mm, policy, opt);
}

std::vector<State> rollout(const State& x0, std::span<const ControlInput> inputs, const PhysicalParams& p,
                           const LambdaPolicy& policy, const RolloutOptions& opt) {
    if (!(opt.dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "dt must be positive");
    policy.validate();
    const StepContext ctx{p, aero_theta(p)};
    MassCache cache(p);
    std::vector<State> traj;
    traj.reserve(inputs.size() + 1);
    traj.push_back(x0);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        try {
            traj.push_back(step_impl(traj.back(), inputs[k], ctx, cache.get(inputs[k]), policy, opt));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NonFiniteState || e.kind() == ErrorKind::GimbalSingularity) {
                throw Error(e.kind(), "rollout step " + std::to_string(k) + ": " + e.message());
            }
            throw;
        }
    }
    return traj;
}

}  // namespace blimp
