#include "blimp/dynamics.hpp"

#include <doctest.h>

#include <cstring>
#include <random>

using namespace blimp;

namespace {

State cruise_state() {
    State x = State::Zero();
    x(3) = 0.05;
    x(4) = -0.1;
    x(5) = 0.7;
    x(6) = 0.55;
    x(7) = 0.04;
    x(8) = 0.18;
    x(9) = 0.02;
    x(10) = -0.03;
    x(11) = 0.25;
    return x;
}

ControlInput spiral_input() {
    ControlInput u;
    u.Fl = 4.59 * kGramForce;
    u.Fr = 3.24 * kGramForce;
    u.r_bar = Vec3(0.02, 0.0, 0.15);
    return u;
}

bool same_bits(const std::vector<State>& a, const std::vector<State>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (std::memcmp(a[k].data(), b[k].data(), sizeof(double) * 12) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("lambda endpoints reproduce the single-model rollouts bitwise") {
    const PhysicalParams p = default_params();
    const ControlInput u = spiral_input();
    const std::vector<ControlInput> inputs(500, u);
    const MassModel mm(p, u);
    const Wrench tau = control_wrench(p, u);
    const AeroTheta th = aero_theta(p);

    for (double lam : {0.0, 1.0}) {
        std::vector<State> blended{cruise_state()};
        for (int k = 0; k < 500; ++k) blended.push_back(hybrid_step_t<double>(blended.back(), u, p, mm, tau, th, lam, kDefaultDt));
        const LambdaPolicy pol{lam == 0.0 ? MixingMode::acm_only : MixingMode::gdm_only, nullptr, nullptr};
        const auto dedicated = rollout(cruise_state(), inputs, p, pol);
        CHECK(same_bits(blended, dedicated));
    }
}

TEST_CASE("hybrid derivative is affine in lambda") {
    const PhysicalParams p = default_params();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        State x = cruise_state();
        for (int k = 3; k < 12; ++k) x(k) += 0.3 * (u01(rng) - 0.5);
        const ControlInput u = spiral_input();
        const State h0 = hybrid_derivative(x, u, p, 0.0);
        const State h1 = hybrid_derivative(x, u, p, 1.0);
        const double lam = u01(rng);
        const State hl = hybrid_derivative(x, u, p, lam);
        const State affine = h0 + lam * (h1 - h0);
        CHECK((hl - affine).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + hl.cwiseAbs().maxCoeff()));
        CHECK(h0 == acm_derivative(x, u, p));
        CHECK(h1 == gdm_derivative(x, u, p));
    }
}

TEST_CASE("static equilibrium") {
    PhysicalParams p = default_params();
    p.r0.setZero();
    p.buoyancy = p.total_mass() * p.g;
    ControlInput u;
    State x = State::Zero();
    x(5) = 1.2;
    const State d = hybrid_derivative(x, u, p, 0.4);
    CHECK(d.cwiseAbs().maxCoeff() < 1e-15);

    const std::vector<ControlInput> inputs(100, u);
    const LambdaPolicy pol{MixingMode::gdm_only, nullptr, nullptr};
    const auto traj = rollout(x, inputs, p, pol);
    CHECK(traj.size() == 101);
    for (const auto& s : traj) CHECK((s - x).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("saturated mixer matches the coupling-only rollout") {
    const PhysicalParams p = default_params();
    MixerParams xi = MixerParams::init(1);
    for (auto& l : xi.layers) {
        l.W.setZero();
        l.b.setZero();
    }
    xi.layers.back().b(0) = -50.0;
    const RegimePartition part;
    const std::vector<ControlInput> inputs(100, spiral_input());
    const auto a = rollout(cruise_state(), inputs, p, LambdaPolicy{MixingMode::acm_only, nullptr, nullptr});
    const auto n = rollout(cruise_state(), inputs, p, LambdaPolicy{MixingMode::neural, &xi, &part});
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, (a[k] - n[k]).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-6);
}

TEST_CASE("rollout length and options") {
    const PhysicalParams p = default_params();
    const RegimePartition part;
    const std::vector<ControlInput> inputs(510, spiral_input());  // 8.5 s at 60 Hz
    const LambdaPolicy sig{MixingMode::sigmoid_fixed, nullptr, &part};
    const auto a = rollout(cruise_state(), inputs, p, sig);
    CHECK(a.size() == 511);
    RolloutOptions staged;
    staged.lambda_per_stage = true;
    const auto b = rollout(cruise_state(), inputs, p, sig, staged);
    CHECK(b.size() == 511);
    CHECK((a.back() - b.back()).norm() < 1e-2);
    CHECK_FALSE(same_bits(a, b));

    RolloutOptions bad;
    bad.dt = 0.0;
    CHECK_THROWS_AS(rollout(cruise_state(), inputs, p, sig, bad), Error);
}

TEST_CASE("policies and errors") {
    const RegimePartition part;
    CHECK_THROWS_AS((LambdaPolicy{MixingMode::neural, nullptr, &part}.validate()), Error);
    CHECK_THROWS_AS((LambdaPolicy{MixingMode::hard, nullptr, nullptr}.validate()), Error);
    CHECK_NOTHROW((LambdaPolicy{MixingMode::acm_only, nullptr, nullptr}.validate()));
    const LambdaPolicy hard{MixingMode::hard, nullptr, &part};
    CHECK(hard(0.2, 0.6) == 0.0);
    CHECK(hard(0.5, 0.6) == 1.0);
    for (auto m : {MixingMode::acm_only, MixingMode::gdm_only, MixingMode::hard, MixingMode::sigmoid_fixed,
                   MixingMode::neural}) {
        CHECK(parse_mixing_mode(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_mixing_mode("blend"), Error);

    // Starting next to the gimbal limit and pitching up fails at the first step.
    State x = cruise_state();
    x(4) = kPi / 2 - 1e-7;
    x(10) = 1.0;
    const std::vector<ControlInput> inputs(5, spiral_input());
    try {
        rollout(x, inputs, default_params(), LambdaPolicy{MixingMode::gdm_only, nullptr, nullptr});
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::GimbalSingularity);
        CHECK(std::string(e.what()).find("rollout step 0") != std::string::npos);
    }
    CHECK_FALSE(state_valid(x));
    CHECK(state_valid(cruise_state()));
}
