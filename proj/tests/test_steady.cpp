#include "blimp/dataio.hpp"
#include "blimp/steady.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace blimp;

namespace {

ControlInput spiral_input(int l, int r) {
    ThrustMap tm;
    ControlInput u;
    u.Fl = tm.newtons(l);
    u.Fr = tm.newtons(r);
    u.r_bar = Vec3(0.0, 0.0, 0.15);
    return u;
}

// Steady orbit under the coupling model, found from the end of a long flight.
State trimmed(const ControlInput& u, const PhysicalParams& p) {
    const LambdaPolicy pol{MixingMode::acm_only, nullptr, nullptr};
    State x0 = State::Zero();
    x0(6) = 0.5;
    const auto xs = rollout(x0, std::vector<ControlInput>(3600, u), p, pol);
    const auto t = find_trim(u, p, pol, xs.back());
    REQUIRE(t.has_value());
    return *t;
}

TrajectoryRecord record_from(const State& x0, const ControlInput& u, const PhysicalParams& p, int steps) {
    const LambdaPolicy pol{MixingMode::acm_only, nullptr, nullptr};
    TrajectoryRecord rec;
    rec.id = "orbit";
    rec.x = rollout(x0, std::vector<ControlInput>(static_cast<std::size_t>(steps), u), p, pol);
    rec.u.assign(rec.x.size(), u);
    for (std::size_t k = 0; k < rec.x.size(); ++k) rec.t.push_back(static_cast<double>(k) / 60.0);
    return rec;
}

std::vector<SteadySample> samples_from(const std::vector<Vec6>& nus, const PhysicalParams& p, SteadyBasis basis) {
    std::vector<SteadySample> out;
    for (const auto& nu : nus) {
        SteadySample s;
        s.x = State::Zero();
        s.x.tail<6>() = nu;
        s.flow = flow_of(s.x);
        s.wrench = basis == SteadyBasis::acm ? acm_wrench(p.acm, nu) : gdm_wrench(p.gdm, nu);
        out.push_back(s);
    }
    return out;
}

std::vector<Vec6> random_nus(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec6> out;
    for (int i = 0; i < n; ++i) {
        Vec6 nu;
        nu << 0.6 + 0.4 * u(rng), 0.1 * u(rng), 0.3 + 0.3 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.5 * u(rng);
        out.push_back(nu);
    }
    return out;
}

}  // namespace

TEST_CASE("wrench balance against the simulator") {
    const PhysicalParams p = default_params();
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        State x = State::Zero();
        x(3) = 0.2 * u(rng);
        x(4) = 0.2 * u(rng);
        x(5) = 3.0 * u(rng);
        x.tail<6>() = random_nus(1, static_cast<std::uint64_t>(i))[0];
        const ControlInput in = spiral_input(5, 3);
        const State dx = acm_derivative(x, in, p);
        const Wrench w = steady_wrench(x, in, p, dx.tail<6>());
        const Wrench expect = acm_wrench(p.acm, x.tail<6>());
        CHECK((w.stacked() - expect.stacked()).norm() < 1e-12);
    }

    // Neutral buoyancy hover with no thrust needs no aerodynamic wrench.
    PhysicalParams n = p;
    n.r0.setZero();
    n.buoyancy = n.total_mass() * n.g;
    ControlInput idle;
    const Wrench h = steady_wrench(State::Zero(), idle, n);
    CHECK(h.stacked().norm() < 1e-15);
}

TEST_CASE("exact steady spiral") {
    const PhysicalParams p = default_params();
    const ControlInput u = spiral_input(5, 3);
    const State x = trimmed(u, p);
    CHECK(std::abs(x(11)) > 0.1);
    const Wrench w = steady_wrench(x, u, p);
    CHECK((w.stacked() - acm_wrench(p.acm, x.tail<6>()).stacked()).norm() < 1e-8);

    // A flight started on the orbit passes the steadiness test and returns the same wrench.
    const TrajectoryRecord rec = record_from(x, u, p, 180);
    const auto s = extract_steady(rec, p);
    REQUIRE(s.has_value());
    CHECK((s->wrench.stacked() - w.stacked()).norm() < 1e-8);
    CHECK(s->flow.V == doctest::Approx(flow_of(x).V).epsilon(1e-8));
    CHECK(s->window_start >= 0.0);

    // Straight flight is rejected: spirals only.
    const ControlInput straight = spiral_input(4, 4);
    const TrajectoryRecord line = record_from(trimmed(straight, p), straight, p, 180);
    CHECK_FALSE(extract_steady(line, p).has_value());

    // Starting from rest is an acceleration, not a steady state.
    State rest = State::Zero();
    const TrajectoryRecord onset = record_from(rest, u, p, 90);
    CHECK_FALSE(extract_steady(onset, p).has_value());

    const std::vector<TrajectoryRecord> recs{rec, line, onset};
    CHECK(extract_steady(recs, p, SteadyOptions{}, Exec::parallel).size() == 1);
    CHECK(extract_steady(recs, p, SteadyOptions{}, Exec::serial).size() == 1);

    const SteadySample m = mirror_sample(*s);
    CHECK(m.flow.beta == doctest::Approx(-s->flow.beta));
    CHECK(m.flow.alpha == doctest::Approx(s->flow.alpha));
    CHECK(m.wrench.moment(2) == -s->wrench.moment(2));
    CHECK(m.u.Fl == s->u.Fr);
}

TEST_CASE("least squares fits") {
    const PhysicalParams p = default_params();
    const auto nus = random_nus(40, 11);

    for (SteadyBasis b : {SteadyBasis::acm, SteadyBasis::gdm}) {
        const auto samples = samples_from(nus, p, b);
        const OlsResult r = ols_fit(samples, p, b);
        const std::vector<double> truth = b == SteadyBasis::acm ? p.acm.flatten() : p.gdm.flatten();
        REQUIRE(r.coeffs.size() == truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            CHECK(std::abs(r.coeffs[i] - truth[i]) <= 1e-10 * std::max(1.0, std::abs(truth[i])));
        }
        CHECK(r.r2 == doctest::Approx(1.0).epsilon(1e-12));

        std::vector<SteadySample> twice = samples;
        twice.insert(twice.end(), samples.begin(), samples.end());
        const OlsResult d = ols_fit(twice, p, b);
        for (std::size_t i = 0; i < truth.size(); ++i) CHECK(d.coeffs[i] == doctest::Approx(r.coeffs[i]).epsilon(1e-10));

        std::vector<SteadySample> zero = samples;
        for (auto& s : zero) s.wrench = Wrench{};
        for (double c : ols_fit(zero, p, b).coeffs) CHECK(c == 0.0);
    }

    const auto few = samples_from(random_nus(1, 3), p, SteadyBasis::acm);
    CHECK_THROWS_AS(ols_fit(few, p, SteadyBasis::acm), Error);

    // The regressor reproduces the model wrench.
    const Eigen::MatrixXd X = regressor(p, SteadyBasis::acm, nus[0]);
    const Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(p.acm.flatten().data(), 13);
    CHECK((X * th - acm_wrench(p.acm, nus[0]).stacked()).norm() < 1e-14);
}

TEST_CASE("planted regime break") {
    const PhysicalParams p = default_params();
    const auto samples = fixtures::planted_break(p, 0.30, 0.0, 4);
    const ThresholdScan scan = scan_alpha(samples, p);
    CHECK(scan.threshold >= 0.25);
    CHECK(scan.threshold <= 0.35);
    CHECK(scan.r2.size() == scan.edges.size());

    const auto noisy = fixtures::planted_break(p, 0.30, 0.45, 8, 0.02);
    const RegimePartition part = select_thresholds(noisy, p);
    CHECK(part.alpha_star >= 0.25);
    CHECK(part.alpha_star <= 0.35);
    CHECK(part.V_star >= 0.40);
    CHECK(part.V_star <= 0.50);
    CHECK(part.alpha1 == part.alpha_star - 0.2 * part.alpha_star);

    // Pure coupling data has no break.
    const auto clean = fixtures::planted_break(p, 10.0, 0.0, 5);
    CHECK_THROWS_AS(scan_alpha(clean, p), Error);
    CHECK_THROWS_AS(scan_alpha(std::vector<SteadySample>{}, p), Error);
}

TEST_CASE("reynolds number") {
    CHECK(reynolds(0.45, 1.0) == doctest::Approx(3.046e4).epsilon(1e-3));
    CHECK(reynolds(0.0, 1.0) == 0.0);
    CHECK(reynolds(0.9, 1.0) == doctest::Approx(2.0 * reynolds(0.45, 1.0)));
    CHECK_THROWS_AS(reynolds(1.0, 1.0, 1.225, 0.0), Error);
}

TEST_CASE("added mass from motion onset") {
    const PhysicalParams p = default_params();
    const LambdaPolicy pol{MixingMode::acm_only, nullptr, nullptr};
    std::vector<TrajectoryRecord> recs;
    for (auto [l, r] : {std::pair{6, 3}, std::pair{3, 6}, std::pair{8, 8}, std::pair{5, 2}}) {
        recs.push_back(record_from(State::Zero(), spiral_input(l, r), p, 30));
    }
    const Vec6 est = identify_added_mass(recs, p, pol);
    // Surge and yaw are excited from rest; C_A is quadratic in nu and still small here.
    CHECK(est(0) == doctest::Approx(p.added_mass(0)).epsilon(0.1));
    CHECK(est(5) == doctest::Approx(p.added_mass(5)).epsilon(0.1));
    for (int i = 0; i < 6; ++i) CHECK(est(i) >= 0.0);
}
