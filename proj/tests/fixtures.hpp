// Shared synthetic fixtures for the test suites and the acceptance runner.
#pragma once

#include "blimp/steady.hpp"

#include <random>
#include <vector>

namespace blimp::fixtures {

/// Steady samples whose wrench comes from the coupling model below the break
/// (alpha < alpha_break and V > V_break) and from the drag model elsewhere.
inline std::vector<SteadySample> planted_break(const PhysicalParams& p, double alpha_break, double V_break,
                                               std::uint64_t seed, double rel_noise = 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<SteadySample> out;
    for (int i = 0; i < 1200; ++i) {
        const double alpha = 0.6 * u01(rng);
        const double V = 0.25 + 0.8 * u01(rng);
        const double beta = 0.2 * (u01(rng) - 0.5);
        Vec6 nu;
        nu << V * std::cos(alpha) * std::cos(beta), V * std::sin(beta), V * std::sin(alpha) * std::cos(beta),
            0.1 * (u01(rng) - 0.5), 0.1 * (u01(rng) - 0.5), 0.6 * (u01(rng) - 0.5);
        const bool coupled = alpha < alpha_break && V > V_break;
        Wrench w = coupled ? acm_wrench(p.acm, nu) : gdm_wrench(p.gdm, nu);
        if (rel_noise > 0.0) {
            const double scale = rel_noise * w.stacked().norm() / std::sqrt(6.0);
            for (int k = 0; k < 3; ++k) {
                w.force(k) += scale * n01(rng);
                w.moment(k) += scale * n01(rng);
            }
        }
        SteadySample s;
        s.id = "planted_" + std::to_string(i);
        s.x = State::Zero();
        s.x.tail<6>() = nu;
        s.flow = flow_of(s.x);
        s.wrench = w;
        out.push_back(s);
    }
    return out;
}

}  // namespace blimp::fixtures
