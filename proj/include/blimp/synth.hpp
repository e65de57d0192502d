// Synthetic flight campaigns from a known model: the 330-configuration grid,
// a ground-truth mixer and randomised trajectories with motion-capture noise.
#pragma once

#include "blimp/dataio.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace blimp {

/// 30 thrust pairs: 8 symmetric (straight), 14 with |l - r| = 1, 8 with |l - r| = 2.
std::vector<std::pair<int, int>> thrust_pairs();

/// thrust_pairs() x gondola offsets -5..+5 cm: 330 keys.
std::vector<ConfigKey> config_grid();

/// Reference mixing surface used to train the ground-truth mixer: an L-shaped
/// step at (0.40 rad, 0.45 m/s), sharper than the fixed-sigmoid baseline.
double truth_lambda(double alpha, double V);

struct MixerFitOptions {
    Lattice lattice{0.0, 1.2, 49, 0.0, 1.2, 49};
    int iterations = 4000;
    double lr = 1e-2;
    std::uint64_t seed = 11;
};

struct MixerFit {
    MixerParams xi;
    double rmse = 0.0;     // on the fitting lattice
    double max_err = 0.0;
};

/// Full-batch Adam on the squared error to `target` over the lattice nodes.
MixerFit fit_mixer_to(const std::function<double(double, double)>& target, const MixerFitOptions& opt = {});

/// fit_mixer_to(truth_lambda) with the default options.
const MixerParams& truth_mixer();

struct CampaignSpec {
    std::vector<ConfigKey> configs = config_grid();
    int repeats = 1;
    double duration_min = 5.0;  // [s]
    double duration_max = 10.0;
    double rate_hz = 60.0;
    std::uint64_t seed = 0;
    // Initial body velocity ranges; the remaining components get small perturbations.
    double u_lo = 0.0, u_hi = 1.0;
    double w_lo = -0.1, w_hi = 0.5;
    double perturb = 0.05;
    SimConfig sim;
    ThrustMap thrust;
};

/// One record per (config, repeat), generated from `policy` with RK4 at
/// 1/rate and Gaussian noise on the position columns only. Each record has
/// its own random stream, so the result does not depend on the thread count.
std::vector<TrajectoryRecord> simulate_campaign(const CampaignSpec& spec, const PhysicalParams& truth,
                                                const LambdaPolicy& policy, Exec exec = Exec::parallel);

/// Every aerodynamic entry multiplied by an independent factor in [1 - frac, 1 + frac].
PhysicalParams perturb_aero(const PhysicalParams& p, double frac, std::uint64_t seed);

}  // namespace blimp
