#include "blimp/synth.hpp"

#include "blimp/errors.hpp"
#include "blimp/log.hpp"

#include <cmath>
#include <random>

namespace blimp {

std::vector<std::pair<int, int>> thrust_pairs() {
    std::vector<std::pair<int, int>> out;
    for (int l = 1; l <= 8; ++l) out.push_back({l, l});
    for (int l = 1; l <= 7; ++l) {
        out.push_back({l, l + 1});
        out.push_back({l + 1, l});
    }
    for (int l = 2; l <= 5; ++l) {
        out.push_back({l, l + 2});
        out.push_back({l + 2, l});
    }
    return out;
}

std::vector<ConfigKey> config_grid() {
    std::vector<ConfigKey> out;
    for (const auto& [l, r] : thrust_pairs()) {
        for (int dx = -5; dx <= 5; ++dx) out.push_back({l, r, dx});
    }
    return out;
}

double truth_lambda(double alpha, double V) {
    constexpr double width = 0.022;
    return 1.0 - (1.0 - sigmoid((alpha - 0.40) / width)) * sigmoid((V - 0.45) / width);
}

MixerFit fit_mixer_to(const std::function<double(double, double)>& target, const MixerFitOptions& opt) {
    opt.lattice.validate();
    if (opt.iterations < 0 || !(opt.lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "bad mixer fit options");
    const Lattice& lat = opt.lattice;
    const std::size_t n = lat.size();
    std::vector<double> y(n);
    for (int i = 0; i < lat.n_alpha; ++i) {
        for (int j = 0; j < lat.n_V; ++j) y[static_cast<std::size_t>(i * lat.n_V + j)] = target(lat.alpha_at(i), lat.V_at(j));
    }

    MixerFit fit;
    fit.xi = MixerParams::init(opt.seed);
    std::vector<double> z = fit.xi.flatten();
    std::vector<double> g(z.size());
    AdamState st;
    for (int it = 0; it < opt.iterations; ++it) {
        std::fill(g.begin(), g.end(), 0.0);
        for (int i = 0; i < lat.n_alpha; ++i) {
            for (int j = 0; j < lat.n_V; ++j) {
                const double a = lat.alpha_at(i), v = lat.V_at(j);
                const double l = lambda_eval(fit.xi, a, v);
                lambda_backward(fit.xi, a, v, 2.0 * (l - y[static_cast<std::size_t>(i * lat.n_V + j)]) / n, g);
            }
        }
        // Cosine decay to a tenth of the initial rate.
        const double lr = opt.lr * (0.1 + 0.45 * (1.0 + std::cos(kPi * it / std::max(opt.iterations, 1))));
        optimizer_step(OptimizerKind::adam, st, lr, z, g);
        fit.xi.assign(z);
    }
    double sse = 0.0;
    for (int i = 0; i < lat.n_alpha; ++i) {
        for (int j = 0; j < lat.n_V; ++j) {
            const double e = lambda_eval(fit.xi, lat.alpha_at(i), lat.V_at(j)) - y[static_cast<std::size_t>(i * lat.n_V + j)];
            sse += e * e;
            fit.max_err = std::max(fit.max_err, std::abs(e));
        }
    }
    fit.rmse = std::sqrt(sse / static_cast<double>(n));
    return fit;
}

const MixerParams& truth_mixer() {
    static const MixerParams xi = fit_mixer_to(truth_lambda).xi;
    return xi;
}

namespace {

TrajectoryRecord simulate_one(const CampaignSpec& spec, std::size_t index, const PhysicalParams& truth,
                              const LambdaPolicy& policy) {
    const ConfigKey key = spec.configs[index / static_cast<std::size_t>(spec.repeats)];
    const int rep = static_cast<int>(index % static_cast<std::size_t>(spec.repeats));
    ControlInput u;
    u.Fl = spec.thrust.newtons(key.level_l);
    u.Fr = spec.thrust.newtons(key.level_r);
    u.r_bar = Vec3(key.dr_x_cm * 1e-2, 0.0, spec.sim.rbar_z);
    RolloutOptions ro{1.0 / spec.rate_hz, spec.sim.lambda_per_stage};

    for (std::uint32_t attempt = 0; attempt < 8; ++attempt) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(index), attempt};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

        const double duration = uni(spec.duration_min, spec.duration_max);
        const std::size_t steps = static_cast<std::size_t>(std::lround(duration * spec.rate_hz));
        State x0 = State::Zero();
        x0(5) = uni(-kPi, kPi);
        x0(3) = uni(-spec.perturb, spec.perturb);
        x0(4) = uni(-spec.perturb, spec.perturb);
        x0(6) = uni(spec.u_lo, spec.u_hi);
        x0(7) = uni(-spec.perturb, spec.perturb);
        x0(8) = uni(spec.w_lo, spec.w_hi);
        for (int i = 9; i < 12; ++i) x0(i) = uni(-spec.perturb, spec.perturb);

        const std::vector<ControlInput> inputs(steps, u);
        std::vector<State> xs;
        try {
            xs = rollout(x0, inputs, truth, policy, ro);
        } catch (const Error& e) {
            if (e.is_validation()) throw;
            log_debug("record " + std::to_string(index) + " attempt " + std::to_string(attempt) + ": " + e.message());
            continue;
        }

        TrajectoryRecord rec;
        char id[64];
        std::snprintf(id, sizeof id, "L%d_R%d_dx%+d_rep%d", key.level_l, key.level_r, key.dr_x_cm, rep);
        rec.id = id;
        rec.config = key;
        rec.rate_hz = spec.rate_hz;
        rec.has_velocity = true;
        std::normal_distribution<double> noise(0.0, spec.sim.position_noise);
        for (std::size_t k = 0; k < xs.size(); ++k) {
            rec.t.push_back(static_cast<double>(k) / spec.rate_hz);
            State s = xs[k];
            if (spec.sim.position_noise > 0.0) {
                for (int i = 0; i < 3; ++i) s(i) += noise(rng);
            }
            rec.x.push_back(s);
            rec.u.push_back(u);
        }
        return rec;
    }
    throw Error(ErrorKind::NonFiniteState, "record " + std::to_string(index) + " diverged on every attempt");
}

}  // namespace

std::vector<TrajectoryRecord> simulate_campaign(const CampaignSpec& spec, const PhysicalParams& truth,
                                                const LambdaPolicy& policy, Exec exec) {
    if (spec.repeats < 1 || !(spec.rate_hz > 0.0) || !(spec.duration_min > 0.0) ||
        spec.duration_max < spec.duration_min) {
        throw Error(ErrorKind::InvalidArgument, "bad campaign spec");
    }
    validate(truth);
    policy.validate();
    spec.thrust.validate();
    const std::size_t n = spec.configs.size() * static_cast<std::size_t>(spec.repeats);
    std::vector<TrajectoryRecord> out(n);
    parallel_for(exec, n, [&](std::size_t i) { out[i] = simulate_one(spec, i, truth, policy); });
    return out;
}

PhysicalParams perturb_aero(const PhysicalParams& p, double frac, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> f(1.0 - frac, 1.0 + frac);
    PhysicalParams q = p;
    std::vector<double> theta = pack_aero(p);
    for (double& t : theta) t *= f(rng);
    unpack_aero(q, theta);
    return q;
}

}  // namespace blimp
