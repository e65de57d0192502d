// Serial reference vs OpenMP path for the three hot kernels. Also checks that
// both paths produce bit-identical results.
#include "blimp/dataio.hpp"
#include "blimp/ident.hpp"
#include "blimp/synth.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>

using namespace blimp;

namespace {

template <class F> double best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial, double parallel, bool identical) {
    std::printf("%-28s serial %9.4f s  parallel %9.4f s  speedup %5.2fx  %s\n", name, serial, parallel,
                serial / parallel, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
    std::printf("threads: %d\n", thread_count());

    const PhysicalParams p = default_params();
    const RegimePartition part;
    const MixerParams xi = MixerParams::init(3);

    // Lambda surface on a fine lattice.
    {
        const Lattice lat{0.0, 1.2, 401, 0.0, 1.2, 401};
        std::vector<double> s, q;
        auto flat = [](const std::vector<SurfacePoint>& v) {
            std::vector<double> out;
            for (const auto& r : v) out.push_back(r.lambda);
            return out;
        };
        const double ts = best_of(reps, [&] { s = flat(lambda_surface(xi, lat, Exec::serial)); });
        const double tp = best_of(reps, [&] { q = flat(lambda_surface(xi, lat, Exec::parallel)); });
        report("lambda surface 401x401", ts, tp, same_bits(s, q));
    }

    // Campaign rollouts.
    CampaignSpec spec;
    std::vector<ConfigKey> keys;
    const auto grid = config_grid();
    for (std::size_t i = 0; i < grid.size(); i += 10) keys.push_back(grid[i]);
    spec.configs = keys;
    spec.seed = 7;
    const LambdaPolicy policy{MixingMode::sigmoid_fixed, nullptr, &part};
    std::vector<TrajectoryRecord> recs;
    {
        std::vector<TrajectoryRecord> a, b;
        const double ts = best_of(reps, [&] { a = simulate_campaign(spec, p, policy, Exec::serial); });
        const double tp = best_of(reps, [&] { b = simulate_campaign(spec, p, policy, Exec::parallel); });
        std::vector<double> fa, fb;
        for (const auto& r : a)
            for (const auto& x : r.x) fa.insert(fa.end(), x.data(), x.data() + 12);
        for (const auto& r : b)
            for (const auto& x : r.x) fb.insert(fb.end(), x.data(), x.data() + 12);
        report("campaign rollouts (33 recs)", ts, tp, same_bits(fa, fb));
        recs = std::move(a);
    }

    // Physics loss gradient over a batch of one-step pairs.
    {
        const Pools pools = partition_dataset(recs, part);
        const StepTable tab(recs, p, pools.acm);
        std::vector<std::size_t> batch(std::min<std::size_t>(tab.size(), 2048));
        std::iota(batch.begin(), batch.end(), std::size_t{0});
        const AeroLayout lay(p);
        const std::vector<int> active = lay.acm_indices();
        LossGrad a, b;
        const double ts = best_of(reps, [&] {
            a = physics_loss_grad(tab, batch, p, active, 0.0, Vec12::Ones(), GradMethod::autodiff, Exec::serial);
        });
        const double tp = best_of(reps, [&] {
            b = physics_loss_grad(tab, batch, p, active, 0.0, Vec12::Ones(), GradMethod::autodiff, Exec::parallel);
        });
        std::vector<double> va = a.grad, vb = b.grad;
        va.push_back(a.loss);
        vb.push_back(b.loss);
        char name[64];
        std::snprintf(name, sizeof name, "loss gradient (%zu pairs)", batch.size());
        report(name, ts, tp, same_bits(va, vb));
    }
    return 0;
}
