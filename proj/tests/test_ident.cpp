#include "blimp/dataio.hpp"
#include "blimp/ident.hpp"
#include "blimp/synth.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

using namespace blimp;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Small noise-free campaign under the fixed sigmoid: every pool is populated.
const std::vector<TrajectoryRecord>& small_campaign() {
    static const std::vector<TrajectoryRecord> recs = [] {
        CampaignSpec spec;
        std::vector<ConfigKey> keys;
        const auto grid = config_grid();
        for (std::size_t i = 0; i < grid.size(); i += 15) keys.push_back(grid[i]);
        spec.configs = keys;
        spec.seed = 3;
        spec.duration_min = 3.0;
        spec.duration_max = 4.0;
        spec.sim.position_noise = 0.0;
        static const RegimePartition part;
        return simulate_campaign(spec, default_params(), LambdaPolicy{MixingMode::sigmoid_fixed, nullptr, &part});
    }();
    return recs;
}

std::vector<std::size_t> first_n(std::size_t n) {
    std::vector<std::size_t> b(n);
    std::iota(b.begin(), b.end(), std::size_t{0});
    return b;
}

}  // namespace

TEST_CASE("model loss") {
    State a = State::Zero(), b = State::Zero();
    const Vec12 ones = Vec12::Ones();
    CHECK(step_error(a, a, ones) == 0.0);
    b(7) = 1.0;
    const std::vector<State> pred{a}, meas{b};
    CHECK(model_loss(pred, meas, ones) == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
    CHECK(model_loss(pred, meas, Vec12(2.0 * ones)) == doctest::Approx(4.0 / 12.0).epsilon(1e-15));
    const std::vector<State> two{a, a};
    CHECK_THROWS_AS(model_loss(two, meas, ones), Error);

    // Yaw errors are wrapped: 2 pi - 0.01 counts as 0.01.
    State y = State::Zero();
    y(5) = 2.0 * kPi - 0.01;
    CHECK(step_error(y, a, ones) == doctest::Approx(0.01 * 0.01 / 12.0).epsilon(1e-9));
}

TEST_CASE("parameter packing") {
    const PhysicalParams p = default_params();
    std::vector<double> th = pack_aero(p);
    const AeroLayout lay(p);
    CHECK(th.size() == lay.size());
    CHECK(aero_param_names(p).size() == th.size());
    CHECK(lay.acm_indices().size() + lay.gdm_indices().size() == lay.all_indices().size());
    for (double& v : th) v *= 0.9;
    PhysicalParams q = p;
    unpack_aero(q, th);
    CHECK(pack_aero(q) == th);
}

TEST_CASE("loss is zero at the generating parameters") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const PhysicalParams p = default_params();
    // Coupling-region steps use lambda close to 0 under the sigmoid, so the pure model is nearly exact.
    const RegionRmse r = one_step_rmse(recs, p, LambdaPolicy{MixingMode::sigmoid_fixed, nullptr, &part}, part,
                                       Vec12::Ones());
    REQUIRE(r.total.has_value());
    CHECK(*r.total < 1e-6);
    CHECK(r.counts[0] + r.counts[1] + r.counts[2] == pools.total());

    // Hard mixing uses lambda = 0 on the coupling region, so those entries match the pure model exactly.
    const RegionRmse acm = one_step_rmse(recs, p, LambdaPolicy{MixingMode::acm_only, nullptr, nullptr}, part, Vec12::Ones());
    const RegionRmse hard = one_step_rmse(recs, p, LambdaPolicy{MixingMode::hard, nullptr, &part}, part, Vec12::Ones());
    REQUIRE(acm.acm.has_value());
    CHECK(*acm.acm == *hard.acm);

    // Empty region is absent rather than zero.
    std::vector<TrajectoryRecord> hover(1);
    hover[0].id = "hover";
    for (int k = 0; k < 10; ++k) {
        hover[0].t.push_back(k / 60.0);
        hover[0].x.push_back(State::Zero());
        hover[0].u.push_back(ControlInput{});
    }
    const RegionRmse h = one_step_rmse(hover, p, LambdaPolicy{MixingMode::gdm_only, nullptr, nullptr}, part, Vec12::Ones());
    CHECK_FALSE(h.acm.has_value());
    CHECK_FALSE(h.transition.has_value());
    CHECK(h.gdm.has_value());
}

TEST_CASE("gradient blocks and central differences") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const PhysicalParams truth = default_params();
    const PhysicalParams p = perturb_aero(truth, 0.2, 9);
    const AeroLayout lay(p);
    const std::vector<int> all = lay.all_indices();

    const StepTable acm_tab(recs, p, pools.acm);
    const auto batch = first_n(std::min<std::size_t>(64, acm_tab.size()));
    const LossGrad g0 = physics_loss_grad(acm_tab, batch, p, all, 0.0, Vec12::Ones());
    for (int i : lay.gdm_indices()) CHECK(g0.grad[static_cast<std::size_t>(i)] == 0.0);
    bool any_nonzero = false;
    for (int i : lay.acm_indices()) any_nonzero = any_nonzero || g0.grad[static_cast<std::size_t>(i)] != 0.0;
    CHECK(any_nonzero);

    const StepTable gdm_tab(recs, p, pools.gdm);
    const auto gb = first_n(std::min<std::size_t>(64, gdm_tab.size()));
    const LossGrad g1 = physics_loss_grad(gdm_tab, gb, p, all, 1.0, Vec12::Ones());
    for (int i : lay.acm_indices()) CHECK(g1.grad[static_cast<std::size_t>(i)] == 0.0);

    // Directional derivative against a central difference of the loss.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::vector<double> th0 = pack_aero(p);
    std::vector<double> d(th0.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = n01(rng) * std::max(std::abs(th0[i]), 1e-3);
    auto loss_at = [&](double eps) {
        std::vector<double> th = th0;
        for (std::size_t i = 0; i < th.size(); ++i) th[i] += eps * d[i];
        PhysicalParams q = p;
        unpack_aero(q, th);
        return physics_loss(acm_tab, batch, q, 0.0, Vec12::Ones());
    };
    const double eps = 1e-5;
    const double fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps);
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) analytic += g0.grad[i] * d[i];
    CHECK(std::abs(fd - analytic) <= 1e-4 * std::abs(analytic));
    CHECK(g0.loss == doctest::Approx(loss_at(0.0)).epsilon(1e-14));

    const LossGrad fdg = physics_loss_grad(acm_tab, batch, p, lay.acm_indices(), 0.0, Vec12::Ones(),
                                           GradMethod::finite_difference);
    for (std::size_t k = 0; k < fdg.grad.size(); ++k) {
        const double a = g0.grad[static_cast<std::size_t>(lay.acm_indices()[k])];
        CHECK(std::abs(fdg.grad[k] - a) <= 1e-4 * std::abs(a) + 1e-9 * g0.loss);
    }

    // Serial and parallel paths give the same bits.
    const LossGrad s = physics_loss_grad(acm_tab, batch, p, all, 0.0, Vec12::Ones(), GradMethod::autodiff, Exec::serial);
    CHECK(same_bits(s.grad, g0.grad));
    CHECK(s.loss == g0.loss);
}

TEST_CASE("mixer loss gradient") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const PhysicalParams p = default_params();
    const StepTable tab(recs, p, pools.transition);
    const auto batch = first_n(std::min<std::size_t>(32, tab.size()));
    const MixerParams xi = MixerParams::init(2);
    const MixerLoss ml = mixer_loss(tab, batch, p, xi, nullptr, Vec12::Ones(), true);
    CHECK(ml.grad.size() == xi.param_count());
    CHECK(ml.total == ml.model);
    const MixerLoss fd = mixer_loss(tab, batch, p, xi, nullptr, Vec12::Ones(), true, GradMethod::finite_difference);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ml.grad.size(); ++i) {
        num += (ml.grad[i] - fd.grad[i]) * (ml.grad[i] - fd.grad[i]);
        den += ml.grad[i] * ml.grad[i];
    }
    CHECK(std::sqrt(num) <= 1e-4 * std::sqrt(den));
}

TEST_CASE("gradient contract") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const FlowBox box = observed_box(recs, pools);
    RegGrids grids = make_reg_grids(part, box.alpha_lo, box.alpha_hi, box.V_lo, box.V_hi, 16, 7);
    LossConfig cfg;
    grids.weights = cfg.reg_weights;
    GradCheckOptions opt;
    opt.points = 4;
    opt.batch = 8;
    const auto res = gradient_check(recs, pools, default_params(), MixerParams::init(1), grids, cfg, opt);
    for (const auto& r : res) {
        CHECK(r.ok());
        CHECK(r.points == 4);
    }
}

TEST_CASE("three-phase training isolates its parameter blocks") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const PhysicalParams phi0 = perturb_aero(default_params(), 0.2, 1);
    const MixerParams xi0 = MixerParams::init(1);
    LossConfig cfg;
    cfg.batch_size = 64;
    cfg.epochs1 = 1;
    cfg.epochs2 = 0;
    cfg.epochs3 = 0;
    TrainResult a = three_phase_train(recs, pools, phi0, xi0, part, cfg);
    CHECK(same_bits(a.phys.gdm.flatten(), phi0.gdm.flatten()));
    CHECK_FALSE(same_bits(a.phys.acm.flatten(), phi0.acm.flatten()));
    CHECK(same_bits(a.xi.flatten(), xi0.flatten()));

    cfg.epochs1 = 0;
    cfg.epochs2 = 1;
    a = three_phase_train(recs, pools, phi0, xi0, part, cfg);
    CHECK(same_bits(a.phys.acm.flatten(), phi0.acm.flatten()));
    CHECK_FALSE(same_bits(a.phys.gdm.flatten(), phi0.gdm.flatten()));

    cfg.epochs2 = 0;
    cfg.epochs3 = 1;
    a = three_phase_train(recs, pools, phi0, xi0, part, cfg);
    CHECK(same_bits(pack_aero(a.phys), pack_aero(phi0)));
    CHECK_FALSE(same_bits(a.xi.flatten(), xi0.flatten()));
    CHECK(a.report.phases[2].epoch_loss.size() == 1);
    CHECK(a.report.final_total_loss >= a.report.final_model_loss);

    // Same seed, same answer, whichever execution path.
    cfg.epochs1 = cfg.epochs2 = cfg.epochs3 = 1;
    const TrainResult s = three_phase_train(recs, pools, phi0, xi0, part, cfg, Exec::serial);
    const TrainResult q = three_phase_train(recs, pools, phi0, xi0, part, cfg, Exec::parallel);
    CHECK(same_bits(pack_aero(s.phys), pack_aero(q.phys)));
    CHECK(same_bits(s.xi.flatten(), q.xi.flatten()));

    Pools no_transition = pools;
    no_transition.transition.clear();
    try {
        three_phase_train(recs, no_transition, phi0, xi0, part, cfg);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyRegion);
    }
}

TEST_CASE("identifiability") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const Pools pools = partition_dataset(recs, part);
    const PhysicalParams p = default_params();
    const AeroLayout lay(p);
    const StepTable tab(recs, p, pools.gdm);
    const auto batch = first_n(tab.size());
    const std::vector<int> active = lay.gdm_indices();
    const Identifiability id = identifiability(tab, batch, p, active, 1.0, Vec12::Ones());
    REQUIRE(id.loss_rise.size() == active.size());
    for (double r : id.loss_rise) CHECK(r >= 0.0);
    // Surge drag is well excited on these flights.
    CHECK(id.loss_rise[0] > 0.0);
    const auto flags = id.identifiable(0.0);
    CHECK(std::count(flags.begin(), flags.end(), true) == static_cast<long>(active.size()));
}

TEST_CASE("optimisers and central differences") {
    AdamState st;
    std::vector<double> z{1.0, -2.0};
    const std::vector<double> g{0.5, -3.0};
    optimizer_step(OptimizerKind::adam, st, 0.1, z, g);
    // First Adam step moves every coordinate by lr against the gradient sign.
    CHECK(z[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(z[1] == doctest::Approx(-1.9).epsilon(1e-6));
    AdamState s2;
    std::vector<double> w{1.0};
    optimizer_step(OptimizerKind::sgd, s2, 0.1, w, std::vector<double>{2.0});
    CHECK(w[0] == doctest::Approx(0.8));

    auto f = [](std::span<const double> x) { return 3 * x[0] * x[0] + x[0] * x[1]; };
    const std::vector<double> x{1.0, 2.0}, h{1e-3, 1e-3};
    const auto d = central_difference(f, x, h);
    CHECK(d[0] == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(d[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("evaluation report") {
    const auto& recs = small_campaign();
    const RegimePartition part;
    const MixerParams xi = MixerParams::init(3);
    const std::vector<MixingMode> modes{MixingMode::acm_only, MixingMode::gdm_only, MixingMode::hard,
                                        MixingMode::sigmoid_fixed, MixingMode::neural};
    EvalOptions eo;
    eo.n_curves = 2;
    const EvalReport rep = evaluate(recs, default_params(), &xi, part, modes, eo);
    CHECK(rep.modes.size() == 5);
    CHECK(rep.curves.size() == 2 * 5);
    CHECK(rep.heatmap.size() == 5);
    // The generating mode fits its own data to integration error.
    CHECK(*rep.modes[3].one_step.total < 1e-6);
    CHECK(*rep.modes[3].one_step.total <= *rep.modes[0].one_step.total);

    const auto dir = std::filesystem::temp_directory_path() / "blimp_test_eval";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_eval_report(dir, rep);
    CHECK(std::filesystem::exists(dir / "region_rmse.csv"));
    CHECK(std::filesystem::exists(dir / "heatmap.csv"));
    CHECK(std::filesystem::exists(dir / "cumulative_rmse.csv"));
    std::filesystem::remove_all(dir);

    const std::vector<MixingMode> neural{MixingMode::neural};
    CHECK_THROWS_AS(evaluate(recs, default_params(), nullptr, part, neural, eo), Error);
}
