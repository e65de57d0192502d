#include "blimp/mixer.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace blimp;

namespace {

MixerParams constant_mixer(double bias) {
    MixerParams xi = MixerParams::init(1);
    for (auto& l : xi.layers) {
        l.W.setZero();
        l.b.setZero();
    }
    xi.layers.back().b(0) = bias;
    return xi;
}

// lambda = sigmoid(k (alpha / alpha_scale - c)) through one live path of the network.
MixerParams ramp_mixer(double k, double c) {
    MixerParams xi = constant_mixer(-k * c);
    xi.layers[0].W(0, 0) = 1.0;
    xi.layers[1].W(0, 0) = 1.0;
    xi.layers[2].W(0, 0) = k;
    return xi;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("shape and initialisation") {
    const MixerParams xi = MixerParams::init(5);
    CHECK(xi.layers.size() == 3);
    CHECK(xi.param_count() == 2 * 32 + 32 + 32 * 16 + 16 + 16 + 1);
    const double bound = 1.0 / std::sqrt(2.0);
    CHECK(xi.layers[0].W.cwiseAbs().maxCoeff() <= bound);
    CHECK(xi.layers[1].W.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(32.0));
    const MixerParams again = MixerParams::init(5);
    CHECK(again.flatten() == xi.flatten());
    CHECK(MixerParams::init(6).flatten() != xi.flatten());

    MixerParams broken = xi;
    broken.layers[1].W.resize(3, 3);
    CHECK_THROWS_AS(broken.validate(), Error);
}

TEST_CASE("forward pass against a hand-written network") {
    const MixerParams xi = MixerParams::init(9);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.2);
    for (int n = 0; n < 100; ++n) {
        const double a = u(rng), v = u(rng);
        Eigen::VectorXd h(2);
        h << a / xi.alpha_scale, v / xi.V_scale;
        for (std::size_t l = 0; l < xi.layers.size(); ++l) {
            h = xi.layers[l].W * h + xi.layers[l].b;
            if (l + 1 < xi.layers.size()) h = h.cwiseMax(0.0);
        }
        const double expect = sig(h(0));
        const double got = lambda_eval(xi, a, v);
        CHECK(got == doctest::Approx(expect).epsilon(1e-14));
        CHECK(got > 0.0);
        CHECK(got < 1.0);
        CHECK(lambda_eval(xi, a, v) == got);  // bit-identical on repeat
    }
}

TEST_CASE("output clamp") {
    const double hi = lambda_eval(constant_mixer(50.0), 0.3, 0.4);
    CHECK(hi < 1.0);
    CHECK(1.0 - hi <= 1e-15);
    const double lo = lambda_eval(constant_mixer(-800.0), 0.3, 0.4);
    CHECK(lo > 0.0);
    CHECK(lo == kLambdaLo);
    CHECK(lambda_eval(constant_mixer(0.0), 0.1, 0.9) == 0.5);
}

TEST_CASE("parameter gradient matches central differences") {
    const MixerParams xi = MixerParams::init(4);
    std::vector<double> z = xi.flatten();
    const double a = 0.37, v = 0.52;
    std::vector<double> g(z.size(), 0.0);
    lambda_backward(xi, a, v, 1.0, g);
    const double h = 1e-6;
    const auto sig0 = activation_signature(xi, a, v);
    for (std::size_t i = 0; i < z.size(); ++i) {
        MixerParams p = xi, m = xi;
        std::vector<double> zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        p.assign(zp);
        m.assign(zm);
        if (activation_signature(p, a, v) != sig0 || activation_signature(m, a, v) != sig0) continue;
        const double fd = (lambda_eval(p, a, v) - lambda_eval(m, a, v)) / (2 * h);
        CHECK(std::abs(fd - g[i]) <= 1e-7 + 1e-6 * std::abs(g[i]));
    }
    const LambdaInputGrad ig = lambda_input_grad(xi, a, v);
    const double fa = (lambda_eval(xi, a + h, v) - lambda_eval(xi, a - h, v)) / (2 * h);
    const double fv = (lambda_eval(xi, a, v + h) - lambda_eval(xi, a, v - h)) / (2 * h);
    CHECK(ig.d_alpha == doctest::Approx(fa).epsilon(1e-6));
    CHECK(ig.d_V == doctest::Approx(fv).epsilon(1e-6));
}

TEST_CASE("anchor loss") {
    RegGrids g;
    g.acm_anchors = {{0.2, 0.7}};
    g.gdm_anchors = {{0.9, 0.2}};
    // lambda(0.2, .) = 0.5 exactly and lambda(0.9, .) is 1 to double precision.
    const MixerParams xi = ramp_mixer(50.0, 0.2 / 0.48);
    CHECK(lambda_eval(xi, 0.2, 0.7) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(anchor_loss(xi, g) == doctest::Approx(0.25).epsilon(1e-12));

    const MixerParams ideal = ramp_mixer(400.0, 0.5 / 0.48);
    CHECK(anchor_loss(ideal, g) < 1e-30);
    CHECK(anchor_loss(MixerParams::init(2), g) >= 0.0);

    RegGrids empty = g;
    empty.gdm_anchors.clear();
    CHECK_THROWS_AS(anchor_loss(xi, empty), Error);
}

TEST_CASE("monotonicity penalty") {
    const Lattice lat{0.0, 0.2, 3, 0.0, 0.2, 3};
    std::vector<double> vals(lat.size());
    auto fill = [&](double sa, double sv) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) vals[static_cast<std::size_t>(i * 3 + j)] = 0.5 + sa * lat.alpha_at(i) + sv * lat.V_at(j);
    };
    // Partials (+0.3, +0.1) at every node: 0.09 per node under the printed signs.
    fill(0.3, 0.1);
    CHECK(mono_from_surface(lat, vals, MonoSign::printed) == doctest::Approx(9 * 0.09).epsilon(1e-12));
    CHECK(mono_from_surface(lat, vals, MonoSign::prose) == doctest::Approx(9 * 0.01).epsilon(1e-12));
    fill(-0.3, 0.1);
    CHECK(mono_from_surface(lat, vals, MonoSign::printed) == 0.0);
    fill(0.3, -0.1);
    CHECK(mono_from_surface(lat, vals, MonoSign::prose) == 0.0);
    fill(0.0, 0.0);
    CHECK(mono_from_surface(lat, vals, MonoSign::prose) == 0.0);
    CHECK(mono_from_surface(lat, vals, MonoSign::printed) == 0.0);

    RegGrids g;
    g.lattice = Lattice{0.0, 1.0, 11, 0.0, 1.0, 11};
    CHECK(mono_loss(constant_mixer(0.3), g) == 0.0);
}

TEST_CASE("smoothness penalty") {
    const Lattice lat{0.0, 1.0, 6, 0.0, 0.5, 4};
    std::vector<double> vals(lat.size()), flipped(lat.size());
    const double s = 0.7;
    for (int i = 0; i < lat.n_alpha; ++i)
        for (int j = 0; j < lat.n_V; ++j) vals[static_cast<std::size_t>(i * lat.n_V + j)] = 0.1 + s * lat.alpha_at(i);
    CHECK(smooth_from_surface(lat, vals) == doctest::Approx(lat.size() * s * s).epsilon(1e-12));
    for (std::size_t k = 0; k < vals.size(); ++k) flipped[k] = 1.0 - vals[k];
    CHECK(smooth_from_surface(lat, flipped) == doctest::Approx(smooth_from_surface(lat, vals)).epsilon(1e-12));
    std::fill(vals.begin(), vals.end(), 0.4);
    CHECK(smooth_from_surface(lat, vals) == 0.0);

    const MixerParams xi = MixerParams::init(8);
    RegGrids g;
    g.lattice = Lattice{0.0, 1.0, 9, 0.0, 1.0, 9};
    const double a = smooth_loss(xi, g);
    CHECK(a >= 0.0);
}

TEST_CASE("lattice partials converge at second order") {
    const MixerParams xi = MixerParams::init(12);
    // Pick a point whose ReLU pattern is constant over the wider stencil.
    bool found = false;
    for (double a0 = 0.2; a0 < 1.0 && !found; a0 += 0.037) {
        for (double v0 = 0.2; v0 < 1.0 && !found; v0 += 0.041) {
            const double h = 0.02;
            const auto s0 = activation_signature(xi, a0, v0);
            bool smooth = true;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) smooth = smooth && activation_signature(xi, a0 + di * h, v0 + dj * h) == s0;
            if (!smooth) continue;
            found = true;
            const LambdaInputGrad exact = lambda_input_grad(xi, a0, v0);
            auto discrepancy = [&](double step) {
                const Lattice lat{a0 - step, a0 + step, 3, v0 - step, v0 + step, 3};
                std::vector<double> vals(9), da(9), dv(9);
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) vals[static_cast<std::size_t>(i * 3 + j)] = lambda_eval(xi, lat.alpha_at(i), lat.V_at(j));
                lattice_partials(lat, vals, da, dv);
                return std::hypot(da[4] - exact.d_alpha, dv[4] - exact.d_V);
            };
            const double ratio = discrepancy(h) / discrepancy(h / 2);
            CHECK(ratio > 3.5);
            CHECK(ratio < 4.5);
        }
    }
    CHECK(found);
}

TEST_CASE("regularizer gradient matches central differences") {
    const MixerParams xi = MixerParams::init(21);
    RegimePartition part;
    RegGrids g = make_reg_grids(part, 0.0, 1.0, 0.1, 1.0, 8, 7);
    g.weights = {1.0, 1.0, 0.1};
    std::vector<double> grad(xi.param_count(), 0.0);
    const RegTerms t = regularizer_grad(xi, g, 1.0, grad, Exec::serial);
    CHECK(t.anchor == doctest::Approx(anchor_loss(xi, g)).epsilon(1e-12));
    CHECK(t.mono == doctest::Approx(mono_loss(xi, g)).epsilon(1e-12));
    CHECK(t.smooth == doctest::Approx(smooth_loss(xi, g)).epsilon(1e-12));

    std::vector<double> par(xi.param_count(), 0.0);
    const RegTerms tp = regularizer_grad(xi, g, 1.0, par, Exec::parallel);
    CHECK(std::memcmp(par.data(), grad.data(), par.size() * sizeof(double)) == 0);
    CHECK(tp.anchor == t.anchor);

    const std::vector<double> z = xi.flatten();
    auto total = [&](const std::vector<double>& zz) {
        MixerParams p = xi;
        p.assign(zz);
        return g.weights.anchor * anchor_loss(p, g) + g.weights.mono * mono_loss(p, g) +
               g.weights.smooth * smooth_loss(p, g);
    };
    auto sigs = [&](const std::vector<double>& zz) {
        MixerParams p = xi;
        p.assign(zz);
        std::vector<std::uint64_t> s;
        for (const auto& a : g.acm_anchors) s.push_back(activation_signature(p, a[0], a[1]));
        for (const auto& a : g.gdm_anchors) s.push_back(activation_signature(p, a[0], a[1]));
        for (int i = 0; i < g.lattice.n_alpha; ++i)
            for (int j = 0; j < g.lattice.n_V; ++j) s.push_back(activation_signature(p, g.lattice.alpha_at(i), g.lattice.V_at(j)));
        return s;
    };
    const auto s0 = sigs(z);
    const double h = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < z.size(); i += 7) {
        std::vector<double> zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        if (sigs(zp) != s0 || sigs(zm) != s0) continue;
        const double fd = (total(zp) - total(zm)) / (2 * h);
        CHECK(std::abs(fd - grad[i]) <= 1e-7 + 1e-5 * std::abs(grad[i]));
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("anchor sets and grid") {
    const RegimePartition part;
    const RegGrids g = make_reg_grids(part, 0.0, 1.0, 0.0, 1.2, 64, 21);
    CHECK(g.acm_anchors.size() == 64);
    CHECK(g.gdm_anchors.size() == 64);
    for (const auto& a : g.acm_anchors) CHECK((a[0] < part.alpha1 && a[1] > part.V2));
    for (const auto& a : g.gdm_anchors) CHECK(classify_regime(part, a[0], a[1]) == Region::GDM);
    CHECK(g.lattice.n_alpha == 21);
    CHECK(g.lattice.alpha_max == 1.0);
    CHECK(g.lattice.V_max == 1.2);
    // A box confined to the GDM region has no coupling anchors.
    CHECK_THROWS_AS(make_reg_grids(part, 0.6, 1.0, 0.0, 0.3), Error);
}

TEST_CASE("surface export and serialization") {
    const MixerParams xi = MixerParams::init(17, 0.5, 0.6);
    const auto rows = lambda_surface(xi, Lattice{0.0, 1.0, 2, 0.0, 1.0, 2});
    CHECK(rows.size() == 4);
    for (const auto& r : rows) {
        CHECK(r.lambda > 0.0);
        CHECK(r.lambda < 1.0);
    }
    CHECK_THROWS_AS(lambda_surface(xi, Lattice{0.0, 1.0, 1, 0.0, 1.0, 2}), Error);

    const MixerParams back = mixer_from_json(mixer_to_json(xi));
    CHECK(back.alpha_scale == 0.5);
    CHECK(back.V_scale == 0.6);
    const auto a = xi.flatten(), b = back.flatten();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);

    const auto dir = std::filesystem::temp_directory_path() / "blimp_test_mixer";
    std::filesystem::create_directories(dir);
    save_mixer(dir / "m.json", xi);
    CHECK(load_mixer(dir / "m.json").flatten() == a);
    write_lambda_csv(dir / "s.csv", rows);
    std::ifstream in(dir / "s.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "alpha,V,lambda");

    CHECK_THROWS_AS(mixer_from_json("{not json"), Error);
    CHECK_THROWS_AS(mixer_from_json(R"({"format":"other","version":1})"), Error);
    std::filesystem::remove_all(dir);
}
