#include "blimp/regime.hpp"

#include <doctest.h>

using namespace blimp;

TEST_CASE("band arithmetic") {
    const RegimePartition p = RegimePartition::from_switch_points(0.40, 0.45);
    CHECK(p.alpha1 == 0.32);
    CHECK(p.alpha2 == 0.48);
    CHECK(p.V1 == 0.36);
    CHECK(p.V2 == 0.54);
    CHECK(p.alpha_star == 0.40);
    CHECK_NOTHROW(p.validate());

    RegimePartition bad;
    bad.alpha1 = 0.5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("classification") {
    const RegimePartition p;
    CHECK(classify_regime(p, 0.20, 0.60) == Region::ACM);
    CHECK(classify_regime(p, 0.40, 0.45) == Region::Transition);
    CHECK(classify_regime(p, 0.50, 0.30) == Region::GDM);
    // Closed band edges.
    CHECK(classify_regime(p, 0.32, 0.60) == Region::Transition);
    CHECK(classify_regime(p, 0.20, 0.54) == Region::Transition);
    CHECK(classify_regime(p, 0.20, 0.36) == Region::Transition);
    CHECK(classify_regime(p, 0.48, 0.60) == Region::Transition);
    CHECK(classify_regime(p, 0.40, 0.36) == Region::GDM);
    CHECK(classify_regime(p, 0.20, 0.30) == Region::GDM);
    CHECK(classify_regime(p, 0.60, 1.00) == Region::GDM);
    CHECK(classify_regime(p, -0.3, 0.80) == Region::ACM);
}

TEST_CASE("analytic baselines") {
    const RegimePartition p;
    CHECK(hard_lambda(p, 0.2, 0.6) == 0.0);
    CHECK(hard_lambda(p, 0.45, 0.6) == 1.0);
    CHECK(hard_lambda(p, 0.2, 0.40) == 1.0);
    CHECK(fixed_sigmoid_lambda(p, 0.40, 0.45) == doctest::Approx(0.75));
    CHECK(fixed_sigmoid_lambda(p, -1.0, 3.0) < 0.05);
    CHECK(fixed_sigmoid_lambda(p, 1.5, 0.6) > 0.95);
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        const double l = fixed_sigmoid_lambda(p, 0.01 * i, 0.6);
        CHECK(l >= prev);
        prev = l;
    }
    prev = 2.0;
    for (int i = 0; i <= 100; ++i) {
        const double l = fixed_sigmoid_lambda(p, 0.2, 0.01 * i);
        CHECK(l <= prev);
        prev = l;
    }
    CHECK(sigmoid(1000.0) == 1.0);
    CHECK(sigmoid(-1000.0) == 0.0);
    CHECK(sigmoid(0.0) == 0.5);
}
