#include "blimp/aero.hpp"
#include "blimp/rigidbody.hpp"

#include <doctest.h>

#include <random>

using namespace blimp;

namespace {

std::mt19937_64 rng(3);

double uni(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

TEST_CASE("coupling model at rest and pure damping") {
    const AcmCoeffs c = default_params().acm;
    const Wrench w = acm_wrench(c, Vec6::Zero());
    CHECK(w.force.isZero(0.0));
    CHECK(w.moment.isZero(0.0));

    AcmCoeffs d = AcmCoeffs::default_basis();
    d.damping = Vec3(-0.1, 0.7, -0.3);
    Vec6 nu = Vec6::Zero();
    nu(4) = 1.0;  // q = 1
    const Wrench m = acm_wrench(d, nu);
    CHECK(m.moment(1) == 0.7);
    CHECK(m.moment(0) == 0.0);
    CHECK(m.force.isZero(0.0));
}

TEST_CASE("coupling model lift and drag in body axes") {
    AcmCoeffs c = AcmCoeffs::default_basis();
    c.rho = 1.225;
    c.area = 0.5;
    const double V = 0.68, alpha = 0.19;
    const double q = 0.5 * 1.225 * V * V * 0.5;
    const double cl = 0.0803 / q;  // lift of about 8.19 gf
    const double cd = 0.4;
    c.poly[2].coeffs = {cl, 0.0};
    c.poly[0].coeffs = {cd, 0.0, 0.0};
    Vec6 nu = Vec6::Zero();
    nu(0) = V * std::cos(alpha);
    nu(2) = V * std::sin(alpha);
    const Wrench w = acm_wrench(c, nu);
    const double L = q * cl, D = q * cd;
    CHECK(L == doctest::Approx(0.0803));
    CHECK(w.force(0) == doctest::Approx(-D * std::cos(alpha) + L * std::sin(alpha)).epsilon(1e-12));
    CHECK(std::abs(w.force(1)) < 1e-15);
    CHECK(w.force(2) == doctest::Approx(-D * std::sin(alpha) - L * std::cos(alpha)).epsilon(1e-12));
    // Aerodynamic force is orthogonal decomposition of drag and lift.
    CHECK(w.force.norm() == doctest::Approx(std::hypot(D, L)).epsilon(1e-12));
}

TEST_CASE("coupling model polynomial evaluation") {
    const AcmCoeffs c = default_params().acm;
    for (int i = 0; i < 50; ++i) {
        const double a = uni(-0.5, 0.8), b = uni(-0.4, 0.4);
        const double expect = c.poly[0].coeffs[0] + c.poly[0].coeffs[1] * a * a + c.poly[0].coeffs[2] * b * b;
        CHECK(c.poly[0].eval(a, b) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("coupling coefficients flatten and assign") {
    AcmCoeffs c = default_params().acm;
    CHECK(c.param_count() == 13);
    CHECK(c.param_names().size() == 13);
    CHECK(c.param_names().front() == "CD_0");
    CHECK(c.param_names().back() == "K3");
    std::vector<double> v = c.flatten();
    for (double& x : v) x *= 1.5;
    AcmCoeffs d = c;
    d.assign(v);
    CHECK(d.flatten() == v);
    CHECK_THROWS_AS(d.assign(std::vector<double>(3, 0.0)), Error);
}

TEST_CASE("drag model") {
    GdmCoeffs g;
    CHECK(gdm_wrench(default_params().gdm, Vec6::Zero()).stacked().isZero(0.0));
    g.linear(0) = 0.1;
    g.quadratic(0) = 0.2;
    Vec6 nu = Vec6::Zero();
    nu(0) = 1.0;
    CHECK(gdm_wrench(g, nu).force(0) == doctest::Approx(-0.3));

    const GdmCoeffs p = default_params().gdm;
    for (int i = 0; i < 100; ++i) {
        Vec6 v;
        for (int k = 0; k < 6; ++k) v(k) = uni(-2, 2);
        const Vec6 a = gdm_wrench(p, v).stacked();
        const Vec6 b = gdm_wrench(p, Vec6(-v)).stacked();
        CHECK((a + b).isZero(0.0));
        for (int k = 0; k < 6; ++k) {
            CHECK(a(k) == doctest::Approx(-(p.linear(k) + p.quadratic(k) * std::abs(v(k))) * v(k)));
        }
    }
    CHECK(GdmCoeffs::param_names().size() == 12);
}
