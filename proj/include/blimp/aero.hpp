// Aerodynamic submodels: the velocity-frame coupling model (lift, drag,
// side force, angle-dependent moments with rotational damping) and the
// diagonal linear-plus-quadratic drag model.
#pragma once

#include "blimp/mathcore.hpp"
#include "blimp/types.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace blimp {

/// alpha^alpha_pow * beta^beta_pow.
struct Monomial {
    int alpha_pow = 0;
    int beta_pow = 0;
    bool operator==(const Monomial&) const = default;
};

/// C(alpha, beta) = sum_k coeffs[k] * alpha^a_k * beta^b_k.
struct CoeffPoly {
    std::vector<Monomial> terms;
    std::vector<double> coeffs;

    double eval(double alpha, double beta) const;
};

/// Load channels in velocity-frame order.
enum class AcmLoad { Drag = 0, Side = 1, Lift = 2, Roll = 3, Pitch = 4, Yaw = 5 };
inline constexpr std::array<std::string_view, 6> kAcmLoadNames = {"CD", "CS", "CL", "CM1", "CM2", "CM3"};

struct AcmCoeffs {
    double rho = 1.225;  // kg/m^3
    double area = 0.5;   // m^2
    std::array<CoeffPoly, 6> poly;
    Vec3 damping = Vec3::Zero();  // K1, K2, K3 [N m s]

    /// CD = CD0 + CDa a^2 + CDb b^2, CS = CSb b, CL = CL0 + CLa a,
    /// CM1 = CM1b b, CM2 = CM20 + CM2a a, CM3 = CM3b b; all coefficients zero.
    static AcmCoeffs default_basis();

    /// Polynomial coefficients in channel order followed by K1..K3.
    std::size_t param_count() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> values);
    /// Human-readable name of each flattened parameter.
    std::vector<std::string> param_names() const;
};

struct GdmCoeffs {
    Vec6 linear = Vec6::Zero();     // X_u, Y_v, Z_w, K_p, M_q, N_r
    Vec6 quadratic = Vec6::Zero();  // X_u|u|, ..., N_r|r|

    static constexpr std::size_t kParamCount = 12;
    std::vector<double> flatten() const;
    void assign(std::span<const double> values);
    static std::vector<std::string> param_names();
};

namespace detail {

template <class S> S int_pow(const S& x, int n) {
    S out(1);
    for (int i = 0; i < n; ++i) out = out * x;
    return out;
}

}  // namespace detail

/// Coupling-model wrench with coefficients taken from `theta`
/// (layout of AcmCoeffs::flatten); geometry and basis come from `c`.
template <class S>
WrenchT<S> acm_wrench_t(const AcmCoeffs& c, std::span<const S> theta, const Vec6T<S>& nu) {
    const Vec3T<S> vb = nu.template head<3>();
    const Vec3T<S> omega = nu.template tail<3>();
    const FlowT<S> fl = flow_state(vb);
    // Dynamic pressure from the squared components keeps derivatives finite at rest.
    const S qbar = (0.5 * c.rho * c.area) * vb.squaredNorm();

    std::array<S, 6> coef;
    std::size_t k = 0;
    for (std::size_t ch = 0; ch < 6; ++ch) {
        S acc(0);
        for (const auto& m : c.poly[ch].terms) {
            acc = acc + theta[k++] * detail::int_pow(fl.alpha, m.alpha_pow) * detail::int_pow(fl.beta, m.beta_pow);
        }
        coef[ch] = acc;
    }
    const S k1 = theta[k], k2 = theta[k + 1], k3 = theta[k + 2];

    Vec3T<S> f_vel(-qbar * coef[0], qbar * coef[1], -qbar * coef[2]);
    Vec3T<S> m_vel(qbar * coef[3] + k1 * omega(0), qbar * coef[4] + k2 * omega(1), qbar * coef[5] + k3 * omega(2));
    const Mat3T<S> rvb = rotation_velocity_to_body(fl);
    return {rvb * f_vel, rvb * m_vel};
}

/// -(D_L + D_Q |nu|) nu, componentwise; `theta` = [linear(6), quadratic(6)].
template <class S> WrenchT<S> gdm_wrench_t(std::span<const S> theta, const Vec6T<S>& nu) {
    using std::abs;
    Vec6T<S> out;
    for (int i = 0; i < 6; ++i) {
        out(i) = -(theta[i] + theta[6 + i] * abs(nu(i))) * nu(i);
    }
    return WrenchT<S>::from_stacked(out);
}

Wrench acm_wrench(const AcmCoeffs& c, const Vec6& nu);
Wrench gdm_wrench(const GdmCoeffs& c, const Vec6& nu);

}  // namespace blimp
