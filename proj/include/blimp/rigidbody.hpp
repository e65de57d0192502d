// Non-aerodynamic terms of the envelope + gondola system: rigid-body mass and
// Coriolis matrices, restoring wrench, added mass, thruster wrench and the
// moving-mass reaction.
//
// Axes: body x forward, y right, z down; inertial z down (k = [0, 0, 1]).
#pragma once

#include "blimp/aero.hpp"
#include "blimp/mathcore.hpp"
#include "blimp/types.hpp"

namespace blimp {

struct PhysicalParams {
    double m0 = 0.12;     // envelope mass [kg]
    double m_bar = 0.05;  // gondola mass [kg]
    Mat3 I0 = Vec3(0.010, 0.014, 0.012).asDiagonal();
    Vec3 r0 = Vec3(0.0, 0.0, 0.03);  // envelope CoM offset from CoB [m]
    double buoyancy = 0.0;           // B [N]; see default_params()
    double g = kStandardGravity;
    double d = 0.05;  // lateral thruster offset [m]
    Vec6 added_mass = Vec6::Zero();  // X_udot, Y_vdot, Z_wdot, K_pdot, M_qdot, N_rdot
    AcmCoeffs acm = AcmCoeffs::default_basis();
    GdmCoeffs gdm;

    double total_mass() const { return m0 + m_bar; }
    /// r with m r = m0 r0 + m_bar r_bar.
    Vec3 com_offset(const Vec3& r_bar) const { return (m0 * r0 + m_bar * r_bar) / total_mass(); }
    /// I0 - m_bar S(r_bar) S(r_bar).
    Mat3 rotational_inertia(const Vec3& r_bar) const;
};

/// Validates the physical invariants; throws InvalidArgument.
void validate(const PhysicalParams& p);

struct ControlInput {
    double Fl = 0.0;  // [N]
    double Fr = 0.0;  // [N]
    Vec3 r_bar = Vec3::Zero();
    Vec3 r_bar_dot = Vec3::Zero();
    Vec3 r_bar_ddot = Vec3::Zero();
};

Mat6 mass_matrix(const PhysicalParams& p, const ControlInput& u);

template <class S>
Mat6T<S> coriolis_matrix(const PhysicalParams& p, const ControlInput& u, const Vec6T<S>& nu) {
    const double m = p.total_mass();
    const Mat3T<S> r = skew(Vec3T<S>(p.com_offset(u.r_bar).template cast<S>()));
    const Vec3T<S> omega = nu.template tail<3>();
    const Mat3T<S> sw = skew(omega);
    const Mat3T<S> coupling = -m * (sw * r);
    const Vec3T<S> iw = p.rotational_inertia(u.r_bar).template cast<S>() * omega;
    Mat6T<S> c;
    c.template topLeftCorner<3, 3>() = m * sw;
    c.template topRightCorner<3, 3>() = coupling;
    // Same coupling block on both off-diagonals; not skew unless r = 0.
    c.template bottomLeftCorner<3, 3>() = coupling;
    c.template bottomRightCorner<3, 3>() = -skew(iw);
    return c;
}

/// Restoring wrench [(mg - B) R^T k; m g S(r) R^T k] acting on the body.
template <class S>
WrenchT<S> gravity_buoyancy(const PhysicalParams& p, const ControlInput& u, const EulerT<S>& e) {
    const double m = p.total_mass();
    const Vec3T<S> down = rotation_body_to_inertial(e).transpose().col(2);  // R^T k
    const Vec3T<S> r = p.com_offset(u.r_bar).template cast<S>();
    return {(m * p.g - p.buoyancy) * down, (m * p.g) * (skew(r) * down)};
}

/// Thruster wrench: (Fl+Fr) i_b and (Fl+Fr) r_bar_z j_b + (Fl-Fr) d k_b.
Wrench control_wrench(const PhysicalParams& p, const ControlInput& u);

/// Moving-mass reaction; vanishes when the gondola is stationary.
template <class S>
WrenchT<S> gondola_reaction(const PhysicalParams& p, const ControlInput& u, const Vec6T<S>& nu) {
    const Vec3T<S> omega = nu.template tail<3>();
    const Vec3T<S> acc = u.r_bar_ddot.template cast<S>();
    const Mat3T<S> s_rdot = skew(Vec3T<S>(u.r_bar_dot.template cast<S>()));
    const Mat3T<S> s_r = skew(Vec3T<S>(u.r_bar.template cast<S>()));
    const double mb = p.m_bar;
    WrenchT<S> w;
    w.force = -mb * acc + (2.0 * mb) * (s_rdot * omega);
    w.moment = -mb * (s_r * acc) + (2.0 * mb) * (s_r * (s_rdot * omega));
    return w;
}

/// Diagonal added-mass matrix M_A and its Coriolis counterpart
/// C_A = [0, -S(A1 v); -S(A1 v), -S(A2 w)].
template <class S> struct AddedMassTerms {
    Mat6 M;
    Mat6T<S> C;
};

template <class S> AddedMassTerms<S> added_mass_terms(const PhysicalParams& p, const Vec6T<S>& nu) {
    AddedMassTerms<S> out;
    out.M = p.added_mass.asDiagonal();
    const Vec3T<S> a1v = p.added_mass.head<3>().cast<S>().cwiseProduct(nu.template head<3>());
    const Vec3T<S> a2w = p.added_mass.tail<3>().cast<S>().cwiseProduct(nu.template tail<3>());
    out.C.setZero();
    out.C.template topRightCorner<3, 3>() = -skew(a1v);
    out.C.template bottomLeftCorner<3, 3>() = -skew(a1v);
    out.C.template bottomRightCorner<3, 3>() = -skew(a2w);
    return out;
}

/// Factorised (M_RB + M_A) for one gondola position.
class MassModel {
public:
    /// Throws SingularMass when the condition number exceeds 1e12.
    MassModel(const PhysicalParams& p, const ControlInput& u);

    const Mat6& matrix() const { return m_; }
    const Mat6& inverse() const { return inv_; }
    double condition() const { return cond_; }

private:
    Mat6 m_;
    Mat6 inv_;
    double cond_ = 1.0;
};

inline constexpr double kMaxMassCondition = 1e12;

/// Parameters loosely matched to a small winged blimp with a net weight of
/// about 6.25 gf; used as the default configuration and synthetic truth.
PhysicalParams default_params();

}  // namespace blimp
