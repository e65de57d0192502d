#include "blimp/rigidbody.hpp"

#include "blimp/errors.hpp"

#include <string>

namespace blimp {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::GimbalSingularity: return "GimbalSingularity";
        case ErrorKind::NonFiniteState: return "NonFiniteState";
        case ErrorKind::SingularMass: return "SingularMass";
        case ErrorKind::EmptyAnchorSet: return "EmptyAnchorSet";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorKind::EmptyRegion: return "EmptyRegion";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::InsufficientCoverage: return "InsufficientCoverage";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::RateError: return "RateError";
        case ErrorKind::SchemaError: return "SchemaError";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

Mat3 PhysicalParams::rotational_inertia(const Vec3& r_bar) const {
    const Mat3 s = skew(r_bar);
    return I0 - m_bar * s * s;
}

void validate(const PhysicalParams& p) {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
    if (!(p.m0 > 0.0)) fail("m0 must be positive");
    if (!(p.m_bar > 0.0)) fail("m_bar must be positive");
    if (!p.I0.allFinite() || (p.I0 - p.I0.transpose()).cwiseAbs().maxCoeff() > 1e-12) fail("I0 must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(p.I0);
    if (es.eigenvalues().minCoeff() <= 0.0) fail("I0 must be positive definite");
    if ((p.added_mass.array() < 0.0).any()) fail("added-mass entries must be nonnegative");
    if (!(p.acm.rho > 0.0) || !(p.acm.area > 0.0)) fail("rho and reference area must be positive");
    for (const auto& poly : p.acm.poly) {
        if (poly.coeffs.size() != poly.terms.size()) fail("ACM coefficient count does not match its basis");
        for (double c : poly.coeffs) {
            if (!std::isfinite(c)) fail("ACM coefficients must be finite");
        }
    }
    if ((p.gdm.linear.array() < 0.0).any() || (p.gdm.quadratic.array() < 0.0).any()) {
        fail("GDM drag coefficients must be nonnegative");
    }
}

Mat6 mass_matrix(const PhysicalParams& p, const ControlInput& u) {
    const double m = p.total_mass();
    const Mat3 sr = skew(p.com_offset(u.r_bar));
    Mat6 mrb;
    mrb.topLeftCorner<3, 3>() = m * Mat3::Identity();
    mrb.topRightCorner<3, 3>() = -m * sr;
    mrb.bottomLeftCorner<3, 3>() = m * sr;
    mrb.bottomRightCorner<3, 3>() = p.rotational_inertia(u.r_bar);
    return mrb;
}

Wrench control_wrench(const PhysicalParams& p, const ControlInput& u) {
    const double sum = u.Fl + u.Fr;
    Wrench w;
    w.force = Vec3(sum, 0.0, 0.0);
    w.moment = Vec3(0.0, sum * u.r_bar.z(), (u.Fl - u.Fr) * p.d);
    return w;
}

MassModel::MassModel(const PhysicalParams& p, const ControlInput& u) {
    m_ = mass_matrix(p, u);
    m_.diagonal() += p.added_mass;
    Eigen::SelfAdjointEigenSolver<Mat6> es(m_);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    cond_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond_ <= kMaxMassCondition)) {
        throw Error(ErrorKind::SingularMass, "condition number " + std::to_string(cond_));
    }
    inv_ = m_.ldlt().solve(Mat6::Identity());
}

PhysicalParams default_params() {
    PhysicalParams p;
    p.m0 = 0.12;
    p.m_bar = 0.05;
    p.I0 = Vec3(0.010, 0.014, 0.012).asDiagonal();
    p.r0 = Vec3(0.0, 0.0, 0.03);
    // Net weight of 6.25 gf.
    p.buoyancy = p.total_mass() * p.g - 6.25 * kGramForce;
    p.d = 0.05;
    p.added_mass << 0.04, 0.08, 0.08, 0.002, 0.004, 0.004;

    p.acm = AcmCoeffs::default_basis();
    p.acm.rho = 1.225;
    p.acm.area = 0.5;
    p.acm.poly[0].coeffs = {0.50, 2.0, 1.0};  // CD0, CDa2, CDb2
    p.acm.poly[1].coeffs = {-0.8};            // CSb
    p.acm.poly[2].coeffs = {0.10, 2.4};       // CL0, CLa
    p.acm.poly[3].coeffs = {-0.05};           // CM1b
    p.acm.poly[4].coeffs = {0.02, -0.12};     // CM20, CM2a
    p.acm.poly[5].coeffs = {0.08};            // CM3b
    p.acm.damping = Vec3(-0.004, -0.008, -0.006);

    p.gdm.linear << 0.03, 0.05, 0.05, 0.002, 0.003, 0.003;
    p.gdm.quadratic << 0.20, 0.35, 0.35, 0.004, 0.006, 0.006;
    return p;
}

}  // namespace blimp
