#include "blimp/aero.hpp"

#include "blimp/errors.hpp"

#include <string>

namespace blimp {

double CoeffPoly::eval(double alpha, double beta) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        acc += coeffs[k] * detail::int_pow(alpha, terms[k].alpha_pow) * detail::int_pow(beta, terms[k].beta_pow);
    }
    return acc;
}

AcmCoeffs AcmCoeffs::default_basis() {
    AcmCoeffs c;
    c.poly[0].terms = {{0, 0}, {2, 0}, {0, 2}};
    c.poly[1].terms = {{0, 1}};
    c.poly[2].terms = {{0, 0}, {1, 0}};
    c.poly[3].terms = {{0, 1}};
    c.poly[4].terms = {{0, 0}, {1, 0}};
    c.poly[5].terms = {{0, 1}};
    for (auto& p : c.poly) p.coeffs.assign(p.terms.size(), 0.0);
    return c;
}

std::size_t AcmCoeffs::param_count() const {
    std::size_t n = 3;
    for (const auto& p : poly) n += p.terms.size();
    return n;
}

std::vector<double> AcmCoeffs::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& p : poly) out.insert(out.end(), p.coeffs.begin(), p.coeffs.end());
    out.push_back(damping(0));
    out.push_back(damping(1));
    out.push_back(damping(2));
    return out;
}

void AcmCoeffs::assign(std::span<const double> values) {
    if (values.size() != param_count()) {
        throw Error(ErrorKind::InvalidArgument, "ACM parameter vector has " + std::to_string(values.size()) +
                                                    " entries, expected " + std::to_string(param_count()));
    }
    std::size_t k = 0;
    for (auto& p : poly) {
        p.coeffs.resize(p.terms.size());
        for (auto& c : p.coeffs) c = values[k++];
    }
    damping = Vec3(values[k], values[k + 1], values[k + 2]);
}

std::vector<std::string> AcmCoeffs::param_names() const {
    std::vector<std::string> names;
    for (std::size_t ch = 0; ch < 6; ++ch) {
        for (const auto& m : poly[ch].terms) {
            std::string n(kAcmLoadNames[ch]);
            if (m.alpha_pow == 0 && m.beta_pow == 0) n += "_0";
            if (m.alpha_pow > 0) n += "_a" + (m.alpha_pow > 1 ? std::to_string(m.alpha_pow) : std::string());
            if (m.beta_pow > 0) n += "_b" + (m.beta_pow > 1 ? std::to_string(m.beta_pow) : std::string());
            names.push_back(n);
        }
    }
    names.insert(names.end(), {"K1", "K2", "K3"});
    return names;
}

std::vector<double> GdmCoeffs::flatten() const {
    std::vector<double> out(linear.data(), linear.data() + 6);
    out.insert(out.end(), quadratic.data(), quadratic.data() + 6);
    return out;
}

void GdmCoeffs::assign(std::span<const double> values) {
    if (values.size() != kParamCount) {
        throw Error(ErrorKind::InvalidArgument, "GDM parameter vector must have 12 entries");
    }
    for (int i = 0; i < 6; ++i) {
        linear(i) = values[i];
        quadratic(i) = values[6 + i];
    }
}

std::vector<std::string> GdmCoeffs::param_names() {
    return {"X_u", "Y_v", "Z_w", "K_p", "M_q", "N_r",
            "X_uu", "Y_vv", "Z_ww", "K_pp", "M_qq", "N_rr"};
}

Wrench acm_wrench(const AcmCoeffs& c, const Vec6& nu) {
    const std::vector<double> theta = c.flatten();
    return acm_wrench_t<double>(c, theta, nu);
}

Wrench gdm_wrench(const GdmCoeffs& c, const Vec6& nu) {
    const std::vector<double> theta = c.flatten();
    return gdm_wrench_t<double>(theta, nu);
}

}  // namespace blimp
