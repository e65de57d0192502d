#include "blimp/regime.hpp"

#include "blimp/errors.hpp"

#include <cmath>

namespace blimp {

std::string_view to_string(Region r) {
    switch (r) {
        case Region::ACM: return "ACM";
        case Region::GDM: return "GDM";
        case Region::Transition: return "Transition";
    }
    return "?";
}

RegimePartition RegimePartition::from_switch_points(double alpha_star, double V_star, double band) {
    RegimePartition p;
    p.alpha_star = alpha_star;
    p.V_star = V_star;
    // Written this way the lower edge of 0.40 is exactly 0.32 in binary.
    p.alpha1 = alpha_star - band * alpha_star;
    p.alpha2 = (1.0 + band) * alpha_star;
    p.V1 = V_star - band * V_star;
    p.V2 = (1.0 + band) * V_star;
    p.validate();
    return p;
}

void RegimePartition::validate() const {
    const bool ok = 0.0 < alpha1 && alpha1 < alpha_star && alpha_star < alpha2 && 0.0 < V1 && V1 < V_star &&
                    V_star < V2 && std::isfinite(alpha2) && std::isfinite(V2);
    if (!ok) throw Error(ErrorKind::InvalidArgument, "regime partition must satisfy 0 < a1 < a* < a2 and 0 < V1 < V* < V2");
}

Region classify_regime(const RegimePartition& p, double alpha, double V) {
    if (alpha < p.alpha1 && V > p.V2) return Region::ACM;
    const bool lower_leg = alpha < p.alpha1 && V >= p.V1 && V <= p.V2;
    const bool upright_leg = alpha >= p.alpha1 && alpha <= p.alpha2 && V > p.V1;
    return (lower_leg || upright_leg) ? Region::Transition : Region::GDM;
}

Region classify_regime(const RegimePartition& p, const FlowState& f) { return classify_regime(p, f.alpha, f.V); }

double hard_lambda(const RegimePartition& p, double alpha, double V) {
    return (alpha < p.alpha_star && V > p.V_star) ? 0.0 : 1.0;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double fixed_sigmoid_lambda(const RegimePartition& p, double alpha, double V) {
    const double sa = (p.alpha2 - p.alpha1) / 4.0;
    const double sv = (p.V2 - p.V1) / 4.0;
    const double acm_alpha = 1.0 - sigmoid((alpha - p.alpha_star) / sa);
    const double acm_speed = sigmoid((V - p.V_star) / sv);
    return 1.0 - acm_alpha * acm_speed;
}

}  // namespace blimp
