// The (alpha, V) partition into coupling-dominated, drag-dominated and
// L-shaped transition regions, plus the two analytic mixing baselines.
#pragma once

#include "blimp/mathcore.hpp"

#include <string_view>

namespace blimp {

enum class Region { ACM = 0, GDM = 1, Transition = 2 };

std::string_view to_string(Region r);

struct RegimePartition {
    double alpha1 = 0.32;
    double alpha2 = 0.48;
    double V1 = 0.36;
    double V2 = 0.54;
    double alpha_star = 0.40;
    double V_star = 0.45;

    /// Band of +/- `band` (relative) around the switch points.
    static RegimePartition from_switch_points(double alpha_star, double V_star, double band = 0.2);
    /// Throws InvalidArgument unless 0 < a1 < a* < a2 and 0 < V1 < V* < V2.
    void validate() const;
};

/// ACM iff a < a1 and V > V2; Transition iff (a < a1 and V in [V1, V2]) or
/// (a in [a1, a2] and V > V1); GDM otherwise. Band edges are closed.
Region classify_regime(const RegimePartition& part, const FlowState& f);
Region classify_regime(const RegimePartition& part, double alpha, double V);

/// Binary baseline: 0 iff alpha < alpha* and V > V*, else 1.
double hard_lambda(const RegimePartition& part, double alpha, double V);

/// 1 - (1 - sig((a - a*)/s_a)) * sig((V - V*)/s_V), s_a = (a2 - a1)/4, s_V = (V2 - V1)/4.
double fixed_sigmoid_lambda(const RegimePartition& part, double alpha, double V);
inline double fixed_sigmoid_lambda(const RegimePartition& part, const FlowState& f) {
    return fixed_sigmoid_lambda(part, f.alpha, f.V);
}

/// Logistic function evaluated without overflow for large |z|.
double sigmoid(double z);

}  // namespace blimp
