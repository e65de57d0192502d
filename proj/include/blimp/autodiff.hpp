// Forward-mode AD scalars used for exact gradients through RK4.
//
// Derivative vectors are fixed-size: constants then carry zero derivatives
// and never mix sizes inside Eigen expressions.
#pragma once

#include <unsupported/Eigen/AutoDiff>

namespace blimp {

template <int N> using AdN = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

/// Directions available for the aerodynamic parameter vector.
inline constexpr int kMaxAdDirections = 32;
using Ad = AdN<kMaxAdDirections>;
/// Single direction, used for d(prediction)/d(lambda).
using Ad1 = AdN<1>;

/// Independent variable `value` seeded in direction `index`.
template <class A> A ad_variable(double value, int index) {
    A a(value);
    a.derivatives().setZero();
    a.derivatives()(index) = 1.0;
    return a;
}

}  // namespace blimp
