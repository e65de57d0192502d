// Core linear-algebra aliases and small value types shared by every module.
#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace blimp {

template <class S> using Vec3T = Eigen::Matrix<S, 3, 1>;
template <class S> using Mat3T = Eigen::Matrix<S, 3, 3>;
template <class S> using Vec6T = Eigen::Matrix<S, 6, 1>;
template <class S> using Mat6T = Eigen::Matrix<S, 6, 6>;
template <class S> using Vec12T = Eigen::Matrix<S, 12, 1>;

using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;
using Vec6 = Vec6T<double>;
using Mat6 = Mat6T<double>;
using Vec12 = Vec12T<double>;

inline constexpr double kStandardGravity = 9.80665;
/// Newtons per gram-force.
inline constexpr double kGramForce = 9.80665e-3;
inline constexpr double kPi = 3.14159265358979323846;

inline double value_of(double x) { return x; }
/// Value part of an automatic-differentiation scalar.
template <class S> double value_of(const S& x) { return x.value(); }

template <class Derived> bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!std::isfinite(value_of(m.derived().coeff(i)))) return false;
    }
    return true;
}

/// Force and moment about the centre of buoyancy, both in body axes.
template <class S> struct WrenchT {
    Vec3T<S> force = Vec3T<S>::Zero();
    Vec3T<S> moment = Vec3T<S>::Zero();

    Vec6T<S> stacked() const {
        Vec6T<S> out;
        out << force, moment;
        return out;
    }

    static WrenchT from_stacked(const Vec6T<S>& v) {
        return WrenchT{v.template head<3>(), v.template tail<3>()};
    }

    WrenchT operator+(const WrenchT& o) const { return {force + o.force, moment + o.moment}; }
    WrenchT operator-(const WrenchT& o) const { return {force - o.force, moment - o.moment}; }
};

using Wrench = WrenchT<double>;

template <class S> WrenchT<S> operator*(const S& a, const WrenchT<S>& w) {
    return {w.force * a, w.moment * a};
}

inline Wrench operator*(double a, const Wrench& w) { return {a * w.force, a * w.moment}; }

}  // namespace blimp
