// In-memory trajectory records and references to individual one-step pairs.
#pragma once

#include "blimp/dynamics.hpp"

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace blimp {

/// (left level, right level, gondola offset) identifying one trial setting.
struct ConfigKey {
    int level_l = -1;  // -1 when unknown
    int level_r = -1;
    int dr_x_cm = 0;

    int level_sum() const { return level_l + level_r; }
    auto operator<=>(const ConfigKey&) const = default;
};

struct TrajectoryRecord {
    std::string id;
    ConfigKey config;
    double rate_hz = 60.0;
    std::vector<double> t;
    std::vector<State> x;
    std::vector<ControlInput> u;  // thrust in N
    bool has_velocity = true;     // false when nu was reconstructed from poses

    std::size_t size() const { return t.size(); }
    double dt() const { return 1.0 / rate_hz; }
    /// Throws RateError / InvalidArgument on broken invariants.
    void validate() const;
};

/// One-step pair (x[step], u[step]) -> x[step + 1] of a record.
struct StepRef {
    std::uint32_t record = 0;
    std::uint32_t step = 0;
    bool operator==(const StepRef&) const = default;
};

struct Pools {
    std::vector<StepRef> acm;
    std::vector<StepRef> gdm;
    std::vector<StepRef> transition;

    std::vector<StepRef>& of(Region r) { return r == Region::ACM ? acm : r == Region::GDM ? gdm : transition; }
    const std::vector<StepRef>& of(Region r) const {
        return r == Region::ACM ? acm : r == Region::GDM ? gdm : transition;
    }
    std::size_t total() const { return acm.size() + gdm.size() + transition.size(); }
};

}  // namespace blimp
