// Trajectory files, the public-dataset adapter, mirror augmentation, regime
// pools, stratified splitting and the JSON configuration.
#pragma once

#include "blimp/ident.hpp"
#include "blimp/records.hpp"

#include <array>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace blimp {

/// Canonical column order; the six velocity columns are optional.
inline constexpr std::array<const char*, 18> kTrajectoryColumns = {
    "t", "x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r",
    "Fl_gf", "Fr_gf", "rbar_x", "rbar_y", "rbar_z"};

/// Parses the canonical CSV (leading "# key: value" metadata lines allowed).
/// Throws ParseError with the line number, RateError on non-uniform sampling.
TrajectoryRecord parse_trajectory(std::istream& in, const std::string& fallback_id = "trajectory");
TrajectoryRecord load_trajectory(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const TrajectoryRecord& rec);
void save_trajectory(const std::filesystem::path& path, const TrajectoryRecord& rec);

/// Every *.csv under `dir`, sorted by file name.
std::vector<TrajectoryRecord> load_dataset(const std::filesystem::path& dir, Exec exec = Exec::parallel);
/// Writes <id>.csv for each record.
void save_dataset(const std::filesystem::path& dir, std::span<const TrajectoryRecord> recs);

/// Body velocities from poses: central differences of eta, then R^T for the
/// linear part and R_omega^-1 for the rates.
void reconstruct_velocities(TrajectoryRecord& rec);

struct ThrustMap {
    std::array<double, 9> gf = {0.0, 1.13, 2.06, 3.24, 4.59, 6.05, 7.57, 9.09, 10.61};

    double newtons(int level) const;
    /// Non-decreasing with level 0 at zero; throws InvalidArgument.
    void validate() const;
};

/// Adapter for externally released trajectories. Column names are matched
/// case-insensitively against aliases; thrust may be given as gf, N or PWM
/// level (mapped through `thrust`). Positions in millimetres are accepted
/// when the header says so ("x_mm").
TrajectoryRecord load_public_trajectory(const std::filesystem::path& path, const ThrustMap& thrust);
std::vector<TrajectoryRecord> load_public_dataset(const std::filesystem::path& dir, const ThrustMap& thrust,
                                                  Exec exec = Exec::parallel);

/// Left-right mirror image; applying it twice restores the record.
TrajectoryRecord mirror_trajectory(const TrajectoryRecord& rec);

/// Assigns every one-step pair to the pool of its starting flow state.
Pools partition_dataset(std::span<const TrajectoryRecord> records, const RegimePartition& part);

struct SplitSpec {
    int train_parts = 3;
    int test_parts = 1;
    bool stratify = true;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<std::size_t> train;  // record indices, ascending
    std::vector<std::size_t> test;
    /// True when some configuration had too few repeats and a global split was used.
    bool insufficient_repeats = false;
};

SplitResult split(std::span<const TrajectoryRecord> records, const SplitSpec& spec);

struct MixerConfig {
    std::vector<int> widths = {2, 32, 16, 1};
    std::optional<double> alpha_scale;  // default alpha2 of the partition
    std::optional<double> V_scale;      // default V2
    std::uint64_t seed = 1;
};

struct SimConfig {
    double dt = kDefaultDt;
    bool lambda_per_stage = false;
    double rbar_z = 0.15;           // gondola height below the CoB [m]
    double position_noise = 0.001;  // [m]
    double duration = 8.0;          // [s]
};

struct Config {
    PhysicalParams phys = default_params();
    LossConfig loss;
    std::optional<RegimePartition> partition;
    ThrustMap thrust;
    MixerConfig mixer;
    SimConfig sim;
};

/// Empty text means all defaults. Unknown keys raise SchemaError naming them.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
/// Full configuration, including the current physical parameters.
std::string config_to_json(const Config& cfg);

}  // namespace blimp
