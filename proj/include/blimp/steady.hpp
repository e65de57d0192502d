// Steady-flight analysis: aerodynamic wrench recovered from the dynamics
// residual, least-squares coefficient fits, switching-threshold selection,
// trim orbits and added-mass identification from motion onset.
#pragma once

#include "blimp/dynamics.hpp"
#include "blimp/records.hpp"

#include <optional>
#include <span>
#include <vector>

namespace blimp {

/// Aerodynamic wrench that balances the measured motion:
/// M nu_dot + (C_RB + C_A) nu - g - tau - F_bar, with g acting on the body.
/// With nu_dot = 0 this is the steady-flight balance.
Wrench steady_wrench(const State& x, const ControlInput& u, const PhysicalParams& p, const Vec6& nu_dot = Vec6::Zero());

struct SteadySample {
    std::string id;
    FlowState flow;
    State x;  // window mean (yaw taken from the window centre)
    ControlInput u;
    Wrench wrench;
    double window_start = 0.0;  // [s]
};

struct SteadyOptions {
    double window = 1.0;          // [s]
    double accel_ratio = 0.05;    // max |nu_dot| < ratio * |nu| per second
    double yaw_rate_var = 0.05;   // (max r - min r) / |mean r|
    double min_yaw_rate = 0.05;   // spirals only [rad/s]
    int diff_half_span = 7;       // nu_dot from samples k +/- span
};

/// At most one sample per record: the qualifying window with the smallest
/// peak acceleration ratio. The wrench is averaged over the window.
std::optional<SteadySample> extract_steady(const TrajectoryRecord& rec, const PhysicalParams& p,
                                           const SteadyOptions& opt = {});
std::vector<SteadySample> extract_steady(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                                         const SteadyOptions& opt = {}, Exec exec = Exec::parallel);

/// Left-right image of a steady sample.
SteadySample mirror_sample(const SteadySample& s);

enum class SteadyBasis { acm, gdm };

/// 6 x n regressor: column j is the model wrench with unit parameter j.
Eigen::MatrixXd regressor(const PhysicalParams& p, SteadyBasis basis, const Vec6& nu);

struct BinnedFit {
    std::vector<double> alpha_edges;
    std::vector<double> V_edges;
    /// Row-major (alpha bin, V bin); r2 is NaN when a cell is empty.
    std::vector<std::size_t> count;
    std::vector<double> rss;
    std::vector<double> r2;
};

struct OlsResult {
    std::vector<double> coeffs;  // AcmCoeffs::flatten or GdmCoeffs::flatten layout
    double rss = 0.0;
    double r2 = 0.0;  // uncentered, over all rows
    BinnedFit bins;
};

/// Least squares over the 6 wrench rows of every sample.
/// Throws RankDeficient (also when there are fewer rows than coefficients).
OlsResult ols_fit(std::span<const SteadySample> samples, const PhysicalParams& p, SteadyBasis basis,
                  int n_alpha_bins = 8, int n_V_bins = 8);

struct ThresholdScan {
    std::vector<double> edges;  // bin boundary preceding each evaluated bin
    std::vector<double> r2;     // out-of-sample uncentered R^2 of that bin
    double plateau = 0.0;
    double threshold = 0.0;
};

struct ThresholdOptions {
    double alpha_bin = 0.05;  // [rad]
    double V_bin = 0.05;      // [m/s]
    double drop = 0.8;        // fraction of the plateau
    std::size_t min_bin_samples = 3;
    double band = 0.2;
};

/// Expanding-window scan along alpha (ascending) or V (descending): fit the
/// coupling basis on the bins seen so far and score the next bin. The switch
/// point is the first edge where the score falls below drop * plateau.
/// Throws InsufficientCoverage when no drop is found or too few bins qualify.
ThresholdScan scan_alpha(std::span<const SteadySample> samples, const PhysicalParams& p,
                         const ThresholdOptions& opt = {});
ThresholdScan scan_V(std::span<const SteadySample> samples, const PhysicalParams& p, const ThresholdOptions& opt = {});

/// Alternates the two scans (V restricted to alpha < alpha*, then alpha to V > V*).
RegimePartition select_thresholds(std::span<const SteadySample> samples, const PhysicalParams& p,
                                  const ThresholdOptions& opt = {});

double reynolds(double V, double L, double rho = 1.225, double mu = 1.81e-5);

/// Constant-velocity orbit for fixed inputs: nu_dot = 0 and zero roll and
/// pitch rates. Newton iteration from `guess`; nullopt if it does not converge.
std::optional<State> find_trim(const ControlInput& u, const PhysicalParams& p, const LambdaPolicy& policy,
                               const State& guess, int max_iter = 60);

/// Diagonal added mass from the first `window` seconds of each record:
/// per axis, OLS of the unexplained wrench on nu_dot. Aerodynamics are
/// evaluated under `policy`.
Vec6 identify_added_mass(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                         const LambdaPolicy& policy, double window = 0.25);

}  // namespace blimp
