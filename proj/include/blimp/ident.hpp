// Parameter identification: one-step prediction loss, exact gradients
// through the RK4 step, the three-phase trainer and the evaluation report.
#pragma once

#include "blimp/dynamics.hpp"
#include "blimp/mixer.hpp"
#include "blimp/parallel.hpp"
#include "blimp/records.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blimp {

enum class OptimizerKind { adam, sgd };
enum class GradMethod { autodiff, finite_difference };

struct LossConfig {
    Vec12 W = Vec12::Ones();
    // Weights are absolute multipliers of the summed penalties; see README.
    RegWeights reg_weights{1e-7, 1e-6, 1e-11};
    MonoSign mono_sign = MonoSign::prose;
    std::size_t n_anchor = 64;
    int n_grid = 21;
    std::size_t batch_size = 256;
    double lr_12 = 1e-3;
    double lr_3 = 1e-2;
    int epochs1 = 10;
    int epochs2 = 10;
    int epochs3 = 10;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    GradMethod grad_method = GradMethod::autodiff;
    /// Physical parameters are optimised as theta / max(|theta0|, floor).
    double scale_floor = 1e-3;

    void validate() const;
};

/// (1/n) ||W (pred - meas)||^2 for one state pair; angle errors are wrapped to (-pi, pi].
double step_error(const State& pred, const State& meas, const Vec12& W);

/// (1/N) sum_i (1/12) ||W (pred_i - meas_i)||^2. Throws LengthMismatch.
double model_loss(std::span<const State> pred, std::span<const State> meas, const Vec12& W);

/// Flat aerodynamic vector: ACM coefficients then GDM coefficients.
struct AeroLayout {
    std::size_t n_acm = 0;
    std::size_t n_gdm = GdmCoeffs::kParamCount;

    explicit AeroLayout(const PhysicalParams& p) : n_acm(p.acm.param_count()) {}
    std::size_t size() const { return n_acm + n_gdm; }
    std::vector<int> acm_indices() const;
    std::vector<int> gdm_indices() const;
    std::vector<int> all_indices() const;
};

std::vector<double> pack_aero(const PhysicalParams& p);
void unpack_aero(PhysicalParams& p, std::span<const double> theta);
std::vector<std::string> aero_param_names(const PhysicalParams& p);

/// One-step pairs with their cached mass factorisations.
class StepTable {
public:
    struct Item {
        const State* x0;
        const State* x1;
        const ControlInput* u;
        const MassModel* mm;
        Wrench tau;
        double dt;
    };

    StepTable(std::span<const TrajectoryRecord> records, const PhysicalParams& p, std::span<const StepRef> refs);

    std::size_t size() const { return items_.size(); }
    const Item& operator[](std::size_t i) const { return items_[i]; }

private:
    std::deque<MassModel> models_;
    std::vector<Item> items_;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // one entry per active index
};

/// Mean one-step loss over the batch at fixed lambda.
double physics_loss(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p, double lambda,
                    const Vec12& W, Exec exec = Exec::parallel);

/// Loss and its gradient with respect to the aerodynamic entries listed in
/// `active` (indices into pack_aero). Throws NonFiniteGradient.
LossGrad physics_loss_grad(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                           std::span<const int> active, double lambda, const Vec12& W,
                           GradMethod method = GradMethod::autodiff, Exec exec = Exec::parallel);

/// Local identifiability of the active block from Gauss-Newton curvature.
/// loss_rise[j] is the increase of the mean model loss caused by a relative
/// error `rel` in parameter j when all other active parameters re-adjust.
struct Identifiability {
    std::vector<int> active;
    std::vector<double> loss_rise;
    double floor = 0.0;  // mean model loss at p

    /// Entries whose loss rise is at least `ratio` times the loss floor.
    std::vector<bool> identifiable(double ratio) const;
};

Identifiability identifiability(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                                std::span<const int> active, double lambda, const Vec12& W, double rel = 0.05,
                                Exec exec = Exec::parallel);

struct MixerLoss {
    double model = 0.0;
    RegTerms reg;
    double total = 0.0;
    std::vector<double> grad;  // flattened mixer layout
};

/// L_total = L_model + weighted penalties (penalties skipped when grids is null).
MixerLoss mixer_loss(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                     const MixerParams& xi, const RegGrids* grids, const Vec12& W, bool want_grad,
                     GradMethod method = GradMethod::autodiff, Exec exec = Exec::parallel);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, std::span<const double> h);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
};

/// In-place update of z; plain SGD ignores the moment state.
void optimizer_step(OptimizerKind kind, AdamState& st, double lr, std::span<double> z, std::span<const double> g);

struct GradCheckOptions {
    std::size_t points = 50;  // random parameter points per phase
    std::size_t batch = 32;   // one-step pairs per point
    double tol = 1e-4;        // relative
    double abs_floor = 1e-7;
    double step = 1e-5;       // in normalised coordinates
    double perturb = 0.1;     // relative spread of the physical points
    std::uint64_t seed = 0;
    Exec exec = Exec::parallel;
};

struct GradCheckPhase {
    int phase = 0;
    std::size_t points = 0;
    std::size_t checked = 0;
    std::size_t kinks_skipped = 0;  // mixer coordinates whose stencil crossed a ReLU kink
    std::size_t failures = 0;
    double worst_rel = 0.0;
    bool ok() const { return failures == 0 && checked > 0; }
};

/// Gradient contract: analytic gradients against central differences of the
/// phase loss. Both sides are compared in normalised coordinates (theta / scale)
/// and divided by the loss at the point, so the absolute floor is scale free.
std::array<GradCheckPhase, 3> gradient_check(std::span<const TrajectoryRecord> records, const Pools& pools,
                                             const PhysicalParams& phys, const MixerParams& xi, const RegGrids& grids,
                                             const LossConfig& cfg, const GradCheckOptions& opt = {});

struct ParamChange {
    std::string name;
    double before = 0.0;
    double after = 0.0;
};

struct PhaseLog {
    std::size_t samples = 0;
    std::vector<double> epoch_loss;
};

struct RegionRmse {
    std::optional<double> acm;
    std::optional<double> gdm;
    std::optional<double> transition;
    std::optional<double> total;
    std::array<std::size_t, 3> counts{};  // ACM, GDM, Transition
};

struct FitReport {
    std::vector<ParamChange> params;
    std::array<PhaseLog, 3> phases;
    RegTerms reg;
    double final_model_loss = 0.0;
    double final_total_loss = 0.0;
    std::optional<RegionRmse> rmse;  // filled by evaluate on held-out data
};

struct TrainResult {
    PhysicalParams phys;
    MixerParams xi;
    RegGrids grids;
    FitReport report;
};

/// Observed (alpha, V) box of the listed steps with alpha clipped at 0.
struct FlowBox {
    double alpha_lo = 0.0, alpha_hi = 0.0, V_lo = 0.0, V_hi = 0.0;
};
FlowBox observed_box(std::span<const TrajectoryRecord> records, const Pools& pools);

/// Phase 1 (lambda = 0, ACM block, ACM pool), phase 2 (lambda = 1, GDM block,
/// GDM pool), phase 3 (mixer weights, transition pool, penalties).
/// Throws EmptyRegion if any pool is empty.
TrainResult three_phase_train(std::span<const TrajectoryRecord> records, const Pools& pools,
                              const PhysicalParams& phi0, const MixerParams& xi0, const RegimePartition& part,
                              const LossConfig& cfg, Exec exec = Exec::parallel);

/// Region RMSE sqrt(mean step_error) of one-step predictions, by region of the starting state.
RegionRmse one_step_rmse(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                         const LambdaPolicy& policy, const RegimePartition& part, const Vec12& W,
                         Exec exec = Exec::parallel);

struct EvalOptions {
    Vec12 W = Vec12::Ones();
    std::size_t n_curves = 3;  // trajectories with cumulative RMSE curves
    RolloutOptions rollout;
    Exec exec = Exec::parallel;
};

struct ModeReport {
    MixingMode mode = MixingMode::neural;
    RegionRmse one_step;
};

struct HeatCell {
    int level_sum = 0;
    int dr_x_cm = 0;
    double loss = 0.0;  // mean one-step loss
    std::size_t samples = 0;
};

struct CumulativeCurve {
    std::string id;
    MixingMode mode = MixingMode::neural;
    std::vector<double> linear;   // cumulative RMSE of (u, v, w)
    std::vector<double> angular;  // cumulative RMSE of (p, q, r)
    bool diverged = false;
};

struct EvalReport {
    std::vector<ModeReport> modes;
    std::map<MixingMode, std::vector<HeatCell>> heatmap;
    std::vector<CumulativeCurve> curves;
};

EvalReport evaluate(std::span<const TrajectoryRecord> records, const PhysicalParams& phys, const MixerParams* xi,
                    const RegimePartition& part, std::span<const MixingMode> modes, const EvalOptions& opt = {});

/// region_rmse.csv, heatmap.csv, cumulative_rmse.csv under `dir`.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& rep);
/// params.csv and loss_curves.csv under `dir`.
void write_fit_report(const std::filesystem::path& dir, const FitReport& rep);

}  // namespace blimp
