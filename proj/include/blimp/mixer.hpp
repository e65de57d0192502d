// Learned mixing coefficient lambda(alpha, V; xi): a 2-32-16-1 ReLU network
// with sigmoid output, and the anchor / monotonicity / smoothness penalties
// evaluated on fixed point sets.
#pragma once

#include "blimp/parallel.hpp"
#include "blimp/regime.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace blimp {

struct DenseLayer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
};

struct MixerParams {
    std::vector<DenseLayer> layers;
    double alpha_scale = 0.48;  // alpha2 by default
    double V_scale = 0.54;      // V2 by default

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    static MixerParams init(std::uint64_t seed, double alpha_scale = 0.48, double V_scale = 0.54,
                            std::span<const int> widths = kDefaultWidths);

    std::size_t param_count() const;
    /// Row-major W then b, layer by layer.
    std::vector<double> flatten() const;
    void assign(std::span<const double> values);
    /// Throws InvalidArgument on broken shapes or non-finite entries.
    void validate() const;

    static constexpr std::array<int, 4> kDefaultWidths = {2, 32, 16, 1};
};

/// Output clamp keeping lambda strictly inside (0, 1) in double precision.
inline constexpr double kLambdaLo = 0x1p-1022;
inline constexpr double kLambdaHi = 1.0 - 0x1p-53;

double lambda_eval(const MixerParams& xi, double alpha, double V);

struct LambdaInputGrad {
    double lambda = 0.0;
    double d_alpha = 0.0;
    double d_V = 0.0;
};

/// Hash of the ReLU on/off pattern at (alpha, V); finite differences are only
/// meaningful when it does not change across the stencil.
std::uint64_t activation_signature(const MixerParams& xi, double alpha, double V);

/// Lambda with its exact partials in alpha and V.
LambdaInputGrad lambda_input_grad(const MixerParams& xi, double alpha, double V);

/// Adds weight * d lambda / d xi into `grad` (flattened layout); returns lambda.
double lambda_backward(const MixerParams& xi, double alpha, double V, double weight, std::span<double> grad);

/// Regular lattice over [alpha_min, alpha_max] x [V_min, V_max]; node (i, j)
/// sits at index i * n_V + j with i running over alpha.
struct Lattice {
    double alpha_min = 0.0;
    double alpha_max = 1.0;
    int n_alpha = 21;
    double V_min = 0.0;
    double V_max = 1.0;
    int n_V = 21;

    double h_alpha() const { return (alpha_max - alpha_min) / (n_alpha - 1); }
    double h_V() const { return (V_max - V_min) / (n_V - 1); }
    double alpha_at(int i) const { return alpha_min + i * h_alpha(); }
    double V_at(int j) const { return V_min + j * h_V(); }
    std::size_t size() const { return static_cast<std::size_t>(n_alpha) * static_cast<std::size_t>(n_V); }
    void validate() const;
};

enum class MonoSign { prose, printed };

struct RegWeights {
    double anchor = 1.0;
    double mono = 1.0;
    double smooth = 0.1;
};

struct RegGrids {
    std::vector<std::array<double, 2>> acm_anchors;  // (alpha, V)
    std::vector<std::array<double, 2>> gdm_anchors;
    Lattice lattice;
    RegWeights weights;
    MonoSign sign = MonoSign::prose;
};

/// Point i of the 2-D Halton sequence (bases 2 and 3), i >= 1.
std::array<double, 2> halton2(std::size_t i);

/// Anchors: the first `n_anchor` Halton points of the observed box
/// [alpha_lo, alpha_hi] x [V_lo, V_hi] falling in each pure region.
/// Lattice: n_grid x n_grid over [0, alpha_hi] x [0, V_hi].
RegGrids make_reg_grids(const RegimePartition& part, double alpha_lo, double alpha_hi, double V_lo, double V_hi,
                        std::size_t n_anchor = 64, int n_grid = 21);

double anchor_loss(const MixerParams& xi, const RegGrids& grids);
double mono_loss(const MixerParams& xi, const RegGrids& grids);
double smooth_loss(const MixerParams& xi, const RegGrids& grids);

/// Finite-difference partials of a lattice surface: central inside, one-sided at the edges.
void lattice_partials(const Lattice& lat, std::span<const double> values, std::span<double> d_alpha,
                      std::span<double> d_V);
double mono_from_surface(const Lattice& lat, std::span<const double> values, MonoSign sign);
double smooth_from_surface(const Lattice& lat, std::span<const double> values);

struct RegTerms {
    double anchor = 0.0;
    double mono = 0.0;
    double smooth = 0.0;
    double weighted(const RegWeights& w) const { return w.anchor * anchor + w.mono * mono + w.smooth * smooth; }
};

/// Unweighted penalty values; adds `scale` times the gradient of the weighted
/// sum into `grad`.
RegTerms regularizer_grad(const MixerParams& xi, const RegGrids& grids, double scale, std::span<double> grad,
                          Exec exec = Exec::parallel);

struct SurfacePoint {
    double alpha;
    double V;
    double lambda;
};

/// Lambda sampled on every lattice node, alpha-major.
std::vector<SurfacePoint> lambda_surface(const MixerParams& xi, const Lattice& lat, Exec exec = Exec::parallel);
void write_lambda_csv(const std::filesystem::path& path, std::span<const SurfacePoint> rows);

/// Text serialization with a format tag and version.
std::string mixer_to_json(const MixerParams& xi);
MixerParams mixer_from_json(const std::string& text);
void save_mixer(const std::filesystem::path& path, const MixerParams& xi);
MixerParams load_mixer(const std::filesystem::path& path);

}  // namespace blimp
