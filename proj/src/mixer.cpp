#include "blimp/mixer.hpp"

#include "blimp/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace blimp {

MixerParams MixerParams::init(std::uint64_t seed, double alpha_scale, double V_scale, std::span<const int> widths) {
    if (widths.size() < 2 || widths.front() != 2 || widths.back() != 1) {
        throw Error(ErrorKind::InvalidArgument, "mixer widths must start at 2 and end at 1");
    }
    MixerParams xi;
    xi.alpha_scale = alpha_scale;
    xi.V_scale = V_scale;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer;
        layer.W.resize(out, in);
        layer.b.resize(out);
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) layer.W(r, c) = dist(rng);
        }
        for (int r = 0; r < out; ++r) layer.b(r) = dist(rng);
        xi.layers.push_back(std::move(layer));
    }
    return xi;
}

std::size_t MixerParams::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
}

std::vector<double> MixerParams::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& l : layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) out.push_back(l.W(r, c));
        }
        for (Eigen::Index r = 0; r < l.b.size(); ++r) out.push_back(l.b(r));
    }
    return out;
}

void MixerParams::assign(std::span<const double> values) {
    if (values.size() != param_count()) throw Error(ErrorKind::InvalidArgument, "mixer parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = values[k++];
        }
        for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = values[k++];
    }
}

void MixerParams::validate() const {
    if (layers.empty()) throw Error(ErrorKind::InvalidArgument, "mixer has no layers");
    Eigen::Index in = 2;
    for (const auto& l : layers) {
        if (l.W.cols() != in || l.b.size() != l.W.rows()) throw Error(ErrorKind::InvalidArgument, "mixer layer shapes");
        if (!l.W.allFinite() || !l.b.allFinite()) throw Error(ErrorKind::InvalidArgument, "mixer weights not finite");
        in = l.W.rows();
    }
    if (in != 1) throw Error(ErrorKind::InvalidArgument, "mixer output must be scalar");
    if (!(alpha_scale > 0.0) || !(V_scale > 0.0)) throw Error(ErrorKind::InvalidArgument, "mixer input scales");
}

namespace {

struct Forward {
    std::vector<Eigen::VectorXd> act;  // act[0] = normalized input, act[l+1] = output of layer l
    double z = 0.0;                    // pre-sigmoid output
    double sig = 0.0;                  // unclamped sigmoid
};

Forward forward(const MixerParams& xi, double alpha, double V) {
    Forward f;
    f.act.reserve(xi.layers.size());
    Eigen::VectorXd a(2);
    a << alpha / xi.alpha_scale, V / xi.V_scale;
    f.act.push_back(a);
    const std::size_t last = xi.layers.size() - 1;
    for (std::size_t l = 0; l < last; ++l) {
        Eigen::VectorXd z = xi.layers[l].W * f.act.back() + xi.layers[l].b;
        f.act.push_back(z.cwiseMax(0.0));
    }
    f.z = (xi.layers[last].W * f.act.back())(0) + xi.layers[last].b(0);
    f.sig = sigmoid(f.z);
    return f;
}

double clamp_lambda(double s) { return std::clamp(s, kLambdaLo, kLambdaHi); }

}  // namespace

double lambda_eval(const MixerParams& xi, double alpha, double V) { return clamp_lambda(forward(xi, alpha, V).sig); }

std::uint64_t activation_signature(const MixerParams& xi, double alpha, double V) {
    const Forward f = forward(xi, alpha, V);
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (std::size_t l = 1; l < f.act.size(); ++l) {
        for (Eigen::Index k = 0; k < f.act[l].size(); ++k) {
            h ^= f.act[l](k) > 0.0 ? 1u : 0u;
            h *= 1099511628211ull;
        }
    }
    return h;
}

LambdaInputGrad lambda_input_grad(const MixerParams& xi, double alpha, double V) {
    const Forward f = forward(xi, alpha, V);
    const std::size_t last = xi.layers.size() - 1;
    Eigen::VectorXd delta = xi.layers[last].W.row(0).transpose() * (f.sig * (1.0 - f.sig));
    for (std::size_t l = last; l-- > 0;) {
        // ReLU mask of layer l output, then through its weights.
        const Eigen::VectorXd& a = f.act[l + 1];
        for (Eigen::Index k = 0; k < delta.size(); ++k) {
            if (!(a(k) > 0.0)) delta(k) = 0.0;
        }
        delta = xi.layers[l].W.transpose() * delta;
    }
    return {clamp_lambda(f.sig), delta(0) / xi.alpha_scale, delta(1) / xi.V_scale};
}

double lambda_backward(const MixerParams& xi, double alpha, double V, double weight, std::span<double> grad) {
    const Forward f = forward(xi, alpha, V);
    const std::size_t n = xi.layers.size();
    std::vector<std::size_t> offset(n);
    std::size_t k = 0;
    for (std::size_t l = 0; l < n; ++l) {
        offset[l] = k;
        k += static_cast<std::size_t>(xi.layers[l].W.size() + xi.layers[l].b.size());
    }
    Eigen::VectorXd delta(1);
    delta(0) = weight * f.sig * (1.0 - f.sig);
    for (std::size_t l = n; l-- > 0;) {
        const DenseLayer& L = xi.layers[l];
        const Eigen::VectorXd& in = f.act[l];
        std::size_t o = offset[l];
        for (Eigen::Index r = 0; r < L.W.rows(); ++r) {
            for (Eigen::Index c = 0; c < L.W.cols(); ++c) grad[o++] += delta(r) * in(c);
        }
        for (Eigen::Index r = 0; r < L.b.size(); ++r) grad[o++] += delta(r);
        if (l == 0) break;
        Eigen::VectorXd back = L.W.transpose() * delta;
        for (Eigen::Index c = 0; c < back.size(); ++c) {
            if (!(in(c) > 0.0)) back(c) = 0.0;
        }
        delta = std::move(back);
    }
    return clamp_lambda(f.sig);
}

void Lattice::validate() const {
    if (n_alpha < 2 || n_V < 2 || !(alpha_max > alpha_min) || !(V_max > V_min)) {
        throw Error(ErrorKind::InvalidArgument, "lattice needs at least 2x2 nodes and positive spacing");
    }
}

std::array<double, 2> halton2(std::size_t i) {
    auto radical = [](std::size_t n, std::size_t base) {
        double f = 1.0, r = 0.0;
        while (n > 0) {
            f /= static_cast<double>(base);
            r += f * static_cast<double>(n % base);
            n /= base;
        }
        return r;
    };
    return {radical(i, 2), radical(i, 3)};
}

RegGrids make_reg_grids(const RegimePartition& part, double alpha_lo, double alpha_hi, double V_lo, double V_hi,
                        std::size_t n_anchor, int n_grid) {
    RegGrids g;
    const std::size_t max_draws = 200000;
    for (std::size_t i = 1; i <= max_draws && (g.acm_anchors.size() < n_anchor || g.gdm_anchors.size() < n_anchor);
         ++i) {
        const auto h = halton2(i);
        const double a = alpha_lo + h[0] * (alpha_hi - alpha_lo);
        const double v = V_lo + h[1] * (V_hi - V_lo);
        const Region r = classify_regime(part, a, v);
        if (r == Region::ACM && g.acm_anchors.size() < n_anchor) g.acm_anchors.push_back({a, v});
        if (r == Region::GDM && g.gdm_anchors.size() < n_anchor) g.gdm_anchors.push_back({a, v});
    }
    if (g.acm_anchors.empty() || g.gdm_anchors.empty()) {
        throw Error(ErrorKind::EmptyAnchorSet, "observed (alpha, V) box does not reach both pure regions");
    }
    g.lattice = Lattice{0.0, alpha_hi, n_grid, 0.0, V_hi, n_grid};
    g.lattice.validate();
    return g;
}

void lattice_partials(const Lattice& lat, std::span<const double> values, std::span<double> d_alpha,
                      std::span<double> d_V) {
    const int na = lat.n_alpha, nv = lat.n_V;
    const double ha = lat.h_alpha(), hv = lat.h_V();
    auto at = [&](int i, int j) { return values[static_cast<std::size_t>(i) * nv + j]; };
    for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nv; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * nv + j;
            if (i == 0) d_alpha[k] = (at(1, j) - at(0, j)) / ha;
            else if (i == na - 1) d_alpha[k] = (at(na - 1, j) - at(na - 2, j)) / ha;
            else d_alpha[k] = (at(i + 1, j) - at(i - 1, j)) / (2.0 * ha);
            if (j == 0) d_V[k] = (at(i, 1) - at(i, 0)) / hv;
            else if (j == nv - 1) d_V[k] = (at(i, nv - 1) - at(i, nv - 2)) / hv;
            else d_V[k] = (at(i, j + 1) - at(i, j - 1)) / (2.0 * hv);
        }
    }
}

namespace {

// Transpose of lattice_partials: accumulates g_alpha, g_V into d/d(values).
void lattice_partials_adjoint(const Lattice& lat, std::span<const double> g_alpha, std::span<const double> g_V,
                              std::span<double> g_values) {
    const int na = lat.n_alpha, nv = lat.n_V;
    const double ha = lat.h_alpha(), hv = lat.h_V();
    auto idx = [&](int i, int j) { return static_cast<std::size_t>(i) * nv + j; };
    for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nv; ++j) {
            const std::size_t k = idx(i, j);
            const double ga = g_alpha[k], gv = g_V[k];
            if (i == 0) {
                g_values[idx(1, j)] += ga / ha;
                g_values[idx(0, j)] -= ga / ha;
            } else if (i == na - 1) {
                g_values[idx(na - 1, j)] += ga / ha;
                g_values[idx(na - 2, j)] -= ga / ha;
            } else {
                g_values[idx(i + 1, j)] += ga / (2.0 * ha);
                g_values[idx(i - 1, j)] -= ga / (2.0 * ha);
            }
            if (j == 0) {
                g_values[idx(i, 1)] += gv / hv;
                g_values[idx(i, 0)] -= gv / hv;
            } else if (j == nv - 1) {
                g_values[idx(i, nv - 1)] += gv / hv;
                g_values[idx(i, nv - 2)] -= gv / hv;
            } else {
                g_values[idx(i, j + 1)] += gv / (2.0 * hv);
                g_values[idx(i, j - 1)] -= gv / (2.0 * hv);
            }
        }
    }
}

// Penalised part of each partial: the "wrong-direction" component.
struct MonoParts {
    double a;  // violating part of d_alpha (signed)
    double v;
};

MonoParts mono_violation(double da, double dv, MonoSign sign) {
    if (sign == MonoSign::prose) return {std::min(0.0, da), std::max(0.0, dv)};
    return {std::max(0.0, da), std::min(0.0, dv)};
}

std::vector<double> surface_values(const MixerParams& xi, const Lattice& lat, Exec exec) {
    std::vector<double> vals(lat.size());
    parallel_for(exec, lat.size(), [&](std::size_t k) {
        const int i = static_cast<int>(k / lat.n_V), j = static_cast<int>(k % lat.n_V);
        vals[k] = lambda_eval(xi, lat.alpha_at(i), lat.V_at(j));
    });
    return vals;
}

void require_anchors(const RegGrids& g) {
    if (g.acm_anchors.empty() || g.gdm_anchors.empty()) throw Error(ErrorKind::EmptyAnchorSet, "anchor sets");
}

}  // namespace

double mono_from_surface(const Lattice& lat, std::span<const double> values, MonoSign sign) {
    lat.validate();
    std::vector<double> da(lat.size()), dv(lat.size());
    lattice_partials(lat, values, da, dv);
    double acc = 0.0;
    for (std::size_t k = 0; k < lat.size(); ++k) {
        const MonoParts m = mono_violation(da[k], dv[k], sign);
        acc += m.a * m.a + m.v * m.v;
    }
    return acc;
}

double smooth_from_surface(const Lattice& lat, std::span<const double> values) {
    lat.validate();
    std::vector<double> da(lat.size()), dv(lat.size());
    lattice_partials(lat, values, da, dv);
    double acc = 0.0;
    for (std::size_t k = 0; k < lat.size(); ++k) acc += da[k] * da[k] + dv[k] * dv[k];
    return acc;
}

double anchor_loss(const MixerParams& xi, const RegGrids& g) {
    require_anchors(g);
    double acc = 0.0;
    for (const auto& p : g.acm_anchors) {
        const double l = lambda_eval(xi, p[0], p[1]);
        acc += l * l;
    }
    for (const auto& p : g.gdm_anchors) {
        const double l = lambda_eval(xi, p[0], p[1]) - 1.0;
        acc += l * l;
    }
    return acc;
}

double mono_loss(const MixerParams& xi, const RegGrids& g) {
    return mono_from_surface(g.lattice, surface_values(xi, g.lattice, Exec::serial), g.sign);
}

double smooth_loss(const MixerParams& xi, const RegGrids& g) {
    return smooth_from_surface(g.lattice, surface_values(xi, g.lattice, Exec::serial));
}

RegTerms regularizer_grad(const MixerParams& xi, const RegGrids& g, double scale, std::span<double> grad, Exec exec) {
    require_anchors(g);
    const Lattice& lat = g.lattice;
    lat.validate();
    const std::size_t np = xi.param_count();
    if (grad.size() != np) throw Error(ErrorKind::InvalidArgument, "gradient buffer size");

    const std::vector<double> vals = surface_values(xi, lat, exec);
    const std::size_t n = lat.size();
    std::vector<double> da(n), dv(n);
    lattice_partials(lat, vals, da, dv);

    RegTerms t;
    std::vector<double> ga(n), gv(n);
    for (std::size_t k = 0; k < n; ++k) {
        const MonoParts m = mono_violation(da[k], dv[k], g.sign);
        t.mono += m.a * m.a + m.v * m.v;
        t.smooth += da[k] * da[k] + dv[k] * dv[k];
        ga[k] = 2.0 * (g.weights.mono * m.a + g.weights.smooth * da[k]);
        gv[k] = 2.0 * (g.weights.mono * m.v + g.weights.smooth * dv[k]);
    }
    std::vector<double> g_vals(n, 0.0);
    lattice_partials_adjoint(lat, ga, gv, g_vals);

    // Every point that feeds lambda: lattice nodes, then ACM and GDM anchors.
    const std::size_t na = g.acm_anchors.size(), ng = g.gdm_anchors.size();
    const std::size_t total = n + na + ng;
    std::vector<double> slots(total * np, 0.0);
    std::vector<double> anchor_terms(na + ng, 0.0);
    parallel_for(exec, total, [&](std::size_t k) {
        std::span<double> slot(slots.data() + k * np, np);
        if (k < n) {
            if (g_vals[k] == 0.0) return;
            const int i = static_cast<int>(k / lat.n_V), j = static_cast<int>(k % lat.n_V);
            lambda_backward(xi, lat.alpha_at(i), lat.V_at(j), scale * g_vals[k], slot);
            return;
        }
        const std::size_t a = k - n;
        const bool acm = a < na;
        const auto& p = acm ? g.acm_anchors[a] : g.gdm_anchors[a - na];
        const double l = lambda_eval(xi, p[0], p[1]);
        const double r = acm ? l : l - 1.0;
        anchor_terms[a] = r * r;
        lambda_backward(xi, p[0], p[1], scale * g.weights.anchor * 2.0 * r, slot);
    });
    for (double v : anchor_terms) t.anchor += v;
    for (std::size_t k = 0; k < total; ++k) {
        const double* s = slots.data() + k * np;
        for (std::size_t q = 0; q < np; ++q) grad[q] += s[q];
    }
    return t;
}

std::vector<SurfacePoint> lambda_surface(const MixerParams& xi, const Lattice& lat, Exec exec) {
    lat.validate();
    std::vector<SurfacePoint> rows(lat.size());
    parallel_for(exec, lat.size(), [&](std::size_t k) {
        const int i = static_cast<int>(k / lat.n_V), j = static_cast<int>(k % lat.n_V);
        const double a = lat.alpha_at(i), v = lat.V_at(j);
        rows[k] = {a, v, lambda_eval(xi, a, v)};
    });
    return rows;
}

void write_lambda_csv(const std::filesystem::path& path, std::span<const SurfacePoint> rows) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << "alpha,V,lambda\n";
    out.precision(17);
    for (const auto& r : rows) out << r.alpha << ',' << r.V << ',' << r.lambda << '\n';
}

std::string mixer_to_json(const MixerParams& xi) {
    nlohmann::json j;
    j["format"] = "blimp-mixer";
    j["version"] = 1;
    j["alpha_scale"] = xi.alpha_scale;
    j["V_scale"] = xi.V_scale;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : xi.layers) {
        nlohmann::json W = nlohmann::json::array();
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            std::vector<double> row(l.W.cols());
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) row[c] = l.W(r, c);
            W.push_back(row);
        }
        layers.push_back({{"W", W}, {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
    }
    j["layers"] = layers;
    return j.dump(1);
}

MixerParams mixer_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, std::string("mixer file: ") + e.what());
    }
    try {
        if (j.at("format") != "blimp-mixer" || j.at("version") != 1) {
            throw Error(ErrorKind::SchemaError, "unsupported mixer format or version");
        }
        MixerParams xi;
        xi.alpha_scale = j.at("alpha_scale").get<double>();
        xi.V_scale = j.at("V_scale").get<double>();
        for (const auto& jl : j.at("layers")) {
            const auto rows = jl.at("W").get<std::vector<std::vector<double>>>();
            const auto b = jl.at("b").get<std::vector<double>>();
            DenseLayer l;
            const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
            const Eigen::Index nc = nr > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
            l.W.resize(nr, nc);
            for (Eigen::Index r = 0; r < nr; ++r) {
                if (static_cast<Eigen::Index>(rows[r].size()) != nc) throw Error(ErrorKind::SchemaError, "ragged W");
                for (Eigen::Index c = 0; c < nc; ++c) l.W(r, c) = rows[r][c];
            }
            l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
            xi.layers.push_back(std::move(l));
        }
        xi.validate();
        return xi;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("mixer file: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidArgument) throw Error(ErrorKind::SchemaError, e.message());
        throw;
    }
}

void save_mixer(const std::filesystem::path& path, const MixerParams& xi) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << mixer_to_json(xi) << '\n';
}

MixerParams load_mixer(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return mixer_from_json(ss.str());
}

}  // namespace blimp
