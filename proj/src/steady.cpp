#include "blimp/steady.hpp"

#include "blimp/errors.hpp"
#include "blimp/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace blimp {

Wrench steady_wrench(const State& x, const ControlInput& u, const PhysicalParams& p, const Vec6& nu_dot) {
    const Vec6 nu = x.tail<6>();
    MassModel mm(p, u);
    const Wrench g = gravity_buoyancy(p, u, attitude(x));
    const Wrench fb = gondola_reaction(p, u, nu);
    const Wrench tau = control_wrench(p, u);
    const Mat6 c = coriolis_matrix(p, u, nu) + added_mass_terms(p, nu).C;
    const Vec6 out = mm.matrix() * nu_dot + c * nu - g.stacked() - tau.stacked() - fb.stacked();
    return Wrench::from_stacked(out);
}

namespace {

std::vector<Vec6> velocity_derivative(const TrajectoryRecord& rec, int span) {
    const std::size_t n = rec.size();
    const double dt = rec.dt();
    std::vector<Vec6> out(n, Vec6::Constant(std::numeric_limits<double>::quiet_NaN()));
    const std::size_t h = static_cast<std::size_t>(std::max(span, 1));
    for (std::size_t k = h; k + h < n; ++k) {
        out[k] = (rec.x[k + h].tail<6>() - rec.x[k - h].tail<6>()) / (2.0 * static_cast<double>(h) * dt);
    }
    return out;
}

State mirror_state(State s) {
    for (int i : {1, 3, 5, 7, 9, 11}) s(i) = -s(i);
    return s;
}

}  // namespace

std::optional<SteadySample> extract_steady(const TrajectoryRecord& rec, const PhysicalParams& p,
                                           const SteadyOptions& opt) {
    const std::size_t n = rec.size();
    const std::size_t h = static_cast<std::size_t>(std::max(opt.diff_half_span, 1));
    const std::size_t w = static_cast<std::size_t>(std::lround(opt.window * rec.rate_hz));
    if (w < 2 || n < w + 2 * h) return std::nullopt;
    const std::vector<Vec6> nu_dot = velocity_derivative(rec, opt.diff_half_span);

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_start = 0;
    for (std::size_t s = h; s + w + h <= n; ++s) {
        double max_acc = 0.0, min_speed = std::numeric_limits<double>::infinity();
        double r_lo = std::numeric_limits<double>::infinity(), r_hi = -r_lo, r_sum = 0.0;
        for (std::size_t k = s; k < s + w; ++k) {
            max_acc = std::max(max_acc, nu_dot[k].norm());
            min_speed = std::min(min_speed, rec.x[k].tail<6>().norm());
            const double r = rec.x[k](11);
            r_lo = std::min(r_lo, r);
            r_hi = std::max(r_hi, r);
            r_sum += r;
        }
        const double r_mean = r_sum / static_cast<double>(w);
        if (!(min_speed > 0.0) || std::abs(r_mean) < opt.min_yaw_rate) continue;
        if ((r_hi - r_lo) / std::abs(r_mean) >= opt.yaw_rate_var) continue;
        const double score = max_acc / min_speed;
        if (score < opt.accel_ratio && score < best) {
            best = score;
            best_start = s;
        }
    }
    if (!std::isfinite(best)) return std::nullopt;

    SteadySample out;
    out.id = rec.id;
    out.window_start = rec.t[best_start] - rec.t.front();
    State mean = State::Zero();
    Vec6 wrench = Vec6::Zero();
    ControlInput um;
    um.r_bar.setZero();
    for (std::size_t k = best_start; k < best_start + w; ++k) {
        mean += rec.x[k];
        wrench += steady_wrench(rec.x[k], rec.u[k], p).stacked();
        um.Fl += rec.u[k].Fl;
        um.Fr += rec.u[k].Fr;
        um.r_bar += rec.u[k].r_bar;
    }
    const double inv = 1.0 / static_cast<double>(w);
    mean *= inv;
    mean(5) = rec.x[best_start + w / 2](5);
    um.Fl *= inv;
    um.Fr *= inv;
    um.r_bar *= inv;
    out.x = mean;
    out.u = um;
    out.wrench = Wrench::from_stacked(wrench * inv);
    out.flow = flow_of(mean);
    return out;
}

std::vector<SteadySample> extract_steady(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                                         const SteadyOptions& opt, Exec exec) {
    std::vector<std::optional<SteadySample>> slots(records.size());
    parallel_for(exec, records.size(), [&](std::size_t i) { slots[i] = extract_steady(records[i], p, opt); });
    std::vector<SteadySample> out;
    for (auto& s : slots) {
        if (s) out.push_back(std::move(*s));
    }
    return out;
}

SteadySample mirror_sample(const SteadySample& s) {
    SteadySample m = s;
    m.id = s.id + "_mirror";
    m.x = mirror_state(s.x);
    m.flow = flow_of(m.x);
    std::swap(m.u.Fl, m.u.Fr);
    m.u.r_bar.y() = -m.u.r_bar.y();
    m.wrench.force.y() = -m.wrench.force.y();
    m.wrench.moment.x() = -m.wrench.moment.x();
    m.wrench.moment.z() = -m.wrench.moment.z();
    return m;
}

Eigen::MatrixXd regressor(const PhysicalParams& p, SteadyBasis basis, const Vec6& nu) {
    // Both models are linear in their coefficients, so unit vectors give the columns.
    const std::size_t n = basis == SteadyBasis::acm ? p.acm.param_count() : GdmCoeffs::kParamCount;
    Eigen::MatrixXd x(6, static_cast<Eigen::Index>(n));
    std::vector<double> theta(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        theta[j] = 1.0;
        const std::span<const double> th(theta);
        const Wrench w = basis == SteadyBasis::acm ? acm_wrench_t<double>(p.acm, th, nu) : gdm_wrench_t<double>(th, nu);
        x.col(static_cast<Eigen::Index>(j)) = w.stacked();
        theta[j] = 0.0;
    }
    return x;
}

namespace {

struct Design {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
};

Design build_design(std::span<const SteadySample> samples, const PhysicalParams& p, SteadyBasis basis,
                    std::span<const std::size_t> idx) {
    const Eigen::Index cols = static_cast<Eigen::Index>(basis == SteadyBasis::acm ? p.acm.param_count()
                                                                                  : GdmCoeffs::kParamCount);
    Design d{Eigen::MatrixXd(6 * static_cast<Eigen::Index>(idx.size()), cols),
             Eigen::VectorXd(6 * static_cast<Eigen::Index>(idx.size()))};
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const SteadySample& s = samples[idx[r]];
        const Eigen::Index row = 6 * static_cast<Eigen::Index>(r);
        d.X.middleRows(row, 6) = regressor(p, basis, s.x.tail<6>());
        d.y.segment(row, 6) = s.wrench.stacked();
    }
    return d;
}

Eigen::VectorXd solve_ls(const Design& d) {
    const Eigen::Index cols = d.X.cols();
    if (d.X.rows() < cols) {
        throw Error(ErrorKind::RankDeficient, std::to_string(d.X.rows()) + " rows for " + std::to_string(cols) +
                                                  " coefficients");
    }
    // Column equilibration keeps the rank test meaningful across mixed units.
    Eigen::VectorXd scale = d.X.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < cols; ++j) {
        if (!(scale(j) > 0.0)) throw Error(ErrorKind::RankDeficient, "regressor column " + std::to_string(j) + " is zero");
    }
    const Eigen::MatrixXd xs = d.X * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < cols) {
        throw Error(ErrorKind::RankDeficient, "rank " + std::to_string(qr.rank()) + " < " + std::to_string(cols));
    }
    return qr.solve(d.y).cwiseQuotient(scale);
}

double uncentered_r2(double rss, double tss) {
    if (tss > 0.0) return 1.0 - rss / tss;
    return rss == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
}

std::vector<double> linspace_edges(double lo, double hi, int n) {
    if (!(hi > lo)) hi = lo + 1e-9;
    std::vector<double> e(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
    return e;
}

std::size_t bin_of(const std::vector<double>& edges, double v) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    const std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - edges.begin() - 1, 0));
    return std::min(k, edges.size() - 2);
}

}  // namespace

OlsResult ols_fit(std::span<const SteadySample> samples, const PhysicalParams& p, SteadyBasis basis, int n_alpha_bins,
                  int n_V_bins) {
    if (n_alpha_bins < 1 || n_V_bins < 1) throw Error(ErrorKind::InvalidArgument, "bin counts must be positive");
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Design d = build_design(samples, p, basis, idx);
    const Eigen::VectorXd c = solve_ls(d);
    const Eigen::VectorXd res = d.y - d.X * c;

    OlsResult out;
    out.coeffs.assign(c.data(), c.data() + c.size());
    out.rss = res.squaredNorm();
    out.r2 = uncentered_r2(out.rss, d.y.squaredNorm());

    double a_lo = std::numeric_limits<double>::infinity(), a_hi = -a_lo, v_lo = a_lo, v_hi = -a_lo;
    for (const auto& s : samples) {
        a_lo = std::min(a_lo, s.flow.alpha);
        a_hi = std::max(a_hi, s.flow.alpha);
        v_lo = std::min(v_lo, s.flow.V);
        v_hi = std::max(v_hi, s.flow.V);
    }
    BinnedFit& b = out.bins;
    b.alpha_edges = linspace_edges(a_lo, a_hi, n_alpha_bins);
    b.V_edges = linspace_edges(v_lo, v_hi, n_V_bins);
    const std::size_t cells = static_cast<std::size_t>(n_alpha_bins * n_V_bins);
    b.count.assign(cells, 0);
    b.rss.assign(cells, 0.0);
    std::vector<double> tss(cells, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::size_t cell = bin_of(b.alpha_edges, samples[i].flow.alpha) * static_cast<std::size_t>(n_V_bins) +
                                 bin_of(b.V_edges, samples[i].flow.V);
        b.count[cell] += 1;
        b.rss[cell] += res.segment(6 * static_cast<Eigen::Index>(i), 6).squaredNorm();
        tss[cell] += d.y.segment(6 * static_cast<Eigen::Index>(i), 6).squaredNorm();
    }
    b.r2.resize(cells);
    for (std::size_t c2 = 0; c2 < cells; ++c2) {
        b.r2[c2] = b.count[c2] ? uncentered_r2(b.rss[c2], tss[c2]) : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

namespace {

// Positions along the scan direction: alpha as is, V negated so both scans ascend.
ThresholdScan scan_axis(std::span<const SteadySample> samples, const PhysicalParams& p, const ThresholdOptions& opt,
                        bool along_V) {
    const double width = along_V ? opt.V_bin : opt.alpha_bin;
    if (!(width > 0.0)) throw Error(ErrorKind::InvalidArgument, "bin width must be positive");
    std::vector<std::pair<double, std::size_t>> pos;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        pos.push_back({along_V ? -samples[i].flow.V : samples[i].flow.alpha, i});
    }
    if (pos.empty()) throw Error(ErrorKind::InsufficientCoverage, "no steady samples");
    std::sort(pos.begin(), pos.end());
    const double start = std::floor(pos.front().first / width) * width;
    const int n_bins = static_cast<int>(std::floor((pos.back().first - start) / width)) + 1;

    ThresholdScan scan;
    double plateau = -std::numeric_limits<double>::infinity();
    std::optional<double> hit;
    std::vector<std::size_t> train;
    std::size_t cursor = 0;
    for (int k = 0; k < n_bins; ++k) {
        const double lo = start + k * width;
        const double hi = lo + width;
        std::vector<std::size_t> test;
        while (cursor < pos.size() && pos[cursor].first < hi) test.push_back(pos[cursor++].second);
        if (!train.empty() && test.size() >= opt.min_bin_samples) {
            try {
                const Design d = build_design(samples, p, SteadyBasis::acm, train);
                const Eigen::VectorXd c = solve_ls(d);
                const Design t = build_design(samples, p, SteadyBasis::acm, test);
                const double r2 = uncentered_r2((t.y - t.X * c).squaredNorm(), t.y.squaredNorm());
                const double edge = along_V ? -lo : lo;
                scan.edges.push_back(edge);
                scan.r2.push_back(r2);
                if (!hit && scan.r2.size() > 1 && r2 < opt.drop * plateau) {
                    hit = edge;
                    scan.plateau = plateau;
                }
                plateau = std::max(plateau, r2);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::RankDeficient) throw;
            }
        }
        train.insert(train.end(), test.begin(), test.end());
    }
    if (scan.r2.size() < 2) throw Error(ErrorKind::InsufficientCoverage, "fewer than two scorable bins");
    if (!hit) throw Error(ErrorKind::InsufficientCoverage, "goodness of fit never drops below the plateau fraction");
    scan.threshold = *hit;
    return scan;
}

}  // namespace

ThresholdScan scan_alpha(std::span<const SteadySample> samples, const PhysicalParams& p, const ThresholdOptions& opt) {
    return scan_axis(samples, p, opt, false);
}

ThresholdScan scan_V(std::span<const SteadySample> samples, const PhysicalParams& p, const ThresholdOptions& opt) {
    return scan_axis(samples, p, opt, true);
}

RegimePartition select_thresholds(std::span<const SteadySample> samples, const PhysicalParams& p,
                                  const ThresholdOptions& opt) {
    auto subset = [&](auto&& keep) {
        std::vector<SteadySample> out;
        for (const auto& s : samples) {
            if (keep(s)) out.push_back(s);
        }
        return out;
    };
    double a_star = scan_alpha(samples, p, opt).threshold;
    const auto low_alpha = subset([&](const SteadySample& s) { return s.flow.alpha < a_star; });
    const double v_star = scan_V(low_alpha, p, opt).threshold;
    const auto fast = subset([&](const SteadySample& s) { return s.flow.V > v_star; });
    try {
        a_star = scan_alpha(fast, p, opt).threshold;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::InsufficientCoverage) throw;
        log_info("alpha rescan on fast samples inconclusive; keeping the first estimate");
    }
    return RegimePartition::from_switch_points(a_star, v_star, opt.band);
}

double reynolds(double V, double L, double rho, double mu) {
    if (!(mu > 0.0)) throw Error(ErrorKind::InvalidArgument, "viscosity must be positive");
    return rho * V * L / mu;
}

std::optional<State> find_trim(const ControlInput& u, const PhysicalParams& p, const LambdaPolicy& policy,
                               const State& guess, int max_iter) {
    policy.validate();
    const MassModel mm(p, u);
    const Wrench tau = control_wrench(p, u);
    const AeroTheta th = aero_theta(p);
    using Vec8 = Eigen::Matrix<double, 8, 1>;
    auto to_state = [&](const Vec8& z) {
        State x = guess;
        x(3) = z(0);
        x(4) = z(1);
        x.tail<6>() = z.tail<6>();
        return x;
    };
    auto residual = [&](const Vec8& z) {
        const State x = to_state(z);
        const State dx = hybrid_derivative_t<double>(x, u, p, mm, tau, th, policy(x));
        Vec8 r;
        r << dx(3), dx(4), dx.tail<6>();
        return r;
    };
    Vec8 z;
    z << guess(3), guess(4), guess.tail<6>();
    Vec8 r = residual(z);
    for (int it = 0; it < max_iter; ++it) {
        if (!r.allFinite()) return std::nullopt;
        if (r.norm() < 1e-13) return to_state(z);
        Eigen::Matrix<double, 8, 8> jac;
        for (int j = 0; j < 8; ++j) {
            const double h = 1e-7 * std::max(1.0, std::abs(z(j)));
            Vec8 zp = z, zm = z;
            zp(j) += h;
            zm(j) -= h;
            jac.col(j) = (residual(zp) - residual(zm)) / (2.0 * h);
        }
        const Vec8 step = jac.colPivHouseholderQr().solve(-r);
        double t = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            const Vec8 zn = z + t * step;
            if (std::abs(zn(1)) >= 1.4) continue;
            const Vec8 rn = residual(zn);
            if (rn.allFinite() && rn.norm() < r.norm()) {
                z = zn;
                r = rn;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    if (r.norm() < 1e-10) return to_state(z);
    return std::nullopt;
}

Vec6 identify_added_mass(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                         const LambdaPolicy& policy, double window) {
    policy.validate();
    Vec6 num = Vec6::Zero(), den = Vec6::Zero();
    for (const auto& rec : records) {
        const std::size_t n = rec.size();
        const double dt = rec.dt();
        for (std::size_t k = 1; k + 1 < n && rec.t[k] - rec.t.front() <= window; ++k) {
            const State& x = rec.x[k];
            const ControlInput& u = rec.u[k];
            const Vec6 nu = x.tail<6>();
            const Vec6 nu_dot = (rec.x[k + 1].tail<6>() - rec.x[k - 1].tail<6>()) / (2.0 * dt);
            const Wrench aero = blend(acm_wrench(p.acm, nu), gdm_wrench(p.gdm, nu), policy(x));
            // C_A is left out: it is quadratic in nu and negligible right after onset.
            const Vec6 y = control_wrench(p, u).stacked() + gondola_reaction(p, u, nu).stacked() +
                           gravity_buoyancy(p, u, attitude(x)).stacked() - coriolis_matrix(p, u, nu) * nu +
                           aero.stacked() - mass_matrix(p, u) * nu_dot;
            num += y.cwiseProduct(nu_dot);
            den += nu_dot.cwiseAbs2();
        }
    }
    Vec6 out = p.added_mass;
    for (int i = 0; i < 6; ++i) {
        if (den(i) > 0.0) out(i) = num(i) / den(i);
        if (out(i) < 0.0) {
            log_warn("added-mass axis " + std::to_string(i) + " estimated negative; clamped to zero");
            out(i) = 0.0;
        }
    }
    return out;
}

}  // namespace blimp
