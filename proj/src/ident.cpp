#include "blimp/ident.hpp"

#include "blimp/autodiff.hpp"
#include "blimp/errors.hpp"
#include "blimp/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace blimp {

void LossConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
    if ((W.array() < 0.0).any() || !W.allFinite()) fail("W entries must be finite and nonnegative");
    if (!(lr_12 > 0.0) || !(lr_3 > 0.0)) fail("learning rates must be positive");
    if (epochs1 < 0 || epochs2 < 0 || epochs3 < 0) fail("epochs must be nonnegative");
    if (batch_size == 0) fail("batch_size must be positive");
    if (reg_weights.anchor < 0.0 || reg_weights.mono < 0.0 || reg_weights.smooth < 0.0) fail("penalty weights");
    if (n_anchor == 0) fail("n_anchor must be positive");
    if (n_grid < 2) fail("n_grid must be at least 2");
    if (!(scale_floor > 0.0)) fail("scale_floor must be positive");
}

namespace {

double wrap_angle(double e) { return std::remainder(e, 2.0 * kPi); }

bool is_angle(int k) { return k >= 3 && k <= 5; }

}  // namespace

double step_error(const State& pred, const State& meas, const Vec12& W) {
    double acc = 0.0;
    for (int k = 0; k < 12; ++k) {
        double e = pred(k) - meas(k);
        if (is_angle(k)) e = wrap_angle(e);
        const double we = W(k) * e;
        acc += we * we;
    }
    return acc / 12.0;
}

double model_loss(std::span<const State> pred, std::span<const State> meas, const Vec12& W) {
    if (pred.size() != meas.size()) {
        throw Error(ErrorKind::LengthMismatch,
                    "prediction has " + std::to_string(pred.size()) + " samples, measurement " +
                        std::to_string(meas.size()));
    }
    if (pred.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += step_error(pred[i], meas[i], W);
    return acc / static_cast<double>(pred.size());
}

std::vector<int> AeroLayout::acm_indices() const {
    std::vector<int> v(n_acm);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<int> AeroLayout::gdm_indices() const {
    std::vector<int> v(n_gdm);
    std::iota(v.begin(), v.end(), static_cast<int>(n_acm));
    return v;
}

std::vector<int> AeroLayout::all_indices() const {
    std::vector<int> v(size());
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<double> pack_aero(const PhysicalParams& p) {
    std::vector<double> out = p.acm.flatten();
    const std::vector<double> g = p.gdm.flatten();
    out.insert(out.end(), g.begin(), g.end());
    return out;
}

void unpack_aero(PhysicalParams& p, std::span<const double> theta) {
    const std::size_t na = p.acm.param_count();
    if (theta.size() != na + GdmCoeffs::kParamCount) throw Error(ErrorKind::InvalidArgument, "aero vector size");
    p.acm.assign(theta.first(na));
    p.gdm.assign(theta.subspan(na));
}

std::vector<std::string> aero_param_names(const PhysicalParams& p) {
    std::vector<std::string> names = p.acm.param_names();
    const auto g = GdmCoeffs::param_names();
    names.insert(names.end(), g.begin(), g.end());
    return names;
}

StepTable::StepTable(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                     std::span<const StepRef> refs) {
    items_.reserve(refs.size());
    // Most trials keep the gondola fixed, so one factorisation per record suffices.
    std::vector<int> last_model(records.size(), -1);
    std::vector<Vec3> last_rbar(records.size());
    for (const StepRef& r : refs) {
        if (r.record >= records.size()) throw Error(ErrorKind::InvalidArgument, "step reference past record list");
        const TrajectoryRecord& rec = records[r.record];
        if (r.step + 1 >= rec.size()) throw Error(ErrorKind::InvalidArgument, "step reference past record end");
        const ControlInput& u = rec.u[r.step];
        int& idx = last_model[r.record];
        if (idx < 0 || last_rbar[r.record] != u.r_bar) {
            models_.emplace_back(p, u);
            idx = static_cast<int>(models_.size()) - 1;
            last_rbar[r.record] = u.r_bar;
        }
        items_.push_back(
            {&rec.x[r.step], &rec.x[r.step + 1], &u, &models_[static_cast<std::size_t>(idx)], control_wrench(p, u), rec.dt()});
    }
}

double physics_loss(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p, double lambda,
                    const Vec12& W, Exec exec) {
    if (batch.empty()) return 0.0;
    const AeroTheta th = aero_theta(p);
    std::vector<double> slot(batch.size());
    parallel_for(exec, batch.size(), [&](std::size_t i) {
        const auto& it = tab[batch[i]];
        const State y = hybrid_step_t<double>(*it.x0, *it.u, p, *it.mm, it.tau, th, lambda, it.dt);
        slot[i] = step_error(y, *it.x1, W);
    });
    double acc = 0.0;
    for (double v : slot) acc += v;
    return acc / static_cast<double>(batch.size());
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, std::span<const double> h) {
    std::vector<double> g(x.size());
    std::vector<double> xp(x.begin(), x.end());
    for (std::size_t j = 0; j < x.size(); ++j) {
        xp[j] = x[j] + h[j];
        const double fp = f(xp);
        xp[j] = x[j] - h[j];
        const double fm = f(xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h[j]);
    }
    return g;
}

namespace {

void check_finite(const std::vector<double>& g, const char* what) {
    for (double v : g) {
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteGradient, what);
    }
}

LossGrad physics_grad_fd(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                         std::span<const int> active, double lambda, const Vec12& W, Exec exec) {
    const std::vector<double> theta = pack_aero(p);
    std::vector<double> x(active.size()), h(active.size());
    for (std::size_t j = 0; j < active.size(); ++j) {
        x[j] = theta[static_cast<std::size_t>(active[j])];
        h[j] = 1e-6 * std::max(std::abs(x[j]), 1e-3);
    }
    PhysicalParams work = p;
    std::vector<double> full = theta;
    auto f = [&](std::span<const double> z) {
        for (std::size_t j = 0; j < active.size(); ++j) full[static_cast<std::size_t>(active[j])] = z[j];
        unpack_aero(work, full);
        return physics_loss(tab, batch, work, lambda, W, exec);
    };
    LossGrad out;
    out.grad = central_difference(f, x, h);
    out.loss = physics_loss(tab, batch, p, lambda, W, exec);
    return out;
}

}  // namespace

LossGrad physics_loss_grad(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                           std::span<const int> active, double lambda, const Vec12& W, GradMethod method,
                           Exec exec) {
    const std::size_t na = active.size();
    LossGrad out;
    if (batch.empty()) {
        out.grad.assign(na, 0.0);
        return out;
    }
    if (method == GradMethod::finite_difference || na > static_cast<std::size_t>(kMaxAdDirections)) {
        out = physics_grad_fd(tab, batch, p, active, lambda, W, exec);
        check_finite(out.grad, "physics gradient");
        return out;
    }
    const std::vector<double> theta = pack_aero(p);
    const std::size_t n_acm = p.acm.param_count();
    std::vector<Ad> seeded(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) seeded[k] = Ad(theta[k]);
    for (std::size_t j = 0; j < na; ++j) seeded[static_cast<std::size_t>(active[j])].derivatives()(static_cast<int>(j)) = 1.0;
    AeroThetaT<Ad> th;
    th.acm.assign(seeded.begin(), seeded.begin() + static_cast<std::ptrdiff_t>(n_acm));
    th.gdm.assign(seeded.begin() + static_cast<std::ptrdiff_t>(n_acm), seeded.end());
    const Ad lam(lambda);

    using Grad = Eigen::Matrix<double, kMaxAdDirections, 1>;
    std::vector<double> loss(batch.size());
    std::vector<Grad> grads(batch.size());
    parallel_for(exec, batch.size(), [&](std::size_t i) {
        const auto& it = tab[batch[i]];
        const Vec12T<Ad> x0 = it.x0->cast<Ad>();
        const Vec12T<Ad> y = hybrid_step_t<Ad>(x0, *it.u, p, *it.mm, it.tau, th, lam, it.dt);
        double l = 0.0;
        Grad g = Grad::Zero();
        for (int k = 0; k < 12; ++k) {
            double e = y(k).value() - (*it.x1)(k);
            if (is_angle(k)) e = wrap_angle(e);
            const double w2 = W(k) * W(k);
            l += w2 * e * e;
            g += (w2 * e) * y(k).derivatives();
        }
        loss[i] = l / 12.0;
        grads[i] = g * (2.0 / 12.0);
    });
    Grad total = Grad::Zero();
    double lsum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        lsum += loss[i];
        total += grads[i];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss = lsum * inv;
    out.grad.resize(na);
    for (std::size_t j = 0; j < na; ++j) out.grad[j] = total(static_cast<int>(j)) * inv;
    check_finite(out.grad, "physics gradient");
    return out;
}

std::vector<bool> Identifiability::identifiable(double ratio) const {
    std::vector<bool> out(loss_rise.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = loss_rise[j] >= ratio * floor;
    return out;
}

Identifiability identifiability(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                                std::span<const int> active, double lambda, const Vec12& W, double rel, Exec exec) {
    const std::size_t na = active.size();
    if (na == 0 || na > static_cast<std::size_t>(kMaxAdDirections)) {
        throw Error(ErrorKind::InvalidArgument, "identifiability needs 1.." + std::to_string(kMaxAdDirections) +
                                                    " active parameters");
    }
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "identifiability needs samples");
    const std::vector<double> theta = pack_aero(p);
    const std::size_t n_acm = p.acm.param_count();
    std::vector<Ad> seeded(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) seeded[k] = Ad(theta[k]);
    for (std::size_t j = 0; j < na; ++j) seeded[static_cast<std::size_t>(active[j])].derivatives()(static_cast<int>(j)) = 1.0;
    AeroThetaT<Ad> th;
    th.acm.assign(seeded.begin(), seeded.begin() + static_cast<std::ptrdiff_t>(n_acm));
    th.gdm.assign(seeded.begin() + static_cast<std::ptrdiff_t>(n_acm), seeded.end());
    const Ad lam(lambda);

    // Fixed blocks reduced in order keep the result independent of the thread count.
    constexpr std::size_t kBlock = 256;
    const std::size_t n_blocks = (batch.size() + kBlock - 1) / kBlock;
    const Eigen::Index n = static_cast<Eigen::Index>(na);
    std::vector<Eigen::MatrixXd> hs(n_blocks, Eigen::MatrixXd::Zero(n, n));
    std::vector<double> ls(n_blocks, 0.0);
    parallel_for(exec, n_blocks, [&](std::size_t b) {
        Eigen::MatrixXd jac(12, n);
        for (std::size_t i = b * kBlock; i < std::min(batch.size(), (b + 1) * kBlock); ++i) {
            const auto& it = tab[batch[i]];
            const Vec12T<Ad> y = hybrid_step_t<Ad>(it.x0->cast<Ad>(), *it.u, p, *it.mm, it.tau, th, lam, it.dt);
            for (int k = 0; k < 12; ++k) {
                double e = y(k).value() - (*it.x1)(k);
                if (is_angle(k)) e = wrap_angle(e);
                ls[b] += W(k) * W(k) * e * e / 12.0;
                jac.row(k) = W(k) * y(k).derivatives().head(n).transpose();
            }
            hs[b].noalias() += jac.transpose() * jac;
        }
    });
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    double floor = 0.0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        h += hs[b];
        floor += ls[b];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    h *= 2.0 / 12.0 * inv;  // Gauss-Newton Hessian of the mean loss

    Identifiability out;
    out.active.assign(active.begin(), active.end());
    out.floor = floor * inv;
    // Diagonal scaling before inversion; curvature is reported in theta units.
    Eigen::VectorXd s(n);
    for (Eigen::Index j = 0; j < n; ++j) s(j) = std::max(std::abs(theta[static_cast<std::size_t>(active[static_cast<std::size_t>(j)])]), 1e-12);
    const Eigen::MatrixXd hz = s.asDiagonal() * h * s.asDiagonal();
    const Eigen::MatrixXd cov = hz.completeOrthogonalDecomposition().pseudoInverse();
    out.loss_rise.resize(na);
    for (std::size_t j = 0; j < na; ++j) {
        const double c = cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
        // Schur complement: 0.5 dz^2 / [H^-1]_jj with dz = rel in scaled units.
        out.loss_rise[j] = c > 0.0 ? 0.5 * rel * rel / c : 0.0;
    }
    return out;
}

namespace {

double mixer_model_loss(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                        const AeroTheta& th, const MixerParams& xi, const Vec12& W, Exec exec) {
    std::vector<double> slot(batch.size());
    parallel_for(exec, batch.size(), [&](std::size_t i) {
        const auto& it = tab[batch[i]];
        const FlowState f = flow_of(*it.x0);
        const double lam = lambda_eval(xi, f.alpha, f.V);
        const State y = hybrid_step_t<double>(*it.x0, *it.u, p, *it.mm, it.tau, th, lam, it.dt);
        slot[i] = step_error(y, *it.x1, W);
    });
    double acc = 0.0;
    for (double v : slot) acc += v;
    return acc / static_cast<double>(batch.size());
}

}  // namespace

MixerLoss mixer_loss(const StepTable& tab, std::span<const std::size_t> batch, const PhysicalParams& p,
                     const MixerParams& xi, const RegGrids* grids, const Vec12& W, bool want_grad, GradMethod method,
                     Exec exec) {
    MixerLoss out;
    const AeroTheta th = aero_theta(p);
    const std::size_t np = xi.param_count();
    const double inv = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());

    if (!want_grad || method == GradMethod::finite_difference) {
        out.model = batch.empty() ? 0.0 : mixer_model_loss(tab, batch, p, th, xi, W, exec);
        if (grids != nullptr) {
            out.reg = {anchor_loss(xi, *grids), mono_loss(xi, *grids), smooth_loss(xi, *grids)};
        }
        out.total = out.model + (grids != nullptr ? out.reg.weighted(grids->weights) : 0.0);
        if (want_grad) {
            const std::vector<double> z = xi.flatten();
            const std::vector<double> h(np, 1e-7);
            MixerParams work = xi;
            auto f = [&](std::span<const double> v) {
                work.assign(v);
                double t = batch.empty() ? 0.0 : mixer_model_loss(tab, batch, p, th, work, W, exec);
                if (grids != nullptr) {
                    const RegTerms r{anchor_loss(work, *grids), mono_loss(work, *grids), smooth_loss(work, *grids)};
                    t += r.weighted(grids->weights);
                }
                return t;
            };
            out.grad = central_difference(f, z, h);
            check_finite(out.grad, "mixer gradient");
        }
        return out;
    }

    // d(prediction)/d(lambda) by a single AD direction, then backprop through the network.
    const AeroThetaT<Ad1> th1{std::vector<Ad1>(th.acm.begin(), th.acm.end()),
                              std::vector<Ad1>(th.gdm.begin(), th.gdm.end())};
    std::vector<double> loss(batch.size());
    std::vector<double> slots(batch.size() * np, 0.0);
    parallel_for(exec, batch.size(), [&](std::size_t i) {
        const auto& it = tab[batch[i]];
        const FlowState f = flow_of(*it.x0);
        const double lam_v = lambda_eval(xi, f.alpha, f.V);
        const Ad1 lam = ad_variable<Ad1>(lam_v, 0);
        const Vec12T<Ad1> x0 = it.x0->cast<Ad1>();
        const Vec12T<Ad1> y = hybrid_step_t<Ad1>(x0, *it.u, p, *it.mm, it.tau, th1, lam, it.dt);
        double l = 0.0, dl = 0.0;
        for (int k = 0; k < 12; ++k) {
            double e = y(k).value() - (*it.x1)(k);
            if (is_angle(k)) e = wrap_angle(e);
            const double w2 = W(k) * W(k);
            l += w2 * e * e;
            dl += w2 * e * y(k).derivatives()(0);
        }
        loss[i] = l / 12.0;
        std::span<double> slot(slots.data() + i * np, np);
        lambda_backward(xi, f.alpha, f.V, dl * (2.0 / 12.0) * inv, slot);
    });
    out.grad.assign(np, 0.0);
    double lsum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        lsum += loss[i];
        const double* s = slots.data() + i * np;
        for (std::size_t q = 0; q < np; ++q) out.grad[q] += s[q];
    }
    out.model = lsum * inv;
    if (grids != nullptr) out.reg = regularizer_grad(xi, *grids, 1.0, out.grad, exec);
    out.total = out.model + (grids != nullptr ? out.reg.weighted(grids->weights) : 0.0);
    check_finite(out.grad, "mixer gradient");
    return out;
}

void optimizer_step(OptimizerKind kind, AdamState& st, double lr, std::span<double> z, std::span<const double> g) {
    if (kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= lr * g[i];
        return;
    }
    if (st.m.size() != z.size()) {
        st.m.assign(z.size(), 0.0);
        st.v.assign(z.size(), 0.0);
        st.t = 0;
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < z.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        z[i] -= lr * mh / (std::sqrt(vh) + st.eps);
    }
}

FlowBox observed_box(std::span<const TrajectoryRecord> records, const Pools& pools) {
    FlowBox b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (Region r : {Region::ACM, Region::GDM, Region::Transition}) {
        for (const StepRef& s : pools.of(r)) {
            const FlowState f = flow_of(records[s.record].x[s.step]);
            b.alpha_lo = std::min(b.alpha_lo, f.alpha);
            b.alpha_hi = std::max(b.alpha_hi, f.alpha);
            b.V_lo = std::min(b.V_lo, f.V);
            b.V_hi = std::max(b.V_hi, f.V);
        }
    }
    if (!(b.alpha_hi >= b.alpha_lo)) return FlowBox{};
    b.alpha_lo = std::max(0.0, b.alpha_lo);
    b.V_lo = std::max(0.0, b.V_lo);
    return b;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, int phase, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

template <class BatchFn>
PhaseLog run_epochs(std::size_t n, int epochs, const LossConfig& cfg, int phase, BatchFn&& fn) {
    PhaseLog log;
    log.samples = n;
    for (int e = 0; e < epochs; ++e) {
        const std::vector<std::size_t> order = shuffled(n, cfg.seed, phase, e);
        double acc = 0.0;
        for (std::size_t s = 0; s < n; s += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, n - s);
            acc += fn(std::span<const std::size_t>(order.data() + s, len)) * static_cast<double>(len);
        }
        log.epoch_loss.push_back(n > 0 ? acc / static_cast<double>(n) : 0.0);
        std::ostringstream msg;
        msg << "phase " << phase << " epoch " << e + 1 << "/" << epochs << " loss " << log.epoch_loss.back();
        log_info(msg.str());
    }
    return log;
}

PhaseLog train_physics(std::span<const TrajectoryRecord> records, const std::vector<StepRef>& pool,
                       PhysicalParams& phys, const std::vector<int>& active, double lambda, int epochs, int phase,
                       const LossConfig& cfg, Exec exec) {
    const StepTable tab(records, phys, pool);
    std::vector<double> theta = pack_aero(phys);
    std::vector<double> scale(active.size()), z(active.size());
    for (std::size_t j = 0; j < active.size(); ++j) {
        const double v = theta[static_cast<std::size_t>(active[j])];
        scale[j] = std::max(std::abs(v), cfg.scale_floor);
        z[j] = v / scale[j];
    }
    AdamState st;
    std::vector<double> gz(active.size());
    return run_epochs(tab.size(), epochs, cfg, phase, [&](std::span<const std::size_t> batch) {
        const LossGrad lg = physics_loss_grad(tab, batch, phys, active, lambda, cfg.W, cfg.grad_method, exec);
        for (std::size_t j = 0; j < active.size(); ++j) gz[j] = lg.grad[j] * scale[j];
        optimizer_step(cfg.optimizer, st, cfg.lr_12, z, gz);
        for (std::size_t j = 0; j < active.size(); ++j) theta[static_cast<std::size_t>(active[j])] = z[j] * scale[j];
        unpack_aero(phys, theta);
        return lg.loss;
    });
}

}  // namespace

TrainResult three_phase_train(std::span<const TrajectoryRecord> records, const Pools& pools,
                              const PhysicalParams& phi0, const MixerParams& xi0, const RegimePartition& part,
                              const LossConfig& cfg, Exec exec) {
    cfg.validate();
    part.validate();
    xi0.validate();
    if (pools.acm.empty()) throw Error(ErrorKind::EmptyRegion, "no ACM-region samples");
    if (pools.gdm.empty()) throw Error(ErrorKind::EmptyRegion, "no GDM-region samples");
    if (pools.transition.empty()) throw Error(ErrorKind::EmptyRegion, "no transition-region samples");

    TrainResult res;
    res.phys = phi0;
    res.xi = xi0;
    const AeroLayout lay(phi0);
    const std::vector<double> before = pack_aero(phi0);

    res.report.phases[0] =
        train_physics(records, pools.acm, res.phys, lay.acm_indices(), 0.0, cfg.epochs1, 1, cfg, exec);
    res.report.phases[1] =
        train_physics(records, pools.gdm, res.phys, lay.gdm_indices(), 1.0, cfg.epochs2, 2, cfg, exec);

    const FlowBox box = observed_box(records, pools);
    res.grids = make_reg_grids(part, box.alpha_lo, box.alpha_hi, box.V_lo, box.V_hi, cfg.n_anchor, cfg.n_grid);
    res.grids.weights = cfg.reg_weights;
    res.grids.sign = cfg.mono_sign;

    const StepTable tab(records, res.phys, pools.transition);
    std::vector<double> z = res.xi.flatten();
    AdamState st;
    res.report.phases[2] = run_epochs(tab.size(), cfg.epochs3, cfg, 3, [&](std::span<const std::size_t> batch) {
        const MixerLoss ml = mixer_loss(tab, batch, res.phys, res.xi, &res.grids, cfg.W, true, cfg.grad_method, exec);
        optimizer_step(cfg.optimizer, st, cfg.lr_3, z, ml.grad);
        res.xi.assign(z);
        return ml.total;
    });

    std::vector<std::size_t> all(tab.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const MixerLoss fin = mixer_loss(tab, all, res.phys, res.xi, &res.grids, cfg.W, false, cfg.grad_method, exec);
    res.report.reg = fin.reg;
    res.report.final_model_loss = fin.model;
    res.report.final_total_loss = fin.total;

    const std::vector<double> after = pack_aero(res.phys);
    const std::vector<std::string> names = aero_param_names(res.phys);
    for (std::size_t k = 0; k < names.size(); ++k) res.report.params.push_back({names[k], before[k], after[k]});
    return res;
}

namespace {

struct RegionSums {
    std::array<double, 3> sum{};
    std::array<std::size_t, 3> count{};
};

RegionRmse finish(const RegionSums& s) {
    RegionRmse r;
    r.counts = s.count;
    auto rm = [](double sum, std::size_t n) -> std::optional<double> {
        if (n == 0) return std::nullopt;
        return std::sqrt(sum / static_cast<double>(n));
    };
    r.acm = rm(s.sum[0], s.count[0]);
    r.gdm = rm(s.sum[1], s.count[1]);
    r.transition = rm(s.sum[2], s.count[2]);
    r.total = rm(s.sum[0] + s.sum[1] + s.sum[2], s.count[0] + s.count[1] + s.count[2]);
    return r;
}

// Per-record region sums of step_error for one-step predictions.
std::vector<RegionSums> per_record_sums(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                                        const LambdaPolicy& policy, const RegimePartition& part, const Vec12& W,
                                        const RolloutOptions& ro, Exec exec) {
    policy.validate();
    std::vector<RegionSums> out(records.size());
    parallel_for(exec, records.size(), [&](std::size_t r) {
        const TrajectoryRecord& rec = records[r];
        MassCache cache(p);
        RolloutOptions opt = ro;
        opt.dt = rec.dt();
        RegionSums s;
        for (std::size_t k = 0; k + 1 < rec.size(); ++k) {
            const State y = predict_step(rec.x[k], rec.u[k], p, cache.get(rec.u[k]), policy, opt);
            const int reg = static_cast<int>(classify_regime(part, flow_of(rec.x[k])));
            s.sum[reg] += step_error(y, rec.x[k + 1], W);
            ++s.count[reg];
        }
        out[r] = s;
    });
    return out;
}

}  // namespace

RegionRmse one_step_rmse(std::span<const TrajectoryRecord> records, const PhysicalParams& p,
                         const LambdaPolicy& policy, const RegimePartition& part, const Vec12& W, Exec exec) {
    RegionSums total;
    for (const RegionSums& s : per_record_sums(records, p, policy, part, W, RolloutOptions{}, exec)) {
        for (int k = 0; k < 3; ++k) {
            total.sum[k] += s.sum[k];
            total.count[k] += s.count[k];
        }
    }
    return finish(total);
}

EvalReport evaluate(std::span<const TrajectoryRecord> records, const PhysicalParams& phys, const MixerParams* xi,
                    const RegimePartition& part, std::span<const MixingMode> modes, const EvalOptions& opt) {
    EvalReport rep;
    for (MixingMode mode : modes) {
        const LambdaPolicy policy{mode, xi, &part};
        const std::vector<RegionSums> sums = per_record_sums(records, phys, policy, part, opt.W, opt.rollout, opt.exec);
        RegionSums total;
        std::map<std::pair<int, int>, std::pair<double, std::size_t>> cells;
        for (std::size_t r = 0; r < records.size(); ++r) {
            auto& cell = cells[{records[r].config.level_sum(), records[r].config.dr_x_cm}];
            for (int k = 0; k < 3; ++k) {
                total.sum[k] += sums[r].sum[k];
                total.count[k] += sums[r].count[k];
                cell.first += sums[r].sum[k];
                cell.second += sums[r].count[k];
            }
        }
        rep.modes.push_back({mode, finish(total)});
        auto& heat = rep.heatmap[mode];
        for (const auto& [key, v] : cells) {
            heat.push_back({key.first, key.second, v.second > 0 ? v.first / static_cast<double>(v.second) : 0.0,
                            v.second});
        }

        const std::size_t nc = std::min(opt.n_curves, records.size());
        std::vector<CumulativeCurve> curves(nc);
        parallel_for(opt.exec, nc, [&](std::size_t r) {
            const TrajectoryRecord& rec = records[r];
            CumulativeCurve& c = curves[r];
            c.id = rec.id;
            c.mode = mode;
            RolloutOptions ro = opt.rollout;
            ro.dt = rec.dt();
            std::vector<State> pred;
            try {
                pred = rollout(rec.x.front(), std::span<const ControlInput>(rec.u.data(), rec.size() - 1), phys,
                               policy, ro);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NonFiniteState && e.kind() != ErrorKind::GimbalSingularity) throw;
                c.diverged = true;
            }
            double sl = 0.0, sa = 0.0;
            for (std::size_t k = 1; k < pred.size(); ++k) {
                sl += (pred[k].segment<3>(6) - rec.x[k].segment<3>(6)).squaredNorm() / 3.0;
                sa += (pred[k].segment<3>(9) - rec.x[k].segment<3>(9)).squaredNorm() / 3.0;
                c.linear.push_back(std::sqrt(sl / static_cast<double>(k)));
                c.angular.push_back(std::sqrt(sa / static_cast<double>(k)));
            }
        });
        for (auto& c : curves) rep.curves.push_back(std::move(c));
    }
    return rep;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + p.string());
    out.precision(10);
    return out;
}

void put(std::ostream& os, const std::optional<double>& v) {
    if (v) os << *v;
    else os << "NA";
}

}  // namespace

void write_eval_report(const std::filesystem::path& dir, const EvalReport& rep) {
    std::filesystem::create_directories(dir);
    auto rm = open_out(dir / "region_rmse.csv");
    rm << "mode,region,rmse,samples\n";
    for (const auto& m : rep.modes) {
        const auto& r = m.one_step;
        const std::array<std::pair<const char*, std::optional<double>>, 4> rows = {
            {{"ACM", r.acm}, {"GDM", r.gdm}, {"Transition", r.transition}, {"Total", r.total}}};
        const std::array<std::size_t, 4> n = {r.counts[0], r.counts[1], r.counts[2],
                                              r.counts[0] + r.counts[1] + r.counts[2]};
        for (std::size_t k = 0; k < 4; ++k) {
            rm << to_string(m.mode) << ',' << rows[k].first << ',';
            put(rm, rows[k].second);
            rm << ',' << n[k] << '\n';
        }
    }
    auto hm = open_out(dir / "heatmap.csv");
    hm << "mode,level_sum,dr_x_cm,loss,samples\n";
    for (const auto& [mode, cells] : rep.heatmap) {
        for (const auto& c : cells) {
            hm << to_string(mode) << ',' << c.level_sum << ',' << c.dr_x_cm << ',' << c.loss << ',' << c.samples << '\n';
        }
    }
    auto cu = open_out(dir / "cumulative_rmse.csv");
    cu << "id,mode,step,linear,angular\n";
    for (const auto& c : rep.curves) {
        for (std::size_t k = 0; k < c.linear.size(); ++k) {
            cu << c.id << ',' << to_string(c.mode) << ',' << k + 1 << ',' << c.linear[k] << ',' << c.angular[k] << '\n';
        }
    }
}

void write_fit_report(const std::filesystem::path& dir, const FitReport& rep) {
    std::filesystem::create_directories(dir);
    auto pp = open_out(dir / "params.csv");
    pp.precision(17);
    pp << "name,before,after\n";
    for (const auto& p : rep.params) pp << p.name << ',' << p.before << ',' << p.after << '\n';
    auto lc = open_out(dir / "loss_curves.csv");
    lc.precision(17);
    lc << "phase,epoch,loss\n";
    for (std::size_t ph = 0; ph < rep.phases.size(); ++ph) {
        for (std::size_t e = 0; e < rep.phases[ph].epoch_loss.size(); ++e) {
            lc << ph + 1 << ',' << e + 1 << ',' << rep.phases[ph].epoch_loss[e] << '\n';
        }
    }
}

namespace {

struct CheckTally {
    GradCheckPhase& r;
    const GradCheckOptions& opt;

    void compare(double g_an, double g_fd) {
        const double err = std::abs(g_an - g_fd);
        const double mag = std::max(std::abs(g_an), std::abs(g_fd));
        r.checked += 1;
        if (mag > opt.abs_floor) r.worst_rel = std::max(r.worst_rel, err / mag);
        if (!(err <= opt.tol * mag + opt.abs_floor)) r.failures += 1;
    }
};

std::vector<std::size_t> sample_batch(std::size_t pool, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(k, pool));
    return idx;
}

std::uint64_t loss_signature(const MixerParams& xi, const StepTable& tab, std::span<const std::size_t> batch,
                             const RegGrids& g) {
    std::uint64_t h = 0;
    auto mix = [&](std::uint64_t v) { h = (h ^ v) * 1099511628211ull + 0x9e3779b97f4a7c15ull; };
    for (std::size_t i : batch) {
        const FlowState f = flow_of(*tab[i].x0);
        mix(activation_signature(xi, f.alpha, f.V));
    }
    for (const auto& p : g.acm_anchors) mix(activation_signature(xi, p[0], p[1]));
    for (const auto& p : g.gdm_anchors) mix(activation_signature(xi, p[0], p[1]));
    for (int i = 0; i < g.lattice.n_alpha; ++i) {
        for (int j = 0; j < g.lattice.n_V; ++j) mix(activation_signature(xi, g.lattice.alpha_at(i), g.lattice.V_at(j)));
    }
    return h;
}

}  // namespace

std::array<GradCheckPhase, 3> gradient_check(std::span<const TrajectoryRecord> records, const Pools& pools,
                                             const PhysicalParams& phys, const MixerParams& xi, const RegGrids& grids,
                                             const LossConfig& cfg, const GradCheckOptions& opt) {
    std::array<GradCheckPhase, 3> out;
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> factor(1.0 - opt.perturb, 1.0 + opt.perturb);
    const AeroLayout lay(phys);
    const std::vector<double> theta0 = pack_aero(phys);

    for (int ph = 0; ph < 2; ++ph) {
        GradCheckPhase& r = out[static_cast<std::size_t>(ph)];
        r.phase = ph + 1;
        const std::vector<StepRef>& pool = ph == 0 ? pools.acm : pools.gdm;
        if (pool.empty()) continue;
        const StepTable tab(records, phys, pool);
        const std::vector<int> active = ph == 0 ? lay.acm_indices() : lay.gdm_indices();
        const double lambda = ph == 0 ? 0.0 : 1.0;
        CheckTally tally{r, opt};
        for (std::size_t pt = 0; pt < opt.points; ++pt) {
            std::vector<double> theta = theta0;
            for (int j : active) theta[static_cast<std::size_t>(j)] *= factor(rng);
            PhysicalParams p = phys;
            unpack_aero(p, theta);
            const std::vector<std::size_t> batch = sample_batch(tab.size(), opt.batch, rng);
            const LossGrad lg = physics_loss_grad(tab, batch, p, active, lambda, cfg.W, GradMethod::autodiff, opt.exec);
            if (!(lg.loss > 0.0)) continue;
            for (std::size_t j = 0; j < active.size(); ++j) {
                const std::size_t idx = static_cast<std::size_t>(active[j]);
                const double scale = std::max(std::abs(theta0[idx]), cfg.scale_floor);
                const double h = opt.step * scale;
                std::vector<double> tp = theta, tm = theta;
                tp[idx] += h;
                tm[idx] -= h;
                PhysicalParams pp = phys, pm = phys;
                unpack_aero(pp, tp);
                unpack_aero(pm, tm);
                const double fd = (physics_loss(tab, batch, pp, lambda, cfg.W, opt.exec) -
                                   physics_loss(tab, batch, pm, lambda, cfg.W, opt.exec)) /
                                  (2.0 * opt.step);
                tally.compare(lg.grad[j] * scale / lg.loss, fd / lg.loss);
            }
            r.points += 1;
        }
    }

    GradCheckPhase& r = out[2];
    r.phase = 3;
    if (!pools.transition.empty()) {
        const StepTable tab(records, phys, pools.transition);
        CheckTally tally{r, opt};
        for (std::size_t pt = 0; pt < opt.points; ++pt) {
            MixerParams x = xi;
            std::vector<double> z = x.flatten();
            std::normal_distribution<double> jitter(0.0, 0.1);
            for (double& v : z) v += jitter(rng);
            x.assign(z);
            const std::vector<std::size_t> batch = sample_batch(tab.size(), opt.batch, rng);
            const MixerLoss ml = mixer_loss(tab, batch, phys, x, &grids, cfg.W, true, GradMethod::autodiff, opt.exec);
            if (!(ml.total > 0.0)) continue;
            MixerParams work = x;
            for (std::size_t j = 0; j < z.size(); ++j) {
                std::vector<double> zp = z, zm = z;
                zp[j] += opt.step;
                zm[j] -= opt.step;
                work.assign(zp);
                const std::uint64_t sp = loss_signature(work, tab, batch, grids);
                const double lp = mixer_loss(tab, batch, phys, work, &grids, cfg.W, false, GradMethod::autodiff, opt.exec).total;
                work.assign(zm);
                const std::uint64_t sm = loss_signature(work, tab, batch, grids);
                const double lm = mixer_loss(tab, batch, phys, work, &grids, cfg.W, false, GradMethod::autodiff, opt.exec).total;
                if (sp != sm) {
                    r.kinks_skipped += 1;
                    continue;
                }
                tally.compare(ml.grad[j] / ml.total, (lp - lm) / (2.0 * opt.step) / ml.total);
            }
            r.points += 1;
        }
    }
    return out;
}

}  // namespace blimp
