// Command-line front end: simulate, fit-steady, partition, train, evaluate,
// gradcheck, export-lambda, mirror. Exit codes: 0 ok, 1 bad input, 2 failure.
#include "blimp/dataio.hpp"
#include "blimp/errors.hpp"
#include "blimp/ident.hpp"
#include "blimp/log.hpp"
#include "blimp/steady.hpp"
#include "blimp/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace blimp;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool serial = false;
    std::string argv;
};

Exec exec_of(const Globals& g) { return g.serial ? Exec::serial : Exec::parallel; }

Config load_cfg(const Globals& g) {
    Config cfg = g.config.empty() ? Config{} : load_config(g.config);
    if (g.seed_set) cfg.loss.seed = g.seed;
    return cfg;
}

RegimePartition partition_of(const Config& cfg) { return cfg.partition.value_or(RegimePartition{}); }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : "absent"; }

/// Run description sufficient to repeat the command: argv, seed and the full
/// configuration (also written to config.json next to it).
class Manifest {
public:
    Manifest(std::string command, const Globals& g, const Config& cfg) : command_(std::move(command)), g_(g), cfg_(cfg) {}

    void add(const std::string& key, const std::string& value) { extra_.push_back({key, value}); }

    void write(const fs::path& dir) const {
        fs::create_directories(dir);
        {
            std::ofstream c(dir / "config.json");
            c << config_to_json(cfg_) << '\n';
        }
        std::ofstream out(dir / "manifest.txt");
        if (!out) throw Error(ErrorKind::IoError, "cannot write manifest in " + dir.string());
        out << "command: " << command_ << '\n';
        out << "argv: " << g_.argv << '\n';
        out << "seed: " << cfg_.loss.seed << '\n';
        out << "threads: " << thread_count() << (g_.serial ? " (serial)" : "") << '\n';
        out << "config: config.json\n";
        for (const auto& [k, v] : extra_) out << k << ": " << v << '\n';
    }

private:
    std::string command_;
    const Globals& g_;
    const Config& cfg_;
    std::vector<std::pair<std::string, std::string>> extra_;
};

std::vector<TrajectoryRecord> load_records(const std::string& dir, bool pub, const Config& cfg, Exec exec) {
    auto recs = pub ? load_public_dataset(dir, cfg.thrust, exec) : load_dataset(dir, exec);
    if (recs.empty()) throw Error(ErrorKind::InvalidArgument, "no *.csv trajectories in " + dir);
    log_info("loaded " + std::to_string(recs.size()) + " trajectories from " + dir);
    return recs;
}

MixerParams default_mixer(const Config& cfg, const RegimePartition& part) {
    return MixerParams::init(cfg.mixer.seed, cfg.mixer.alpha_scale.value_or(part.alpha2),
                             cfg.mixer.V_scale.value_or(part.V2), cfg.mixer.widths);
}

// Inputs file: "t,Fl_gf,Fr_gf,rbar_x,rbar_y,rbar_z" rows, optional "# x0: 12 numbers".
std::pair<State, std::vector<ControlInput>> read_inputs(const fs::path& path, std::vector<double>& times) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    State x0 = State::Zero();
    std::vector<ControlInput> us;
    std::string line;
    std::size_t ln = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("x0:");
            if (pos == std::string::npos) continue;
            std::stringstream ss(line.substr(pos + 3));
            std::string cell;
            int i = 0;
            while (std::getline(ss, cell, ',') && i < 12) x0(i++) = std::stod(cell);
            if (i != 12) throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) + ": x0 needs 12 values");
            continue;
        }
        if (!header) {
            if (line.rfind("t,Fl_gf,Fr_gf,rbar_x,rbar_y,rbar_z", 0) != 0) {
                throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) +
                                                       ": expected header t,Fl_gf,Fr_gf,rbar_x,rbar_y,rbar_z");
            }
            header = true;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        try {
            while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) + ": bad number");
        }
        if (v.size() != 6) throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) + ": expected 6 fields");
        times.push_back(v[0]);
        ControlInput u;
        u.Fl = v[1] * kGramForce;
        u.Fr = v[2] * kGramForce;
        u.r_bar = Vec3(v[3], v[4], v[5]);
        us.push_back(u);
    }
    if (us.size() < 2) throw Error(ErrorKind::ParseError, "inputs file needs at least 2 rows");
    return {x0, us};
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string input, out, mixer, mode = "neural";
    bool campaign = false;
    int repeats = 1, stride = 1;
    double dur_min = 5.0, dur_max = 10.0;
};

int run_simulate(const Globals& g, const SimulateArgs& a) {
    Config cfg = load_cfg(g);
    const RegimePartition part = partition_of(cfg);
    const MixingMode mode = parse_mixing_mode(a.mode);
    MixerParams xi = a.mixer.empty() ? truth_mixer() : load_mixer(a.mixer);
    const LambdaPolicy policy{mode, &xi, &part};
    Manifest man("simulate", g, cfg);
    man.add("mode", std::string(to_string(mode)));
    man.add("mixer", a.mixer.empty() ? "reference (truth_mixer.json)" : a.mixer);
    fs::create_directories(a.out);
    if (a.mixer.empty()) save_mixer(fs::path(a.out) / "truth_mixer.json", xi);

    if (a.campaign) {
        CampaignSpec spec;
        std::vector<ConfigKey> keys;
        const auto grid = config_grid();
        for (std::size_t i = 0; i < grid.size(); i += static_cast<std::size_t>(std::max(a.stride, 1))) keys.push_back(grid[i]);
        spec.configs = keys;
        spec.repeats = a.repeats;
        spec.duration_min = a.dur_min;
        spec.duration_max = a.dur_max;
        spec.seed = cfg.loss.seed;
        spec.sim = cfg.sim;
        spec.thrust = cfg.thrust;
        const auto recs = simulate_campaign(spec, cfg.phys, policy, exec_of(g));
        save_dataset(a.out, recs);
        man.add("records", std::to_string(recs.size()));
        man.add("campaign", "stride " + std::to_string(a.stride) + ", repeats " + std::to_string(a.repeats));
        std::cout << "wrote " << recs.size() << " trajectories to " << a.out << '\n';
    } else {
        if (a.input.empty()) throw Error(ErrorKind::InvalidArgument, "simulate needs --input or --campaign");
        std::vector<double> t;
        auto [x0, us] = read_inputs(a.input, t);
        const double dt = t[1] - t[0];
        RolloutOptions ro{dt, cfg.sim.lambda_per_stage};
        const auto xs = rollout(x0, std::span<const ControlInput>(us.data(), us.size() - 1), cfg.phys, policy, ro);
        TrajectoryRecord rec;
        rec.id = fs::path(a.input).stem().string() + "_sim";
        rec.rate_hz = 1.0 / dt;
        rec.t = t;
        rec.x = xs;
        rec.u = us;
        rec.validate();
        save_trajectory(fs::path(a.out) / (rec.id + ".csv"), rec);
        man.add("input", a.input);
        man.add("samples", std::to_string(rec.size()));
        std::cout << "wrote " << (fs::path(a.out) / (rec.id + ".csv")).string() << '\n';
    }
    man.write(a.out);
    return 0;
}

// ---------------------------------------------------------------- fit-steady

struct SteadyArgs {
    std::string data, out;
    bool mirror = false, pub = false;
};

void write_ols(const fs::path& path, const std::vector<std::string>& names, const OlsResult& r) {
    std::ofstream o(path);
    o << "name,value\n";
    for (std::size_t i = 0; i < names.size(); ++i) o << names[i] << ',' << fmt(r.coeffs[i]) << '\n';
    std::ofstream b(path.parent_path() / (path.stem().string() + "_bins.csv"));
    b << "alpha_lo,alpha_hi,V_lo,V_hi,count,rss,r2\n";
    const std::size_t nv = r.bins.V_edges.size() - 1;
    for (std::size_t i = 0; i + 1 < r.bins.alpha_edges.size(); ++i) {
        for (std::size_t j = 0; j < nv; ++j) {
            const std::size_t c = i * nv + j;
            b << r.bins.alpha_edges[i] << ',' << r.bins.alpha_edges[i + 1] << ',' << r.bins.V_edges[j] << ','
              << r.bins.V_edges[j + 1] << ',' << r.bins.count[c] << ',' << r.bins.rss[c] << ',' << r.bins.r2[c] << '\n';
        }
    }
}

int run_fit_steady(const Globals& g, const SteadyArgs& a) {
    Config cfg = load_cfg(g);
    const auto recs = load_records(a.data, a.pub, cfg, exec_of(g));
    std::vector<SteadySample> samples = extract_steady(recs, cfg.phys, SteadyOptions{}, exec_of(g));
    const std::size_t extracted = samples.size();
    if (a.mirror) {
        for (std::size_t i = 0; i < extracted; ++i) samples.push_back(mirror_sample(samples[i]));
    }
    Manifest man("fit-steady", g, cfg);
    man.add("steady_samples", std::to_string(extracted));
    man.add("after_mirror", std::to_string(samples.size()));
    fs::create_directories(a.out);
    {
        std::ofstream o(fs::path(a.out) / "steady.csv");
        o << "id,alpha,beta,V,X,Y,Z,K,M,N\n";
        for (const auto& s : samples) {
            o << s.id << ',' << fmt(s.flow.alpha) << ',' << fmt(s.flow.beta) << ',' << fmt(s.flow.V);
            const Vec6 w = s.wrench.stacked();
            for (int i = 0; i < 6; ++i) o << ',' << fmt(w(i));
            o << '\n';
        }
    }
    std::cout << "steady samples: " << extracted << " (" << samples.size() << " with mirror)\n";
    int rc = 0;
    try {
        const OlsResult acm = ols_fit(samples, cfg.phys, SteadyBasis::acm);
        write_ols(fs::path(a.out) / "ols_acm.csv", cfg.phys.acm.param_names(), acm);
        const OlsResult gdm = ols_fit(samples, cfg.phys, SteadyBasis::gdm);
        write_ols(fs::path(a.out) / "ols_gdm.csv", GdmCoeffs::param_names(), gdm);
        man.add("ols_r2_acm", fmt(acm.r2));
        man.add("ols_r2_gdm", fmt(gdm.r2));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::RankDeficient) throw;
        log_warn(std::string("OLS skipped: ") + e.what());
        man.add("ols", "rank deficient");
        rc = 2;
    }
    try {
        const RegimePartition part = select_thresholds(samples, cfg.phys);
        std::ofstream o(fs::path(a.out) / "thresholds.json");
        o << "{\n  \"alpha_star\": " << fmt(part.alpha_star) << ",\n  \"V_star\": " << fmt(part.V_star)
          << ",\n  \"alpha1\": " << fmt(part.alpha1) << ",\n  \"alpha2\": " << fmt(part.alpha2)
          << ",\n  \"V1\": " << fmt(part.V1) << ",\n  \"V2\": " << fmt(part.V2) << "\n}\n";
        man.add("thresholds", "alpha* " + fmt(part.alpha_star) + ", V* " + fmt(part.V_star));
        std::cout << "alpha* = " << part.alpha_star << " rad, V* = " << part.V_star << " m/s\n";
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::InsufficientCoverage) throw;
        log_warn(std::string("threshold selection failed: ") + e.what());
        man.add("thresholds", "none (insufficient coverage)");
    }
    man.write(a.out);
    return rc;
}

// ---------------------------------------------------------------- partition

struct PartitionArgs {
    std::string data, out;
    bool pub = false;
};

int run_partition(const Globals& g, const PartitionArgs& a) {
    Config cfg = load_cfg(g);
    const RegimePartition part = partition_of(cfg);
    const auto recs = load_records(a.data, a.pub, cfg, exec_of(g));
    const Pools pools = partition_dataset(recs, part);
    fs::create_directories(a.out);
    std::ofstream o(fs::path(a.out) / "pools.csv");
    o << "id,step,region\n";
    for (Region r : {Region::ACM, Region::GDM, Region::Transition}) {
        for (const auto& s : pools.of(r)) o << recs[s.record].id << ',' << s.step << ',' << to_string(r) << '\n';
    }
    Manifest man("partition", g, cfg);
    man.add("acm", std::to_string(pools.acm.size()));
    man.add("gdm", std::to_string(pools.gdm.size()));
    man.add("transition", std::to_string(pools.transition.size()));
    man.write(a.out);
    std::cout << "ACM " << pools.acm.size() << ", GDM " << pools.gdm.size() << ", Transition "
              << pools.transition.size() << '\n';
    return 0;
}

// ---------------------------------------------------------------- train / evaluate

std::vector<MixingMode> all_modes() {
    return {MixingMode::acm_only, MixingMode::gdm_only, MixingMode::hard, MixingMode::sigmoid_fixed,
            MixingMode::neural};
}

void print_rmse(const EvalReport& rep) {
    std::printf("%-8s %12s %12s %12s %12s\n", "mode", "ACM", "GDM", "Transition", "Total");
    auto cell = [](const std::optional<double>& v) {
        char b[32];
        if (v) std::snprintf(b, sizeof b, "%12.4e", *v);
        else std::snprintf(b, sizeof b, "%12s", "-");
        return std::string(b);
    };
    for (const auto& m : rep.modes) {
        std::printf("%-8s %s %s %s %s\n", std::string(to_string(m.mode)).c_str(), cell(m.one_step.acm).c_str(),
                    cell(m.one_step.gdm).c_str(), cell(m.one_step.transition).c_str(), cell(m.one_step.total).c_str());
    }
}

struct TrainArgs {
    std::string data, out;
    bool pub = false;
};

int run_train(const Globals& g, const TrainArgs& a) {
    Config cfg = load_cfg(g);
    const RegimePartition part = partition_of(cfg);
    const Exec ex = exec_of(g);
    const auto recs = load_records(a.data, a.pub, cfg, ex);
    const SplitResult sp = split(recs, SplitSpec{3, 1, true, cfg.loss.seed});
    std::vector<TrajectoryRecord> train, test;
    for (std::size_t i : sp.train) train.push_back(recs[i]);
    for (std::size_t i : sp.test) test.push_back(recs[i]);
    const Pools pools = partition_dataset(train, part);
    const MixerParams xi0 = default_mixer(cfg, part);

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res = three_phase_train(train, pools, cfg.phys, xi0, part, cfg.loss, ex);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(a.out);
    Config fitted = cfg;
    fitted.phys = res.phys;
    fitted.partition = part;
    {
        std::ofstream o(fs::path(a.out) / "params.json");
        o << config_to_json(fitted) << '\n';
    }
    save_mixer(fs::path(a.out) / "mixer.json", res.xi);
    write_lambda_csv(fs::path(a.out) / "lambda_surface.csv", lambda_surface(res.xi, res.grids.lattice, ex));
    {
        std::ofstream o(fs::path(a.out) / "split.csv");
        o << "id,set\n";
        for (std::size_t i : sp.train) o << recs[i].id << ",train\n";
        for (std::size_t i : sp.test) o << recs[i].id << ",test\n";
    }
    const std::vector<MixingMode> modes = all_modes();
    EvalOptions eo;
    eo.W = cfg.loss.W;
    eo.exec = ex;
    eo.rollout = {cfg.sim.dt, cfg.sim.lambda_per_stage};
    const EvalReport rep = evaluate(test.empty() ? train : test, res.phys, &res.xi, part, modes, eo);
    for (const auto& m : rep.modes) {
        if (m.mode == MixingMode::neural) res.report.rmse = m.one_step;
    }
    write_fit_report(a.out, res.report);
    write_eval_report(a.out, rep);

    Manifest man("train", g, cfg);
    man.add("records", std::to_string(recs.size()) + " (train " + std::to_string(train.size()) + ", test " +
                           std::to_string(test.size()) + ")");
    man.add("insufficient_repeats", sp.insufficient_repeats ? "yes (global split)" : "no");
    man.add("pools", "ACM " + std::to_string(pools.acm.size()) + ", GDM " + std::to_string(pools.gdm.size()) +
                         ", Transition " + std::to_string(pools.transition.size()));
    man.add("thresholds", "alpha1 " + fmt(part.alpha1) + ", alpha2 " + fmt(part.alpha2) + ", V1 " + fmt(part.V1) +
                              ", V2 " + fmt(part.V2));
    man.add("final_model_loss", fmt(res.report.final_model_loss));
    man.add("final_total_loss", fmt(res.report.final_total_loss));
    man.add("reg_terms", "anchor " + fmt(res.report.reg.anchor) + ", mono " + fmt(res.report.reg.mono) +
                             ", smooth " + fmt(res.report.reg.smooth));
    if (res.report.rmse) man.add("test_rmse_total_neural", opt_fmt(res.report.rmse->total));
    man.add("train_seconds", fmt(secs));
    man.write(a.out);
    print_rmse(rep);
    return 0;
}

struct EvalArgs {
    std::string data, out, run, params, mixer, horizon = "1";
    std::vector<std::string> modes;
    bool pub = false;
};

int run_evaluate(const Globals& g, const EvalArgs& a) {
    if (a.horizon != "1" && a.horizon != "free") throw Error(ErrorKind::InvalidArgument, "--horizon must be 1 or free");
    Config cfg = load_cfg(g);
    std::string params = a.params, mixer = a.mixer;
    if (!a.run.empty()) {
        if (params.empty()) params = (fs::path(a.run) / "params.json").string();
        if (mixer.empty()) mixer = (fs::path(a.run) / "mixer.json").string();
    }
    if (!params.empty()) {
        const Config fitted = load_config(params);
        cfg.phys = fitted.phys;
        if (fitted.partition) cfg.partition = fitted.partition;
    }
    const RegimePartition part = partition_of(cfg);
    std::vector<MixingMode> modes;
    for (const auto& m : a.modes) modes.push_back(parse_mixing_mode(m));
    if (modes.empty()) modes = all_modes();
    std::optional<MixerParams> xi;
    if (!mixer.empty()) xi = load_mixer(mixer);
    for (MixingMode m : modes) {
        if (m == MixingMode::neural && !xi) throw Error(ErrorKind::InvalidArgument, "neural mode needs --mixer or --run");
    }
    const auto recs = load_records(a.data, a.pub, cfg, exec_of(g));
    EvalOptions eo;
    eo.W = cfg.loss.W;
    eo.exec = exec_of(g);
    eo.rollout = {cfg.sim.dt, cfg.sim.lambda_per_stage};
    eo.n_curves = a.horizon == "free" ? recs.size() : 3;
    const EvalReport rep = evaluate(recs, cfg.phys, xi ? &*xi : nullptr, part, modes, eo);
    write_eval_report(a.out, rep);
    Manifest man("evaluate", g, cfg);
    man.add("horizon", a.horizon);
    man.add("params", params.empty() ? "config" : params);
    man.add("mixer", mixer.empty() ? "none" : mixer);
    if (a.horizon == "free") {
        std::ofstream o(fs::path(a.out) / "rollout_rmse.csv");
        o << "id,mode,linear,angular,diverged\n";
        for (const auto& c : rep.curves) {
            o << c.id << ',' << to_string(c.mode) << ',' << (c.linear.empty() ? 0.0 : c.linear.back()) << ','
              << (c.angular.empty() ? 0.0 : c.angular.back()) << ',' << (c.diverged ? 1 : 0) << '\n';
        }
    }
    for (const auto& m : rep.modes) man.add(std::string("total_rmse_") + std::string(to_string(m.mode)), opt_fmt(m.one_step.total));
    man.write(a.out);
    print_rmse(rep);
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
    std::size_t points = 50;
    std::string out;
};

int run_gradcheck(const Globals& g, const GradArgs& a) {
    Config cfg = load_cfg(g);
    const RegimePartition part = partition_of(cfg);
    // Small synthetic set generated under the fixed sigmoid so all three pools are populated.
    CampaignSpec spec;
    std::vector<ConfigKey> keys;
    const auto grid = config_grid();
    for (std::size_t i = 0; i < grid.size(); i += 11) keys.push_back(grid[i]);
    spec.configs = keys;
    spec.seed = cfg.loss.seed;
    spec.sim = cfg.sim;
    spec.thrust = cfg.thrust;
    const LambdaPolicy policy{MixingMode::sigmoid_fixed, nullptr, &part};
    const auto recs = simulate_campaign(spec, cfg.phys, policy, exec_of(g));
    const Pools pools = partition_dataset(recs, part);
    const FlowBox box = observed_box(recs, pools);
    RegGrids grids = make_reg_grids(part, box.alpha_lo, box.alpha_hi, box.V_lo, box.V_hi, 32, 11);
    grids.weights = cfg.loss.reg_weights;
    grids.sign = cfg.loss.mono_sign;
    GradCheckOptions o;
    o.points = a.points;
    o.seed = cfg.loss.seed;
    o.exec = exec_of(g);
    const auto res = gradient_check(recs, pools, cfg.phys, default_mixer(cfg, part), grids, cfg.loss, o);
    bool ok = true;
    std::printf("%-6s %7s %8s %6s %9s %11s\n", "phase", "points", "checked", "kinks", "failures", "worst_rel");
    for (const auto& r : res) {
        std::printf("%-6d %7zu %8zu %6zu %9zu %11.3e\n", r.phase, r.points, r.checked, r.kinks_skipped, r.failures,
                    r.worst_rel);
        ok = ok && r.ok();
    }
    if (!a.out.empty()) {
        Manifest man("gradcheck", g, cfg);
        for (const auto& r : res) {
            man.add("phase" + std::to_string(r.phase), std::to_string(r.failures) + " failures, worst " + fmt(r.worst_rel));
        }
        man.write(a.out);
    }
    std::cout << (ok ? "gradient contract satisfied\n" : "gradient contract VIOLATED\n");
    return ok ? 0 : 2;
}

// ---------------------------------------------------------------- export-lambda

struct ExportArgs {
    std::string mixer, run, data, out;
    double alpha_max = 1.2, V_max = 1.2;
    int n = 49;
    bool pub = false;
};

int run_export(const Globals& g, const ExportArgs& a) {
    Config cfg = load_cfg(g);
    std::string mixer = a.mixer;
    if (mixer.empty() && !a.run.empty()) mixer = (fs::path(a.run) / "mixer.json").string();
    if (mixer.empty()) throw Error(ErrorKind::InvalidArgument, "export-lambda needs --mixer or --run");
    if (!a.run.empty()) {
        const Config fitted = load_config(fs::path(a.run) / "params.json");
        cfg.phys = fitted.phys;
        if (fitted.partition) cfg.partition = fitted.partition;
    }
    const MixerParams xi = load_mixer(mixer);
    const Lattice lat{0.0, a.alpha_max, a.n, 0.0, a.V_max, a.n};
    lat.validate();
    fs::create_directories(a.out);
    write_lambda_csv(fs::path(a.out) / "lambda_surface.csv", lambda_surface(xi, lat, exec_of(g)));
    Manifest man("export-lambda", g, cfg);
    man.add("mixer", mixer);
    if (!a.data.empty()) {
        const auto recs = load_records(a.data, a.pub, cfg, exec_of(g));
        EvalOptions eo;
        eo.W = cfg.loss.W;
        eo.exec = exec_of(g);
        eo.n_curves = 0;
        const std::vector<MixingMode> modes = {MixingMode::neural};
        const EvalReport rep = evaluate(recs, cfg.phys, &xi, partition_of(cfg), modes, eo);
        std::ofstream o(fs::path(a.out) / "heatmap.csv");
        o << "level_sum,dr_x_cm,loss,samples\n";
        for (const auto& c : rep.heatmap.at(MixingMode::neural)) {
            o << c.level_sum << ',' << c.dr_x_cm << ',' << fmt(c.loss) << ',' << c.samples << '\n';
        }
        man.add("heatmap_records", std::to_string(recs.size()));
    }
    man.write(a.out);
    return 0;
}

// ---------------------------------------------------------------- mirror

struct MirrorArgs {
    std::string data, out;
    bool pub = false;
};

int run_mirror(const Globals& g, const MirrorArgs& a) {
    Config cfg = load_cfg(g);
    const auto recs = load_records(a.data, a.pub, cfg, exec_of(g));
    std::vector<TrajectoryRecord> out;
    for (const auto& r : recs) out.push_back(mirror_trajectory(r));
    save_dataset(a.out, out);
    Manifest man("mirror", g, cfg);
    man.add("records", std::to_string(out.size()));
    man.write(a.out);
    std::cout << "wrote " << out.size() << " mirrored trajectories to " << a.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid aerodynamic model of a winged blimp: simulation and identification"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    Globals g;
    for (int i = 0; i < argc; ++i) g.argv += (i ? " " : "") + std::string(argv[i]);
    app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed (overrides loss.seed)");
    app.add_option("--threads", g.threads, "Worker thread cap (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--serial", g.serial, "Use the serial reference kernels");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Roll out the model for an input file or a synthetic campaign");
    sim->add_option("--input", sa.input, "Inputs CSV: t,Fl_gf,Fr_gf,rbar_x,rbar_y,rbar_z")->check(CLI::ExistingFile);
    sim->add_option("--mode", sa.mode, "acm | gdm | hard | sigmoid | neural")->capture_default_str();
    sim->add_option("--mixer", sa.mixer, "Mixer JSON (default: reference mixer)")->check(CLI::ExistingFile);
    sim->add_option("--out", sa.out, "Output directory")->required();
    sim->add_flag("--campaign", sa.campaign, "Generate the configuration-grid campaign instead");
    sim->add_option("--repeats", sa.repeats, "Repeats per configuration")->capture_default_str();
    sim->add_option("--stride", sa.stride, "Use every n-th configuration")->capture_default_str();
    sim->add_option("--duration-min", sa.dur_min, "[s]")->capture_default_str();
    sim->add_option("--duration-max", sa.dur_max, "[s]")->capture_default_str();

    SteadyArgs st;
    auto* fs_cmd = app.add_subcommand("fit-steady", "Steady-state wrenches, OLS fits and switching thresholds");
    fs_cmd->add_option("--data", st.data, "Trajectory directory")->required()->check(CLI::ExistingDirectory);
    fs_cmd->add_option("--out", st.out, "Output directory")->required();
    fs_cmd->add_flag("--mirror", st.mirror, "Augment with left-right mirror images");
    fs_cmd->add_flag("--public", st.pub, "Read the released dataset layout");

    PartitionArgs pa;
    auto* part = app.add_subcommand("partition", "Assign one-step pairs to the ACM / GDM / Transition pools");
    part->add_option("--data", pa.data)->required()->check(CLI::ExistingDirectory);
    part->add_option("--out", pa.out)->required();
    part->add_flag("--public", pa.pub, "Read the released dataset layout");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Three-phase identification on a 3:1 split");
    train->add_option("--data", ta.data)->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", ta.out)->required();
    train->add_flag("--public", ta.pub, "Read the released dataset layout");

    EvalArgs ea;
    auto* eval = app.add_subcommand("evaluate", "Region RMSE, heatmap and cumulative RMSE per mixing mode");
    eval->add_option("--data", ea.data)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", ea.out)->required();
    eval->add_option("--run", ea.run, "Training output directory (params.json, mixer.json)")->check(CLI::ExistingDirectory);
    eval->add_option("--params", ea.params, "Fitted parameter JSON")->check(CLI::ExistingFile);
    eval->add_option("--mixer", ea.mixer, "Mixer JSON")->check(CLI::ExistingFile);
    eval->add_option("--mode", ea.modes, "Mixing modes (repeatable; default all)");
    eval->add_option("--horizon", ea.horizon, "1 (one-step) or free (rollouts for every record)")->capture_default_str();
    eval->add_flag("--public", ea.pub, "Read the released dataset layout");

    GradArgs ga;
    auto* grad = app.add_subcommand("gradcheck", "Analytic gradients against central differences");
    grad->add_option("--points", ga.points, "Random points per phase")->capture_default_str();
    grad->add_option("--out", ga.out, "Optional output directory for the manifest");

    ExportArgs xa;
    auto* exp = app.add_subcommand("export-lambda", "Lambda surface grid and loss heatmap tables");
    exp->add_option("--mixer", xa.mixer)->check(CLI::ExistingFile);
    exp->add_option("--run", xa.run)->check(CLI::ExistingDirectory);
    exp->add_option("--data", xa.data, "Records for the heatmap")->check(CLI::ExistingDirectory);
    exp->add_option("--out", xa.out)->required();
    exp->add_option("--alpha-max", xa.alpha_max)->capture_default_str();
    exp->add_option("--V-max", xa.V_max)->capture_default_str();
    exp->add_option("--n", xa.n, "Nodes per axis")->capture_default_str();
    exp->add_flag("--public", xa.pub, "Read the released dataset layout");

    MirrorArgs ma;
    auto* mir = app.add_subcommand("mirror", "Write left-right mirrored copies of every trajectory");
    mir->add_option("--data", ma.data)->required()->check(CLI::ExistingDirectory);
    mir->add_option("--out", ma.out)->required();
    mir->add_flag("--public", ma.pub, "Read the released dataset layout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    g.seed_set = seed_opt->count() > 0;
    if (g.threads > 0) set_thread_count(g.threads);

    try {
        if (*sim) return run_simulate(g, sa);
        if (*fs_cmd) return run_fit_steady(g, st);
        if (*part) return run_partition(g, pa);
        if (*train) return run_train(g, ta);
        if (*eval) return run_evaluate(g, ea);
        if (*grad) return run_gradcheck(g, ga);
        if (*exp) return run_export(g, xa);
        if (*mir) return run_mirror(g, ma);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.is_validation() ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
