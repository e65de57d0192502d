#include "blimp/dataio.hpp"

#include "blimp/errors.hpp"
#include "blimp/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace blimp {

using nlohmann::json;

void TrajectoryRecord::validate() const {
    if (t.size() < 2) throw Error(ErrorKind::InvalidArgument, id + ": need at least 2 samples");
    if (x.size() != t.size() || u.size() != t.size()) throw Error(ErrorKind::LengthMismatch, id + ": column lengths");
    if (!(rate_hz > 0.0)) throw Error(ErrorKind::RateError, id + ": rate must be positive");
    const double nominal = 1.0 / rate_hz;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
        const double dt = t[k + 1] - t[k];
        if (!(std::abs(dt - nominal) <= 0.01 * nominal)) {
            std::ostringstream msg;
            msg << id << ": timestep " << dt << " s at sample " << k + 1 << " deviates from 1/" << rate_hz << " s";
            throw Error(ErrorKind::RateError, msg.str());
        }
    }
}

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (b != e && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

struct RawTable {
    std::map<std::string, std::string> meta;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> row_line;
};

RawTable read_table(std::istream& in) {
    RawTable tab;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            const std::size_t colon = t.find(':');
            if (colon != std::string::npos) tab.meta[trim(t.substr(1, colon - 1))] = trim(t.substr(colon + 1));
            continue;
        }
        if (tab.header.empty()) {
            tab.header = split_csv(t);
            continue;
        }
        const std::vector<std::string> cells = split_csv(t);
        if (cells.size() != tab.header.size()) {
            throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) + ": expected " +
                                                   std::to_string(tab.header.size()) + " fields, got " +
                                                   std::to_string(cells.size()));
        }
        std::vector<double> row(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) row[c] = parse_double(cells[c], ln);
        tab.rows.push_back(std::move(row));
        tab.row_line.push_back(ln);
    }
    if (tab.header.empty()) throw Error(ErrorKind::ParseError, "line " + std::to_string(ln) + ": missing header");
    return tab;
}

int meta_int(const RawTable& tab, const char* key, int fallback) {
    const auto it = tab.meta.find(key);
    if (it == tab.meta.end()) return fallback;
    return static_cast<int>(std::lround(parse_double(it->second, 0)));
}

double median_dt(const std::vector<double>& t) {
    std::vector<double> d;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) d.push_back(t[k + 1] - t[k]);
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    return d[d.size() / 2];
}

// Gondola velocity and acceleration from the sampled positions.
void differentiate_gondola(TrajectoryRecord& rec) {
    const std::size_t n = rec.size();
    const double dt = rec.dt();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t a = k == 0 ? 0 : k - 1;
        const std::size_t b = k + 1 == n ? n - 1 : k + 1;
        rec.u[k].r_bar_dot = (rec.u[b].r_bar - rec.u[a].r_bar) / (static_cast<double>(b - a) * dt);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t a = k == 0 ? 0 : k - 1;
        const std::size_t b = k + 1 == n ? n - 1 : k + 1;
        rec.u[k].r_bar_ddot = (rec.u[b].r_bar_dot - rec.u[a].r_bar_dot) / (static_cast<double>(b - a) * dt);
    }
}

void finish_record(TrajectoryRecord& rec, const RawTable& tab) {
    if (rec.size() < 2) throw Error(ErrorKind::ParseError, rec.id + ": need at least 2 samples");
    const auto it = tab.meta.find("rate_hz");
    rec.rate_hz = it != tab.meta.end() ? parse_double(it->second, 0) : 1.0 / median_dt(rec.t);
    for (std::size_t k = 0; k + 1 < rec.t.size(); ++k) {
        if (!(rec.t[k + 1] > rec.t[k])) {
            throw Error(ErrorKind::RateError, rec.id + ": timestamps not increasing at line " +
                                                  std::to_string(tab.row_line[k + 1]));
        }
    }
    rec.validate();
    differentiate_gondola(rec);
    if (!rec.has_velocity) reconstruct_velocities(rec);
}

}  // namespace

void reconstruct_velocities(TrajectoryRecord& rec) {
    const std::size_t n = rec.size();
    if (n < 2) return;
    // Unwrap the angles so differences stay small across +/- pi.
    std::vector<Vec3> ang(n);
    ang[0] = rec.x[0].segment<3>(3);
    for (std::size_t k = 1; k < n; ++k) {
        Vec3 d = rec.x[k].segment<3>(3) - rec.x[k - 1].segment<3>(3);
        for (int i = 0; i < 3; ++i) d(i) = std::remainder(d(i), 2.0 * kPi);
        ang[k] = ang[k - 1] + d;
    }
    const double dt = rec.dt();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t a = k == 0 ? 0 : k - 1;
        const std::size_t b = k + 1 == n ? n - 1 : k + 1;
        const double span = static_cast<double>(b - a) * dt;
        const Vec3 pos_dot = (rec.x[b].head<3>() - rec.x[a].head<3>()) / span;
        const Vec3 ang_dot = (ang[b] - ang[a]) / span;
        const EulerAngles e = attitude(rec.x[k]);
        rec.x[k].segment<3>(6) = rotation_body_to_inertial(e).transpose() * pos_dot;
        rec.x[k].segment<3>(9) = euler_rate_map(e).inverse() * ang_dot;
    }
    rec.has_velocity = false;
}

TrajectoryRecord parse_trajectory(std::istream& in, const std::string& fallback_id) {
    const RawTable tab = read_table(in);
    std::map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < tab.header.size(); ++c) col[tab.header[c]] = c;
    const std::array<const char*, 12> required = {"t", "x", "y", "z", "phi", "theta", "psi",
                                                  "Fl_gf", "Fr_gf", "rbar_x", "rbar_y", "rbar_z"};
    for (const char* r : required) {
        if (!col.count(r)) throw Error(ErrorKind::ParseError, std::string("line 1: missing column '") + r + "'");
    }
    const std::array<const char*, 6> vel = {"u", "v", "w", "p", "q", "r"};
    std::size_t nvel = 0;
    for (const char* v : vel) nvel += col.count(v);
    if (nvel != 0 && nvel != 6) throw Error(ErrorKind::ParseError, "line 1: velocity columns must be all present or all absent");

    TrajectoryRecord rec;
    rec.id = tab.meta.count("id") ? tab.meta.at("id") : fallback_id;
    rec.config = {meta_int(tab, "level_l", -1), meta_int(tab, "level_r", -1), meta_int(tab, "dr_x_cm", 0)};
    rec.has_velocity = nvel == 6;
    const std::array<const char*, 6> pose = {"x", "y", "z", "phi", "theta", "psi"};
    for (const auto& row : tab.rows) {
        rec.t.push_back(row[col["t"]]);
        State s = State::Zero();
        for (int i = 0; i < 6; ++i) s(i) = row[col[pose[i]]];
        if (rec.has_velocity) {
            for (int i = 0; i < 6; ++i) s(6 + i) = row[col[vel[i]]];
        }
        rec.x.push_back(s);
        ControlInput u;
        u.Fl = row[col["Fl_gf"]] * kGramForce;
        u.Fr = row[col["Fr_gf"]] * kGramForce;
        u.r_bar = Vec3(row[col["rbar_x"]], row[col["rbar_y"]], row[col["rbar_z"]]);
        rec.u.push_back(u);
    }
    finish_record(rec, tab);
    return rec;
}

TrajectoryRecord load_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    try {
        return parse_trajectory(in, path.stem().string());
    } catch (const Error& e) {
        throw Error(e.kind(), path.filename().string() + ": " + e.message());
    }
}

void write_trajectory(std::ostream& out, const TrajectoryRecord& rec) {
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "# id: " << rec.id << '\n'
        << "# level_l: " << rec.config.level_l << '\n'
        << "# level_r: " << rec.config.level_r << '\n'
        << "# dr_x_cm: " << rec.config.dr_x_cm << '\n'
        << "# rate_hz: " << num(rec.rate_hz) << '\n';
    bool first = true;
    for (std::size_t c = 0; c < kTrajectoryColumns.size(); ++c) {
        if (!rec.has_velocity && c >= 7 && c <= 12) continue;
        out << (first ? "" : ",") << kTrajectoryColumns[c];
        first = false;
    }
    out << '\n';
    for (std::size_t k = 0; k < rec.size(); ++k) {
        const State& s = rec.x[k];
        const ControlInput& u = rec.u[k];
        out << num(rec.t[k]);
        for (int i = 0; i < 6; ++i) out << ',' << num(s(i));
        if (rec.has_velocity) {
            for (int i = 6; i < 12; ++i) out << ',' << num(s(i));
        }
        out << ',' << num(u.Fl / kGramForce) << ',' << num(u.Fr / kGramForce) << ',' << num(u.r_bar.x()) << ','
            << num(u.r_bar.y()) << ',' << num(u.r_bar.z()) << '\n';
    }
}

void save_trajectory(const std::filesystem::path& path, const TrajectoryRecord& rec) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    write_trajectory(out, rec);
}

namespace {

std::vector<std::filesystem::path> csv_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::IoError, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::vector<TrajectoryRecord> load_dataset(const std::filesystem::path& dir, Exec exec) {
    const auto files = csv_files(dir);
    std::vector<TrajectoryRecord> out(files.size());
    parallel_for(exec, files.size(), [&](std::size_t i) { out[i] = load_trajectory(files[i]); });
    return out;
}

void save_dataset(const std::filesystem::path& dir, std::span<const TrajectoryRecord> recs) {
    std::filesystem::create_directories(dir);
    for (const auto& r : recs) save_trajectory(dir / (r.id + ".csv"), r);
}

double ThrustMap::newtons(int level) const {
    if (level < 0 || level > 8) throw Error(ErrorKind::InvalidArgument, "thrust level must be in 0..8");
    return gf[static_cast<std::size_t>(level)] * kGramForce;
}

void ThrustMap::validate() const {
    if (gf[0] != 0.0) throw Error(ErrorKind::InvalidArgument, "thrust level 0 must map to 0 gf");
    for (std::size_t k = 1; k < gf.size(); ++k) {
        if (!(gf[k] >= gf[k - 1])) throw Error(ErrorKind::InvalidArgument, "thrust map must be non-decreasing");
    }
}

namespace {

struct Alias {
    const char* canonical;
    const char* name;
    double scale;
};

// Accepted spellings for the released data; the first match per canonical column wins.
constexpr Alias kAliases[] = {
    {"t", "t", 1.0},           {"t", "time", 1.0},         {"t", "timestamp", 1.0},   {"t", "time_s", 1.0},
    {"x", "x", 1.0},           {"x", "pos_x", 1.0},        {"x", "px", 1.0},          {"x", "x_mm", 1e-3},
    {"y", "y", 1.0},           {"y", "pos_y", 1.0},        {"y", "py", 1.0},          {"y", "y_mm", 1e-3},
    {"z", "z", 1.0},           {"z", "pos_z", 1.0},        {"z", "pz", 1.0},          {"z", "z_mm", 1e-3},
    {"phi", "phi", 1.0},       {"phi", "roll", 1.0},       {"phi", "roll_deg", kPi / 180.0},
    {"theta", "theta", 1.0},   {"theta", "pitch", 1.0},    {"theta", "pitch_deg", kPi / 180.0},
    {"psi", "psi", 1.0},       {"psi", "yaw", 1.0},        {"psi", "yaw_deg", kPi / 180.0},
    {"u", "u", 1.0},           {"u", "vel_u", 1.0},        {"v", "v", 1.0},           {"v", "vel_v", 1.0},
    {"w", "w", 1.0},           {"w", "vel_w", 1.0},        {"p", "p", 1.0},           {"p", "rate_p", 1.0},
    {"q", "q", 1.0},           {"q", "rate_q", 1.0},       {"r", "r", 1.0},           {"r", "rate_r", 1.0},
    {"Fl_N", "fl_gf", kGramForce}, {"Fl_N", "thrust_l_gf", kGramForce}, {"Fl_N", "fl_n", 1.0},
    {"Fr_N", "fr_gf", kGramForce}, {"Fr_N", "thrust_r_gf", kGramForce}, {"Fr_N", "fr_n", 1.0},
    {"level_l", "pwm_l", 1.0}, {"level_l", "level_l", 1.0}, {"level_l", "pwm_left", 1.0},
    {"level_r", "pwm_r", 1.0}, {"level_r", "level_r", 1.0}, {"level_r", "pwm_right", 1.0},
    {"rbar_x", "rbar_x", 1.0}, {"rbar_x", "gondola_x", 1.0}, {"rbar_x", "rbar_x_cm", 1e-2},
    {"rbar_y", "rbar_y", 1.0}, {"rbar_y", "gondola_y", 1.0},
    {"rbar_z", "rbar_z", 1.0}, {"rbar_z", "gondola_z", 1.0},
};

}  // namespace

TrajectoryRecord load_public_trajectory(const std::filesystem::path& path, const ThrustMap& thrust) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    const RawTable tab = read_table(in);
    std::map<std::string, std::pair<std::size_t, double>> col;
    for (const Alias& a : kAliases) {
        if (col.count(a.canonical)) continue;
        for (std::size_t c = 0; c < tab.header.size(); ++c) {
            if (lower(tab.header[c]) == a.name) {
                col[a.canonical] = {c, a.scale};
                break;
            }
        }
    }
    auto need = [&](const char* k) {
        if (!col.count(k)) throw Error(ErrorKind::ParseError, path.filename().string() + ": no column for '" + k + "'");
    };
    for (const char* k : {"t", "x", "y", "z", "phi", "theta", "psi"}) need(k);
    const bool thrust_n = col.count("Fl_N") && col.count("Fr_N");
    const bool thrust_lvl = col.count("level_l") && col.count("level_r");
    if (!thrust_n && !thrust_lvl) throw Error(ErrorKind::ParseError, path.filename().string() + ": no thrust columns");
    const bool has_vel = col.count("u") && col.count("v") && col.count("w") && col.count("p") && col.count("q") &&
                         col.count("r");
    auto get = [&](const std::vector<double>& row, const char* k, double fallback) {
        const auto it = col.find(k);
        return it == col.end() ? fallback : row[it->second.first] * it->second.second;
    };

    TrajectoryRecord rec;
    rec.id = tab.meta.count("id") ? tab.meta.at("id") : path.stem().string();
    rec.has_velocity = has_vel;
    const int dr_cm = meta_int(tab, "dr_x_cm", 0);
    const double rbar_z = tab.meta.count("rbar_z") ? parse_double(tab.meta.at("rbar_z"), 0) : SimConfig{}.rbar_z;
    for (const auto& row : tab.rows) {
        rec.t.push_back(get(row, "t", 0.0));
        State s = State::Zero();
        const std::array<const char*, 12> names = {"x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r"};
        for (int i = 0; i < (has_vel ? 12 : 6); ++i) s(i) = get(row, names[i], 0.0);
        rec.x.push_back(s);
        ControlInput u;
        if (thrust_n) {
            u.Fl = get(row, "Fl_N", 0.0);
            u.Fr = get(row, "Fr_N", 0.0);
        } else {
            u.Fl = thrust.newtons(static_cast<int>(std::lround(get(row, "level_l", 0.0))));
            u.Fr = thrust.newtons(static_cast<int>(std::lround(get(row, "level_r", 0.0))));
        }
        u.r_bar = Vec3(get(row, "rbar_x", dr_cm * 1e-2), get(row, "rbar_y", 0.0), get(row, "rbar_z", rbar_z));
        rec.u.push_back(u);
    }
    int ll = meta_int(tab, "level_l", -1), lr = meta_int(tab, "level_r", -1);
    if (thrust_lvl && !rec.x.empty()) {
        ll = static_cast<int>(std::lround(get(tab.rows.front(), "level_l", -1.0)));
        lr = static_cast<int>(std::lround(get(tab.rows.front(), "level_r", -1.0)));
    }
    rec.config = {ll, lr, dr_cm};
    try {
        finish_record(rec, tab);
    } catch (const Error& e) {
        throw Error(e.kind(), path.filename().string() + ": " + e.message());
    }
    return rec;
}

std::vector<TrajectoryRecord> load_public_dataset(const std::filesystem::path& dir, const ThrustMap& thrust,
                                                  Exec exec) {
    const auto files = csv_files(dir);
    std::vector<TrajectoryRecord> out(files.size());
    parallel_for(exec, files.size(), [&](std::size_t i) { out[i] = load_public_trajectory(files[i], thrust); });
    return out;
}

TrajectoryRecord mirror_trajectory(const TrajectoryRecord& rec) {
    static const std::string kSuffix = "_mirror";
    TrajectoryRecord m = rec;
    const bool mirrored = m.id.size() >= kSuffix.size() &&
                          m.id.compare(m.id.size() - kSuffix.size(), kSuffix.size(), kSuffix) == 0;
    m.id = mirrored ? m.id.substr(0, m.id.size() - kSuffix.size()) : m.id + kSuffix;
    std::swap(m.config.level_l, m.config.level_r);
    for (auto& s : m.x) {
        for (int i : {1, 3, 5, 7, 9, 11}) s(i) = -s(i);
    }
    for (auto& u : m.u) {
        std::swap(u.Fl, u.Fr);
        u.r_bar.y() = -u.r_bar.y();
        u.r_bar_dot.y() = -u.r_bar_dot.y();
        u.r_bar_ddot.y() = -u.r_bar_ddot.y();
    }
    return m;
}

Pools partition_dataset(std::span<const TrajectoryRecord> records, const RegimePartition& part) {
    part.validate();
    Pools pools;
    for (std::size_t r = 0; r < records.size(); ++r) {
        for (std::size_t k = 0; k + 1 < records[r].size(); ++k) {
            const Region reg = classify_regime(part, flow_of(records[r].x[k]));
            pools.of(reg).push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(k)});
        }
    }
    return pools;
}

SplitResult split(std::span<const TrajectoryRecord> records, const SplitSpec& spec) {
    if (spec.train_parts <= 0 || spec.test_parts <= 0) throw Error(ErrorKind::InvalidArgument, "split ratio parts must be positive");
    const std::size_t parts = static_cast<std::size_t>(spec.train_parts + spec.test_parts);
    SplitResult res;
    std::mt19937_64 rng(spec.seed);
    auto assign = [&](std::vector<std::size_t> group) {
        std::shuffle(group.begin(), group.end(), rng);
        const std::size_t n_test = static_cast<std::size_t>(
            std::llround(static_cast<double>(group.size()) * spec.test_parts / static_cast<double>(parts)));
        for (std::size_t i = 0; i < group.size(); ++i) (i < n_test ? res.test : res.train).push_back(group[i]);
    };

    std::map<ConfigKey, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].config].push_back(i);
    bool enough = true;
    for (const auto& [k, g] : groups) enough = enough && g.size() >= parts;

    if (spec.stratify && enough) {
        for (const auto& [k, g] : groups) assign(g);
    } else {
        if (spec.stratify) {
            res.insufficient_repeats = true;
            log_warn("some configurations have fewer than " + std::to_string(parts) +
                     " repeats; falling back to a global split");
        }
        std::vector<std::size_t> all(records.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        assign(all);
    }
    std::sort(res.train.begin(), res.train.end());
    std::sort(res.test.begin(), res.test.end());
    return res;
}

// ---------------------------------------------------------------- config

namespace {

class KeyChecker {
public:
    void check(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
        if (!j.is_object()) throw Error(ErrorKind::SchemaError, "'" + path + "' must be an object");
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [k, v] : j.items()) {
            if (!ok.count(k)) unknown_.push_back(path.empty() ? k : path + "." + k);
        }
    }
    void finish() const {
        if (unknown_.empty()) return;
        std::string msg = "unknown keys:";
        for (const auto& k : unknown_) msg += " " + k;
        throw Error(ErrorKind::SchemaError, msg);
    }

private:
    std::vector<std::string> unknown_;
};

template <class T> void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::SchemaError, std::string("key '") + key + "': " + e.what());
    }
}

template <int N> void read_vec(const json& j, const char* key, Eigen::Matrix<double, N, 1>& out) {
    if (!j.contains(key)) return;
    std::vector<double> v;
    read(j, key, v);
    if (v.size() != static_cast<std::size_t>(N)) {
        throw Error(ErrorKind::SchemaError, std::string("key '") + key + "' needs " + std::to_string(N) + " numbers");
    }
    for (int i = 0; i < N; ++i) out(i) = v[static_cast<std::size_t>(i)];
}

template <int N> std::vector<double> to_vec(const Eigen::Matrix<double, N, 1>& v) {
    return std::vector<double>(v.data(), v.data() + N);
}

}  // namespace

Config parse_config(const std::string& text) {
    Config cfg;
    if (trim(text).empty()) return cfg;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ParseError, std::string("config: ") + e.what());
    }
    KeyChecker kc;
    kc.check(j, "", {"physical", "acm", "gdm", "partition", "mixer", "loss", "thrust_map", "sim"});
    PhysicalParams& p = cfg.phys;

    if (j.contains("physical")) {
        const json& s = j["physical"];
        kc.check(s, "physical", {"m0", "m_bar", "I0", "r0", "buoyancy", "net_weight_gf", "g", "d", "added_mass",
                                 "rho", "area"});
        read(s, "m0", p.m0);
        read(s, "m_bar", p.m_bar);
        if (s.contains("I0")) {
            std::vector<double> v;
            read(s, "I0", v);
            if (v.size() == 3) p.I0 = Vec3(v[0], v[1], v[2]).asDiagonal();
            else if (v.size() == 9) p.I0 = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data());
            else throw Error(ErrorKind::SchemaError, "key 'I0' needs 3 (diagonal) or 9 numbers");
        }
        read_vec(s, "r0", p.r0);
        read(s, "g", p.g);
        read(s, "d", p.d);
        read_vec(s, "added_mass", p.added_mass);
        read(s, "rho", p.acm.rho);
        read(s, "area", p.acm.area);
        if (s.contains("buoyancy") && s.contains("net_weight_gf")) {
            throw Error(ErrorKind::SchemaError, "give either 'buoyancy' or 'net_weight_gf', not both");
        }
        if (s.contains("buoyancy")) {
            read(s, "buoyancy", p.buoyancy);
        } else {
            double net = 6.25;
            read(s, "net_weight_gf", net);
            p.buoyancy = p.total_mass() * p.g - net * kGramForce;
        }
    }
    if (j.contains("acm")) {
        const json& s = j["acm"];
        kc.check(s, "acm", {"basis", "coeffs", "damping"});
        if (s.contains("basis")) {
            const json& b = s["basis"];
            kc.check(b, "acm.basis", {"CD", "CS", "CL", "CM1", "CM2", "CM3"});
            for (std::size_t ch = 0; ch < 6; ++ch) {
                const std::string name(kAcmLoadNames[ch]);
                if (!b.contains(name)) continue;
                std::vector<std::array<int, 2>> terms;
                read(b, name.c_str(), terms);
                p.acm.poly[ch].terms.clear();
                for (const auto& t : terms) p.acm.poly[ch].terms.push_back({t[0], t[1]});
                p.acm.poly[ch].coeffs.assign(terms.size(), 0.0);
            }
        }
        if (s.contains("coeffs")) {
            const json& c = s["coeffs"];
            kc.check(c, "acm.coeffs", {"CD", "CS", "CL", "CM1", "CM2", "CM3"});
            for (std::size_t ch = 0; ch < 6; ++ch) {
                const std::string name(kAcmLoadNames[ch]);
                if (!c.contains(name)) continue;
                std::vector<double> v;
                read(c, name.c_str(), v);
                if (v.size() != p.acm.poly[ch].terms.size()) {
                    throw Error(ErrorKind::SchemaError, "acm.coeffs." + name + " does not match its basis size");
                }
                p.acm.poly[ch].coeffs = v;
            }
        }
        read_vec(s, "damping", p.acm.damping);
    }
    if (j.contains("gdm")) {
        const json& s = j["gdm"];
        kc.check(s, "gdm", {"linear", "quadratic"});
        read_vec(s, "linear", p.gdm.linear);
        read_vec(s, "quadratic", p.gdm.quadratic);
    }
    if (j.contains("partition")) {
        const json& s = j["partition"];
        kc.check(s, "partition", {"alpha_star", "V_star", "band", "alpha1", "alpha2", "V1", "V2"});
        double as = 0.40, vs = 0.45, band = 0.2;
        read(s, "alpha_star", as);
        read(s, "V_star", vs);
        read(s, "band", band);
        RegimePartition part = RegimePartition::from_switch_points(as, vs, band);
        read(s, "alpha1", part.alpha1);
        read(s, "alpha2", part.alpha2);
        read(s, "V1", part.V1);
        read(s, "V2", part.V2);
        part.validate();
        cfg.partition = part;
    }
    if (j.contains("mixer")) {
        const json& s = j["mixer"];
        kc.check(s, "mixer", {"widths", "alpha_scale", "V_scale", "seed"});
        read(s, "widths", cfg.mixer.widths);
        if (s.contains("alpha_scale")) cfg.mixer.alpha_scale = s["alpha_scale"].get<double>();
        if (s.contains("V_scale")) cfg.mixer.V_scale = s["V_scale"].get<double>();
        read(s, "seed", cfg.mixer.seed);
    }
    if (j.contains("loss")) {
        const json& s = j["loss"];
        LossConfig& l = cfg.loss;
        kc.check(s, "loss", {"W", "w_anchor", "w_mono", "w_smooth", "mono_sign", "n_anchor", "n_grid", "batch_size",
                             "lr_12", "lr_3", "epochs", "seed", "optimizer", "grad_method", "scale_floor"});
        read_vec(s, "W", l.W);
        read(s, "w_anchor", l.reg_weights.anchor);
        read(s, "w_mono", l.reg_weights.mono);
        read(s, "w_smooth", l.reg_weights.smooth);
        if (s.contains("mono_sign")) {
            const std::string v = s["mono_sign"].get<std::string>();
            if (v == "prose") l.mono_sign = MonoSign::prose;
            else if (v == "printed") l.mono_sign = MonoSign::printed;
            else throw Error(ErrorKind::SchemaError, "mono_sign must be 'prose' or 'printed'");
        }
        read(s, "n_anchor", l.n_anchor);
        read(s, "n_grid", l.n_grid);
        read(s, "batch_size", l.batch_size);
        read(s, "lr_12", l.lr_12);
        read(s, "lr_3", l.lr_3);
        if (s.contains("epochs")) {
            std::array<int, 3> e{};
            read(s, "epochs", e);
            l.epochs1 = e[0];
            l.epochs2 = e[1];
            l.epochs3 = e[2];
        }
        read(s, "seed", l.seed);
        if (s.contains("optimizer")) {
            const std::string v = s["optimizer"].get<std::string>();
            if (v == "adam") l.optimizer = OptimizerKind::adam;
            else if (v == "sgd") l.optimizer = OptimizerKind::sgd;
            else throw Error(ErrorKind::SchemaError, "optimizer must be 'adam' or 'sgd'");
        }
        if (s.contains("grad_method")) {
            const std::string v = s["grad_method"].get<std::string>();
            if (v == "autodiff") l.grad_method = GradMethod::autodiff;
            else if (v == "finite_difference") l.grad_method = GradMethod::finite_difference;
            else throw Error(ErrorKind::SchemaError, "grad_method must be 'autodiff' or 'finite_difference'");
        }
        read(s, "scale_floor", l.scale_floor);
    }
    if (j.contains("thrust_map")) {
        const json& s = j["thrust_map"];
        kc.check(s, "thrust_map", {"gf"});
        read(s, "gf", cfg.thrust.gf);
    }
    if (j.contains("sim")) {
        const json& s = j["sim"];
        kc.check(s, "sim", {"dt", "lambda_per_stage", "rbar_z", "position_noise", "duration"});
        read(s, "dt", cfg.sim.dt);
        read(s, "lambda_per_stage", cfg.sim.lambda_per_stage);
        read(s, "rbar_z", cfg.sim.rbar_z);
        read(s, "position_noise", cfg.sim.position_noise);
        read(s, "duration", cfg.sim.duration);
    }
    kc.finish();

    auto wrap = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::InvalidArgument) throw Error(ErrorKind::SchemaError, e.message());
            throw;
        }
    };
    wrap([&] { validate(cfg.phys); });
    wrap([&] { cfg.loss.validate(); });
    wrap([&] { cfg.thrust.validate(); });
    if (!(cfg.sim.dt > 0.0) || !(cfg.sim.duration > 0.0) || cfg.sim.position_noise < 0.0) {
        throw Error(ErrorKind::SchemaError, "sim.dt and sim.duration must be positive, position_noise nonnegative");
    }
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const Config& cfg) {
    const PhysicalParams& p = cfg.phys;
    json j;
    std::vector<double> i0(9);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) i0[static_cast<std::size_t>(3 * r + c)] = p.I0(r, c);
    }
    j["physical"] = {{"m0", p.m0},           {"m_bar", p.m_bar},   {"I0", i0},
                     {"r0", to_vec(p.r0)},   {"buoyancy", p.buoyancy}, {"g", p.g},
                     {"d", p.d},             {"added_mass", to_vec(p.added_mass)},
                     {"rho", p.acm.rho},     {"area", p.acm.area}};
    json basis, coeffs;
    for (std::size_t ch = 0; ch < 6; ++ch) {
        const std::string name(kAcmLoadNames[ch]);
        json terms = json::array();
        for (const auto& m : p.acm.poly[ch].terms) terms.push_back({m.alpha_pow, m.beta_pow});
        basis[name] = terms;
        coeffs[name] = p.acm.poly[ch].coeffs;
    }
    j["acm"] = {{"basis", basis}, {"coeffs", coeffs}, {"damping", to_vec(p.acm.damping)}};
    j["gdm"] = {{"linear", to_vec(p.gdm.linear)}, {"quadratic", to_vec(p.gdm.quadratic)}};
    if (cfg.partition) {
        const RegimePartition& r = *cfg.partition;
        j["partition"] = {{"alpha_star", r.alpha_star}, {"V_star", r.V_star}, {"alpha1", r.alpha1},
                          {"alpha2", r.alpha2},         {"V1", r.V1},         {"V2", r.V2}};
    }
    j["mixer"] = {{"widths", cfg.mixer.widths}, {"seed", cfg.mixer.seed}};
    if (cfg.mixer.alpha_scale) j["mixer"]["alpha_scale"] = *cfg.mixer.alpha_scale;
    if (cfg.mixer.V_scale) j["mixer"]["V_scale"] = *cfg.mixer.V_scale;
    const LossConfig& l = cfg.loss;
    j["loss"] = {{"W", to_vec(l.W)},
                 {"w_anchor", l.reg_weights.anchor},
                 {"w_mono", l.reg_weights.mono},
                 {"w_smooth", l.reg_weights.smooth},
                 {"mono_sign", l.mono_sign == MonoSign::prose ? "prose" : "printed"},
                 {"n_anchor", l.n_anchor},
                 {"n_grid", l.n_grid},
                 {"batch_size", l.batch_size},
                 {"lr_12", l.lr_12},
                 {"lr_3", l.lr_3},
                 {"epochs", {l.epochs1, l.epochs2, l.epochs3}},
                 {"seed", l.seed},
                 {"optimizer", l.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                 {"grad_method", l.grad_method == GradMethod::autodiff ? "autodiff" : "finite_difference"},
                 {"scale_floor", l.scale_floor}};
    j["thrust_map"] = {{"gf", cfg.thrust.gf}};
    j["sim"] = {{"dt", cfg.sim.dt},
                {"lambda_per_stage", cfg.sim.lambda_per_stage},
                {"rbar_z", cfg.sim.rbar_z},
                {"position_noise", cfg.sim.position_noise},
                {"duration", cfg.sim.duration}};
    return j.dump(2);
}

}  // namespace blimp
