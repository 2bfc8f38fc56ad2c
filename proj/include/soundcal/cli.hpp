#pragma once

// Command implementations behind the soundcal executable. Each returns the
// process exit code and writes to the given streams.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "soundcal/error.hpp"
#include "soundcal/json_io.hpp"
#include "soundcal/profile_library.hpp"
#include "soundcal/session.hpp"
#include "soundcal/sim_chain.hpp"

namespace soundcal::cli {

inline constexpr int kExitAccepted = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitRejected = 2;
inline constexpr int kExitNoMatch = 3;

inline constexpr const char* kStoreEnv = "SOUNDCAL_STORE";

using nlohmann::json;

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw Error(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Chain files

namespace detail {

// Gain in dB interpolated linearly over log frequency between (f, dB)
// points; constant beyond the ends.
inline double interpolate_log(const std::vector<std::pair<double, double>>& pts, double f) {
    if (f <= pts.front().first) return pts.front().second;
    if (f >= pts.back().first) return pts.back().second;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (f > pts[i].first) continue;
        const auto [f0, g0] = pts[i - 1];
        const auto [f1, g1] = pts[i];
        const double t = std::log(f / f0) / std::log(f1 / f0);
        return g0 + t * (g1 - g0);
    }
    return pts.back().second;
}

inline SimTransducer transducer_from_json(const json& j, double fs) {
    SimTransducer t;
    if (j.contains("ir_taps")) {
        t.ir_taps = json_io::to_vector(j.at("ir_taps"));
    } else if (j.contains("design")) {
        const auto& d = j.at("design");
        const auto taps = json_io::field(d, "taps").get<std::size_t>();
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : json_io::field(d, "points")) {
            if (!p.is_array() || p.size() != 2) throw InvalidArgument("design points must be [freq_hz, gain_db]");
            pts.emplace_back(p[0].get<double>(), p[1].get<double>());
        }
        if (pts.empty()) throw InvalidArgument("design needs at least one point");
        for (std::size_t i = 0; i < pts.size(); ++i)
            require(pts[i].first > 0.0 && (i == 0 || pts[i].first > pts[i - 1].first),
                    "design points must have ascending positive frequencies");
        std::vector<std::pair<double, double>> ripple;
        double ripple_db = 0.0, ripple_lo = 0.0, ripple_hi = 0.0, ripple_cycles = 0.0;
        if (d.contains("ripple")) {
            const auto& r = d.at("ripple");
            ripple_db = json_io::field(r, "depth_db").get<double>();
            ripple_lo = json_io::field(r, "lo_hz").get<double>();
            ripple_hi = json_io::field(r, "hi_hz").get<double>();
            ripple_cycles = json_io::field(r, "cycles_per_octave").get<double>();
        }
        t.ir_taps = design_fir_from_response(
            [&](double f) {
                double g = interpolate_log(pts, std::max(f, 1.0));
                if (ripple_db != 0.0 && f >= ripple_lo && f <= ripple_hi)
                    g += 0.5 * ripple_db * std::sin(2.0 * std::numbers::pi * ripple_cycles * std::log2(f / ripple_lo));
                return g;
            },
            taps, fs);
    }
    if (j.contains("drc") && !j.at("drc").is_null()) t.drc = json_io::to_drc(j.at("drc"));
    if (j.contains("self_noise_db") && !j.at("self_noise_db").is_null())
        t.self_noise_db = j.at("self_noise_db").get<double>();
    t.validate();
    return t;
}

}  // namespace detail

/// Chain file: {"speaker": {...}, "microphone": {...}, "env": {...}}. A
/// transducer gives "ir_taps" or a "design" of {"taps", "points": [[f, dB]...],
/// optional "ripple"}, plus optional "drc" and "self_noise_db".
inline PlaybackChain chain_from_json(const json& j, double sample_rate_hz = 48000.0) {
    PlaybackChain c;
    if (j.contains("speaker")) c.speaker = detail::transducer_from_json(j.at("speaker"), sample_rate_hz);
    if (j.contains("microphone")) c.microphone = detail::transducer_from_json(j.at("microphone"), sample_rate_hz);
    if (j.contains("env")) {
        const auto& e = j.at("env");
        if (e.contains("noise_level_db") && !e.at("noise_level_db").is_null())
            c.env.noise_level_db = e.at("noise_level_db").get<double>();
        if (e.contains("noise_spectrum")) {
            const auto s = e.at("noise_spectrum").get<std::string>();
            if (s == "white") c.env.noise_spectrum = NoiseSpectrum::white;
            else if (s == "one_over_f") c.env.noise_spectrum = NoiseSpectrum::one_over_f;
            else throw InvalidArgument("unknown noise_spectrum '" + s + "'");
        }
        c.env.clock_ratio = e.value("clock_ratio", 1.0);
        c.env.seed = e.value("seed", std::uint64_t{0});
        if (e.contains("fault") && !e.at("fault").is_null())
            c.env.fault = StepFault{json_io::field(e.at("fault"), "at_sec").get<double>(),
                                    json_io::field(e.at("fault"), "gain_db").get<double>()};
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    std::string config_path;
    std::string chain_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    std::string timestamp;  // empty: current time
};

inline int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
    try {
        const auto config = load_config(args.config_path);
        auto chain = chain_from_json(read_json(args.chain_path),
                                     nearest_sample_rate(config.sampling_desired_hz, kCommonSampleRates));
        if (args.seed) chain.env.seed = *args.seed;
        SessionOptions options;
        options.timestamp = args.timestamp.empty() ? utc_now_iso8601() : args.timestamp;
        const auto report = run_calibration_session(chain, config, options);
        {
            std::ofstream f(args.out_path, std::ios::binary | std::ios::trunc);
            if (!f) throw Error("cannot write " + args.out_path);
            f << report_to_json(report).dump() << "\n";
        }
        for (const auto& g : report.gates) {
            if (!g.passed) err << "gate " << g.stage << " failed: " << g.message << "\n";
        }
        if (!report.accepted) {
            out << "rejected: " << report.rejected_stage << "\n";
            return kExitRejected;
        }
        out << "accepted";
        if (report.flatness) out << ": flatness sd " << report.flatness->sd_db << " dB";
        out << "\n";
        return kExitAccepted;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
}

// ---------------------------------------------------------------------------
// profile

struct ProfileArgs {
    std::string subcommand;  // add | match | trace | list | coverage
    std::string store;       // empty: $SOUNDCAL_STORE
    std::string file;        // add
    std::string id;          // trace
    std::string model_name, model_number;
    std::optional<ScreenPx> screen;
    std::vector<std::string> signers;  // list: keep only these signers' chains
};

inline std::optional<ScreenPx> parse_screen(const std::string& s) {
    int w = 0, h = 0;
    char x = 0, extra = 0;
    if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w <= 0 || h <= 0)
        return std::nullopt;
    return ScreenPx{w, h};
}

inline std::string describe(const Profile& p) {
    std::ostringstream s;
    s << p.id << "  " << to_string(p.kind) << "  " << p.timestamp << "  " << p.identity.brand << " | "
      << p.identity.model_name << " | " << p.identity.model_number;
    if (p.identity.screen_px) s << " | " << p.identity.screen_px->width << "x" << p.identity.screen_px->height;
    s << "  " << p.signer_email;
    return s.str();
}

inline int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err) {
    try {
        std::string store_path = args.store;
        if (store_path.empty())
            if (const char* env = std::getenv(kStoreEnv)) store_path = env;
        if (store_path.empty()) {
            err << "error: no profile store given (--store or " << kStoreEnv << ")\n";
            return kExitError;
        }
        const auto& sub = args.subcommand;
        if (sub == "add") {
            auto store = ProfileStore::open_or_create(store_path);
            const auto id = store.add_profile(profile_from_json(read_json(args.file)));
            out << id << "\n";
            return kExitAccepted;
        }
        const auto store = ProfileStore::open(store_path);
        if (sub == "match") {
            if (!args.screen) throw InvalidArgument("match needs --screen WIDTHxHEIGHT");
            const auto r = store.match_phone(args.model_name, args.model_number, *args.screen);
            if (r.matched()) {
                out << r.profile->id << "\n";
                return kExitAccepted;
            }
            auto yn = [](bool b) { return b ? "yes" : "no"; };
            out << "NO MATCH (model_name " << yn(r.name_matched) << ", model_number " << yn(r.number_matched)
                << ", screen " << yn(r.screen_matched) << ")\n";
            return kExitNoMatch;
        }
        if (sub == "trace") {
            for (const auto& p : store.trace_chain(args.id).profiles) out << describe(p) << "\n";
            return kExitAccepted;
        }
        if (sub == "list") {
            auto profiles = store.list();
            if (!args.signers.empty())
                profiles = store.filter_by_signers(profiles, {args.signers.begin(), args.signers.end()});
            for (const auto& p : profiles) out << describe(p) << "\n";
            return kExitAccepted;
        }
        if (sub == "coverage") {
            for (const auto& [brand, count] : store.brand_coverage()) out << brand << "\t" << count << "\n";
            return kExitAccepted;
        }
        err << "error: unknown profile subcommand '" << sub << "' (add, match, trace, list, coverage)\n";
        return kExitError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
}

// ---------------------------------------------------------------------------
// export-plots

inline const std::vector<std::string>& plot_names() {
    static const std::vector<std::string> names = {"gain_thd", "ir", "schroeder", "correction", "profiles"};
    return names;
}

namespace detail {

struct Csv {
    std::string name;
    std::string text;
};

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline const json& section(const json& report, const char* key) {
    if (!report.contains(key) || report.at(key).is_null() || (report.at(key).is_array() && report.at(key).empty()))
        throw Error(std::string("report has no '") + key + "' section");
    return report.at(key);
}

inline Csv two_columns(const std::string& name, const char* x_name, const char* y_name, const std::vector<double>& x,
                       const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error(name + ": column lengths differ");
    std::string t = std::string(x_name) + "," + y_name + "\n";
    for (std::size_t i = 0; i < x.size(); ++i) t += fmt(x[i]) + "," + fmt(y[i]) + "\n";
    return {name, t};
}

inline std::vector<Csv> ir_views(const json& report) {
    const auto& ir = section(report, "ir");
    const double fs = json_io::to_number(json_io::field(ir, "sample_rate_hz"));
    const auto taps = json_io::to_vector(json_io::field(ir, "taps"));
    std::vector<Csv> out;
    for (const auto& [name, ms] : {std::pair<const char*, double>{"ir_6ms.csv", 6.0}, {"ir_50ms.csv", 50.0}}) {
        const auto n = std::min(taps.size(), static_cast<std::size_t>(std::llround(ms * 1e-3 * fs)));
        std::vector<double> t(n), v(taps.begin(), taps.begin() + static_cast<std::ptrdiff_t>(n));
        for (std::size_t i = 0; i < n; ++i) t[i] = 1e3 * static_cast<double>(i) / fs;
        out.push_back(two_columns(name, "time_ms", "amplitude", t, v));
    }
    return out;
}

inline std::vector<Csv> build_plots(const json& report, const std::string& which) {
    std::vector<Csv> out;
    if (which == "gain_thd") {
        const auto& gc = section(report, "gain_curve");
        const auto& pts = section(gc, "points");
        std::optional<DrcParams> drc;
        if (report.contains("drc_fit") && !report.at("drc_fit").is_null())
            drc = json_io::to_drc(report.at("drc_fit").at("params"));
        std::string t = "in_db,out_db,thd,model_out_db\n";
        for (const auto& p : pts) {
            const double in = json_io::to_number(p.at("in_db"));
            t += fmt(in) + "," + fmt(json_io::to_number(p.at("out_db"))) + "," + fmt(json_io::to_number(p.at("thd"))) +
                 "," + fmt(drc ? drc_out(in, *drc) : std::nan("")) + "\n";
        }
        out.push_back({"gain_thd.csv", t});
    } else if (which == "ir") {
        out = ir_views(report);
    } else if (which == "schroeder") {
        const auto& s = section(report, "schroeder");
        out.push_back(two_columns("schroeder.csv", "time_sec", "level_db", json_io::to_vector(s.at("times_sec")),
                                  json_io::to_vector(s.at("level_db"))));
    } else if (which == "correction") {
        const auto& c = section(report, "correction");
        const auto& sp = json_io::field(c, "spectra");
        const auto f = json_io::to_vector(json_io::field(sp, "freq_hz"));
        for (const char* curve : {"mls_db", "mls_sound_db", "filtered_mls_db", "filtered_mls_sound_db",
                                  "background_db", "predicted_sum_db", "mic_db"})
            out.push_back(two_columns(std::string(curve) + ".csv", "freq_hz", curve, f,
                                      json_io::to_vector(json_io::field(sp, curve))));
        const auto& fl = section(report, "flatness");
        out.push_back(two_columns("flatness_db.csv", "freq_hz", "flatness_db", json_io::to_vector(fl.at("freq_hz")),
                                  json_io::to_vector(fl.at("per_bin_spectrum_db"))));
    } else if (which == "profiles") {
        const auto r = json_io::to_response(section(report, "profile"));
        std::string t = "freq_hz,gain_db,phase_rad\n";
        for (std::size_t k = 0; k < r.size(); ++k)
            t += fmt(r.freq_hz[k]) + "," + fmt(r.gain_db[k]) + "," +
                 fmt(r.phase_rad.empty() ? 0.0 : r.phase_rad[k]) + "\n";
        out.push_back({"profile.csv", t});
    }
    return out;
}

}  // namespace detail

/// Writes the CSV series behind one figure. Nothing is written unless every
/// series can be built.
inline int cmd_export_plots(const std::string& report_path, const std::string& which, const std::string& out_dir,
                            std::ostream& out, std::ostream& err) {
    const auto& names = plot_names();
    if (std::find(names.begin(), names.end(), which) == names.end()) {
        err << "error: unknown plot '" << which << "'; valid names:";
        for (const auto& n : names) err << " " << n;
        err << "\n";
        return kExitError;
    }
    try {
        const auto report = read_json(report_path);
        const auto files = detail::build_plots(report, which);
        std::filesystem::create_directories(out_dir);
        for (const auto& f : files) {
            const auto path = std::filesystem::path(out_dir) / f.name;
            std::ofstream o(path, std::ios::binary | std::ios::trunc);
            if (!o) throw Error("cannot write " + path.string());
            o << f.text;
            out << path.string() << "\n";
        }
        return kExitAccepted;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
}

/// Reads a two-column CSV written by export-plots ("nan" allowed).
inline std::pair<std::vector<double>, std::vector<double>> read_csv_columns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> x, y;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw Error(path + ": malformed row '" + line + "'");
        x.push_back(std::strtod(line.substr(0, comma).c_str(), nullptr));
        y.push_back(std::strtod(line.substr(comma + 1).c_str(), nullptr));
    }
    return {x, y};
}

}  // namespace soundcal::cli
