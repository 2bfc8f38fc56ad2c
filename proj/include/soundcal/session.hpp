#pragma once

// A full calibration session against a playback device: 1 kHz gain curve and
// compressor fit, nonsynchronous MLS impulse response, profile, inverse
// filter, power-limited correction check and flatness gate, with a power
// monitor on every recording.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "soundcal/correction.hpp"
#include "soundcal/drc_model.hpp"
#include "soundcal/error.hpp"
#include "soundcal/json_io.hpp"
#include "soundcal/mls_analysis.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/sim_chain.hpp"
#include "soundcal/sine_calibration.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

struct SessionConfig {
    double burst_sec = 1.0;             // _calibrateSoundBurstSec
    int burst_repeats = 4;              // _calibrateSoundBurstRepeats
    double burst_db = -34.0;            // _calibrateSoundBurstDb
    double ir_sec = 0.2;                // _calibrateSoundIRSec
    double iir_sec = 0.2;               // _calibrateSoundIIRSec
    double min_hz = 100.0;              // calibrateSoundMinHz
    double max_hz = 20000.0;            // calibrateSoundMaxHz
    double filtered_extra_db = 5.0;     // calibrateSoundBurstFilteredExtraDb
    bool level_re_t = false;            // calibrateSoundBurstLevelReTBool
    double sampling_desired_hz = 48000; // _calibrateSoundSamplingDesiredHz
    double power_window_sec = kDefaultPowerWindowSec;  // powerMonitorWindowSec
    double power_max_sd_db = 6.0;                      // powerFluctuationMaxSdDb

    void validate() const {
        require(burst_sec > 0.0, "_calibrateSoundBurstSec must be positive");
        require(burst_repeats >= 2, "_calibrateSoundBurstRepeats must be at least 2");
        require(burst_db < 0.0, "_calibrateSoundBurstDb must be below 0 dB");
        require(ir_sec > 0.0 && iir_sec > 0.0, "_calibrateSoundIRSec and _calibrateSoundIIRSec must be positive");
        require(min_hz >= 0.0 && min_hz < max_hz, "calibrateSoundMinHz must be below calibrateSoundMaxHz");
        require(sampling_desired_hz > 0.0, "_calibrateSoundSamplingDesiredHz must be positive");
        require(power_window_sec > 0.0, "powerMonitorWindowSec must be positive");
        require(power_max_sd_db > 0.0, "powerFluctuationMaxSdDb must be positive");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(x))
        throw InvalidArgument("config key '" + key + "': expected a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    std::string s;
    for (char c : v) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw InvalidArgument("config key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace detail
/// Parses `key = value` lines; '#' starts a comment. Keys are the
/// calibrateSound* parameter names; an unknown key is an error naming it.
/// parameter names; an unknown key is an error naming it.
inline SessionConfig parse_config(const std::string& text) {
    SessionConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto num = [&] { return detail::parse_double(key, value); };
        if (key == "_calibrateSoundBurstSec") c.burst_sec = num();
        else if (key == "_calibrateSoundBurstRepeats") {
            const double v = num();
            if (v != std::floor(v)) throw InvalidArgument("config key '" + key + "': expected an integer");
            c.burst_repeats = static_cast<int>(v);
        } else if (key == "_calibrateSoundBurstDb") c.burst_db = num();
        else if (key == "_calibrateSoundIRSec") c.ir_sec = num();
        else if (key == "_calibrateSoundIIRSec") c.iir_sec = num();
        else if (key == "calibrateSoundMinHz") c.min_hz = num();
        else if (key == "calibrateSoundMaxHz") c.max_hz = num();
        else if (key == "calibrateSoundBurstFilteredExtraDb") c.filtered_extra_db = num();
        else if (key == "calibrateSoundBurstLevelReTBool") c.level_re_t = detail::parse_bool(key, value);
        else if (key == "_calibrateSoundSamplingDesiredHz") c.sampling_desired_hz = num();
        else if (key == "powerMonitorWindowSec") c.power_window_sec = num();
        else if (key == "powerFluctuationMaxSdDb") c.power_max_sd_db = num();
        else throw InvalidArgument("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

inline SessionConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline nlohmann::json config_to_json(const SessionConfig& c) {
    return {{"_calibrateSoundBurstSec", c.burst_sec},
            {"_calibrateSoundBurstRepeats", c.burst_repeats},
            {"_calibrateSoundBurstDb", c.burst_db},
            {"_calibrateSoundIRSec", c.ir_sec},
            {"_calibrateSoundIIRSec", c.iir_sec},
            {"calibrateSoundMinHz", c.min_hz},
            {"calibrateSoundMaxHz", c.max_hz},
            {"calibrateSoundBurstFilteredExtraDb", c.filtered_extra_db},
            {"calibrateSoundBurstLevelReTBool", c.level_re_t},
            {"_calibrateSoundSamplingDesiredHz", c.sampling_desired_hz},
            {"powerMonitorWindowSec", c.power_window_sec},
            {"powerFluctuationMaxSdDb", c.power_max_sd_db}};
}

// ---------------------------------------------------------------------------
// Report

enum class CalibrationTarget { loudspeaker, microphone };

inline std::string to_string(CalibrationTarget t) {
    return t == CalibrationTarget::loudspeaker ? "loudspeaker" : "microphone";
}

struct GateResult {
    std::string stage;
    bool passed = false;
    double value = std::numeric_limits<double>::quiet_NaN();
    double threshold = std::numeric_limits<double>::quiet_NaN();
    std::string message;
};

struct PowerRecord {
    std::string recording;
    PowerTimeSeries series;
};

/// Correction spectra on the grid of one MLS period. NaN where noise
/// exceeds signal.
struct CorrectionSpectra {
    std::vector<double> freq_hz;
    std::vector<double> mls_db;                 // digital MLS
    std::vector<double> mls_sound_db;           // recorded MLS
    std::vector<double> filtered_mls_db;        // digital filtered MLS
    std::vector<double> filtered_mls_sound_db;  // recorded filtered MLS
    std::vector<double> background_db;          // silent recording
    std::vector<double> predicted_sum_db;       // filtered MLS + noise-free recorded MLS - MLS
    std::vector<double> mic_db;                 // microphone response discounted in the flatness check
};

struct SessionReport {
    std::string timestamp;
    SessionConfig config;
    CalibrationTarget target = CalibrationTarget::loudspeaker;
    double sample_rate_hz = 48000.0;

    double gain_frequency_hz = 1000.0;
    std::vector<GainPoint> gain_points;
    std::vector<ToneAnalysis> tone_analyses;
    std::optional<DrcFit> drc_fit;

    std::optional<MlsSpec> mls;
    std::optional<PeriodEstimate> period;
    double clock_ratio = std::numeric_limits<double>::quiet_NaN();
    std::optional<ImpulseResponse> ir;            // raw system IR
    std::optional<ImpulseResponse> ir_truncated;  // target transducer, zero phase
    std::optional<SchroederCurve> schroeder;
    double decay_rate_db_per_sec = std::numeric_limits<double>::quiet_NaN();
    std::optional<FrequencyResponse> profile;

    std::optional<InverseImpulseResponse> iir;
    double power_limit_db = std::numeric_limits<double>::quiet_NaN();
    double cutoff_hz = std::numeric_limits<double>::quiet_NaN();
    std::optional<CorrectionSpectra> spectra;
    std::optional<FlatnessReport> flatness;
    std::optional<FlatnessReport> flatness_uncorrected;

    std::vector<PowerRecord> power;
    std::vector<GateResult> gates;
    bool accepted = false;
    std::string rejected_stage;
    std::vector<std::string> notes;
};

struct SessionOptions {
    CalibrationTarget target = CalibrationTarget::loudspeaker;
    /// Response of the already-calibrated transducer in the chain. When absent
    /// the simulated chain's ground truth is used.
    std::optional<FrequencyResponse> parent_response;
    std::string timestamp = "1970-01-01T00:00:00Z";
    std::uint64_t first_stream = 0;
};

inline constexpr double kGainCurveLowDb = -50.0;
inline constexpr double kGainCurveHighDb = -3.1;
inline constexpr int kGainCurvePoints = 25;
inline constexpr double kGainCurveHz = 1000.0;

inline std::vector<double> gain_curve_levels() {
    std::vector<double> v(kGainCurvePoints);
    for (int i = 0; i < kGainCurvePoints; ++i)
        v[i] = kGainCurveLowDb + (kGainCurveHighDb - kGainCurveLowDb) * i / (kGainCurvePoints - 1);
    return v;
}

namespace detail {

class GateFailure : public MeasurementError {
public:
    using MeasurementError::MeasurementError;
};

// One period of a repeated recording: aligned analysis periods, stretched
// to the nominal period and averaged.
inline SampledSignal folded_period(const SampledSignal& recording, double measured_period,
                                   const PlaybackLayout& layout) {
    const auto segment = aligned_analysis_segment(recording, measured_period, layout);
    const auto stretched =
        resample_to_period(segment, layout.period_samples * static_cast<std::size_t>(layout.analysis_periods));
    return fold_periods(stretched, layout.analysis_periods);
}

inline std::vector<double> db_of(const std::vector<double>& powers) {
    std::vector<double> out(powers.size());
    for (std::size_t k = 0; k < powers.size(); ++k) out[k] = stats::power_to_db(powers[k]);
    return out;
}

inline FrequencyResponse fir_response(std::span<const double> taps, double gain_db, std::size_t n, double fs) {
    std::vector<double> t(taps.begin(), taps.end());
    if (t.size() > n) t.resize(n);
    auto r = ir_spectrum(ImpulseResponse(std::move(t), fs), n);
    for (double& g : r.gain_db) g += gain_db;
    return r;
}

}  // namespace detail

/// Runs every stage in order. A failed gate stops the session and marks the
/// report rejected with that stage; errors other than measurement failures
/// propagate.
inline SessionReport run_calibration_session(const PlaybackChain& chain, const SessionConfig& config,
                                             const SessionOptions& options = {}) {
    config.validate();
    SimulatedPlayback device(chain, options.first_stream);
    SessionReport rep;
    rep.timestamp = options.timestamp;
    rep.config = config;
    rep.target = options.target;
    rep.sample_rate_hz = nearest_sample_rate(config.sampling_desired_hz, kCommonSampleRates);
    const double fs = rep.sample_rate_hz;
    rep.notes.push_back(
        "correction delay: the filter's group delay of (L-1)/2 samples is removed; the alternative reading "
        "'first N/2 samples' (N = input length) is not applied");

    auto gate = [&](const std::string& stage, bool passed, double value, double threshold, std::string msg) {
        rep.gates.push_back({stage, passed, value, threshold, msg});
        if (!passed) throw detail::GateFailure(stage);
    };
    auto monitor = [&](const std::string& label, const SampledSignal& rec) {
        PowerRecord pr{label, power_over_time(rec, config.power_window_sec)};
        rep.power.push_back(pr);
        return pr.series.sd_db;
    };
    auto monitor_gate = [&](double worst_sd) {
        gate("power_fluctuation", !(worst_sd > config.power_max_sd_db), worst_sd, config.power_max_sd_db,
             "largest SD of recorded power over time");
    };

    try {
        // 1 kHz gain curve and compressor fit.
        const auto levels = gain_curve_levels();
        std::vector<SampledSignal> tone_recordings;
        try {
            rep.gain_points =
                measure_gain_curve(device, levels, kGainCurveHz, fs, {}, &rep.tone_analyses, &tone_recordings);
        } catch (const MeasurementError& e) {
            gate("gain_curve", false, NAN, NAN, e.what());
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < tone_recordings.size(); ++i) {
            const auto skip = static_cast<std::size_t>(std::llround(0.1 * fs));
            const auto& r = tone_recordings[i];
            std::ostringstream label;
            label << "sine_1000hz_" << levels[i] << "db";
            worst = std::max(worst, monitor(label.str(), r.slice(skip, r.size() - std::min(skip, r.size()))));
        }
        try {
            rep.drc_fit = fit_drc(rep.gain_points);
        } catch (const DrcFitError& e) {
            gate("drc_fit", false, e.best_rms_db(), kDrcAcceptRmsDb, e.what());
        }
        gate("drc_fit", rep.drc_fit->accepted, rep.drc_fit->rms_error_db, kDrcAcceptRmsDb,
             "RMS error of the compressor model fit (dB)");
        monitor_gate(worst);

        // Unfiltered MLS.
        const double threshold = rep.drc_fit->params.threshold_db;
        MlsSpec spec;
        spec.order = order_for_duration(config.burst_sec, fs);
        spec.amplitude_db = config.level_re_t ? threshold + config.burst_db : config.burst_db;
        require(spec.amplitude_db < 0.0, "MLS level must be below 0 dB");
        rep.mls = spec;
        const auto mls = generate_mls(spec, fs);
        PlaybackLayout layout;
        layout.analysis_periods = config.burst_repeats;
        layout.period_samples = mls.size();
        const auto mls_recording = device.play(build_playback(mls, layout));
        const double mls_sd = monitor("mls", mls_recording);
        NonsyncMeasurement m;
        try {
            m = measure_nonsynchronous(mls_recording, mls, layout);
        } catch (const MeasurementError& e) {
            gate("mls", false, NAN, NAN, e.what());
        }
        monitor_gate(mls_sd);
        rep.period = m.period;
        rep.clock_ratio = m.clock_ratio;
        rep.ir = m.ir;
        rep.schroeder = schroeder_curve(m.ir);
        try {
            rep.decay_rate_db_per_sec = schroeder_decay_rate(*rep.schroeder);
        } catch (const MeasurementError&) {
            rep.notes.push_back("Schroeder curve does not span -5 to -25 dB; no decay rate");
        }

        // Discount the calibrated transducer, truncate, profile.
        const std::size_t p = mls.size();
        const auto system = ir_spectrum(m.ir);
        FrequencyResponse parent;
        if (options.parent_response) {
            parent = resample_response(*options.parent_response, system.freq_hz);
        } else if (options.target == CalibrationTarget::loudspeaker) {
            parent = detail::fir_response(chain.microphone.ir_taps, 0.0, p, fs);
        } else {
            const double g = chain.speaker.drc ? chain.speaker.drc->gain_db : 0.0;
            parent = detail::fir_response(chain.speaker.ir_taps, g, p, fs);
        }
        const auto child = discount_parent(system, parent);
        const auto child_ir = ir_from_magnitude(magnitudes(child), p, fs);
        rep.ir_truncated = truncate_ir(child_ir, config.ir_sec);
        {
            auto full = ir_spectrum(*rep.ir_truncated);
            FrequencyResponse prof;
            for (std::size_t k = 0; k < full.size() && full.freq_hz[k] <= config.max_hz + 1e-9; ++k) {
                prof.freq_hz.push_back(full.freq_hz[k]);
                prof.gain_db.push_back(full.gain_db[k]);
                prof.phase_rad.push_back(full.phase_rad[k]);
            }
            rep.profile = std::move(prof);
        }

        if (options.target == CalibrationTarget::microphone) {
            rep.notes.push_back("microphone calibration: loudspeaker correction check not run");
            rep.accepted = true;
            return rep;
        }

        // Inverse filter, power-limited correction, flatness.
        rep.iir = inverse_ir(*rep.ir_truncated, config.iir_sec);
        const auto filtered = apply_correction_periodic(mls, *rep.iir);
        rep.power_limit_db = spec.amplitude_db + config.filtered_extra_db;
        BandlimitResult limited;
        try {
            limited = bandlimit_filtered_mls(filtered, config.min_hz, rep.power_limit_db,
                                             std::min(config.max_hz, fs / 2.0));
        } catch (const MeasurementError& e) {
            gate("bandlimit", false, NAN, rep.power_limit_db, e.what());
        }
        rep.cutoff_hz = limited.cutoff_hz;
        const auto corrected_recording = device.play(build_playback(limited.signal, layout));
        const auto silence = SampledSignal(std::vector<double>(layout.total_samples(), 0.0), fs);
        const auto noise_recording = device.play(silence);
        double worst_sd = monitor("filtered_mls", corrected_recording);
        monitor("background", noise_recording);

        double corrected_period = 0.0;
        try {
            corrected_period = estimate_period(corrected_recording, p);
        } catch (const MeasurementError& e) {
            gate("flatness", false, NAN, kFlatnessMaxSdDb, std::string("filtered MLS: ") + e.what());
        }
        const auto corrected = detail::folded_period(corrected_recording, corrected_period, layout);
        const auto background = detail::folded_period(noise_recording, corrected_period, layout);
        const auto raw = fold_periods(m.resampled, layout.analysis_periods);

        const double band_hi = std::min(limited.cutoff_hz, config.max_hz);
        CorrectionSpectra sp;
        sp.freq_hz = fft_grid(p, fs);
        sp.mls_db = detail::db_of(bin_powers(mls));
        sp.filtered_mls_db = detail::db_of(bin_powers(limited.signal));
        const auto raw_p = bin_powers(raw);
        const auto bg_p = bin_powers(background);
        sp.mls_sound_db = detail::db_of(raw_p);
        sp.filtered_mls_sound_db = detail::db_of(bin_powers(corrected));
        sp.background_db = detail::db_of(bg_p);
        sp.predicted_sum_db.resize(sp.freq_hz.size());
        sp.mic_db.resize(sp.freq_hz.size());
        for (std::size_t k = 0; k < sp.freq_hz.size(); ++k) {
            const double net = raw_p[k] - bg_p[k];
            sp.predicted_sum_db[k] = net > 0.0 ? sp.filtered_mls_db[k] + stats::power_to_db(net) - sp.mls_db[k]
                                               : std::numeric_limits<double>::quiet_NaN();
            sp.mic_db[k] = parent.gain_db_at(sp.freq_hz[k]);
        }
        rep.spectra = std::move(sp);

        try {
            rep.flatness_uncorrected = assess_flatness(raw, background, parent, config.min_hz, band_hi);
        } catch (const MeasurementError& e) {
            rep.notes.push_back(std::string("uncorrected flatness: ") + e.what());
        }
        try {
            rep.flatness = assess_flatness(corrected, background, parent, config.min_hz, band_hi);
        } catch (const MeasurementError& e) {
            gate("flatness", false, NAN, kFlatnessMaxSdDb, e.what());
        }
        gate("flatness", rep.flatness->passed, rep.flatness->sd_db, kFlatnessMaxSdDb,
             "SD of the corrected spectrum over the band (dB)");
        monitor_gate(worst_sd);
        rep.accepted = true;
    } catch (const detail::GateFailure& g) {
        rep.accepted = false;
        rep.rejected_stage = g.what();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json flatness_to_json(const FlatnessReport& f) {
    return {{"band_lo_hz", f.band_lo_hz},
            {"band_hi_hz", f.band_hi_hz},
            {"sd_db", json_io::number(f.sd_db)},
            {"passed", f.passed},
            {"bins_in_band", f.bins_in_band},
            {"bins_excluded", f.bins_excluded},
            {"freq_hz", json_io::array(f.per_bin_freq_hz)},
            {"per_bin_spectrum_db", json_io::array(f.per_bin_spectrum_db)}};
}

inline FlatnessReport flatness_from_json(const nlohmann::json& j) {
    using json_io::field;
    FlatnessReport f;
    f.band_lo_hz = json_io::to_number(field(j, "band_lo_hz"));
    f.band_hi_hz = json_io::to_number(field(j, "band_hi_hz"));
    f.sd_db = json_io::to_number(field(j, "sd_db"));
    f.passed = field(j, "passed").get<bool>();
    f.bins_in_band = j.value("bins_in_band", std::size_t{0});
    f.bins_excluded = j.value("bins_excluded", std::size_t{0});
    f.per_bin_freq_hz = json_io::to_vector(field(j, "freq_hz"));
    f.per_bin_spectrum_db = json_io::to_vector(field(j, "per_bin_spectrum_db"));
    return f;
}

/// SD over the included in-band bins of a flatness spectrum.
inline double flatness_sd_from_spectrum(std::span<const double> freq_hz, std::span<const double> level_db,
                                        double band_lo, double band_hi) {
    std::vector<double> v;
    for (std::size_t k = 0; k < freq_hz.size(); ++k)
        if (freq_hz[k] >= band_lo && freq_hz[k] <= band_hi && !std::isnan(level_db[k])) v.push_back(level_db[k]);
    require(!v.empty(), "flatness_sd_from_spectrum: no bins in band");
    return stats::stddev(v);
}

inline nlohmann::json report_to_json(const SessionReport& r) {
    using json_io::array;
    using json_io::number;
    using nlohmann::json;
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["timestamp_iso8601"] = r.timestamp;
    j["config"] = config_to_json(r.config);
    j["target"] = to_string(r.target);
    j["sample_rate_hz"] = r.sample_rate_hz;

    json points = json::array();
    for (const auto& p : r.gain_points)
        points.push_back({{"in_db", number(p.in_db)}, {"out_db", number(p.out_db)}, {"thd", number(p.thd)}});
    json tones = json::array();
    for (const auto& t : r.tone_analyses)
        tones.push_back({{"nominal_f_hz", t.nominal_f_hz},
                         {"recorded_f_hz", number(t.recorded_f_hz)},
                         {"harmonic_powers", array(t.harmonic_powers)},
                         {"harmonics_used", t.harmonics_used},
                         {"thd", number(t.thd)},
                         {"out_db", number(t.out_db)}});
    j["gain_curve"] = {{"frequency_hz", r.gain_frequency_hz}, {"points", points}, {"analyses", tones}};
    j["drc_fit"] = r.drc_fit ? json{{"params", json_io::drc(r.drc_fit->params)},
                                    {"knee_floor_db", number(knee_floor(r.drc_fit->params))},
                                    {"rms_error_db", number(r.drc_fit->rms_error_db)},
                                    {"accepted", r.drc_fit->accepted}}
                             : json(nullptr);

    j["mls"] = r.mls ? json{{"order", r.mls->order},
                            {"period_samples", r.mls->period_samples()},
                            {"amplitude_db", r.mls->amplitude_db},
                            {"level_re_t", r.config.level_re_t}}
                     : json(nullptr);
    j["period"] = r.period ? json{{"measured_samples", r.period->period_samples},
                                  {"clock_ratio", number(r.clock_ratio)},
                                  {"peak_lags", array(r.period->peak_lags)}}
                           : json(nullptr);
    auto ir_json = [](const ImpulseResponse& ir) {
        return json{{"sample_rate_hz", ir.sample_rate_hz},
                    {"peak_index", ir.peak_index},
                    {"normalization", ir.normalization},
                    {"taps", array(ir.taps)}};
    };
    j["ir"] = r.ir ? ir_json(*r.ir) : json(nullptr);
    j["ir_truncated"] = r.ir_truncated ? ir_json(*r.ir_truncated) : json(nullptr);
    j["schroeder"] = r.schroeder ? json{{"times_sec", array(r.schroeder->times_sec)},
                                        {"level_db", array(r.schroeder->level_db)},
                                        {"decay_rate_db_per_sec", number(r.decay_rate_db_per_sec)}}
                                 : json(nullptr);
    j["profile"] = r.profile ? json_io::response(*r.profile) : json(nullptr);
    j["iir"] = r.iir ? json{{"sample_rate_hz", r.iir->sample_rate_hz},
                            {"reference_hz", r.iir->reference_hz},
                            {"delay_samples", r.iir->delay_samples()},
                            {"taps", array(r.iir->taps)}}
                     : json(nullptr);
    if (r.spectra) {
        const auto& s = *r.spectra;
        j["correction"] = {{"power_limit_db", number(r.power_limit_db)},
                           {"cutoff_hz", number(r.cutoff_hz)},
                           {"spectra",
                            {{"freq_hz", array(s.freq_hz)},
                             {"mls_db", array(s.mls_db)},
                             {"mls_sound_db", array(s.mls_sound_db)},
                             {"filtered_mls_db", array(s.filtered_mls_db)},
                             {"filtered_mls_sound_db", array(s.filtered_mls_sound_db)},
                             {"background_db", array(s.background_db)},
                             {"predicted_sum_db", array(s.predicted_sum_db)},
                             {"mic_db", array(s.mic_db)}}}};
    } else {
        j["correction"] = nullptr;
    }
    j["flatness"] = r.flatness ? flatness_to_json(*r.flatness) : json(nullptr);
    j["flatness_uncorrected"] = r.flatness_uncorrected ? flatness_to_json(*r.flatness_uncorrected) : json(nullptr);

    json power = json::array();
    for (const auto& p : r.power)
        power.push_back({{"recording", p.recording},
                         {"window_sec", r.config.power_window_sec},
                         {"sd_db", number(p.series.sd_db)},
                         {"unstable", p.series.unstable(r.config.power_max_sd_db)},
                         {"times_sec", array(p.series.times_sec)},
                         {"power_db", array(p.series.power_db)}});
    j["power"] = power;
    json gates = json::array();
    for (const auto& g : r.gates)
        gates.push_back({{"stage", g.stage},
                         {"passed", g.passed},
                         {"value", number(g.value)},
                         {"threshold", number(g.threshold)},
                         {"message", g.message}});
    j["gates"] = gates;
    j["status"] = r.accepted ? "accepted" : "rejected";
    j["rejected_stage"] = r.accepted ? json(nullptr) : json(r.rejected_stage);
    j["notes"] = r.notes;
    return j;
}

}  // namespace soundcal
