#include "catch_amalgamated.hpp"

#include <cmath>

#include "soundcal/cli.hpp"
#include "soundcal/session.hpp"
#include "helpers.hpp"

using namespace soundcal;
using Catch::Approx;

namespace {

PlaybackChain clean_chain() { return cli::chain_from_json(cli::read_json(testutil::fixture("clean_chain.json"))); }

// One full default session on the clean chain, shared by the read-only checks.
const SessionReport& clean_report() {
    static const SessionReport report = run_calibration_session(clean_chain(), SessionConfig{});
    return report;
}

SessionConfig short_config() {
    SessionConfig c;
    c.burst_sec = 0.35;  // order 14
    c.burst_repeats = 2;
    return c;
}

const GateResult* find_gate(const SessionReport& r, const std::string& stage) {
    for (const auto& g : r.gates)
        if (g.stage == stage) return &g;
    return nullptr;
}

}  // namespace

// ==============================================================================
// Config
// ==============================================================================

TEST_CASE("Config: defaults and overrides", "[session][config]") {
    const auto c = parse_config(
        "# comment\n"
        "\n"
        "_calibrateSoundBurstSec = 2\n"
        "  calibrateSoundMinHz=50   # trailing comment\n"
        "calibrateSoundBurstLevelReTBool = true\n");
    CHECK(c.burst_sec == 2.0);
    CHECK(c.min_hz == 50.0);
    CHECK(c.level_re_t);
    CHECK(c.burst_repeats == 4);
    CHECK(c.burst_db == -34.0);
    CHECK(c.max_hz == 20000.0);
    CHECK(c.filtered_extra_db == 5.0);
    CHECK(c.power_max_sd_db == 6.0);

    const auto file = load_config(testutil::fixture("default.cfg"));
    CHECK(config_to_json(file) == config_to_json(SessionConfig{}));
}

TEST_CASE("Config: errors name the offending key", "[session][config]") {
    CHECK_THROWS_WITH(parse_config("calibrateSoundMaxHzz = 100\n"),
                      Catch::Matchers::ContainsSubstring("calibrateSoundMaxHzz"));
    CHECK_THROWS_WITH(parse_config("_calibrateSoundBurstDb = loud\n"),
                      Catch::Matchers::ContainsSubstring("_calibrateSoundBurstDb"));
    CHECK_THROWS_WITH(parse_config("calibrateSoundBurstLevelReTBool = maybe\n"),
                      Catch::Matchers::ContainsSubstring("calibrateSoundBurstLevelReTBool"));
    CHECK_THROWS_AS(parse_config("no equals sign\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("calibrateSoundMinHz = 30000\n").validate(), InvalidArgument);
    CHECK_THROWS_AS(load_config(testutil::fixture("bad.cfg")), InvalidArgument);
}

// ==============================================================================
// Full session
// ==============================================================================

TEST_CASE("Session: clean chain is accepted with every gate passed", "[session]") {
    const auto& r = clean_report();
    INFO("rejected at " << r.rejected_stage);
    REQUIRE(r.accepted);
    for (const auto& g : r.gates) CHECK(g.passed);
    for (const char* stage : {"drc_fit", "power_fluctuation", "flatness"}) CHECK(find_gate(r, stage) != nullptr);
    CHECK(r.flatness->sd_db < 1.0);
    CHECK(r.flatness_uncorrected->sd_db > r.flatness->sd_db);
    CHECK(r.clock_ratio == Approx(1.00002).epsilon(1e-7));
    REQUIRE(r.drc_fit);
    CHECK(knee_floor(r.drc_fit->params) == Approx(-26.0).margin(1.0));
    CHECK(r.mls->order == 16);
    CHECK(r.mls->amplitude_db == -34.0);
    CHECK(r.ir_truncated->size() == 9600);
    CHECK(r.iir->size() == 9600);
    CHECK(r.profile->freq_hz.front() == 0.0);
    CHECK(r.profile->freq_hz.back() <= 20000.0);
    CHECK(r.power_limit_db == -29.0);
}

TEST_CASE("Session: the profile recovers the loudspeaker", "[session]") {
    const auto& r = clean_report();
    const auto chain = clean_chain();
    const double g = chain.speaker.drc->gain_db;
    for (double f : {200.0, 1000.0, 4000.0}) {
        const double truth = fir_gain_db(chain.speaker.ir_taps, f, 48000.0) + g;
        CHECK(r.profile->gain_db_at(f) == Approx(truth).margin(0.5));
    }
}

TEST_CASE("Session: gates are recomputable from the report", "[session][report]") {
    const auto& r = clean_report();
    const auto j = report_to_json(r);
    const auto roundtrip = nlohmann::json::parse(j.dump());

    const auto& fl = roundtrip.at("flatness");
    const auto freq = json_io::to_vector(fl.at("freq_hz"));
    const auto level = json_io::to_vector(fl.at("per_bin_spectrum_db"));
    const double sd = flatness_sd_from_spectrum(freq, level, fl.at("band_lo_hz").get<double>(),
                                                fl.at("band_hi_hz").get<double>());
    CHECK(sd == Approx(r.flatness->sd_db).epsilon(1e-12));
    CHECK(flatness_from_json(fl).sd_db == r.flatness->sd_db);

    std::vector<GainPoint> pts;
    for (const auto& p : roundtrip.at("gain_curve").at("points"))
        pts.push_back({p.at("in_db").get<double>(), p.at("out_db").get<double>(), p.at("thd").get<double>()});
    const auto params = json_io::to_drc(roundtrip.at("drc_fit").at("params"));
    CHECK(drc_rms_error(pts, params) == Approx(roundtrip.at("drc_fit").at("rms_error_db").get<double>()));
    CHECK(roundtrip.at("status") == "accepted");
    CHECK(roundtrip.at("schema_version") == kReportSchemaVersion);
}

TEST_CASE("Session: identical inputs give an identical report", "[session][determinism]") {
    auto chain = clean_chain();
    chain.env.noise_level_db = -60.0;
    const auto a = report_to_json(run_calibration_session(chain, short_config())).dump();
    const auto b = report_to_json(run_calibration_session(chain, short_config())).dump();
    CHECK(a == b);
}

TEST_CASE("Session: a level step in the recordings trips the power monitor", "[session][gate]") {
    auto chain = clean_chain();
    chain.env.fault = StepFault{0.5, -20.0};
    const auto r = run_calibration_session(chain, short_config());
    CHECK_FALSE(r.accepted);
    CHECK(r.rejected_stage == "power_fluctuation");
    const auto* g = find_gate(r, "power_fluctuation");
    REQUIRE(g);
    CHECK(g->value > 6.0);
    CHECK_FALSE(r.flatness.has_value());
}

TEST_CASE("Session: a silent loudspeaker fails the gain curve", "[session][gate]") {
    auto chain = clean_chain();
    chain.speaker.ir_taps = {0.0};
    chain.env.noise_level_db = -60.0;
    const auto r = run_calibration_session(chain, short_config());
    CHECK_FALSE(r.accepted);
    CHECK(r.rejected_stage == "gain_curve");
}

TEST_CASE("Session: microphone calibration stops after the profile", "[session]") {
    auto chain = clean_chain();
    SessionOptions options;
    options.target = CalibrationTarget::microphone;
    const auto r = run_calibration_session(chain, short_config(), options);
    REQUIRE(r.accepted);
    REQUIRE(r.profile);
    CHECK_FALSE(r.iir.has_value());
    CHECK_FALSE(r.flatness.has_value());
    for (double f : {200.0, 1000.0, 4000.0})
        CHECK(r.profile->gain_db_at(f) == Approx(fir_gain_db(chain.microphone.ir_taps, f, 48000.0)).margin(0.5));
}

TEST_CASE("Session: MLS level relative to the fitted threshold", "[session]") {
    auto config = short_config();
    config.level_re_t = true;
    config.burst_db = -10.0;
    const auto r = run_calibration_session(clean_chain(), config);
    REQUIRE(r.mls);
    REQUIRE(r.drc_fit);
    CHECK(r.mls->amplitude_db == Approx(r.drc_fit->params.threshold_db - 10.0));
    CHECK(r.power_limit_db == Approx(r.mls->amplitude_db + 5.0));
}
