#include "catch_amalgamated.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "soundcal/cli.hpp"
#include "soundcal/correction.hpp"
#include "helpers.hpp"

using namespace soundcal;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run simulate(const std::string& config, const std::string& chain, const std::string& report) {
    cli::SimulateArgs a;
    a.config_path = config;
    a.chain_path = chain;
    a.out_path = report;
    a.timestamp = "2024-05-01T12:00:00Z";
    std::ostringstream out, err;
    const int code = cli::cmd_simulate(a, out, err);
    return {code, out.str(), err.str()};
}

Run profile(cli::ProfileArgs a) {
    std::ostringstream out, err;
    const int code = cli::cmd_profile(a, out, err);
    return {code, out.str(), err.str()};
}

Run export_plots(const std::string& report, const std::string& which, const std::string& dir) {
    std::ostringstream out, err;
    const int code = cli::cmd_export_plots(report, which, dir, out, err);
    return {code, out.str(), err.str()};
}

// One accepted report on the clean chain, written once.
const std::string& clean_report_path() {
    static TempDir dir("cli_report");
    static const std::string path = [] {
        const auto p = dir.path() / "clean.json";
        const auto r = simulate(testutil::fixture("default.cfg"), testutil::fixture("clean_chain.json"), p.string());
        REQUIRE(r.code == cli::kExitAccepted);
        return p.string();
    }();
    return path;
}

std::string instantiate(const std::string& name, const std::string& parent, const std::filesystem::path& dir) {
    auto text = cli::read_text(testutil::fixture(name + ".json.in"));
    text.replace(text.find("@PARENT@"), 8, parent);
    const auto path = dir / (name + ".json");
    std::ofstream(path) << text;
    return path.string();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

// ==============================================================================
// simulate
// ==============================================================================

TEST_CASE("simulate: the clean chain is accepted", "[cli]") {
    const auto report = cli::read_json(clean_report_path());
    CHECK(report.at("status") == "accepted");
    CHECK(report.at("timestamp_iso8601") == "2024-05-01T12:00:00Z");
    CHECK(report.at("flatness").at("sd_db").get<double>() < 3.0);
}

TEST_CASE("simulate: late echoes are left uncorrected and fail the flatness gate", "[cli]") {
    // echoes at 0.25 and 0.35 s lie beyond the 0.2 s inverse filter
    TempDir dir("cli_echo");
    const auto path = (dir.path() / "echo.json").string();
    const auto r = simulate(testutil::fixture("default.cfg"), testutil::fixture("reverberant_chain.json"), path);
    CHECK(r.code == cli::kExitRejected);
    CHECK_THAT(r.out, ContainsSubstring("rejected: flatness"));
    CHECK_THAT(r.err, ContainsSubstring("gate flatness failed"));
    const auto report = cli::read_json(path);
    CHECK(report.at("status") == "rejected");
    CHECK(report.at("rejected_stage") == "flatness");
    CHECK(report.at("flatness").at("sd_db").get<double>() > 3.0);
}

TEST_CASE("simulate: a bad config is an error naming the key", "[cli]") {
    TempDir dir("cli_badcfg");
    const auto path = dir.path() / "r.json";
    const auto r = simulate(testutil::fixture("bad.cfg"), testutil::fixture("clean_chain.json"), path.string());
    CHECK(r.code == cli::kExitError);
    CHECK_THAT(r.err, ContainsSubstring("calibrateSoundMaxHzz"));
    CHECK_FALSE(std::filesystem::exists(path));

    const auto missing = simulate(testutil::fixture("default.cfg"), "/nonexistent/chain.json", path.string());
    CHECK(missing.code == cli::kExitError);
}

TEST_CASE("profile: screen sizes parse as WIDTHxHEIGHT", "[cli]") {
    CHECK(cli::parse_screen("1170x2532") == ScreenPx{1170, 2532});
    CHECK_FALSE(cli::parse_screen("1170x"));
    CHECK_FALSE(cli::parse_screen("0x10"));
    CHECK_FALSE(cli::parse_screen("10x10x"));
}

// ==============================================================================
// profile
// ==============================================================================

TEST_CASE("profile: add, trace, match and coverage", "[cli][profile]") {
    TempDir dir("cli_store");
    const auto store = (dir.path() / "store").string();
    cli::ProfileArgs a;
    a.store = store;

    a.subcommand = "add";
    a.file = testutil::fixture("profile_root.json");
    const auto root = profile(a);
    REQUIRE(root.code == cli::kExitAccepted);
    const auto root_id = first_line(root.out);
    CHECK(root_id.size() == 16);

    a.file = instantiate("profile_speaker", root_id, dir.path());
    const auto speaker = profile(a);
    REQUIRE(speaker.code == cli::kExitAccepted);
    a.file = instantiate("profile_phone", first_line(speaker.out), dir.path());
    const auto phone = profile(a);
    REQUIRE(phone.code == cli::kExitAccepted);
    const auto phone_id = first_line(phone.out);

    a.subcommand = "trace";
    a.id = phone_id;
    const auto trace = profile(a);
    CHECK(trace.code == cli::kExitAccepted);
    CHECK(std::count(trace.out.begin(), trace.out.end(), '\n') == 3);
    CHECK(trace.out.rfind(phone_id, 0) == 0);
    CHECK_THAT(trace.out, ContainsSubstring("manufacturer_microphone"));

    a.subcommand = "match";
    a.model_name = "  iphone   15 ";
    a.model_number = "a3090";
    a.screen = ScreenPx{2556, 1179};
    const auto hit = profile(a);
    CHECK(hit.code == cli::kExitAccepted);
    CHECK(first_line(hit.out) == phone_id);

    a.screen = ScreenPx{1170, 2532};
    const auto miss = profile(a);
    CHECK(miss.code == cli::kExitNoMatch);
    CHECK_THAT(miss.out, ContainsSubstring("NO MATCH (model_name yes, model_number yes, screen no)"));

    a.subcommand = "coverage";
    const auto cov = profile(a);
    CHECK(cov.code == cli::kExitAccepted);
    CHECK(cov.out == "Apple\t1\n");

    a.subcommand = "list";
    a.signers = {"someone@else.org"};
    const auto roots = profile(a);  // manufacturer roots need no approved signer
    CHECK(roots.code == cli::kExitAccepted);
    CHECK(std::count(roots.out.begin(), roots.out.end(), '\n') == 1);
    CHECK_THAT(roots.out, ContainsSubstring("manufacturer_microphone"));
}

TEST_CASE("profile: a missing store is an error", "[cli][profile]") {
    TempDir dir("cli_nostore");
    cli::ProfileArgs a;
    a.subcommand = "coverage";
    a.store = (dir.path() / "absent").string();
    CHECK(profile(a).code == cli::kExitError);

    a.subcommand = "frobnicate";
    a.store = dir.str();
    CHECK(profile(a).code == cli::kExitError);

    a.subcommand = "add";
    a.file = testutil::fixture("profile_phone.json.in");  // unresolved parent
    const auto r = profile(a);
    CHECK(r.code == cli::kExitError);
    CHECK_THAT(r.err, ContainsSubstring("error:"));
}

// ==============================================================================
// export-plots
// ==============================================================================

TEST_CASE("export-plots: every figure writes its series", "[cli][plots]") {
    TempDir dir("cli_plots");
    const auto ir = export_plots(clean_report_path(), "ir", dir.str());
    REQUIRE(ir.code == cli::kExitAccepted);
    const auto [t6, a6] = cli::read_csv_columns((dir.path() / "ir_6ms.csv").string());
    const auto [t50, a50] = cli::read_csv_columns((dir.path() / "ir_50ms.csv").string());
    CHECK(t6.size() == 288);
    CHECK(t50.size() == 2400);
    CHECK(t50.back() < 50.0);

    for (const auto& name : cli::plot_names())
        CHECK(export_plots(clean_report_path(), name, dir.str()).code == cli::kExitAccepted);
    CHECK(std::filesystem::exists(dir.path() / "gain_thd.csv"));
    CHECK(std::filesystem::exists(dir.path() / "schroeder.csv"));
    CHECK(std::filesystem::exists(dir.path() / "predicted_sum_db.csv"));
    CHECK(std::filesystem::exists(dir.path() / "profile.csv"));
}

TEST_CASE("export-plots: the flatness CSV reproduces the reported SD", "[cli][plots]") {
    TempDir dir("cli_flat");
    REQUIRE(export_plots(clean_report_path(), "correction", dir.str()).code == cli::kExitAccepted);
    const auto report = cli::read_json(clean_report_path());
    const auto& fl = report.at("flatness");
    const auto [f, level] = cli::read_csv_columns((dir.path() / "flatness_db.csv").string());
    const double sd =
        flatness_sd_from_spectrum(f, level, fl.at("band_lo_hz").get<double>(), fl.at("band_hi_hz").get<double>());
    CHECK(sd == Catch::Approx(fl.at("sd_db").get<double>()).margin(1e-6));
}

TEST_CASE("export-plots: undefined bins are written as nan", "[cli][plots]") {
    TempDir dir("cli_nan");
    auto report = cli::read_json(clean_report_path());
    auto& sum = report.at("correction").at("spectra").at("predicted_sum_db");
    sum[0] = nullptr;
    sum[3] = nullptr;
    const auto path = (dir.path() / "r.json").string();
    std::ofstream(path) << report.dump();
    REQUIRE(export_plots(path, "correction", dir.str()).code == cli::kExitAccepted);
    const auto [f, v] = cli::read_csv_columns((dir.path() / "predicted_sum_db.csv").string());
    REQUIRE(v.size() == sum.size());
    CHECK(std::isnan(v[0]));
    CHECK(std::isnan(v[3]));
    CHECK(std::isfinite(v[1]));
    CHECK_THAT(cli::read_text((dir.path() / "predicted_sum_db.csv").string()), ContainsSubstring(",nan\n"));
}

TEST_CASE("export-plots: missing sections and unknown names write nothing", "[cli][plots]") {
    TempDir dir("cli_empty");
    auto report = cli::read_json(clean_report_path());
    report["schroeder"] = nullptr;
    const auto path = (dir.path() / "r.json").string();
    std::ofstream(path) << report.dump();
    const auto out = dir.path() / "out";

    const auto empty = export_plots(path, "schroeder", out.string());
    CHECK(empty.code == cli::kExitError);
    CHECK_THAT(empty.err, ContainsSubstring("schroeder"));
    CHECK_FALSE(std::filesystem::exists(out));

    const auto unknown = export_plots(path, "waterfall", out.string());
    CHECK(unknown.code == cli::kExitError);
    for (const auto& name : cli::plot_names()) CHECK_THAT(unknown.err, ContainsSubstring(name));
    CHECK_FALSE(std::filesystem::exists(out));
}
