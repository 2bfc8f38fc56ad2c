#include "catch_amalgamated.hpp"

#include <cmath>

#include "soundcal/mls_analysis.hpp"
#include "soundcal/resample.hpp"
#include "soundcal/sim_chain.hpp"
#include "helpers.hpp"
#include "scenarios.hpp"

using namespace soundcal;
using Catch::Approx;

namespace {

PlaybackLayout layout_for(std::size_t period) {
    PlaybackLayout l;
    l.period_samples = period;
    return l;
}

}  // namespace

// ==============================================================================
// Playback layout
// ==============================================================================

TEST_CASE("Playback: warm-up, analysis periods and a 10% tail", "[mls]") {
    const auto mls = generate_mls({12, -20.0}, 48000.0);
    const auto layout = layout_for(mls.size());
    const auto play = build_playback(mls, layout);
    CHECK(layout.tail_samples() == 410);  // ceil(409.5)
    REQUIRE(play.size() == 5 * 4095 + 410);
    for (std::size_t i = 0; i < play.size(); i += 97) REQUIRE(play[i] == mls[i % 4095]);
    PlaybackLayout bad = layout;
    bad.analysis_periods = 1;
    CHECK_THROWS_AS(build_playback(mls, bad), InvalidArgument);
}

// ==============================================================================
// Period estimate
// ==============================================================================

TEST_CASE("Period: exact for a synchronous recording", "[mls][period]") {
    const auto mls = generate_mls({14, -20.0}, 48000.0);
    const auto play = build_playback(mls, layout_for(mls.size()));
    const auto est = estimate_period_detailed(play, mls.size());
    CHECK(est.period_samples == Approx(16383.0).margin(1e-3));
    CHECK(est.peak_lags.size() >= 3);
}

TEST_CASE("Period: tracks the clock ratio", "[mls][period]") {
    const auto mls = generate_mls({14, -20.0}, 48000.0);
    const auto play = build_playback(mls, layout_for(mls.size()));
    for (double ratio : {1.00002, 1.001, 0.97, 1.1, 2.18, 0.5}) {
        const auto rec = resample_by_ratio(play.view(), ratio);
        const double p = estimate_period(SampledSignal(rec, 48000.0), mls.size());
        INFO("ratio " << ratio);
        CHECK(p / 16383.0 == Approx(ratio).epsilon(2e-6));
    }
}

TEST_CASE("Period: noise without a sequence is not a period", "[mls][period]") {
    const SampledSignal noise(testutil::random_vector(100000, 4), 48000.0);
    CHECK_THROWS_AS(estimate_period(noise, 16383), MeasurementError);
    CHECK_THROWS_AS(estimate_period(SampledSignal(std::vector<double>(100000, 0.0), 48000.0), 16383),
                    MeasurementError);
}

// ==============================================================================
// DFT stretch
// ==============================================================================

TEST_CASE("Stretch: identity at equal length, round trip through a longer grid", "[mls][resample]") {
    const SampledSignal x(testutil::random_vector(1000, 8), 48000.0);
    const auto same = resample_to_period(x, 1000);
    CHECK(same.samples() == x.samples());
    const auto up = resample_to_period(x, 1377);
    const auto back = resample_to_period(up, 1000);
    for (std::size_t i = 0; i < 1000; ++i) REQUIRE(back[i] == Approx(x[i]).margin(1e-9));
}

TEST_CASE("Stretch: a periodic sine keeps its amplitude and cycle count", "[mls][resample]") {
    // 10 cycles in 1000 samples stretched to 1100 samples
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.7 * std::sin(2.0 * std::numbers::pi * 10.0 * i / 1000.0);
    const auto y = resample_to_period(SampledSignal(v, 48000.0), 1100);
    for (std::size_t i = 0; i < y.size(); ++i)
        REQUIRE(y[i] == Approx(0.7 * std::sin(2.0 * std::numbers::pi * 10.0 * i / 1100.0)).margin(1e-9));
}

TEST_CASE("Stretch: ratio limits", "[mls][resample]") {
    const SampledSignal x(testutil::random_vector(1000, 8), 48000.0);
    CHECK_THROWS_AS(resample_to_period(x, 200), InvalidArgument);
    CHECK_THROWS_AS(resample_to_period(x, 4100), InvalidArgument);
    CHECK_NOTHROW(resample_to_period(x, 250));
    CHECK_NOTHROW(resample_to_period(x, 4000));
}

TEST_CASE("Resampler: sine accuracy across ratios", "[mls][resample]") {
    const auto s = generate_sine(1000.0, 0.5, 0.0, 48000.0);
    for (double ratio : {1.001, 1.1, 2.18, 0.5}) {
        const auto y = resample_by_ratio(s.view(), ratio);
        REQUIRE(y.size() == static_cast<std::size_t>(std::llround(s.size() * ratio)));
        double worst = 0.0;
        for (std::size_t i = 200; i + 200 < y.size(); ++i) {
            const double t = static_cast<double>(i) / ratio;
            worst = std::max(worst, std::abs(y[i] - std::sin(2.0 * std::numbers::pi * 1000.0 * t / 48000.0)));
        }
        INFO("ratio " << ratio);
        CHECK(worst < 1e-4);
    }
}

// ==============================================================================
// Impulse response
// ==============================================================================

TEST_CASE("IR: identity chain gives a unit impulse", "[mls][ir]") {
    const auto mls = generate_mls({12, -20.0}, 48000.0);
    std::vector<double> rec;
    for (int p = 0; p < 4; ++p) rec.insert(rec.end(), mls.samples().begin(), mls.samples().end());
    const auto ir = impulse_response(SampledSignal(rec, 48000.0), mls, 4);
    CHECK(ir.peak_index == 0);
    CHECK(ir.taps[0] == Approx(1.0).epsilon(1e-9));
    // off-peak value of the two-valued autocorrelation is -1/L after scaling
    for (std::size_t i = 1; i < ir.size(); i += 51) CHECK(ir.taps[i] == Approx(-1.0 / 4095.0).margin(1e-12));
}

TEST_CASE("IR: circular delay appears at its lag", "[mls][ir]") {
    const auto mls = generate_mls({12, -20.0}, 48000.0);
    std::vector<double> one(mls.size());
    for (std::size_t i = 0; i < one.size(); ++i) one[(i + 123) % one.size()] = 0.5 * mls[i];
    std::vector<double> rec;
    for (int p = 0; p < 3; ++p) rec.insert(rec.end(), one.begin(), one.end());
    const auto ir = impulse_response(SampledSignal(rec, 48000.0), mls, 3);
    CHECK(ir.peak_index == 123);
    CHECK(ir.taps[123] == Approx(0.5).epsilon(1e-6));
}

TEST_CASE("IR: spectrum of a circularly convolved FIR matches the FIR", "[mls][ir]") {
    const auto mls = generate_mls({14, -20.0}, 48000.0);
    const auto fir = scenario::known_fir();
    const auto y = testutil::circular_convolution(mls.samples(), fir);
    std::vector<double> rec;
    for (int p = 0; p < 2; ++p) rec.insert(rec.end(), y.begin(), y.end());
    const auto ir = impulse_response(SampledSignal(rec, 48000.0), mls, 2);
    const auto spec = ir_spectrum(ir);
    for (std::size_t k = 1; k < spec.size(); k += 37) {
        const double f = spec.freq_hz[k];
        if (f < 100.0 || f > 10000.0) continue;
        REQUIRE(spec.gain_db[k] == Approx(testutil::fir_db(fir, f, 48000.0)).margin(0.01));
    }
}

TEST_CASE("IR: recording length must be whole periods", "[mls][ir]") {
    const auto mls = generate_mls({10, -20.0}, 48000.0);
    const SampledSignal rec(std::vector<double>(mls.size() * 4 + 1, 0.0), 48000.0);
    CHECK_THROWS_AS(impulse_response(rec, mls, 4), InvalidArgument);
}

// ==============================================================================
// Nonsynchronous measurement
// ==============================================================================

TEST_CASE("Nonsync: known FIR is recovered at every clock ratio", "[mls][nonsync]") {
    const auto fir = scenario::known_fir();
    const auto base = scenario::recover_fir(fir, 1.0);
    CHECK(base.max_error_db < 0.05);
    for (double ratio : {1.00002, 1.001, 1.1, 2.18}) {
        const auto r = scenario::recover_fir(fir, ratio);
        INFO("ratio " << ratio);
        CHECK(r.max_error_db < 0.5);
        CHECK(scenario::max_deviation_db(r, base) < 0.5);
    }
}

TEST_CASE("Nonsync: fractional alignment removes the sub-sample period remainder", "[mls][nonsync]") {
    // A * P_rec = 4 * 65535 * 1.0000209810 has a fractional part near 0.5.
    const auto fir = scenario::known_fir();
    NonsyncOptions rounded;
    rounded.fractional_alignment = false;
    const auto aligned = scenario::recover_fir(fir, 1.0000209810);
    const auto plain = scenario::recover_fir(fir, 1.0000209810, kSilentDb, 100.0, 10000.0, rounded);
    CHECK(aligned.max_error_db < 0.05);
    CHECK(plain.max_error_db > aligned.max_error_db);
}

// ==============================================================================
// Parent discount and truncation
// ==============================================================================

TEST_CASE("Parent discount: subtracts in dB and floors silent bins", "[mls][discount]") {
    FrequencyResponse system{{0, 100, 200, 300}, {-10, -20, -30, -40}, {}};
    FrequencyResponse parent{{0, 100, 200, 300}, {0, -5, -100, -2}, {}};
    const auto child = discount_parent(system, parent);
    CHECK(child.gain_db[0] == -10.0);
    CHECK(child.gain_db[1] == -15.0);
    CHECK(child.gain_db[2] == Approx(-30.0 + 60.0));  // floored at peak - 60
    CHECK(child.gain_db[3] == -38.0);
    FrequencyResponse other{{0, 100, 200, 301}, {0, 0, 0, 0}, {}};
    CHECK_THROWS_AS(discount_parent(system, other), InvalidArgument);
}

TEST_CASE("Truncation: symmetric, requested length, keeps a smooth magnitude", "[mls][truncate]") {
    const auto fir = scenario::known_fir();
    std::vector<double> padded(65535, 0.0);
    std::copy(fir.begin(), fir.end(), padded.begin());
    const ImpulseResponse ir(padded, 48000.0);
    const auto t = truncate_ir(ir, 0.2);
    REQUIRE(t.size() == 9600);
    for (std::size_t i = 0; i < t.size() / 2; ++i) REQUIRE(t.taps[i] == t.taps[t.size() - 1 - i]);
    for (double f : {200.0, 1000.0, 5000.0})
        CHECK(testutil::fir_db(t.taps, f, 48000.0) == Approx(testutil::fir_db(fir, f, 48000.0)).margin(0.05));
    CHECK_THROWS_AS(truncate_ir(ir, 2.0), InvalidArgument);
}

TEST_CASE("Zero-phase FIR: odd and even lengths are exactly symmetric", "[mls][truncate]") {
    std::vector<double> mag(2049, 1.0);
    for (std::size_t len : {9u, 10u, 511u, 512u}) {
        const auto h = zero_phase_fir(mag, 4096, len);
        for (std::size_t i = 0; i < len / 2; ++i) REQUIRE(h[i] == h[len - 1 - i]);
    }
    const auto odd = zero_phase_fir(mag, 4096, 511);
    CHECK(odd[255] == Approx(1.0).margin(1e-12));
}

// ==============================================================================
// Schroeder
// ==============================================================================

TEST_CASE("Schroeder: monotone from 0 dB", "[mls][schroeder]") {
    const auto ir = scenario::decaying_noise_ir(0.3, 0.6, 48000.0, 1);
    const auto c = schroeder_curve(ir);
    CHECK(c.level_db[0] == 0.0);
    for (std::size_t i = 1; i < c.level_db.size(); ++i) REQUIRE(c.level_db[i] <= c.level_db[i - 1] + 1e-12);
}

TEST_CASE("Schroeder: decay rate of an exponential decay within 10%", "[mls][schroeder]") {
    for (double rt : {0.05, 0.1, 0.3, 0.5, 1.0}) {
        for (unsigned seed = 1; seed <= 5; ++seed) {
            const auto ir = scenario::decaying_noise_ir(rt, 2.0 * rt, 48000.0, seed);
            const double rate = schroeder_decay_rate(schroeder_curve(ir));
            INFO("rt " << rt << " seed " << seed << " rate " << rate);
            CHECK(std::abs(rate - (-60.0 / rt)) < 0.1 * (60.0 / rt));
        }
    }
}

TEST_CASE("Schroeder: all-zero IR is rejected", "[mls][schroeder]") {
    CHECK_THROWS_AS(schroeder_curve(ImpulseResponse(std::vector<double>(100, 0.0), 48000.0)), InvalidArgument);
}
