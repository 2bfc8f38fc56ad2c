#include "catch_amalgamated.hpp"

#include <cmath>

#include "soundcal/sim_chain.hpp"
#include "soundcal/sine_calibration.hpp"
#include "helpers.hpp"
#include "scenarios.hpp"

using namespace soundcal;
using Catch::Approx;

// ==============================================================================
// Signal path
// ==============================================================================

TEST_CASE("Chain: an empty chain passes the input through", "[sim]") {
    const SampledSignal x(testutil::random_vector(20000, 1, 0.1), 48000.0);
    const auto y = simulate_playback(PlaybackChain{}, x);
    REQUIRE(y.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(y[i] == Approx(x[i]).margin(1e-12));
}

TEST_CASE("Chain: speaker and microphone FIR gains add", "[sim]") {
    PlaybackChain chain;
    chain.speaker.ir_taps = scenario::known_fir();
    chain.microphone.ir_taps = design_fir_from_response([](double f) { return f > 2000.0 ? -4.0 : 2.0; }, 256, 48000.0);
    for (double f : {300.0, 1000.0, 5000.0}) {
        const auto tone = generate_sine(f, 1.0, -20.0, 48000.0);
        const auto y = simulate_playback(chain, tone);
        const auto steady = y.slice(4800, y.size() - 4800);
        const double gain = analyze_tone(steady, f).out_db - (-23.0103);
        const double expected = fir_gain_db(chain.speaker.ir_taps, f, 48000.0) +
                                fir_gain_db(chain.microphone.ir_taps, f, 48000.0);
        CHECK(gain == Approx(expected).margin(0.05));
    }
}

TEST_CASE("Chain: clock ratio scales the length and the tone frequency", "[sim]") {
    PlaybackChain chain;
    chain.env.clock_ratio = 2.18;
    const auto tone = generate_sine(1000.0, 1.0, -20.0, 48000.0);
    const auto y = simulate_playback(chain, tone);
    CHECK(y.size() == 104640);
    CHECK(y.sample_rate_hz() == 48000.0);
    // a 1 kHz tone recorded by a 2.18x faster clock reads as 1000 / 2.18 Hz
    CHECK(estimate_recorded_frequency(y, 1000.0 / 2.18) == Approx(1000.0 / 2.18).margin(0.05));
}

TEST_CASE("Chain: compressor steady state follows the static curve", "[sim]") {
    const DrcParams p{-5.0, -21.0, 10.0, 0.5, std::nullopt};
    for (double level : {-40.0, -26.0, -21.0, -16.0, -6.0}) {
        const auto tone = generate_sine(1000.0, 1.0, sine_amplitude_db_for_power(level), 48000.0);
        const auto y = apply_compressor(tone.view(), p, 48000.0);
        const SampledSignal steady({y.begin() + 4800, y.end()}, 48000.0);
        CHECK(analyze_tone(steady, 1000.0).out_db == Approx(drc_out(level, p)).margin(0.1));
    }
}

// ==============================================================================
// Noise
// ==============================================================================

TEST_CASE("Noise: exact total power for white and 1/f", "[sim][noise]") {
    std::mt19937_64 rng(3);
    for (auto spectrum : {NoiseSpectrum::white, NoiseSpectrum::one_over_f}) {
        const auto n = make_noise(96000, -50.0, spectrum, 48000.0, rng);
        double p = 0.0;
        for (double v : n) p += v * v;
        CHECK(10.0 * std::log10(p / n.size()) == Approx(-50.0).margin(1e-9));
    }
    CHECK(make_noise(100, kSilentDb, NoiseSpectrum::white, 48000.0, rng) == std::vector<double>(100, 0.0));
}

TEST_CASE("Noise: 1/f has equal power per octave", "[sim][noise]") {
    std::mt19937_64 rng(4);
    const std::size_t n = 480000;
    const auto noise = make_noise(n, -40.0, NoiseSpectrum::one_over_f, 48000.0, rng);
    const auto x = fft::rfft(noise);
    const double df = 48000.0 / static_cast<double>(n);
    std::vector<double> octave_db;
    for (double lo = 100.0; lo < 12000.0; lo *= 2.0) {
        double p = 0.0;
        for (auto k = static_cast<std::size_t>(lo / df); k < static_cast<std::size_t>(2.0 * lo / df); ++k)
            p += std::norm(x[k]);
        octave_db.push_back(10.0 * std::log10(p));
    }
    for (double v : octave_db) CHECK(v == Approx(octave_db.front()).margin(0.3));
}

TEST_CASE("Chain: same seed and stream reproduce, a new stream does not", "[sim][noise]") {
    PlaybackChain chain;
    chain.env.noise_level_db = -40.0;
    chain.env.seed = 77;
    chain.microphone.self_noise_db = -70.0;
    const auto x = generate_sine(1000.0, 0.5, -20.0, 48000.0);
    const auto a = simulate_playback(chain, x, 0);
    const auto b = simulate_playback(chain, x, 0);
    const auto c = simulate_playback(chain, x, 1);
    CHECK(a.samples() == b.samples());
    CHECK(a.samples() != c.samples());

    SimulatedPlayback device(chain);
    const auto first = device.play(x);
    const auto second = device.play(x);
    CHECK(first.samples() == a.samples());
    CHECK(second.samples() == c.samples());
    CHECK(device.plays() == 2);
}

TEST_CASE("Chain: a step fault changes the level from its time on", "[sim]") {
    PlaybackChain chain;
    chain.env.fault = StepFault{1.0, -20.0};
    const auto x = generate_sine(1000.0, 2.0, -20.0, 48000.0);
    const auto y = simulate_playback(chain, x);
    CHECK(y[1000] == x[1000]);
    CHECK(y[60000] == Approx(0.1 * x[60000]).margin(1e-15));
    CHECK(power_over_time(y).unstable(6.0));
}

TEST_CASE("Chain: invalid settings are rejected", "[sim]") {
    PlaybackChain chain;
    chain.env.clock_ratio = 5.0;
    CHECK_THROWS_AS(chain.validate(), InvalidArgument);
    chain.env.clock_ratio = 1.0;
    chain.speaker.ir_taps.clear();
    CHECK_THROWS_AS(chain.validate(), InvalidArgument);
    chain.speaker.ir_taps = {1.0};
    chain.speaker.drc = DrcParams{0.0, -20.0, 5.0, 1.5, std::nullopt};
    CHECK_THROWS_AS(chain.validate(), InvalidArgument);
}

TEST_CASE("FIR design: follows the requested response", "[sim]") {
    const auto h = design_fir_from_response([](double f) { return f < 1000.0 ? 0.0 : -6.0; }, 1024, 48000.0);
    REQUIRE(h.size() == 1024);
    CHECK(fir_gain_db(h, 300.0, 48000.0) == Approx(0.0).margin(0.1));
    CHECK(fir_gain_db(h, 5000.0, 48000.0) == Approx(-6.0).margin(0.1));
    CHECK(fir_gain_db(h, 5000.0, 48000.0) == Approx(testutil::fir_db(h, 5000.0, 48000.0)).margin(1e-9));
}
