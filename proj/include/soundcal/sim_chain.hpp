#pragma once

// Simulated playback chain used in place of hardware: compressor, loudspeaker
// FIR, background noise, microphone FIR, independent microphone clock and
// microphone self-noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "soundcal/drc_model.hpp"
#include "soundcal/error.hpp"
#include "soundcal/fft.hpp"
#include "soundcal/mls_analysis.hpp"
#include "soundcal/resample.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

inline constexpr double kSilentDb = -std::numeric_limits<double>::infinity();

struct SimTransducer {
    std::vector<double> ir_taps{1.0};
    std::optional<DrcParams> drc;  // loudspeakers only
    double self_noise_db = kSilentDb;

    void validate() const {
        require(!ir_taps.empty(), "SimTransducer: IR must be nonempty");
        for (double v : ir_taps) require(std::isfinite(v), "SimTransducer: IR taps must be finite");
        if (drc) drc->validate();
    }
};

enum class NoiseSpectrum { white, one_over_f };

/// Gain step applied to the recording from `at_sec` on, for exercising the
/// power-fluctuation monitor.
struct StepFault {
    double at_sec = 0.0;
    double gain_db = 0.0;
};

struct SimEnvironment {
    double noise_level_db = kSilentDb;  // total power of the background noise
    NoiseSpectrum noise_spectrum = NoiseSpectrum::one_over_f;
    double clock_ratio = 1.0;  // microphone rate / loudspeaker rate
    std::uint64_t seed = 0;
    std::optional<StepFault> fault;

    void validate() const {
        require(clock_ratio >= 0.25 && clock_ratio <= 4.0, "SimEnvironment: clock ratio must lie in [0.25, 4]");
        require(!std::isnan(noise_level_db), "SimEnvironment: noise level is NaN");
    }
};

struct PlaybackChain {
    SimTransducer speaker;
    SimTransducer microphone;
    SimEnvironment env;

    void validate() const {
        speaker.validate();
        microphone.validate();
        env.validate();
    }
};

/// Time constant of the compressor's power-envelope detector.
inline constexpr double kCompressorTauSec = 0.002;
inline constexpr double kPinkNoiseLowHz = 20.0;

/// Sample-wise compressor: a one-pole detector tracks mean power and the gain
/// maps the envelope level through the static curve (gain included).
inline std::vector<double> apply_compressor(std::span<const double> x, const DrcParams& p, double sample_rate_hz) {
    const double alpha = 1.0 - std::exp(-1.0 / (kCompressorTauSec * sample_rate_hz));
    DrcParams curve = p;
    curve.background_db.reset();
    std::vector<double> y(x.size());
    double env = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        env += alpha * (x[i] * x[i] - env);
        const double level = stats::power_to_db(std::max(env, 1e-30));
        y[i] = x[i] * stats::db_to_amplitude(drc_out(level, curve) - level);
    }
    return y;
}

/// Causal FIR, output truncated to the input length.
inline std::vector<double> apply_fir(std::span<const double> x, std::span<const double> taps) {
    if (taps.size() == 1) {
        std::vector<double> y(x.begin(), x.end());
        for (double& v : y) v *= taps[0];
        return y;
    }
    auto y = fft::convolve(x, taps);
    y.resize(x.size());
    return y;
}

/// Gaussian noise of total mean power `level_db`, white or with a 1/f power
/// spectrum above 20 Hz.
inline std::vector<double> make_noise(std::size_t n, double level_db, NoiseSpectrum spectrum, double sample_rate_hz,
                                      std::mt19937_64& rng) {
    std::vector<double> noise(n, 0.0);
    if (n == 0 || !std::isfinite(level_db)) return noise;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : noise) v = gauss(rng);
    if (spectrum == NoiseSpectrum::one_over_f) {
        auto x = fft::rfft(noise);
        const double df = sample_rate_hz / static_cast<double>(n);
        x[0] = 0.0;
        for (std::size_t k = 1; k < x.size(); ++k)
            x[k] /= std::sqrt(std::max(df * static_cast<double>(k), kPinkNoiseLowHz));
        noise = fft::irfft(x, n);
    }
    double power = 0.0;
    for (double v : noise) power += v * v;
    power /= static_cast<double>(n);
    if (power > 0.0) {
        const double scale = std::sqrt(stats::db_to_power(level_db) / power);
        for (double& v : noise) v *= scale;
    }
    return noise;
}

/// One pass of `input` through the chain. `stream` selects an independent
/// noise realization for the chain's seed.
inline SampledSignal simulate_playback(const PlaybackChain& chain, const SampledSignal& input,
                                       std::uint64_t stream = 0) {
    chain.validate();
    const double fs = input.sample_rate_hz();
    std::seed_seq seq{static_cast<std::uint32_t>(chain.env.seed), static_cast<std::uint32_t>(chain.env.seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 rng(seq);

    std::vector<double> x = input.samples();
    if (chain.speaker.drc) x = apply_compressor(x, *chain.speaker.drc, fs);
    x = apply_fir(x, chain.speaker.ir_taps);
    if (std::isfinite(chain.env.noise_level_db)) {
        const auto noise = make_noise(x.size(), chain.env.noise_level_db, chain.env.noise_spectrum, fs, rng);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
    }
    if (chain.microphone.drc) x = apply_compressor(x, *chain.microphone.drc, fs);
    x = apply_fir(x, chain.microphone.ir_taps);
    x = resample_by_ratio(x, chain.env.clock_ratio);
    if (std::isfinite(chain.microphone.self_noise_db)) {
        const auto noise = make_noise(x.size(), chain.microphone.self_noise_db, NoiseSpectrum::white, fs, rng);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
    }
    if (chain.env.fault) {
        const auto from = static_cast<std::size_t>(std::max(0.0, std::round(chain.env.fault->at_sec * fs)));
        const double g = stats::db_to_amplitude(chain.env.fault->gain_db);
        for (std::size_t i = from; i < x.size(); ++i) x[i] *= g;
    }
    return {std::move(x), fs};
}

/// PlaybackDevice over a simulated chain; each play() draws fresh noise.
class SimulatedPlayback {
public:
    explicit SimulatedPlayback(PlaybackChain chain, std::uint64_t first_stream = 0)
        : chain_(std::move(chain)), stream_(first_stream) {
        chain_.validate();
    }

    SampledSignal play(const SampledSignal& input) { return simulate_playback(chain_, input, stream_++); }

    const PlaybackChain& chain() const noexcept { return chain_; }
    std::uint64_t plays() const noexcept { return stream_; }

private:
    PlaybackChain chain_;
    std::uint64_t stream_;
};

/// Linear-phase FIR of `taps` taps approximating `gain_db(f)`, by frequency
/// sampling on a dense grid followed by zero-phase cropping.
inline std::vector<double> design_fir_from_response(const std::function<double(double)>& gain_db,
                                                    std::size_t taps, double sample_rate_hz) {
    require(taps >= 1, "design_fir_from_response: need at least one tap");
    const std::size_t m = fft::good_size(std::max<std::size_t>(8 * taps, 4096));
    std::vector<double> mag(m / 2 + 1);
    for (std::size_t k = 0; k < mag.size(); ++k)
        mag[k] = stats::db_to_amplitude(gain_db(sample_rate_hz * static_cast<double>(k) / static_cast<double>(m)));
    return zero_phase_fir(mag, m, taps);
}

/// Magnitude (dB) of an FIR at frequency f.
inline double fir_gain_db(std::span<const double> taps, double f_hz, double sample_rate_hz) {
    const double w = -2.0 * std::numbers::pi * f_hz / sample_rate_hz;
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < taps.size(); ++n) acc += taps[n] * std::polar(1.0, w * static_cast<double>(n));
    return stats::amplitude_to_db(std::abs(acc));
}

}  // namespace soundcal
