#pragma once

// 1 kHz tone analysis: recorded frequency under clock drift, phase-independent
// harmonic power by sine/cosine correlation, THD and the gain curve.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <concepts>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "soundcal/error.hpp"
#include "soundcal/fft.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

/// Anything that plays a digital signal and returns the recording.
template <typename D>
concept PlaybackDevice = requires(D& device, const SampledSignal& signal) {
    { device.play(signal) } -> std::convertible_to<SampledSignal>;
};

inline constexpr int kMaxHarmonic = 6;
inline constexpr double kToneSearchFraction = 0.05;
/// Peak power must exceed the median power of the search band by this factor.
inline constexpr double kToneDetectionRatio = 10.0;
/// Fundamental power below this (about -150 dB) counts as absent.
inline constexpr double kFundamentalFloor = 1e-15;

struct ToneAnalysis {
    double nominal_f_hz = 0.0;
    double recorded_f_hz = 0.0;
    /// P_1..P_6; harmonics at or above Nyquist are left at zero.
    std::array<double, kMaxHarmonic> harmonic_powers{};
    std::vector<int> harmonics_used;  // of 2..6
    double thd = 0.0;
    double out_db = 0.0;  // 10 log10 P_1
};

struct GainPoint {
    double in_db = 0.0;
    double out_db = 0.0;
    double thd = 0.0;
};

/// Frequency of the spectral peak within +-5% of `nominal_f_hz`. The recording
/// is Hann-weighted and zero-padded 8x; the peak bin is refined by a parabola
/// through the log-magnitudes of it and its neighbours.
inline double estimate_recorded_frequency(const SampledSignal& recording, double nominal_f_hz) {
    const double fs = recording.sample_rate_hz();
    require(recording.duration_sec() >= 0.5 - 1e-12,
            "estimate_recorded_frequency: recording must be at least 0.5 s");
    require(nominal_f_hz > 0.0 && nominal_f_hz < fs / 2.0,
            "estimate_recorded_frequency: nominal frequency must lie in (0, Nyquist)");

    const std::size_t n = recording.size();
    const auto window = hann_window(n);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = recording[i] * window[i];
    const std::size_t m = fft::good_size(8 * n);
    const auto spectrum = fft::rfft(x, m);
    const double bin_hz = fs / static_cast<double>(m);

    const auto lo = static_cast<std::size_t>(
        std::max(1.0, std::floor(nominal_f_hz * (1.0 - kToneSearchFraction) / bin_hz)));
    const auto hi = std::min(spectrum.size() - 2,
                             static_cast<std::size_t>(std::ceil(nominal_f_hz * (1.0 + kToneSearchFraction) / bin_hz)));
    require(hi > lo, "estimate_recorded_frequency: search band is empty");

    std::vector<double> band;
    band.reserve(hi - lo + 1);
    std::size_t peak = lo;
    for (std::size_t k = lo; k <= hi; ++k) {
        const double p = std::norm(spectrum[k]);
        band.push_back(p);
        if (p > std::norm(spectrum[peak])) peak = k;
    }
    auto mid = band.begin() + static_cast<std::ptrdiff_t>(band.size() / 2);
    std::nth_element(band.begin(), mid, band.end());
    const double median = *mid;
    const double peak_power = std::norm(spectrum[peak]);
    if (!(peak_power > 0.0) || peak_power < kToneDetectionRatio * median)
        throw MeasurementError("tone not detected near " + std::to_string(nominal_f_hz) + " Hz");

    const double a = std::log(std::abs(spectrum[peak - 1]) + 1e-300);
    const double b = std::log(std::abs(spectrum[peak]));
    const double c = std::log(std::abs(spectrum[peak + 1]) + 1e-300);
    const double denom = a - 2.0 * b + c;
    double offset = denom < 0.0 ? 0.5 * (a - c) / denom : 0.0;
    offset = std::clamp(offset, -0.5, 0.5);
    return (static_cast<double>(peak) + offset) * bin_hz;
}

/// Power of the component at k * f_rec, normalized so a unit-amplitude sine
/// yields 1/2. Hann-weighted sine and cosine correlations are combined, which
/// makes the result phase independent and rejects other frequencies.
inline double harmonic_power(const SampledSignal& recording, double f_rec, int k) {
    const double fs = recording.sample_rate_hz();
    require(!recording.empty(), "harmonic_power: recording is empty");
    require(k >= 1, "harmonic_power: harmonic index must be >= 1");
    const double f = f_rec * static_cast<double>(k);
    require(f > 0.0 && f < fs / 2.0, "harmonic_power: harmonic frequency must be below Nyquist");

    const std::size_t n = recording.size();
    const auto window = hann_window(n);
    const double w = 2.0 * std::numbers::pi * f / fs;
    double s = 0.0, c = 0.0, wsum = 0.0;
    const std::complex<double> step = std::polar(1.0, w);
    std::complex<double> rot = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if ((i & 1023u) == 0) rot = std::polar(1.0, w * static_cast<double>(i));
        const double v = window[i] * recording[i];
        s += v * rot.imag();
        c += v * rot.real();
        wsum += window[i];
        rot *= step;
    }
    if (wsum <= 0.0) return 0.0;
    return 2.0 * (s * s + c * c) / (wsum * wsum);
}

inline ToneAnalysis analyze_tone_at(const SampledSignal& recording, double nominal_f_hz, double f_rec) {
    const double nyquist = recording.sample_rate_hz() / 2.0;
    ToneAnalysis out;
    out.nominal_f_hz = nominal_f_hz;
    out.recorded_f_hz = f_rec;
    out.harmonic_powers[0] = harmonic_power(recording, f_rec, 1);
    double harmonics = 0.0;
    for (int k = 2; k <= kMaxHarmonic; ++k) {
        if (f_rec * k >= nyquist) break;
        out.harmonic_powers[static_cast<std::size_t>(k - 1)] = harmonic_power(recording, f_rec, k);
        harmonics += out.harmonic_powers[static_cast<std::size_t>(k - 1)];
        out.harmonics_used.push_back(k);
    }
    const double p1 = out.harmonic_powers[0];
    if (p1 < kFundamentalFloor)
        throw MeasurementError("fundamental power below detection floor");
    out.thd = std::sqrt(harmonics / p1);
    out.out_db = stats::power_to_db(p1);
    return out;
}

/// THD over harmonics 2..6 (those below Nyquist).
inline double thd(const SampledSignal& recording, double f_rec) {
    return analyze_tone_at(recording, f_rec, f_rec).thd;
}

inline ToneAnalysis analyze_tone(const SampledSignal& recording, double nominal_f_hz) {
    return analyze_tone_at(recording, nominal_f_hz, estimate_recorded_frequency(recording, nominal_f_hz));
}

/// Sine amplitude (dB re full scale) whose mean power is `power_db`.
inline double sine_amplitude_db_for_power(double power_db) { return power_db + 10.0 * std::log10(2.0); }

struct GainCurveOptions {
    double tone_sec = 1.0;
    /// Leading part of each recording excluded from analysis.
    double settle_sec = 0.1;
};

/// Plays a sine at each input level (mean power, dB re full scale) through the
/// device and measures output level and THD. Levels are processed in order.
template <PlaybackDevice Device>
std::vector<GainPoint> measure_gain_curve(Device& device, std::span<const double> levels_db, double freq_hz,
                                          double sample_rate_hz, const GainCurveOptions& options = {},
                                          std::vector<ToneAnalysis>* analyses = nullptr,
                                          std::vector<SampledSignal>* recordings = nullptr) {
    require(!levels_db.empty(), "measure_gain_curve: no levels");
    for (std::size_t i = 0; i < levels_db.size(); ++i) {
        require(levels_db[i] < 0.0, "measure_gain_curve: levels must be below 0 dB");
        if (i > 0) require(levels_db[i] > levels_db[i - 1], "measure_gain_curve: levels must ascend");
    }
    std::vector<GainPoint> points;
    points.reserve(levels_db.size());
    for (double level : levels_db) {
        const auto tone = generate_sine(freq_hz, options.settle_sec + options.tone_sec,
                                        sine_amplitude_db_for_power(level), sample_rate_hz);
        SampledSignal recorded = device.play(tone);
        const auto skip = static_cast<std::size_t>(std::llround(options.settle_sec * recorded.sample_rate_hz()));
        const auto steady = recorded.slice(skip, recorded.size() - std::min(skip, recorded.size()));
        try {
            auto analysis = analyze_tone(steady, freq_hz);
            points.push_back({level, analysis.out_db, analysis.thd});
            if (analyses) analyses->push_back(std::move(analysis));
        } catch (const MeasurementError& e) {
            std::ostringstream msg;
            msg << "gain curve at " << level << " dB: " << e.what();
            throw MeasurementError(msg.str());
        }
        if (recordings) recordings->push_back(std::move(recorded));
    }
    return points;
}

}  // namespace soundcal
