#pragma once

// Signal primitives: the sampled-signal and frequency-response currency types,
// MLS and sine generation, the Hann window, spectra, autocorrelation and the
// time-course power monitor.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soundcal/error.hpp"
#include "soundcal/fft.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

/// Real-valued waveform in digital full-scale units with its nominal rate.
class SampledSignal {
public:
    SampledSignal() = default;

    SampledSignal(std::vector<double> samples, double sample_rate_hz)
        : samples_(std::move(samples)), sample_rate_hz_(sample_rate_hz) {
        require(sample_rate_hz_ > 0.0 && std::isfinite(sample_rate_hz_),
                "SampledSignal: sample rate must be positive");
        for (double s : samples_)
            require(std::isfinite(s), "SampledSignal: samples must be finite");
    }

    const std::vector<double>& samples() const noexcept { return samples_; }
    std::span<const double> view() const noexcept { return samples_; }
    double sample_rate_hz() const noexcept { return sample_rate_hz_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    double duration_sec() const noexcept {
        return static_cast<double>(samples_.size()) / sample_rate_hz_;
    }
    double operator[](std::size_t i) const noexcept { return samples_[i]; }

    /// Copy of samples [first, first + count), clamped to the signal.
    SampledSignal slice(std::size_t first, std::size_t count) const {
        first = std::min(first, samples_.size());
        count = std::min(count, samples_.size() - first);
        return {std::vector<double>(samples_.begin() + static_cast<std::ptrdiff_t>(first),
                                    samples_.begin() + static_cast<std::ptrdiff_t>(first + count)),
                sample_rate_hz_};
    }

    double mean_power() const noexcept {
        if (samples_.empty()) return 0.0;
        double s = 0.0;
        for (double x : samples_) s += x * x;
        return s / static_cast<double>(samples_.size());
    }

private:
    std::vector<double> samples_;
    double sample_rate_hz_ = 1.0;
};

/// Gain (dB) and phase (rad) per frequency. Produced from FFTs on a uniform
/// grid, but profiles loaded from disk may carry any ascending grid.
struct FrequencyResponse {
    std::vector<double> freq_hz;
    std::vector<double> gain_db;
    std::vector<double> phase_rad;

    std::size_t size() const noexcept { return freq_hz.size(); }

    double magnitude(std::size_t k) const { return stats::db_to_amplitude(gain_db[k]); }

    /// Index of the grid point closest to `f`.
    std::size_t nearest_bin(double f) const {
        require(!freq_hz.empty(), "FrequencyResponse: empty grid");
        std::size_t best = 0;
        double best_d = std::abs(freq_hz[0] - f);
        for (std::size_t k = 1; k < freq_hz.size(); ++k) {
            const double d = std::abs(freq_hz[k] - f);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        return best;
    }

    /// Gain in dB linearly interpolated in frequency; held constant beyond the ends.
    double gain_db_at(double f) const {
        require(!freq_hz.empty(), "FrequencyResponse: empty grid");
        if (f <= freq_hz.front()) return gain_db.front();
        if (f >= freq_hz.back()) return gain_db.back();
        auto it = std::upper_bound(freq_hz.begin(), freq_hz.end(), f);
        const std::size_t hi = static_cast<std::size_t>(it - freq_hz.begin());
        const std::size_t lo = hi - 1;
        const double t = (f - freq_hz[lo]) / (freq_hz[hi] - freq_hz[lo]);
        const double a = gain_db[lo];
        const double b = gain_db[hi];
        if (!std::isfinite(a) || !std::isfinite(b)) return t < 0.5 ? a : b;
        return a + t * (b - a);
    }

    void validate() const {
        require(gain_db.size() == freq_hz.size(), "FrequencyResponse: gain/frequency length mismatch");
        require(phase_rad.empty() || phase_rad.size() == freq_hz.size(),
                "FrequencyResponse: phase/frequency length mismatch");
        for (std::size_t k = 1; k < freq_hz.size(); ++k)
            require(freq_hz[k] > freq_hz[k - 1], "FrequencyResponse: frequencies must ascend");
    }
};

/// Same frequency grid within a relative tolerance.
inline bool same_grid(const FrequencyResponse& a, const FrequencyResponse& b, double rel_tol = 1e-9) {
    if (a.freq_hz.size() != b.freq_hz.size()) return false;
    for (std::size_t k = 0; k < a.freq_hz.size(); ++k) {
        const double scale = std::max({1.0, std::abs(a.freq_hz[k]), std::abs(b.freq_hz[k])});
        if (std::abs(a.freq_hz[k] - b.freq_hz[k]) > rel_tol * scale) return false;
    }
    return true;
}

/// `response` re-sampled onto `freq_hz` (gain interpolated, phase dropped).
inline FrequencyResponse resample_response(const FrequencyResponse& response,
                                           std::span<const double> freq_hz) {
    FrequencyResponse out;
    out.freq_hz.assign(freq_hz.begin(), freq_hz.end());
    out.gain_db.reserve(freq_hz.size());
    for (double f : freq_hz) out.gain_db.push_back(response.gain_db_at(f));
    out.phase_rad.assign(freq_hz.size(), 0.0);
    return out;
}

/// Uniform FFT grid k * fs / n for k = 0..n/2.
inline std::vector<double> fft_grid(std::size_t n, double sample_rate_hz) {
    std::vector<double> f(n / 2 + 1);
    for (std::size_t k = 0; k < f.size(); ++k)
        f[k] = static_cast<double>(k) * sample_rate_hz / static_cast<double>(n);
    return f;
}

// ---------------------------------------------------------------------------
// Maximum-length sequences

inline constexpr int kMinMlsOrder = 2;
inline constexpr int kMaxMlsOrder = 24;

/// Feedback taps (1-based register positions) of one primitive polynomial per
/// order; Fibonacci form, from the widely published XAPP052 table.
inline std::span<const int> mls_taps(int order) {
    static const std::array<std::vector<int>, kMaxMlsOrder + 1> table = {{
        {},
        {},
        {2, 1},
        {3, 2},
        {4, 3},
        {5, 3},
        {6, 5},
        {7, 6},
        {8, 6, 5, 4},
        {9, 5},
        {10, 7},
        {11, 9},
        {12, 6, 4, 1},
        {13, 4, 3, 1},
        {14, 5, 3, 1},
        {15, 14},
        {16, 15, 13, 4},
        {17, 14},
        {18, 11},
        {19, 6, 2, 1},
        {20, 17},
        {21, 19},
        {22, 21},
        {23, 18},
        {24, 23, 22, 17},
    }};
    if (order < kMinMlsOrder || order > kMaxMlsOrder)
        throw InvalidArgument("MLS order " + std::to_string(order) + " is not supported (" +
                              std::to_string(kMinMlsOrder) + ".." + std::to_string(kMaxMlsOrder) + ")");
    return table[static_cast<std::size_t>(order)];
}

struct MlsSpec {
    int order = 16;
    double amplitude_db = -34.0;

    std::size_t period_samples() const { return (std::size_t{1} << order) - 1; }
    double amplitude() const { return stats::db_to_amplitude(amplitude_db); }
    std::span<const int> polynomial() const { return mls_taps(order); }
};

/// Raw output bits of one MLS period. With taps {n, t2, ...} read as the
/// polynomial x^n + x^t2 + ... + 1, the sequence satisfies
/// bit[k + n] = bit[k] XOR (XOR over t != n of bit[k + t]); the first n bits are 1.
inline std::vector<std::uint8_t> mls_bits(int order) {
    const auto taps = mls_taps(order);
    const std::size_t n = static_cast<std::size_t>(order);
    const std::size_t period = (std::size_t{1} << order) - 1;
    std::vector<std::uint8_t> bits(period, 1);
    for (std::size_t k = 0; k + n < period; ++k) {
        std::uint8_t b = bits[k];
        for (int t : taps)
            if (static_cast<std::size_t>(t) != n) b ^= bits[k + static_cast<std::size_t>(t)];
        bits[k + n] = b;
    }
    return bits;
}

/// One period of the binary sequence: bit 0 -> +a, bit 1 -> -a.
inline SampledSignal generate_mls(const MlsSpec& spec, double sample_rate_hz) {
    const auto bits = mls_bits(spec.order);
    const double a = spec.amplitude();
    std::vector<double> samples(bits.size());
    for (std::size_t k = 0; k < bits.size(); ++k) samples[k] = bits[k] ? -a : a;
    return {std::move(samples), sample_rate_hz};
}

/// Order whose period 2^n - 1 is log-nearest to duration * fs.
inline int order_for_duration(double duration_sec, double sample_rate_hz) {
    require(duration_sec > 0.0, "order_for_duration: duration must be positive");
    require(sample_rate_hz > 0.0, "order_for_duration: sample rate must be positive");
    const double target = std::log(duration_sec * sample_rate_hz);
    int best = 1;
    double best_distance = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= 62; ++n) {
        const double len = std::ldexp(1.0, n) - 1.0;
        const double d = std::abs(std::log(len) - target);
        if (d < best_distance) {
            best_distance = d;
            best = n;
        }
    }
    if (best < kMinMlsOrder || best > kMaxMlsOrder)
        throw InvalidArgument("order_for_duration: nearest MLS order " + std::to_string(best) +
                              " is outside the supported range");
    return best;
}

/// Of `available` rates, the one whose log is nearest to log(desired).
inline double nearest_sample_rate(double desired_hz, std::span<const double> available) {
    require(desired_hz > 0.0 && !available.empty(), "nearest_sample_rate: bad arguments");
    double best = available.front();
    for (double r : available)
        if (std::abs(std::log(r / desired_hz)) < std::abs(std::log(best / desired_hz))) best = r;
    return best;
}

inline constexpr std::array<double, 12> kCommonSampleRates = {
    8000, 11025, 16000, 22050, 24000, 32000, 44100, 48000, 88200, 96000, 176400, 192000};

// ---------------------------------------------------------------------------
// Tones and windows

inline SampledSignal generate_sine(double freq_hz, double duration_sec, double amplitude_db,
                                   double sample_rate_hz, double phase_rad = 0.0) {
    require(sample_rate_hz > 0.0, "generate_sine: sample rate must be positive");
    require(freq_hz > 0.0 && freq_hz < sample_rate_hz / 2.0,
            "generate_sine: frequency must lie in (0, Nyquist)");
    require(duration_sec >= 0.0, "generate_sine: duration must be non-negative");
    const auto n = static_cast<std::size_t>(std::llround(duration_sec * sample_rate_hz));
    const double a = stats::db_to_amplitude(amplitude_db);
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    std::vector<double> samples(n);
    for (std::size_t k = 0; k < n; ++k) samples[k] = a * std::sin(w * static_cast<double>(k) + phase_rad);
    return {std::move(samples), sample_rate_hz};
}

/// Symmetric Hann window, zero at both ends. Length 1 yields {1}.
inline std::vector<double> hann_window(std::size_t length) {
    require(length >= 1, "hann_window: length must be at least 1");
    if (length == 1) return {1.0};
    std::vector<double> w(length);
    const double denom = static_cast<double>(length - 1);
    for (std::size_t k = 0; k < length; ++k)
        w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / denom));
    // Exact symmetry and exact zero endpoints.
    for (std::size_t k = 0; k < length / 2; ++k) w[length - 1 - k] = w[k];
    w.front() = w.back() = 0.0;
    return w;
}

// ---------------------------------------------------------------------------
// Spectra and correlation

/// 10 log10 |X[k]|^2 over bins 0..N/2 at k * fs / N; zero power maps to -inf.
inline FrequencyResponse power_spectrum_db(const SampledSignal& signal) {
    require(!signal.empty(), "power_spectrum_db: signal is empty");
    const auto spectrum = fft::rfft(signal.view());
    FrequencyResponse out;
    out.freq_hz = fft_grid(signal.size(), signal.sample_rate_hz());
    out.gain_db.resize(spectrum.size());
    out.phase_rad.resize(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        out.gain_db[k] = stats::power_to_db(std::norm(spectrum[k]));
        out.phase_rad[k] = std::arg(spectrum[k]);
    }
    return out;
}

/// r[m] = sum_k x[k] x[(k + m) mod N]; r[0] is the energy.
inline std::vector<double> circular_autocorrelation(const SampledSignal& signal) {
    require(!signal.empty(), "circular_autocorrelation: signal is empty");
    auto spectrum = fft::rfft(signal.view());
    for (auto& c : spectrum) c = std::norm(c);
    return fft::irfft(spectrum, signal.size());
}

// ---------------------------------------------------------------------------
// Power monitor

struct PowerTimeSeries {
    std::vector<double> times_sec;
    std::vector<double> power_db;
    double sd_db = 0.0;

    /// True when the power swings more than `max_sd_db` over the recording.
    bool unstable(double max_sd_db) const { return sd_db > max_sd_db; }
};

inline constexpr double kDefaultPowerWindowSec = 0.1;

/// Mean power (dB re full scale) over consecutive non-overlapping windows.
/// Silent windows read -inf and are left out of sd_db.
inline PowerTimeSeries power_over_time(const SampledSignal& recording,
                                       double window_sec = kDefaultPowerWindowSec) {
    const double fs = recording.sample_rate_hz();
    const auto window = static_cast<std::size_t>(std::llround(window_sec * fs));
    require(window >= 1, "power_over_time: window must span at least one sample");
    const std::size_t count = recording.size() / window;
    if (count == 0) throw InvalidArgument("power_over_time: recording is shorter than one window");

    PowerTimeSeries out;
    out.times_sec.reserve(count);
    out.power_db.reserve(count);
    std::vector<double> finite;
    const auto& x = recording.samples();
    for (std::size_t w = 0; w < count; ++w) {
        double s = 0.0;
        for (std::size_t i = w * window; i < (w + 1) * window; ++i) s += x[i] * x[i];
        const double db = stats::power_to_db(s / static_cast<double>(window));
        out.times_sec.push_back((static_cast<double>(w) + 0.5) * static_cast<double>(window) / fs);
        out.power_db.push_back(db);
        if (std::isfinite(db)) finite.push_back(db);
    }
    out.sd_db = finite.size() >= 1 ? stats::stddev(finite) : 0.0;
    return out;
}

}  // namespace soundcal
