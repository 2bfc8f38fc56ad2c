#pragma once

// Nonsynchronous MLS measurement: playback layout, period estimation from the
// recording's autocorrelation, DFT-domain resampling to the nominal period,
// impulse response by circular cross-correlation, parent discounting,
// zero-phase truncation and Schroeder curves.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "soundcal/error.hpp"
#include "soundcal/fft.hpp"
#include "soundcal/resample.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

struct PlaybackLayout {
    int warmup_periods = 1;
    int analysis_periods = 4;
    double tail_fraction = 0.10;
    std::size_t period_samples = 0;

    std::size_t tail_samples() const {
        return static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(period_samples) - 1e-9));
    }
    std::size_t total_samples() const {
        return static_cast<std::size_t>(warmup_periods + analysis_periods) * period_samples + tail_samples();
    }
    void validate() const {
        require(warmup_periods >= 0, "PlaybackLayout: warmup periods must be >= 0");
        require(analysis_periods >= 2, "PlaybackLayout: at least 2 analysis periods are required");
        require(tail_fraction >= 0.0, "PlaybackLayout: tail fraction must be >= 0");
        require(period_samples >= 1, "PlaybackLayout: period must be nonempty");
    }
};

/// Warm-up period, analysis periods and the tail, played back to back.
inline SampledSignal build_playback(const SampledSignal& period, const PlaybackLayout& layout) {
    layout.validate();
    require(period.size() == layout.period_samples, "build_playback: period length does not match layout");
    const std::size_t p = period.size();
    std::vector<double> out(layout.total_samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = period[i % p];
    return {std::move(out), period.sample_rate_hz()};
}

// ---------------------------------------------------------------------------
// Period estimation

inline constexpr double kPeakThreshold = 0.5;
inline constexpr double kPeakWindowFraction = 0.02;

struct PeriodEstimate {
    double period_samples = 0.0;
    std::vector<double> peak_lags;  // refined lags of the peaks used, lag 0 first
};

namespace detail {

// Trigonometric interpolant of the autocorrelation whose power spectrum is
// `power` (M/2 + 1 bins of an M-point transform), with first and second
// derivatives at lag `tau`.
struct Interp {
    double value, d1, d2;
};

inline Interp autocorrelation_at(std::span<const double> power, std::size_t m, double tau) {
    const double base = 2.0 * std::numbers::pi / static_cast<double>(m);
    const double theta = base * tau;
    const std::size_t last = (m % 2 == 0) ? m / 2 - 1 : (m - 1) / 2;
    double v = power[0], d1 = 0.0, d2 = 0.0;
    const std::complex<double> step = std::polar(1.0, theta);
    std::complex<double> rot = 1.0;
    for (std::size_t k = 1; k <= last; ++k) {
        if ((k & 1023u) == 0) rot = std::polar(1.0, theta * static_cast<double>(k));
        else rot *= step;
        const double w = base * static_cast<double>(k);
        const double s = 2.0 * power[k];
        v += s * rot.real();
        d1 -= s * w * rot.imag();
        d2 -= s * w * w * rot.real();
    }
    if (m % 2 == 0) {
        const double w = std::numbers::pi;
        const double s = power[m / 2];
        v += s * std::cos(w * tau);
        d1 -= s * w * std::sin(w * tau);
        d2 -= s * w * w * std::cos(w * tau);
    }
    const double inv = 1.0 / static_cast<double>(m);
    return {v * inv, d1 * inv, d2 * inv};
}

inline double parabolic_offset(double a, double b, double c) {
    const double denom = a - 2.0 * b + c;
    if (!(denom < 0.0)) return 0.0;
    return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

}  // namespace detail

/// Period (in recording samples, fractional) of a repeated-sequence recording.
/// Autocorrelation peaks near multiples of the period are located, refined to
/// sub-sample precision (parabolic seed, then Newton steps on the band-limited
/// interpolant) and the period taken as the lag of the furthest peak divided
/// by the number of periods it spans.
inline PeriodEstimate estimate_period_detailed(const SampledSignal& recording, std::size_t nominal_period) {
    require(nominal_period >= 2, "estimate_period: nominal period must be >= 2");
    const std::size_t n = recording.size();
    require(n >= 2 * nominal_period / 4 + 4, "estimate_period: recording too short");

    const std::size_t m = fft::good_size(2 * n);
    auto spectrum = fft::rfft(recording.view(), m);
    std::vector<double> power(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        power[k] = std::norm(spectrum[k]);
        spectrum[k] = power[k];
    }
    const auto r = fft::irfft(spectrum, m);  // linear autocorrelation for lags < n
    const double lag0 = r[0];
    if (!(lag0 > 0.0)) throw MeasurementError("period not detected: silent recording");
    auto unbiased = [&](std::size_t lag) { return r[lag] * static_cast<double>(n) / static_cast<double>(n - lag); };

    // Coarse period: strongest (biased) peak over the plausible clock-ratio range.
    const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(0.2 * static_cast<double>(nominal_period)));
    const std::size_t hi = std::min(static_cast<std::size_t>(4.2 * static_cast<double>(nominal_period)), n / 2);
    if (hi <= lo) throw MeasurementError("period not detected: recording shorter than two periods");
    std::size_t strongest = lo;
    for (std::size_t lag = lo; lag <= hi; ++lag)
        if (r[lag] > r[strongest]) strongest = lag;
    if (unbiased(strongest) < kPeakThreshold * lag0)
        throw MeasurementError("period not detected: no autocorrelation peak above threshold");
    // A period off the sample grid loses up to ~36% of its sampled peak, so a
    // multiple can outrank it; take the first peak within half the strongest.
    std::size_t coarse = lo;
    while (r[coarse] < 0.5 * r[strongest]) ++coarse;
    const std::size_t climb_end = std::min(hi, coarse + std::max<std::size_t>(
                                                        2, static_cast<std::size_t>(kPeakWindowFraction * coarse)));
    for (std::size_t lag = coarse; lag <= climb_end; ++lag)
        if (r[lag] > r[coarse]) coarse = lag;

    auto refine = [&](std::size_t peak) {
        double tau = static_cast<double>(peak) + detail::parabolic_offset(r[peak - 1], r[peak], r[peak + 1]);
        for (int it = 0; it < 4; ++it) {
            const auto f = detail::autocorrelation_at(power, m, tau);
            if (!(f.d2 < 0.0)) break;
            const double step = std::clamp(-f.d1 / f.d2, -0.5, 0.5);
            tau += step;
            if (std::abs(step) < 1e-7) break;
        }
        return tau;
    };

    PeriodEstimate est;
    est.peak_lags.push_back(0.0);
    double period = static_cast<double>(coarse);
    const auto half_window =
        std::max<std::size_t>(2, static_cast<std::size_t>(kPeakWindowFraction * static_cast<double>(coarse)));
    for (int j = 1;; ++j) {
        const double expected = period * j;
        if (expected + static_cast<double>(half_window) + 1.0 > static_cast<double>(n) - period) break;
        const auto centre = static_cast<std::size_t>(std::llround(expected));
        std::size_t peak = centre - std::min(centre - 1, half_window);
        for (std::size_t lag = peak; lag <= centre + half_window; ++lag)
            if (r[lag] > r[peak]) peak = lag;
        if (unbiased(peak) < kPeakThreshold * lag0) break;
        const double tau = refine(peak);
        est.peak_lags.push_back(tau);
        period = tau / j;
    }
    if (est.peak_lags.size() < 2) throw MeasurementError("period not detected: fewer than 2 peaks");
    est.period_samples = (est.peak_lags.back() - est.peak_lags.front()) / static_cast<double>(est.peak_lags.size() - 1);
    return est;
}

inline double estimate_period(const SampledSignal& recording, std::size_t nominal_period) {
    return estimate_period_detailed(recording, nominal_period).period_samples;
}

// ---------------------------------------------------------------------------
// Resampling

/// Stretches `segment` to `target_len` samples by zero-padding or truncating
/// its DFT at the Nyquist end; amplitude is preserved.
inline SampledSignal resample_to_period(const SampledSignal& segment, std::size_t target_len) {
    const std::size_t s = segment.size();
    require(s >= 1 && target_len >= 1, "resample_to_period: empty input or target");
    const double ratio = static_cast<double>(target_len) / static_cast<double>(s);
    if (ratio < 0.25 || ratio > 4.0)
        throw InvalidArgument("resample_to_period: target/source ratio outside [0.25, 4]");
    if (target_len == s) return segment;

    const auto x = fft::rfft(segment.view());
    std::vector<fft::Complex> y(target_len / 2 + 1, 0.0);
    const std::size_t common = std::min(s, target_len);
    // Bins strictly below the shorter length's Nyquist carry over unchanged.
    const std::size_t keep = (common % 2 == 0) ? common / 2 : (common - 1) / 2 + 1;
    for (std::size_t k = 0; k < keep; ++k) y[k] = x[k];
    if (common % 2 == 0) {
        const std::size_t k = common / 2;
        if (s < target_len) y[k] = 0.5 * x[k].real();  // split the old Nyquist over +-k
        else y[k] = 2.0 * x[k].real();                 // fold +-k onto the new Nyquist
    }
    for (auto& c : y) c *= ratio;
    return {fft::irfft(y, target_len), segment.sample_rate_hz()};
}

/// The analysed stretch of a recording: starts after the warm-up periods and
/// spans `analysis_periods` measured periods, both rounded to whole samples.
inline SampledSignal analysis_segment(const SampledSignal& recording, double measured_period,
                                      const PlaybackLayout& layout) {
    const auto start = static_cast<std::size_t>(std::llround(layout.warmup_periods * measured_period));
    const auto length = static_cast<std::size_t>(std::llround(layout.analysis_periods * measured_period));
    if (start + length > recording.size())
        throw MeasurementError("recording too short for the analysis periods at the measured period");
    return recording.slice(start, length);
}

/// Like analysis_segment, but the stretch starts exactly at
/// warmup * measured_period and is interpolated onto round(A * period)
/// samples so it holds exactly A periods. Without this the sub-sample
/// remainder of A * period leaves the periodic lines between DFT bins.
inline SampledSignal aligned_analysis_segment(const SampledSignal& recording, double measured_period,
                                              const PlaybackLayout& layout) {
    const double start = layout.warmup_periods * measured_period;
    const double span = layout.analysis_periods * measured_period;
    const auto length = static_cast<std::size_t>(std::llround(span));
    if (start + span > static_cast<double>(recording.size()))
        throw MeasurementError("recording too short for the analysis periods at the measured period");
    return {interpolate_at(recording.view(), start, span / static_cast<double>(length), length),
            recording.sample_rate_hz()};
}

/// Average of the consecutive `periods` periods of `signal` (length periods * P).
inline SampledSignal fold_periods(const SampledSignal& signal, int periods) {
    require(periods >= 1 && signal.size() % static_cast<std::size_t>(periods) == 0,
            "fold_periods: length is not a multiple of the period count");
    const std::size_t p = signal.size() / static_cast<std::size_t>(periods);
    std::vector<double> out(p, 0.0);
    for (std::size_t i = 0; i < signal.size(); ++i) out[i % p] += signal[i];
    for (double& v : out) v /= periods;
    return {std::move(out), signal.sample_rate_hz()};
}

// ---------------------------------------------------------------------------
// Impulse response

struct ImpulseResponse {
    std::vector<double> taps;
    double sample_rate_hz = 48000.0;
    std::size_t peak_index = 0;
    /// Scale applied to the circular cross-correlation: 1 / sum(mls^2).
    double normalization = 1.0;

    ImpulseResponse() = default;
    ImpulseResponse(std::vector<double> t, double fs, double norm = 1.0)
        : taps(std::move(t)), sample_rate_hz(fs), normalization(norm) {
        require(fs > 0.0, "ImpulseResponse: sample rate must be positive");
        for (double v : taps) require(std::isfinite(v), "ImpulseResponse: taps must be finite");
        peak_index = 0;
        for (std::size_t i = 1; i < taps.size(); ++i)
            if (std::abs(taps[i]) > std::abs(taps[peak_index])) peak_index = i;
    }

    std::size_t size() const noexcept { return taps.size(); }
};

/// Circular cross-correlation of the recorded periods with one MLS period,
/// (1/L) IDFT(Y X*), folded over the analysis periods and scaled by
/// 1 / sum(mls^2) so an identity chain gives a unit peak.
inline ImpulseResponse impulse_response(const SampledSignal& recorded, const SampledSignal& mls, int analysis_periods) {
    require(analysis_periods >= 1, "impulse_response: analysis periods must be >= 1");
    require(!mls.empty(), "impulse_response: empty MLS");
    if (recorded.size() != mls.size() * static_cast<std::size_t>(analysis_periods))
        throw InvalidArgument("impulse_response: recording length " + std::to_string(recorded.size()) +
                              " != analysis periods x MLS length " +
                              std::to_string(mls.size() * static_cast<std::size_t>(analysis_periods)));
    const auto folded = fold_periods(recorded, analysis_periods);
    const std::size_t l = mls.size();
    const auto x = fft::rfft(mls.view());
    auto y = fft::rfft(folded.view());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] *= std::conj(x[k]);
    auto ir = fft::irfft(y, l);
    double energy = 0.0;
    for (double v : mls.samples()) energy += v * v;
    const double norm = 1.0 / energy;
    for (double& v : ir) v *= norm;
    return {std::move(ir), recorded.sample_rate_hz(), norm};
}

/// Magnitude (dB) and phase of an IR's DFT, zero-padded to `fft_size` (0 = IR length).
inline FrequencyResponse ir_spectrum(const ImpulseResponse& ir, std::size_t fft_size = 0) {
    const std::size_t n = fft_size == 0 ? ir.size() : fft_size;
    require(n >= ir.size(), "ir_spectrum: FFT size shorter than the IR");
    const auto x = fft::rfft(ir.taps, n);
    FrequencyResponse out;
    out.freq_hz = fft_grid(n, ir.sample_rate_hz);
    out.gain_db.resize(x.size());
    out.phase_rad.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        out.gain_db[k] = stats::amplitude_to_db(std::abs(x[k]));
        out.phase_rad[k] = std::arg(x[k]);
    }
    return out;
}

inline constexpr double kParentFloorDb = -60.0;

/// Magnitude of `system` with `parent` divided out, per bin. Parent gain is
/// floored at 60 dB below its peak. Phase is discarded.
inline FrequencyResponse discount_parent(const FrequencyResponse& system, const FrequencyResponse& parent) {
    if (!same_grid(system, parent)) throw InvalidArgument("discount_parent: frequency grids differ");
    double peak = -std::numeric_limits<double>::infinity();
    for (double g : parent.gain_db)
        if (std::isfinite(g)) peak = std::max(peak, g);
    if (!std::isfinite(peak)) throw InvalidArgument("discount_parent: parent response is silent");
    const double floor_db = peak + kParentFloorDb;
    FrequencyResponse child;
    child.freq_hz = system.freq_hz;
    child.gain_db.resize(system.size());
    child.phase_rad.assign(system.size(), 0.0);
    for (std::size_t k = 0; k < system.size(); ++k) {
        const double pg = std::isfinite(parent.gain_db[k]) ? std::max(parent.gain_db[k], floor_db) : floor_db;
        child.gain_db[k] = system.gain_db[k] - pg;
    }
    return child;
}

// ---------------------------------------------------------------------------
// Zero-phase truncation

/// Linear-phase FIR of `length` taps from a magnitude spectrum (M/2 + 1 bins of
/// an M-point DFT): the zero-phase response is centred at (length - 1) / 2,
/// cropped and Hann-windowed. Taps are exactly symmetric.
inline std::vector<double> zero_phase_fir(std::span<const double> magnitude, std::size_t m, std::size_t length) {
    require(magnitude.size() == m / 2 + 1, "zero_phase_fir: magnitude must hold M/2 + 1 bins");
    require(length >= 1 && length <= m, "zero_phase_fir: length must lie in [1, M]");
    const double centre = (static_cast<double>(length) - 1.0) / 2.0;
    std::vector<fft::Complex> spec(magnitude.size());
    for (std::size_t k = 0; k < spec.size(); ++k) {
        const double phase = -2.0 * std::numbers::pi * static_cast<double>(k) * centre / static_cast<double>(m);
        spec[k] = std::polar(magnitude[k], phase);
    }
    if (m % 2 == 0) spec[m / 2] = magnitude[m / 2] * std::cos(std::numbers::pi * centre);
    auto full = fft::irfft(spec, m);
    const auto window = hann_window(length);
    std::vector<double> taps(length);
    for (std::size_t i = 0; i < length; ++i) taps[i] = full[i] * window[i];
    for (std::size_t i = 0; i < length / 2; ++i) {
        const double avg = 0.5 * (taps[i] + taps[length - 1 - i]);
        taps[i] = taps[length - 1 - i] = avg;
    }
    return taps;
}

/// Zero-phase IR (centred at index 0, circular) with the given magnitudes.
inline ImpulseResponse ir_from_magnitude(std::span<const double> magnitude, std::size_t m, double sample_rate_hz) {
    require(magnitude.size() == m / 2 + 1, "ir_from_magnitude: magnitude must hold M/2 + 1 bins");
    std::vector<fft::Complex> spec(magnitude.begin(), magnitude.end());
    return {fft::irfft(spec, m), sample_rate_hz};
}

inline std::vector<double> magnitudes(const FrequencyResponse& r) {
    std::vector<double> out(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) out[k] = std::isfinite(r.gain_db[k]) ? r.magnitude(k) : 0.0;
    return out;
}

/// Keeps `duration_sec` of the IR: its magnitude spectrum with phase zeroed,
/// centred, cropped and Hann-windowed. Output length round(duration * fs).
inline ImpulseResponse truncate_ir(const ImpulseResponse& ir, double duration_sec) {
    const auto length = static_cast<std::size_t>(std::llround(duration_sec * ir.sample_rate_hz));
    require(length >= 1, "truncate_ir: duration shorter than one sample");
    if (length > ir.size()) throw InvalidArgument("truncate_ir: duration longer than the impulse response");
    const auto x = fft::rfft(ir.taps);
    std::vector<double> mag(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) mag[k] = std::abs(x[k]);
    return {zero_phase_fir(mag, ir.size(), length), ir.sample_rate_hz, ir.normalization};
}

// ---------------------------------------------------------------------------
// Schroeder curve

struct SchroederCurve {
    std::vector<double> times_sec;
    std::vector<double> level_db;
};

/// Reverse-time cumulative IR energy in dB re the total; 0 dB at t = 0.
inline SchroederCurve schroeder_curve(const ImpulseResponse& ir) {
    require(!ir.taps.empty(), "schroeder_curve: empty impulse response");
    const std::size_t n = ir.size();
    std::vector<double> tail(n);
    double acc = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        acc += ir.taps[i] * ir.taps[i];
        tail[i] = acc;
    }
    if (!(acc > 0.0)) throw InvalidArgument("schroeder_curve: impulse response is all zero");
    SchroederCurve out;
    out.times_sec.resize(n);
    out.level_db.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.times_sec[i] = static_cast<double>(i) / ir.sample_rate_hz;
        out.level_db[i] = stats::power_to_db(tail[i] / acc);
    }
    out.level_db[0] = 0.0;
    return out;
}

/// Least-squares slope (dB/s) of the curve where it lies within
/// [lower_db, upper_db]; reverberation time is -60 / slope.
inline double schroeder_decay_rate(const SchroederCurve& curve, double upper_db = -5.0, double lower_db = -25.0) {
    double st = 0, sl = 0, stt = 0, stl = 0, count = 0;
    for (std::size_t i = 0; i < curve.level_db.size(); ++i) {
        const double l = curve.level_db[i];
        if (!std::isfinite(l) || l > upper_db || l < lower_db) continue;
        const double t = curve.times_sec[i];
        st += t;
        sl += l;
        stt += t * t;
        stl += t * l;
        count += 1;
    }
    if (count < 2) throw MeasurementError("schroeder_decay_rate: too few points in the fit range");
    const double denom = count * stt - st * st;
    return (count * stl - st * sl) / denom;
}

// ---------------------------------------------------------------------------
// Whole nonsynchronous measurement

struct NonsyncOptions {
    /// Interpolate the analysis stretch onto a whole number of samples per
    /// A periods before the DFT stretch; false rounds the stretch instead.
    bool fractional_alignment = true;
};

struct NonsyncMeasurement {
    PeriodEstimate period;
    double clock_ratio = 1.0;  // recording samples per played sample
    SampledSignal resampled;   // analysis periods at the nominal period
    ImpulseResponse ir;
};

/// Period estimate, resampling of the analysis periods and the IR, in order.
inline NonsyncMeasurement measure_nonsynchronous(const SampledSignal& recording, const SampledSignal& mls_period,
                                                 const PlaybackLayout& layout, const NonsyncOptions& options = {}) {
    layout.validate();
    NonsyncMeasurement out;
    out.period = estimate_period_detailed(recording, mls_period.size());
    out.clock_ratio = out.period.period_samples / static_cast<double>(mls_period.size());
    const auto segment = options.fractional_alignment
                             ? aligned_analysis_segment(recording, out.period.period_samples, layout)
                             : analysis_segment(recording, out.period.period_samples, layout);
    out.resampled =
        resample_to_period(segment, mls_period.size() * static_cast<std::size_t>(layout.analysis_periods));
    out.ir = impulse_response(out.resampled, mls_period, layout.analysis_periods);
    return out;
}

}  // namespace soundcal
