#pragma once

// Inverse filtering of a measured response and the flatness check on the
// corrected recording.

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
#include "soundcal/mls_analysis.hpp"
#include "soundcal/signals.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

inline constexpr double kReferenceHz = 1000.0;
inline constexpr double kInverseFloorDb = -60.0;
inline constexpr double kFlatnessMaxSdDb = 3.0;
inline constexpr double kMaxExcludedFraction = 0.5;

struct InverseImpulseResponse {
    std::vector<double> taps;
    double sample_rate_hz = 48000.0;
    double reference_hz = kReferenceHz;  // unit gain at the DFT bin nearest this frequency

    std::size_t size() const noexcept { return taps.size(); }
    std::size_t delay_samples() const noexcept { return taps.empty() ? 0 : (taps.size() - 1) / 2; }
};

/// |DFT| of `taps` (length L) at bin k, computed directly.
inline double dft_magnitude_at(std::span<const double> taps, std::size_t k) {
    const double w = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(taps.size());
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < taps.size(); ++n) acc += taps[n] * std::polar(1.0, w * static_cast<double>(n));
    return std::abs(acc);
}

/// Bin of an L-point DFT nearest `freq_hz`.
inline std::size_t reference_bin(std::size_t length, double sample_rate_hz, double freq_hz = kReferenceHz) {
    const auto k = static_cast<std::size_t>(std::llround(freq_hz * static_cast<double>(length) / sample_rate_hz));
    return std::min(k, length / 2);
}

/// 1/|H| per bin, 0 dB at the bin nearest 1 kHz. Bins more than 60 dB below
/// the peak of H take the inverse of the nearest bin that is not.
inline FrequencyResponse inverse_spectrum(const FrequencyResponse& h) {
    require(h.size() >= 1, "inverse_spectrum: empty response");
    double peak = -std::numeric_limits<double>::infinity();
    for (double g : h.gain_db)
        if (std::isfinite(g)) peak = std::max(peak, g);
    if (!std::isfinite(peak)) throw InvalidArgument("inverse_spectrum: response is all zero");
    const double floor_db = peak + kInverseFloorDb;

    const std::size_t n = h.size();
    std::vector<double> inv(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> valid;
    for (std::size_t k = 0; k < n; ++k) {
        if (std::isfinite(h.gain_db[k]) && h.gain_db[k] >= floor_db) {
            inv[k] = -h.gain_db[k];
            valid.push_back(k);
        }
    }
    // Fill clamped bins from the nearest unclamped neighbour (ties go low).
    std::size_t next = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::isnan(inv[k])) continue;
        while (next + 1 < valid.size() && valid[next + 1] < k) ++next;
        std::size_t best = valid[next];
        if (next + 1 < valid.size() && valid[next + 1] - k < (k > best ? k - best : best - k)) best = valid[next + 1];
        inv[k] = -h.gain_db[best];
    }
    const double ref = inv[h.nearest_bin(kReferenceHz)];
    FrequencyResponse out;
    out.freq_hz = h.freq_hz;
    out.gain_db.resize(n);
    out.phase_rad.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) out.gain_db[k] = inv[k] - ref;
    return out;
}

/// Linear-phase inverse filter of `iir_duration_sec` (round(d * fs) taps):
/// inverse magnitude spectrum, zero phase, centred, cropped and Hann-windowed,
/// then scaled to unit gain at its DFT bin nearest 1 kHz.
inline InverseImpulseResponse inverse_ir(const ImpulseResponse& truncated_ir, double iir_duration_sec) {
    require(!truncated_ir.taps.empty(), "inverse_ir: empty impulse response");
    const double fs = truncated_ir.sample_rate_hz;
    const auto length = static_cast<std::size_t>(std::llround(iir_duration_sec * fs));
    require(length >= 1, "inverse_ir: duration shorter than one sample");
    const std::size_t m = fft::good_size(2 * std::max(truncated_ir.size(), length));
    const auto h = ir_spectrum(truncated_ir, m);
    const auto inv = inverse_spectrum(h);
    auto taps = zero_phase_fir(magnitudes(inv), m, length);
    const double gain = dft_magnitude_at(taps, reference_bin(length, fs));
    if (!(gain > 0.0)) throw MeasurementError("inverse_ir: zero gain at the reference frequency");
    for (double& v : taps) v /= gain;
    return {std::move(taps), fs, kReferenceHz};
}

/// Linear convolution with the inverse filter, advanced by its group delay
/// (L - 1) / 2 and trimmed to the input length.
inline SampledSignal apply_correction(const SampledSignal& input, const InverseImpulseResponse& iir) {
    require(!input.empty(), "apply_correction: empty input");
    require(!iir.taps.empty(), "apply_correction: empty filter");
    const auto full = fft::convolve(input.view(), iir.taps);
    const std::size_t delay = iir.delay_samples();
    std::vector<double> out(input.size(), 0.0);
    for (std::size_t i = 0; i < out.size() && i + delay < full.size(); ++i) out[i] = full[i + delay];
    return {std::move(out), input.sample_rate_hz()};
}

/// Correction of one period of a periodic signal: the filter is wrapped onto
/// the period and applied circularly, so every period of the tiled output
/// equals the steady-state middle of apply_correction on the tiled input.
inline SampledSignal apply_correction_periodic(const SampledSignal& period, const InverseImpulseResponse& iir) {
    require(!period.empty(), "apply_correction_periodic: empty period");
    require(!iir.taps.empty(), "apply_correction_periodic: empty filter");
    const std::size_t p = period.size();
    const std::size_t delay = iir.delay_samples();
    std::vector<double> kernel(p, 0.0);
    for (std::size_t m = 0; m < iir.size(); ++m) kernel[(m + p - delay % p) % p] += iir.taps[m];
    const auto x = fft::rfft(period.view());
    auto k = fft::rfft(kernel);
    for (std::size_t i = 0; i < k.size(); ++i) k[i] *= x[i];
    return {fft::irfft(k, p), period.sample_rate_hz()};
}

// ---------------------------------------------------------------------------
// Power-limited bandlimiting

struct BandlimitResult {
    SampledSignal signal;
    double cutoff_hz = 0.0;
    double power_db = 0.0;  // mean power of the bandlimited signal
};

namespace detail {

// Contribution of DFT bin k to the mean power of an n-sample real signal.
inline double bin_power(const fft::Complex& x, std::size_t k, std::size_t n) {
    const bool edge = (k == 0) || (n % 2 == 0 && k == n / 2);
    const double scale = static_cast<double>(n) * static_cast<double>(n);
    return (edge ? 1.0 : 2.0) * std::norm(x) / scale;
}

}  // namespace detail

/// Removes content below `min_hz`, then keeps the widest band [min_hz, cutoff]
/// with cutoff <= max_hz whose mean power stays within `power_limit_db`.
inline BandlimitResult bandlimit_filtered_mls(const SampledSignal& filtered, double min_hz, double power_limit_db,
                                              double max_hz) {
    require(!filtered.empty(), "bandlimit_filtered_mls: empty signal");
    const double fs = filtered.sample_rate_hz();
    require(min_hz >= 0.0 && min_hz < max_hz, "bandlimit_filtered_mls: require min_hz < max_hz");
    require(max_hz <= fs / 2.0 + 1e-9, "bandlimit_filtered_mls: max_hz above Nyquist");
    const std::size_t n = filtered.size();
    auto x = fft::rfft(filtered.view());
    const double df = fs / static_cast<double>(n);
    const double limit = stats::db_to_power(power_limit_db);

    double cumulative = 0.0;
    std::size_t last_kept = 0;
    bool any = false, truncated = false;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double f = df * static_cast<double>(k);
        if (f < min_hz) continue;
        if (f > max_hz + 1e-9) break;
        const double p = detail::bin_power(x[k], k, n);
        if (cumulative + p > limit) {
            truncated = true;
            break;
        }
        cumulative += p;
        last_kept = k;
        any = true;
    }
    if (!any) throw MeasurementError("cannot satisfy power limit of " + std::to_string(power_limit_db) + " dB");
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double f = df * static_cast<double>(k);
        if (f < min_hz || k > last_kept) x[k] = 0.0;
    }
    BandlimitResult out{{fft::irfft(x, n), fs}, truncated ? df * static_cast<double>(last_kept) : max_hz,
                        stats::power_to_db(cumulative)};
    return out;
}

// ---------------------------------------------------------------------------
// Flatness

struct FlatnessReport {
    double band_lo_hz = 0.0;
    double band_hi_hz = 0.0;
    double sd_db = 0.0;
    bool passed = false;
    std::size_t bins_in_band = 0;
    std::size_t bins_excluded = 0;
    std::vector<double> per_bin_freq_hz;
    std::vector<double> per_bin_spectrum_db;  // NaN where noise >= signal
};

inline bool flatness_passed(double sd_db) { return sd_db <= kFlatnessMaxSdDb; }

/// Per-bin power of a recording, as sinusoid power in dB re full scale.
inline std::vector<double> bin_powers(const SampledSignal& s) {
    const auto x = fft::rfft(s.view());
    std::vector<double> p(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) p[k] = detail::bin_power(x[k], k, s.size());
    return p;
}

/// Standard deviation (dB, linear frequency weighting) of the noise-subtracted,
/// mic-discounted recorded spectrum over [band_lo, band_hi]. An empty
/// `mic_response` means no discount.
inline FlatnessReport assess_flatness(const SampledSignal& recording, const SampledSignal& noise_recording,
                                      const FrequencyResponse& mic_response, double band_lo, double band_hi) {
    require(!recording.empty(), "assess_flatness: empty recording");
    require(noise_recording.size() == recording.size() &&
                noise_recording.sample_rate_hz() == recording.sample_rate_hz(),
            "assess_flatness: noise recording must match the recording's length and rate");
    const double fs = recording.sample_rate_hz();
    require(band_lo < band_hi && band_hi <= fs / 2.0 + 1e-9, "assess_flatness: band must lie below Nyquist");

    const auto signal = bin_powers(recording);
    const auto noise = bin_powers(noise_recording);
    const double df = fs / static_cast<double>(recording.size());
    FlatnessReport rep;
    rep.band_lo_hz = band_lo;
    rep.band_hi_hz = band_hi;
    rep.per_bin_freq_hz.resize(signal.size());
    rep.per_bin_spectrum_db.resize(signal.size());
    std::vector<double> in_band;
    for (std::size_t k = 0; k < signal.size(); ++k) {
        const double f = df * static_cast<double>(k);
        rep.per_bin_freq_hz[k] = f;
        const double net = signal[k] - noise[k];
        double level = std::numeric_limits<double>::quiet_NaN();
        if (net > 0.0) {
            level = stats::power_to_db(net);
            if (mic_response.size() > 0) level -= mic_response.gain_db_at(f);
        }
        rep.per_bin_spectrum_db[k] = level;
        if (f < band_lo || f > band_hi) continue;
        ++rep.bins_in_band;
        if (std::isnan(level)) ++rep.bins_excluded;
        else in_band.push_back(level);
    }
    if (rep.bins_in_band == 0) throw InvalidArgument("assess_flatness: no FFT bins in band");
    if (static_cast<double>(rep.bins_excluded) > kMaxExcludedFraction * static_cast<double>(rep.bins_in_band))
        throw MeasurementError("noise dominates: " + std::to_string(rep.bins_excluded) + " of " +
                               std::to_string(rep.bins_in_band) + " in-band bins below the noise");
    rep.sd_db = stats::stddev(in_band);
    rep.passed = flatness_passed(rep.sd_db);
    return rep;
}

}  // namespace soundcal
