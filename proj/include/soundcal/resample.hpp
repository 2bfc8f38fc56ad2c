#pragma once

// Band-limited interpolation with a tabulated Kaiser-windowed sinc.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "soundcal/error.hpp"

namespace soundcal {

inline constexpr int kResampleHalfWidth = 64;
inline constexpr int kResamplePhases = 2048;
inline constexpr double kResampleCutoff = 0.9;
inline constexpr double kResampleKaiserBeta = 9.0;

namespace detail {

class SincTable {
public:
    static const SincTable& instance() {
        static const SincTable table;
        return table;
    }
    // Windowed sinc with cutoff kResampleCutoff (fraction of Nyquist) at
    // offset |v| samples, linearly interpolated between table points.
    double at(double v) const {
        const double a = std::abs(v) * kResamplePhases;
        const auto i = static_cast<std::size_t>(a);
        if (i + 1 >= values_.size()) return 0.0;
        const double frac = a - static_cast<double>(i);
        return values_[i] + frac * (values_[i + 1] - values_[i]);
    }

    // sum_m x[first + m * dir] * at(v0 + m) for m = 0.., while the offset
    // v0 + m stays inside the table; v0 >= 0. The table position steps by a
    // whole number of entries, so the interpolation fraction is shared.
    double dot_unit_step(const double* x, std::ptrdiff_t count, std::ptrdiff_t dir, double v0) const {
        const double a = v0 * kResamplePhases;
        auto i = static_cast<std::size_t>(a);
        const double frac = a - static_cast<double>(i);
        double acc = 0.0;
        for (std::ptrdiff_t m = 0; m < count && i + 1 < values_.size(); ++m, i += kResamplePhases)
            acc += x[m * dir] * (values_[i] + frac * (values_[i + 1] - values_[i]));
        return acc;
    }

private:
    SincTable() {
        const std::size_t n = static_cast<std::size_t>(kResampleHalfWidth) * kResamplePhases + 2;
        values_.resize(n);
        const double i0b = std::cyl_bessel_i(0.0, kResampleKaiserBeta);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(i) / kResamplePhases;
            const double r = v / kResampleHalfWidth;
            if (r >= 1.0) {
                values_[i] = 0.0;
                continue;
            }
            const double arg = std::numbers::pi * kResampleCutoff * v;
            const double sinc = v == 0.0 ? 1.0 : std::sin(arg) / arg;
            const double win = std::cyl_bessel_i(0.0, kResampleKaiserBeta * std::sqrt(1.0 - r * r)) / i0b;
            values_[i] = kResampleCutoff * sinc * win;
        }
    }
    std::vector<double> values_;
};

}  // namespace detail

/// Values of the band-limited interpolant of `x` at t0 + j * step,
/// j = 0 .. count - 1 (positions in samples). For step > 1 the cutoff is
/// lowered by 1 / step. Samples outside `x` count as zero.
inline std::vector<double> interpolate_at(std::span<const double> x, double t0, double step, std::size_t count) {
    require(step > 0.0, "interpolate_at: step must be positive");
    const auto& table = detail::SincTable::instance();
    const double scale = std::min(1.0, 1.0 / step);
    const double reach = kResampleHalfWidth / scale;
    const auto n_in = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> y(count, 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        const double t = t0 + static_cast<double>(j) * step;
        const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - reach)));
        const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + reach)));
        if (hi < lo) continue;
        double acc = 0.0;
        if (scale == 1.0) {
            // taps at or left of t, walking left; then right of t, walking right
            const auto left = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(t)), lo - 1, hi);
            if (left >= lo)
                acc += table.dot_unit_step(x.data() + left, left - lo + 1, -1, t - static_cast<double>(left));
            if (left + 1 <= hi)
                acc += table.dot_unit_step(x.data() + left + 1, hi - left, 1, static_cast<double>(left + 1) - t);
        } else {
            for (std::ptrdiff_t i = lo; i <= hi; ++i)
                acc += x[static_cast<std::size_t>(i)] * table.at((t - static_cast<double>(i)) * scale);
        }
        y[j] = acc * scale;
    }
    return y;
}

/// Resampling by `ratio` output samples per input sample; output length
/// round(N * ratio).
inline std::vector<double> resample_by_ratio(std::span<const double> x, double ratio) {
    require(ratio >= 0.25 && ratio <= 4.0, "resample_by_ratio: ratio must lie in [0.25, 4]");
    if (ratio == 1.0) return {x.begin(), x.end()};
    const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * ratio));
    return interpolate_at(x, 0.0, 1.0 / ratio, n_out);
}

}  // namespace soundcal
