#pragma once

// Static dynamic-range-compression curve: a linear region below the knee, a
// quadratic transition W dB wide centred on the threshold, and slope Q above.
// Forward evaluation, least-squares fitting and the RMS acceptance gate.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soundcal/error.hpp"
#include "soundcal/optimize.hpp"
#include "soundcal/sine_calibration.hpp"
#include "soundcal/stats.hpp"

namespace soundcal {

struct DrcParams {
    double gain_db = 0.0;
    double threshold_db = 0.0;     // T
    double knee_width_db = 0.0;    // W
    double compression_slope = 1;  // Q, dB out per dB in above the knee
    std::optional<double> background_db;

    void validate() const {
        require(std::isfinite(gain_db) && std::isfinite(threshold_db), "DrcParams: non-finite parameter");
        require(knee_width_db >= 0.0, "DrcParams: knee width must be >= 0");
        require(compression_slope > 0.0 && compression_slope <= 1.0, "DrcParams: slope must lie in (0, 1]");
    }
};

/// Compressor curve without gain or background.
inline double drc_compressed(double in_db, const DrcParams& p) {
    const double t = p.threshold_db;
    const double w = p.knee_width_db;
    const double q = p.compression_slope;
    if (in_db > t + w / 2.0) return t + q * (in_db - t);
    if (w > 0.0 && in_db > t - w / 2.0) {
        const double d = in_db - (t - w / 2.0);
        return in_db - (1.0 - q) * d * d / (2.0 * w);
    }
    return in_db;
}

/// Output level for input level `in_db`; with a background term the two
/// powers add.
inline double drc_out(double in_db, const DrcParams& p) {
    const double out = drc_compressed(in_db, p) + p.gain_db;
    if (!p.background_db) return out;
    return stats::power_to_db(stats::db_to_power(out) + stats::db_to_power(*p.background_db));
}

/// Highest input level still on the linear branch.
inline double knee_floor(const DrcParams& p) { return p.threshold_db - p.knee_width_db / 2.0; }

inline constexpr double kDrcAcceptRmsDb = 1.0;

inline bool drc_fit_accepted(double rms_error_db) { return rms_error_db <= kDrcAcceptRmsDb; }

struct DrcFit {
    DrcParams params;
    double rms_error_db = 0.0;
    bool accepted = false;
};

inline double drc_rms_error(std::span<const GainPoint> points, const DrcParams& p) {
    double ss = 0.0;
    for (const auto& pt : points) {
        const double r = pt.out_db - drc_out(pt.in_db, p);
        ss += r * r;
    }
    return std::sqrt(ss / static_cast<double>(points.size()));
}

enum class BackgroundMode { automatic, enabled, disabled };

struct DrcFitOptions {
    BackgroundMode background = BackgroundMode::automatic;
    int max_iterations = 4000;
};

class DrcFitError : public MeasurementError {
public:
    DrcFitError(const std::string& what, double best_rms_db) : MeasurementError(what), best_rms_db_(best_rms_db) {}
    double best_rms_db() const noexcept { return best_rms_db_; }

private:
    double best_rms_db_;
};

namespace detail {

inline double least_squares_slope(std::span<const GainPoint> pts) {
    double mx = 0, my = 0;
    for (const auto& p : pts) {
        mx += p.in_db;
        my += p.out_db;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxy = 0, sxx = 0;
    for (const auto& p : pts) {
        sxy += (p.in_db - mx) * (p.out_db - my);
        sxx += (p.in_db - mx) * (p.in_db - mx);
    }
    return sxx > 0 ? sxy / sxx : 1.0;
}

// Keeps W >= 0 and Q in (0, 1]; the penalty steers the simplex back inside.
inline double clamp_shape(double& w, double& q) {
    double penalty = 0.0;
    if (w < 0.0) {
        penalty += w * w;
        w = 0.0;
    }
    const double qc = std::clamp(q, 1e-3, 1.0);
    penalty += (q - qc) * (q - qc);
    q = qc;
    return 1e3 * penalty;
}

}  // namespace detail

/// True when the faint end of the curve flattens (slope < 0.5 over its lowest 10 dB).
inline bool background_evident(std::span<const GainPoint> points) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& p : points) lo = std::min(lo, p.in_db);
    std::vector<GainPoint> faint;
    for (const auto& p : points)
        if (p.in_db <= lo + 10.0) faint.push_back(p);
    return faint.size() >= 2 && detail::least_squares_slope(faint) < 0.5;
}

/// Least-squares fit of the compression curve to a measured gain curve.
/// Multi-start simplex from a fixed grid, so results are deterministic.
inline DrcFit fit_drc(std::span<const GainPoint> points, const DrcFitOptions& options = {}) {
    if (points.size() < 6) throw InvalidArgument("fit_drc: need at least 6 gain points");
    double min_in = std::numeric_limits<double>::infinity(), max_in = -min_in, min_out = min_in;
    for (const auto& p : points) {
        require(std::isfinite(p.in_db) && std::isfinite(p.out_db), "fit_drc: non-finite gain point");
        min_in = std::min(min_in, p.in_db);
        max_in = std::max(max_in, p.in_db);
        min_out = std::min(min_out, p.out_db);
    }
    if (max_in - min_in < 20.0) throw InvalidArgument("fit_drc: gain points must span at least 20 dB of input");

    const double n = static_cast<double>(points.size());
    // Gain enters linearly without a background term, so it is solved in
    // closed form and the simplex only searches T, W, Q.
    auto shape_objective = [&](const std::vector<double>& x, double* gain_out = nullptr) {
        double w = x[1], q = x[2];
        const double penalty = detail::clamp_shape(w, q);
        DrcParams p{0.0, x[0], w, q, std::nullopt};
        double mean_residual = 0.0;
        for (const auto& pt : points) mean_residual += pt.out_db - drc_compressed(pt.in_db, p);
        mean_residual /= n;
        double ss = 0.0;
        for (const auto& pt : points) {
            const double r = pt.out_db - drc_compressed(pt.in_db, p) - mean_residual;
            ss += r * r;
        }
        if (gain_out) *gain_out = mean_residual;
        return ss / n + penalty;
    };
    auto shape_fn = [&](const std::vector<double>& x) { return shape_objective(x); };

    struct Start {
        std::vector<double> x;
        double value;
    };
    std::vector<Start> starts;
    constexpr int kThresholdSteps = 9;
    for (int i = 0; i < kThresholdSteps; ++i) {
        const double t = min_in + (max_in - min_in) * i / (kThresholdSteps - 1);
        for (double w : {1.0, 5.0, 10.0, 20.0})
            for (double q : {0.3, 0.5, 0.7, 1.0}) {
                std::vector<double> x{t, w, q};
                starts.push_back({x, shape_fn(x)});
            }
    }
    std::stable_sort(starts.begin(), starts.end(), [](const Start& a, const Start& b) { return a.value < b.value; });

    optimize::SimplexOptions simplex;
    simplex.max_iterations = options.max_iterations;
    bool any_converged = false;
    optimize::SimplexResult best;
    best.value = std::numeric_limits<double>::infinity();
    constexpr std::size_t kRefined = 6;
    for (std::size_t s = 0; s < std::min(kRefined, starts.size()); ++s) {
        auto r = optimize::nelder_mead(shape_fn, starts[s].x, {2.0, 2.0, 0.1}, simplex);
        // Restarting from the optimum guards against a prematurely collapsed simplex.
        for (int restart = 0; restart < 2; ++restart) {
            auto again = optimize::nelder_mead(shape_fn, r.x, {0.5, 0.5, 0.02}, simplex);
            if (again.value <= r.value) r = again;
            else break;
        }
        any_converged = any_converged || r.converged;
        if (r.value < best.value) best = r;
    }
    if (!std::isfinite(best.value) || !any_converged) {
        throw DrcFitError("fit_drc: optimizer did not converge",
                          std::sqrt(std::max(0.0, best.value)));
    }

    DrcParams params;
    {
        double gain = 0.0;
        shape_objective(best.x, &gain);
        double w = best.x[1], q = best.x[2];
        detail::clamp_shape(w, q);
        params = {gain, best.x[0], w, q, std::nullopt};
    }

    const bool want_background = options.background == BackgroundMode::enabled ||
                                 (options.background == BackgroundMode::automatic && background_evident(points));
    if (want_background) {
        auto full_fn = [&](const std::vector<double>& x) {
            double w = x[2], q = x[3];
            const double penalty = detail::clamp_shape(w, q);
            DrcParams p{x[0], x[1], w, q, x[4]};
            double ss = 0.0;
            for (const auto& pt : points) {
                const double r = pt.out_db - drc_out(pt.in_db, p);
                ss += r * r;
            }
            return ss / n + penalty;
        };
        optimize::SimplexResult best_bg;
        best_bg.value = std::numeric_limits<double>::infinity();
        for (double offset : {3.0, 10.0, 20.0}) {
            std::vector<double> x{params.gain_db, params.threshold_db, params.knee_width_db, params.compression_slope,
                                  min_out - offset};
            auto r = optimize::nelder_mead(full_fn, x, {1.0, 2.0, 2.0, 0.1, 3.0}, simplex);
            auto again = optimize::nelder_mead(full_fn, r.x, {0.3, 0.5, 0.5, 0.02, 1.0}, simplex);
            if (again.value <= r.value) r = again;
            if (r.value < best_bg.value) best_bg = r;
        }
        const double without = drc_rms_error(points, params);
        if (std::sqrt(std::max(0.0, best_bg.value)) < without) {
            double w = best_bg.x[2], q = best_bg.x[3];
            detail::clamp_shape(w, q);
            params = {best_bg.x[0], best_bg.x[1], w, q, best_bg.x[4]};
        }
    }

    DrcFit fit;
    fit.params = params;
    fit.rms_error_db = drc_rms_error(points, params);
    fit.accepted = drc_fit_accepted(fit.rms_error_db);
    return fit;
}

}  // namespace soundcal
