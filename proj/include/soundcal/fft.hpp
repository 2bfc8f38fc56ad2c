#pragma once

// Thin RAII layer over FFTW for the real-signal transforms the library needs.
// Plans are cached per (kind, size); planning is serialized because the FFTW
// planner is not thread-safe, execution is not.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "soundcal/error.hpp"

namespace soundcal::fft {

using Complex = std::complex<double>;

namespace detail {

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

template <typename T>
using AlignedBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
AlignedBuffer<T> allocate(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)));
    if (p == nullptr) throw Error("fftw_malloc failed");
    return AlignedBuffer<T>(p);
}

enum class Kind { forward_real, inverse_real };

class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(Kind kind, std::size_t n) {
        std::lock_guard lock(mutex_);
        auto key = std::make_pair(kind, n);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;

        // Plan against scratch buffers; execution uses the new-array interface
        // with fftw_malloc'd (identically aligned) buffers.
        auto real = allocate<double>(n);
        auto spec = allocate<fftw_complex>(n / 2 + 1);
        const int size = static_cast<int>(n);
        fftw_plan plan = kind == Kind::forward_real
                             ? fftw_plan_dft_r2c_1d(size, real.get(), spec.get(), FFTW_ESTIMATE)
                             : fftw_plan_dft_c2r_1d(size, spec.get(), real.get(), FFTW_ESTIMATE);
        if (plan == nullptr) throw Error("FFTW planning failed");
        plans_.emplace(key, plan);
        return plan;
    }

    PlanCache(const PlanCache&) = delete;
    PlanCache& operator=(const PlanCache&) = delete;

private:
    PlanCache() = default;
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::pair<Kind, std::size_t>, fftw_plan> plans_;
};

}  // namespace detail

/// Forward real FFT of `x` zero-padded (or truncated) to `n` points.
/// Returns the n/2 + 1 non-negative-frequency bins, unnormalized.
inline std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
    require(n > 0, "rfft: size must be positive");
    auto in = detail::allocate<double>(n);
    const std::size_t copy = std::min(n, x.size());
    std::memcpy(in.get(), x.data(), copy * sizeof(double));
    std::fill(in.get() + copy, in.get() + n, 0.0);
    auto out = detail::allocate<fftw_complex>(n / 2 + 1);
    fftw_execute_dft_r2c(detail::PlanCache::instance().get(detail::Kind::forward_real, n), in.get(),
                         out.get());
    std::vector<Complex> result(n / 2 + 1);
    for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out.get()[k][0], out.get()[k][1]};
    return result;
}

inline std::vector<Complex> rfft(std::span<const double> x) { return rfft(x, x.size()); }

/// Inverse of rfft: `spectrum` holds n/2 + 1 bins of a Hermitian spectrum.
/// Normalized so irfft(rfft(x), n) == x.
inline std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n) {
    require(n > 0, "irfft: size must be positive");
    require(spectrum.size() == n / 2 + 1, "irfft: spectrum must hold n/2 + 1 bins");
    auto in = detail::allocate<fftw_complex>(n / 2 + 1);
    std::memcpy(in.get(), spectrum.data(), spectrum.size() * sizeof(fftw_complex));
    // A real signal has real DC and Nyquist bins; c2r silently uses only the
    // real parts, make that explicit.
    in.get()[0][1] = 0.0;
    if (n % 2 == 0) in.get()[n / 2][1] = 0.0;
    auto out = detail::allocate<double>(n);
    fftw_execute_dft_c2r(detail::PlanCache::instance().get(detail::Kind::inverse_real, n), in.get(),
                         out.get());
    std::vector<double> result(out.get(), out.get() + n);
    const double scale = 1.0 / static_cast<double>(n);
    for (double& v : result) v *= scale;
    return result;
}

/// Smallest size >= n whose only prime factors are 2, 3 and 5.
inline std::size_t good_size(std::size_t n) {
    if (n <= 1) return 1;
    for (std::size_t m = n;; ++m) {
        std::size_t r = m;
        for (std::size_t p : {2u, 3u, 5u})
            while (r % p == 0) r /= p;
        if (r == 1) return m;
    }
}

/// Linear convolution via FFT; output length a.size() + b.size() - 1.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) return {};
    const std::size_t out_len = a.size() + b.size() - 1;
    const std::size_t n = good_size(out_len);
    auto fa = rfft(a, n);
    const auto fb = rfft(b, n);
    for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
    auto full = irfft(fa, n);
    full.resize(out_len);
    return full;
}

}  // namespace soundcal::fft
