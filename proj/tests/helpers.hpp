#pragma once

// Brute-force reference implementations used as oracles by the tests.

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace testutil {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    return v;
}

// O(N^2) DFT bin.
inline std::complex<double> dft_bin(const std::vector<double>& x, double k) {
    std::complex<double> acc = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(i) / n);
    return acc;
}

inline std::vector<double> direct_convolution(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> y(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) y[i + j] += a[i] * b[j];
    return y;
}

inline std::vector<double> circular_convolution(const std::vector<double>& x, const std::vector<double>& h) {
    const std::size_t n = x.size();
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h.size(); ++j) y[(i + j) % n] += h[j] * x[i];
    return y;
}

// Magnitude (dB) of an FIR at f by direct summation.
inline double fir_db(const std::vector<double>& h, double f, double fs) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < h.size(); ++n)
        acc += h[n] * std::polar(1.0, -2.0 * std::numbers::pi * f * static_cast<double>(n) / fs);
    return 20.0 * std::log10(std::abs(acc));
}

// THD from FFT bins of a whole number of cycles: sqrt(sum_{k=2..6} |X[k f]|^2) / |X[f]|.
inline double fft_bin_thd(const std::vector<double>& x, double cycles) {
    const double p1 = std::norm(dft_bin(x, cycles));
    double ph = 0.0;
    for (int k = 2; k <= 6; ++k)
        if (k * cycles < static_cast<double>(x.size()) / 2.0) ph += std::norm(dft_bin(x, k * cycles));
    return std::sqrt(ph / p1);
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("soundcal_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

inline std::string fixture(const std::string& name) { return std::string(SOUNDCAL_FIXTURES) + "/" + name; }

}  // namespace testutil
