#pragma once

// Complex FFT (iterative radix-2 for powers of two, Bluestein chirp-z for
// everything else) plus the frequency-domain resampler built on it. The
// resampler's bin bookkeeping — symmetric truncation/zero-padding around DC
// with explicit Nyquist handling — is the contract the rest of the pipeline
// depends on; tests check it against a brute-force O(n^2) DFT.

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "ecgfreq/errors.hpp"

namespace ecgfreq::fft {

using cd = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative Cooley–Tukey; size must be a power of two.
// inverse=true conjugates the twiddles but does NOT apply the 1/n scale.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * 3.141592653589793238462643383279502884 /
                           static_cast<double>(len);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                cd u = a[i + j];
                cd v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Bluestein: arbitrary-length DFT via a power-of-two convolution.
// X[k] = w[k] * sum_j (x[j] w[j]) conj(w[k-j]),  w[j] = exp(-i pi j^2 / n).
// j^2 is reduced mod 2n before the angle is formed to keep precision.
inline std::vector<cd> bluestein(const std::vector<cd>& x) {
    const std::size_t n = x.size();
    std::vector<cd> w(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t j2 = (static_cast<std::uint64_t>(j) * j) %
                                 (2 * static_cast<std::uint64_t>(n));
        const double ang = -3.141592653589793238462643383279502884 *
                           static_cast<double>(j2) / static_cast<double>(n);
        w[j] = cd(std::cos(ang), std::sin(ang));
    }
    const std::size_t m = next_pow2(2 * n - 1);
    std::vector<cd> a(m, cd(0, 0)), b(m, cd(0, 0));
    for (std::size_t j = 0; j < n; ++j) a[j] = x[j] * w[j];
    b[0] = std::conj(w[0]);
    for (std::size_t j = 1; j < n; ++j) b[j] = b[m - j] = std::conj(w[j]);
    fft_pow2(a, false);
    fft_pow2(b, false);
    for (std::size_t j = 0; j < m; ++j) a[j] *= b[j];
    fft_pow2(a, true);
    std::vector<cd> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * w[k] / static_cast<double>(m);
    return out;
}

} // namespace detail

// Forward DFT, unnormalized: X[k] = sum_j x[j] exp(-2 pi i jk / n).
inline std::vector<cd> dft(std::vector<cd> x) {
    if (x.size() <= 1) return x;
    if (detail::is_pow2(x.size())) {
        detail::fft_pow2(x, false);
        return x;
    }
    return detail::bluestein(x);
}

// Inverse DFT, unnormalized: y[t] = sum_k X[k] exp(+2 pi i kt / n).
// Callers apply their own 1/n (or resampling) scale.
inline std::vector<cd> idft(std::vector<cd> x) {
    for (auto& v : x) v = std::conj(v);
    x = dft(std::move(x));
    for (auto& v : x) v = std::conj(v);
    return x;
}

inline std::vector<cd> dft_real(const std::vector<double>& x) {
    std::vector<cd> c(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) c[i] = cd(x[i], 0.0);
    return dft(std::move(c));
}

// Frequency-domain resampling of a real signal from length n to length m.
// Spectrum is truncated (m < n) or zero-padded (m > n) symmetrically around
// DC. Nyquist rules: downsampling to even m, the new Nyquist bin takes the
// sum of the source bins at +-m/2; upsampling from even n, the source
// Nyquist bin splits equally between +-n/2. The 1/n scale below is the
// unnormalized-inverse 1/m combined with the amplitude factor m/n.
inline std::vector<double> fft_resample(const std::vector<double>& x, std::int64_t target_len) {
    const std::size_t n = x.size();
    if (n < 2) fail(Errc::TooShort, "fft_resample needs at least 2 samples, got " + std::to_string(n));
    if (target_len <= 0)
        fail(Errc::NonPositiveTarget, "target length must be positive, got " + std::to_string(target_len));
    const std::size_t m = static_cast<std::size_t>(target_len);
    if (m == n) return x;

    std::vector<cd> X = dft_real(x);
    std::vector<cd> Y(m, cd(0, 0));
    if (m < n) {
        const std::size_t keep = m / 2; // strictly-below-Nyquist positive bins
        Y[0] = X[0];
        for (std::size_t k = 1; k < keep; ++k) {
            Y[k] = X[k];
            Y[m - k] = X[n - k];
        }
        if (m % 2 == 0) {
            Y[keep] = X[keep] + X[n - keep];
        } else if (keep >= 1) {
            Y[keep] = X[keep];
            Y[m - keep] = X[n - keep];
        }
    } else {
        const std::size_t keep = n / 2;
        Y[0] = X[0];
        for (std::size_t k = 1; k < keep; ++k) {
            Y[k] = X[k];
            Y[m - k] = X[n - k];
        }
        if (n % 2 == 0) {
            Y[keep] = 0.5 * X[keep];
            Y[m - keep] = 0.5 * X[keep];
        } else if (keep >= 1) {
            Y[keep] = X[keep];
            Y[m - keep] = X[n - keep];
        }
    }

    std::vector<cd> y = idft(std::move(Y));
    std::vector<double> out(m);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < m; ++t) out[t] = y[t].real() * scale;
    return out;
}

// Two-sided power spectrum |X[k]|^2, k = 0..n-1, via the same DFT machinery
// the resampler uses (quality control keys off this).
inline std::vector<double> power_spectrum(const std::vector<double>& x) {
    std::vector<cd> X = dft_real(x);
    std::vector<double> p(X.size());
    for (std::size_t k = 0; k < X.size(); ++k) p[k] = std::norm(X[k]);
    return p;
}

} // namespace ecgfreq::fft
