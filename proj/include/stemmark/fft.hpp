#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "stemmark/common.hpp"

namespace stemmark {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 Cooley-Tukey. inverse=true applies the
// conjugate transform and the 1/N scale.
inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
    std::size_t n = a.size();
    require(is_pow2(n), ErrorKind::argument, "fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                cplx u = a[i + j];
                cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        double inv = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv;
    }
}

// Real-input FFT: returns bins 0..N/2 (N/2+1 complex values).
inline std::vector<cplx> rfft(const std::vector<double>& x) {
    std::size_t n = x.size();
    std::vector<cplx> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = cplx(x[i], 0.0);
    fft_inplace(a, false);
    a.resize(n / 2 + 1);
    return a;
}

// Inverse of rfft for Hermitian-symmetric content; edge-bin imaginary
// parts are ignored. Output length n.
inline std::vector<double> irfft(const std::vector<cplx>& spec, std::size_t n) {
    require(spec.size() == n / 2 + 1, ErrorKind::argument, "irfft: bin count mismatch");
    std::vector<cplx> a(n);
    a[0] = cplx(spec[0].real(), 0.0);
    a[n / 2] = cplx(spec[n / 2].real(), 0.0);
    for (std::size_t k = 1; k < n / 2; ++k) {
        a[k] = spec[k];
        a[n - k] = std::conj(spec[k]);
    }
    fft_inplace(a, true);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
    return out;
}

// Adjoint of rfft as an R-linear map R^n -> R^(2(n/2+1)).
// Satisfies <rfft(x), g>_R = <x, rfft_adjoint(g, n)>.
inline std::vector<double> rfft_adjoint(const std::vector<cplx>& g, std::size_t n) {
    require(g.size() == n / 2 + 1, ErrorKind::argument, "rfft_adjoint: bin count mismatch");
    std::vector<cplx> a(n, cplx(0.0, 0.0));
    for (std::size_t k = 0; k <= n / 2; ++k) a[k] = g[k];
    fft_inplace(a, true);  // (1/n) sum g_k e^{+i w k m}
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real() * static_cast<double>(n);
    return out;
}

// Adjoint of irfft. Satisfies <irfft(S, n), d> = <S, irfft_adjoint(d)>_R,
// with zero gradient into the (ignored) edge-bin imaginary parts.
inline std::vector<cplx> irfft_adjoint(const std::vector<double>& d) {
    std::size_t n = d.size();
    std::vector<cplx> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = cplx(d[i], 0.0);
    fft_inplace(a, false);
    std::vector<cplx> out(n / 2 + 1);
    double inv = 1.0 / static_cast<double>(n);
    out[0] = cplx(a[0].real() * inv, 0.0);
    out[n / 2] = cplx(a[n / 2].real() * inv, 0.0);
    for (std::size_t k = 1; k < n / 2; ++k) out[k] = a[k] * (2.0 * inv);
    return out;
}

}  // namespace stemmark
