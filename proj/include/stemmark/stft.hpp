#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"
#include "stemmark/fft.hpp"

namespace stemmark {

struct StftConfig {
    std::size_t fft_size = 2048;
    std::size_t hop = 512;
};

// Complex STFT frames, row-major [n_frames x n_bins].
struct Spectrogram {
    std::vector<cplx> frames;
    std::size_t n_frames = 0;
    std::size_t n_bins = 0;
    std::size_t fft_size = 0;
    std::size_t hop = 0;
    int sample_rate = kCanonicalRate;

    cplx& at(std::size_t t, std::size_t f) { return frames[t * n_bins + f]; }
    const cplx& at(std::size_t t, std::size_t f) const {
        return frames[t * n_bins + f];
    }
};

namespace stft_detail {

inline void check_config(const StftConfig& cfg) {
    require(is_pow2(cfg.fft_size), ErrorKind::argument,
            "stft: fft_size must be a power of two");
    require(cfg.hop > 0 && cfg.hop <= cfg.fft_size, ErrorKind::argument,
            "stft: hop must be in (0, fft_size]");
}

// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(n)));
    return w;
}

// Reflect (mirror-without-repeat) index into [0, len).
inline std::size_t mirror(long i, long len) {
    if (len == 1) return 0;
    long period = 2 * (len - 1);
    i = ((i % period) + period) % period;
    if (i >= len) i = period - i;
    return static_cast<std::size_t>(i);
}

}  // namespace stft_detail

inline std::size_t stft_frame_count(std::size_t len, std::size_t hop) {
    return 1 + len / hop;
}

// Hann-windowed, center reflect-padded STFT.
inline Spectrogram stft(const AudioBuffer& buffer, const StftConfig& cfg) {
    using namespace stft_detail;
    check_nonempty(buffer, "stft");
    check_config(cfg);

    std::size_t n = cfg.fft_size;
    long pad = static_cast<long>(n / 2);
    long len = static_cast<long>(buffer.size());
    std::vector<double> win = hann(n);

    Spectrogram spec;
    spec.fft_size = n;
    spec.hop = cfg.hop;
    spec.sample_rate = buffer.sample_rate;
    spec.n_bins = n / 2 + 1;
    spec.n_frames = stft_frame_count(buffer.size(), cfg.hop);
    spec.frames.resize(spec.n_frames * spec.n_bins);

    std::vector<double> frame(n);
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
        long base = static_cast<long>(t * cfg.hop) - pad;
        for (std::size_t j = 0; j < n; ++j)
            frame[j] = win[j] * buffer.samples[mirror(base + static_cast<long>(j), len)];
        std::vector<cplx> bins = rfft(frame);
        std::copy(bins.begin(), bins.end(), spec.frames.begin() + t * spec.n_bins);
    }
    return spec;
}

// Adjoint of stft with respect to the input samples: maps a cotangent
// spectrogram back to a length-len cotangent waveform.
inline std::vector<double> stft_adjoint(const Spectrogram& d_spec, std::size_t len) {
    using namespace stft_detail;
    std::size_t n = d_spec.fft_size;
    long pad = static_cast<long>(n / 2);
    std::vector<double> win = hann(n);
    std::vector<double> dx(len, 0.0);

    std::vector<cplx> bins(d_spec.n_bins);
    for (std::size_t t = 0; t < d_spec.n_frames; ++t) {
        std::copy(d_spec.frames.begin() + t * d_spec.n_bins,
                  d_spec.frames.begin() + (t + 1) * d_spec.n_bins, bins.begin());
        std::vector<double> dframe = rfft_adjoint(bins, n);
        long base = static_cast<long>(t * d_spec.hop) - pad;
        for (std::size_t j = 0; j < n; ++j)
            dx[mirror(base + static_cast<long>(j), static_cast<long>(len))] +=
                win[j] * dframe[j];
    }
    return dx;
}

namespace stft_detail {

// Per-sample synthesis normalization (sum of squared windows), laid out
// over the padded timeline of the given spectrogram geometry.
inline std::vector<double> ola_norm(std::size_t n_frames, std::size_t fft_size,
                                    std::size_t hop) {
    std::vector<double> win = hann(fft_size);
    std::vector<double> norm((n_frames - 1) * hop + fft_size, 0.0);
    for (std::size_t t = 0; t < n_frames; ++t)
        for (std::size_t j = 0; j < fft_size; ++j)
            norm[t * hop + j] += win[j] * win[j];
    return norm;
}

}  // namespace stft_detail

// Overlap-add synthesis with window-square normalization, trimmed/padded
// to out_len. Exact inverse of stft (to FFT roundoff) when the frames are
// consistent.
inline AudioBuffer istft(const Spectrogram& spec, std::size_t out_len) {
    using namespace stft_detail;
    require(spec.n_frames > 0 && spec.n_bins == spec.fft_size / 2 + 1,
            ErrorKind::argument, "istft: invalid spectrogram");
    require(spec.hop * 2 <= spec.fft_size, ErrorKind::argument,
            "istft: hop violates overlap-add coverage (need hop <= fft_size/2)");

    std::size_t n = spec.fft_size;
    std::size_t pad = n / 2;
    std::vector<double> win = hann(n);
    std::vector<double> acc((spec.n_frames - 1) * spec.hop + n, 0.0);
    std::vector<double> norm = ola_norm(spec.n_frames, n, spec.hop);

    std::vector<cplx> bins(spec.n_bins);
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
        std::copy(spec.frames.begin() + t * spec.n_bins,
                  spec.frames.begin() + (t + 1) * spec.n_bins, bins.begin());
        std::vector<double> frame = irfft(bins, n);
        for (std::size_t j = 0; j < n; ++j) acc[t * spec.hop + j] += win[j] * frame[j];
    }

    AudioBuffer out;
    out.sample_rate = spec.sample_rate;
    out.samples.assign(out_len, 0.0);
    for (std::size_t m = 0; m < out_len; ++m) {
        std::size_t i = pad + m;
        if (i < acc.size() && norm[i] > 1e-8) out.samples[m] = acc[i] / norm[i];
    }
    return out;
}

// Adjoint of istft with respect to the complex frames.
inline Spectrogram istft_adjoint(const std::vector<double>& d_out,
                                 std::size_t n_frames, const StftConfig& cfg,
                                 int sample_rate = kCanonicalRate) {
    using namespace stft_detail;
    std::size_t n = cfg.fft_size;
    std::size_t pad = n / 2;
    std::vector<double> win = hann(n);
    std::vector<double> norm = ola_norm(n_frames, n, cfg.hop);
    std::vector<double> dacc((n_frames - 1) * cfg.hop + n, 0.0);
    for (std::size_t m = 0; m < d_out.size(); ++m) {
        std::size_t i = pad + m;
        if (i < dacc.size() && norm[i] > 1e-8) dacc[i] = d_out[m] / norm[i];
    }

    Spectrogram d_spec;
    d_spec.fft_size = n;
    d_spec.hop = cfg.hop;
    d_spec.sample_rate = sample_rate;
    d_spec.n_bins = n / 2 + 1;
    d_spec.n_frames = n_frames;
    d_spec.frames.resize(n_frames * d_spec.n_bins);

    std::vector<double> dframe(n);
    for (std::size_t t = 0; t < n_frames; ++t) {
        for (std::size_t j = 0; j < n; ++j) dframe[j] = win[j] * dacc[t * cfg.hop + j];
        std::vector<cplx> dbins = irfft_adjoint(dframe);
        std::copy(dbins.begin(), dbins.end(), d_spec.frames.begin() + t * d_spec.n_bins);
    }
    return d_spec;
}

// Magnitudes of a spectrogram, same [n_frames x n_bins] layout.
inline std::vector<double> magnitude(const Spectrogram& spec) {
    std::vector<double> mag(spec.frames.size());
    for (std::size_t i = 0; i < spec.frames.size(); ++i)
        mag[i] = std::abs(spec.frames[i]);
    return mag;
}

// ---------------------------------------------------------------------------
// Mel filterbank

namespace stft_detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace stft_detail

// Triangular mel filterbank, 0 Hz to Nyquist, row-major [n_mels x n_bins].
inline std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t n_bins,
                                          std::size_t fft_size, int sample_rate) {
    using namespace stft_detail;
    require(n_mels >= 1, ErrorKind::argument, "mel_filterbank: n_mels must be >= 1");
    require(n_mels <= n_bins, ErrorKind::argument,
            "mel_filterbank: n_mels exceeds n_bins");

    double nyquist = sample_rate / 2.0;
    double mel_max = hz_to_mel(nyquist);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / (n_mels + 1));

    std::vector<double> fb(n_mels * n_bins, 0.0);
    double hz_per_bin = static_cast<double>(sample_rate) / fft_size;
    for (std::size_t m = 0; m < n_mels; ++m) {
        double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (std::size_t b = 0; b < n_bins; ++b) {
            double f = b * hz_per_bin;
            double v = 0.0;
            if (f > lo && f < mid && mid > lo) v = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi && hi > mid) v = (hi - f) / (hi - mid);
            fb[m * n_bins + b] = v;
        }
    }
    return fb;
}

// Applies the mel filterbank to spectrogram magnitudes.
// Returns [n_frames x n_mels] row-major.
inline std::vector<double> mel_project(const std::vector<double>& mag,
                                       std::size_t n_frames, std::size_t n_bins,
                                       std::size_t n_mels, std::size_t fft_size,
                                       int sample_rate) {
    std::vector<double> fb = mel_filterbank(n_mels, n_bins, fft_size, sample_rate);
    std::vector<double> out(n_frames * n_mels, 0.0);
    for (std::size_t t = 0; t < n_frames; ++t)
        for (std::size_t m = 0; m < n_mels; ++m) {
            double acc = 0.0;
            const double* w = &fb[m * n_bins];
            const double* x = &mag[t * n_bins];
            for (std::size_t b = 0; b < n_bins; ++b) acc += w[b] * x[b];
            out[t * n_mels + m] = acc;
        }
    return out;
}

inline std::vector<double> mel_project(const Spectrogram& spec, std::size_t n_mels) {
    return mel_project(magnitude(spec), spec.n_frames, spec.n_bins, n_mels,
                       spec.fft_size, spec.sample_rate);
}

}  // namespace stemmark
