#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"
#include "stemmark/stft.hpp"

namespace stemmark {

inline constexpr double kDbCap = 150.0;

// --------------------------------------------------------------------------
// Bit error rate

inline double bit_error_rate(const std::vector<int>& truth,
                             const std::vector<int>& decoded) {
    require(truth.size() == decoded.size(), ErrorKind::argument,
            "bit_error_rate: length mismatch");
    require(!truth.empty(), ErrorKind::argument, "bit_error_rate: empty payload");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if ((truth[i] != 0) != (decoded[i] != 0)) ++errors;
    return static_cast<double>(errors) / truth.size();
}

// --------------------------------------------------------------------------
// SNR / SI-SNR (reported as SDR / SI-SDR for separated stems)

inline double snr_db(const AudioBuffer& reference, const AudioBuffer& test) {
    require(reference.size() == test.size(), ErrorKind::argument,
            "snr_db: length mismatch");
    double sig = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        double r = reference.samples[i];
        double d = test.samples[i] - r;
        sig += r * r;
        noise += d * d;
    }
    require(sig > 0.0, ErrorKind::argument, "snr_db: silent reference");
    if (noise <= 0.0) return kDbCap;
    return std::clamp(10.0 * std::log10(sig / noise), -kDbCap, kDbCap);
}

inline double si_snr_db(const AudioBuffer& reference, const AudioBuffer& test) {
    require(reference.size() == test.size(), ErrorKind::argument,
            "si_snr_db: length mismatch");
    std::size_t n = reference.size();
    double mr = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mr += reference.samples[i];
        mt += test.samples[i];
    }
    mr /= n;
    mt /= n;
    double dot = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = reference.samples[i] - mr;
        double t = test.samples[i] - mt;
        dot += t * r;
        rr += r * r;
    }
    require(rr > 0.0, ErrorKind::argument, "si_snr_db: silent reference");
    double tt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double t = test.samples[i] - mt;
        tt += t * t;
    }
    require(tt > 0.0, ErrorKind::argument, "si_snr_db: silent test signal");
    double alpha = dot / rr;
    double proj = alpha * alpha * rr;
    double resid = tt - proj;  // ||t - alpha r||^2 by Pythagoras
    if (resid <= proj * 1e-30) return kDbCap;
    if (proj <= resid * 1e-30) return -kDbCap;
    return std::clamp(10.0 * std::log10(proj / resid), -kDbCap, kDbCap);
}

inline double sdr_db(const AudioBuffer& reference, const AudioBuffer& test) {
    return snr_db(reference, test);
}
inline double si_sdr_db(const AudioBuffer& reference, const AudioBuffer& test) {
    return si_snr_db(reference, test);
}

// --------------------------------------------------------------------------
// Multi-resolution spectral losses

struct MelConfig {
    struct Resolution {
        std::size_t fft_size;
        std::size_t hop;
        std::size_t n_mels;
    };
    std::vector<Resolution> resolutions{
        {1024, 256, 80}, {2048, 512, 80}, {512, 128, 80}};
};

// Mean over resolutions of mean |log(|X|+eps) - log(|X~|+eps)|.
inline double multi_res_stft_loss(const AudioBuffer& x, const AudioBuffer& xt,
                                  const MelConfig& cfg = MelConfig{}) {
    require(x.size() == xt.size(), ErrorKind::argument,
            "multi_res_stft_loss: length mismatch");
    double total = 0.0;
    for (const auto& res : cfg.resolutions) {
        Spectrogram a = stft(x, {res.fft_size, res.hop});
        Spectrogram b = stft(xt, {res.fft_size, res.hop});
        double acc = 0.0;
        for (std::size_t i = 0; i < a.frames.size(); ++i)
            acc += std::abs(std::log(std::abs(a.frames[i]) + kLogEps) -
                            std::log(std::abs(b.frames[i]) + kLogEps));
        total += acc / a.frames.size();
    }
    return total / cfg.resolutions.size();
}

// Mean over resolutions of mean |mel(X) - mel(X~)|.
inline double mel_l1_loss(const AudioBuffer& x, const AudioBuffer& xt,
                          const MelConfig& cfg = MelConfig{}) {
    require(x.size() == xt.size(), ErrorKind::argument,
            "mel_l1_loss: length mismatch");
    double total = 0.0;
    for (const auto& res : cfg.resolutions) {
        std::vector<double> a = mel_project(stft(x, {res.fft_size, res.hop}), res.n_mels);
        std::vector<double> b = mel_project(stft(xt, {res.fft_size, res.hop}), res.n_mels);
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
        total += acc / a.size();
    }
    return total / cfg.resolutions.size();
}

// --------------------------------------------------------------------------
// Noise-to-mask ratio (simplified Bark-band model)

struct NmrConfig {
    std::size_t n_bands = 24;             // Bark bands up to 15.5 kHz
    double spreading_db_per_band = 15.0;  // two-sided masker spreading slope
    double offset_db = 12.0;              // masking offset below band energy
    std::size_t fft_size = 1024;
    std::size_t hop = 256;
    double abs_threshold = 1e-10;         // absolute-threshold proxy (power)
};

namespace nmr_detail {

// Bark band edges in Hz (Zwicker); the last band is extended to Nyquist.
inline const std::array<double, 25>& bark_edges() {
    static const std::array<double, 25> e = {
        0,    100,  200,  300,  400,  510,  630,  770,  920,
        1080, 1270, 1480, 1720, 2000, 2320, 2700, 3150, 3700,
        4400, 5300, 6400, 7700, 9500, 12000, 15500};
    return e;
}

// Map each fft bin to its band index, [n_bins].
inline std::vector<std::size_t> band_of_bin(std::size_t n_bins,
                                            std::size_t fft_size,
                                            int sample_rate,
                                            std::size_t n_bands) {
    const auto& edges = bark_edges();
    std::vector<std::size_t> map(n_bins);
    double hz_per_bin = static_cast<double>(sample_rate) / fft_size;
    for (std::size_t b = 0; b < n_bins; ++b) {
        double f = b * hz_per_bin;
        std::size_t band = n_bands - 1;
        for (std::size_t c = 0; c + 1 < std::min<std::size_t>(n_bands + 1, edges.size()); ++c) {
            if (f < edges[c + 1]) {
                band = c;
                break;
            }
        }
        map[b] = std::min(band, n_bands - 1);
    }
    return map;
}

// Per-band per-frame power of a spectrogram, [n_frames x n_bands].
inline std::vector<double> band_powers(const Spectrogram& spec,
                                       const NmrConfig& cfg) {
    std::vector<std::size_t> map =
        band_of_bin(spec.n_bins, spec.fft_size, spec.sample_rate, cfg.n_bands);
    std::vector<double> p(spec.n_frames * cfg.n_bands, 0.0);
    for (std::size_t t = 0; t < spec.n_frames; ++t)
        for (std::size_t f = 0; f < spec.n_bins; ++f)
            p[t * cfg.n_bands + map[f]] += std::norm(spec.at(t, f));
    return p;
}

}  // namespace nmr_detail

// Masking thresholds M_{c,t} from the reference: band power spread across
// neighboring bands and lowered by offset_db, floored at the absolute
// threshold. [n_frames x n_bands].
inline std::vector<double> nmr_masking_thresholds(const AudioBuffer& reference,
                                                  const NmrConfig& cfg = NmrConfig{}) {
    require(cfg.n_bands >= 8, ErrorKind::argument, "nmr: need >= 8 bands");
    require(cfg.offset_db > 0.0, ErrorKind::argument, "nmr: offset must be > 0");
    Spectrogram spec = stft(reference, {cfg.fft_size, cfg.hop});
    std::vector<double> e = nmr_detail::band_powers(spec, cfg);
    std::size_t nt = spec.n_frames, nc = cfg.n_bands;
    double slope = std::pow(10.0, -cfg.spreading_db_per_band / 10.0);
    double offset = std::pow(10.0, -cfg.offset_db / 10.0);
    std::vector<double> m(e.size(), 0.0);
    for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t c = 0; c < nc; ++c) {
            double acc = 0.0;
            double w = 1.0;
            for (std::size_t d = c;; --d) {  // bands at and below c
                acc += e[t * nc + d] * w;
                if (d == 0) break;
                w *= slope;
            }
            w = slope;
            for (std::size_t d = c + 1; d < nc; ++d) {
                acc += e[t * nc + d] * w;
                w *= slope;
            }
            m[t * nc + c] = std::max(acc * offset, cfg.abs_threshold);
        }
    return m;
}

// Mean over bands and frames of noise power over masking threshold.
inline double nmr_ratio(const AudioBuffer& reference, const AudioBuffer& degraded,
                        const NmrConfig& cfg = NmrConfig{}) {
    require(reference.size() == degraded.size(), ErrorKind::argument,
            "nmr_ratio: length mismatch");
    AudioBuffer noise;
    noise.sample_rate = reference.sample_rate;
    noise.samples.resize(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        noise.samples[i] = degraded.samples[i] - reference.samples[i];

    Spectrogram nspec = stft(noise, {cfg.fft_size, cfg.hop});
    std::vector<double> n = nmr_detail::band_powers(nspec, cfg);
    std::vector<double> m = nmr_masking_thresholds(reference, cfg);
    double acc = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) acc += n[i] / m[i];
    return acc / n.size();
}

// Per-band per-frame noise powers for a given (reference, degraded) pair;
// exposed so tests and calibration can construct threshold-level noise.
inline std::vector<double> nmr_noise_band_powers(const AudioBuffer& reference,
                                                 const AudioBuffer& degraded,
                                                 const NmrConfig& cfg = NmrConfig{}) {
    AudioBuffer noise;
    noise.sample_rate = reference.sample_rate;
    noise.samples.resize(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        noise.samples[i] = degraded.samples[i] - reference.samples[i];
    return nmr_detail::band_powers(stft(noise, {cfg.fft_size, cfg.hop}), cfg);
}

}  // namespace stemmark
