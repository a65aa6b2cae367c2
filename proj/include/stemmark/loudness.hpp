#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"

namespace stemmark {

inline constexpr double kDefaultTargetLufs = -16.0;

struct LoudnessResult {
    std::optional<double> integrated_lufs;  // empty when everything gated
    std::size_t gated_blocks = 0;

    bool silent() const { return !integrated_lufs.has_value(); }
};

namespace loudness_detail {

struct Biquad {
    double b0, b1, b2, a1, a2;

    void apply(std::vector<double>& x) const {
        double z1 = 0.0, z2 = 0.0;  // transposed direct form II
        for (double& v : x) {
            double y = b0 * v + z1;
            z1 = b1 * v - a1 * y + z2;
            z2 = b2 * v - a2 * y;
            v = y;
        }
    }
};

// K-weighting prefilter redesigned at the given rate via the bilinear
// transform of the analog prototypes behind the BS.1770 48 kHz tables
// (high shelf at 1681.97 Hz, +3.9998 dB, Q 0.70718; high-pass at
// 38.135 Hz, Q 0.50033). At fs = 48000 these reproduce the published
// coefficients to ~1e-12.
inline Biquad k_shelf(double fs) {
    double fc = 1681.9744509555319, gain_db = 3.99984385397,
           q = 0.7071752369554193;
    double k = std::tan(M_PI * fc / fs);
    double vh = std::pow(10.0, gain_db / 20.0);
    double vb = std::pow(vh, 0.499666774155);
    double a0 = 1.0 + k / q + k * k;
    return Biquad{(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0,
                  (vh - vb * k / q + k * k) / a0, 2.0 * (k * k - 1.0) / a0,
                  (1.0 - k / q + k * k) / a0};
}

inline Biquad k_highpass(double fs) {
    double fc = 38.13547087613982, q = 0.5003270373253953;
    double k = std::tan(M_PI * fc / fs);
    double a0 = 1.0 + k / q + k * k;
    return Biquad{1.0, -2.0, 1.0, 2.0 * (k * k - 1.0) / a0,
                  (1.0 - k / q + k * k) / a0};
}

}  // namespace loudness_detail

// BS.1770-style integrated loudness: K-weighting, 400 ms blocks at 75%
// overlap, -70 LUFS absolute gate then -10 LU relative gate.
inline LoudnessResult measure_integrated_lufs(const AudioBuffer& buffer) {
    using namespace loudness_detail;
    check_nonempty(buffer, "measure_integrated_lufs");
    double fs = buffer.sample_rate;
    std::size_t block = static_cast<std::size_t>(std::lround(0.400 * fs));
    std::size_t hop = static_cast<std::size_t>(std::lround(0.100 * fs));
    require(buffer.size() >= block, ErrorKind::argument,
            "measure_integrated_lufs: need at least 400 ms of audio");

    std::vector<double> x = buffer.samples;
    k_shelf(fs).apply(x);
    k_highpass(fs).apply(x);

    std::vector<double> block_ms;
    for (std::size_t start = 0; start + block <= x.size(); start += hop) {
        double acc = 0.0;
        for (std::size_t i = start; i < start + block; ++i) acc += x[i] * x[i];
        block_ms.push_back(acc / block);
    }

    auto lufs_of = [](double ms) { return -0.691 + 10.0 * std::log10(ms + 1e-30); };

    // absolute gate at -70 LUFS
    double sum_abs = 0.0;
    std::size_t n_abs = 0;
    for (double ms : block_ms)
        if (lufs_of(ms) > -70.0) {
            sum_abs += ms;
            ++n_abs;
        }
    if (n_abs == 0) return LoudnessResult{};

    // relative gate 10 LU below the abs-gated mean loudness
    double rel_threshold = lufs_of(sum_abs / n_abs) - 10.0;
    double sum_rel = 0.0;
    std::size_t n_rel = 0;
    for (double ms : block_ms)
        if (lufs_of(ms) > -70.0 && lufs_of(ms) > rel_threshold) {
            sum_rel += ms;
            ++n_rel;
        }
    if (n_rel == 0) return LoudnessResult{};

    LoudnessResult r;
    r.integrated_lufs = lufs_of(sum_rel / n_rel);
    r.gated_blocks = n_rel;
    return r;
}

// Applies one scalar gain so the re-measured loudness hits the target.
inline AudioBuffer normalize_to_lufs(const AudioBuffer& buffer,
                                     double target_lufs = kDefaultTargetLufs) {
    LoudnessResult r = measure_integrated_lufs(buffer);
    require(!r.silent(), ErrorKind::argument, "normalize_to_lufs: silent input");
    double gain = std::pow(10.0, (target_lufs - *r.integrated_lufs) / 20.0);
    AudioBuffer out = buffer;
    for (double& s : out.samples) s *= gain;
    return out;
}

inline double loudness_gain(const AudioBuffer& buffer,
                            double target_lufs = kDefaultTargetLufs) {
    LoudnessResult r = measure_integrated_lufs(buffer);
    require(!r.silent(), ErrorKind::argument, "loudness_gain: silent input");
    return std::pow(10.0, (target_lufs - *r.integrated_lufs) / 20.0);
}

}  // namespace stemmark
