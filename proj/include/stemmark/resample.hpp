#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"

namespace stemmark {

// Windowed-sinc resampling at an arbitrary ratio. Direct evaluation of a
// Hann-windowed sinc interpolator per output sample; fine at desk scale.
// ratio = out_rate / in_rate; cutoff sits just under the narrower Nyquist.
inline std::vector<double> sinc_resample(const std::vector<double>& x,
                                         double ratio,
                                         std::size_t out_len = 0,
                                         int half_taps = 32) {
    require(ratio > 0.0, ErrorKind::argument, "sinc_resample: ratio must be > 0");
    require(!x.empty(), ErrorKind::argument, "sinc_resample: empty input");
    if (out_len == 0)
        out_len = static_cast<std::size_t>(std::lround(x.size() * ratio));
    require(out_len > 0, ErrorKind::argument, "sinc_resample: empty output");

    // anti-alias when downsampling: cutoff relative to the input rate
    double fc = 0.95 * 0.5 * std::min(1.0, ratio);
    // widen the kernel when the cutoff drops so the transition stays sharp
    double width = half_taps / std::min(1.0, ratio);
    int w = static_cast<int>(std::ceil(width));

    std::vector<double> y(out_len, 0.0);
    std::size_t n = x.size();
    for (std::size_t j = 0; j < out_len; ++j) {
        double center = static_cast<double>(j) / ratio;
        int lo = static_cast<int>(std::floor(center)) - w + 1;
        int hi = static_cast<int>(std::floor(center)) + w;
        double acc = 0.0;
        for (int k = lo; k <= hi; ++k) {
            if (k < 0 || k >= static_cast<int>(n)) continue;
            double t = center - k;
            if (std::abs(t) > width) continue;
            double arg = 2.0 * fc * t;
            double s = arg == 0.0 ? 1.0 : std::sin(M_PI * arg) / (M_PI * arg);
            double hw = 0.5 * (1.0 + std::cos(M_PI * t / width));  // Hann
            acc += x[k] * 2.0 * fc * s * hw;
        }
        y[j] = acc;
    }
    return y;
}

inline AudioBuffer resample_to_rate(const AudioBuffer& in, int target_rate,
                                    int half_taps = 32) {
    require(target_rate > 0, ErrorKind::argument, "resample_to_rate: bad rate");
    AudioBuffer out;
    out.sample_rate = target_rate;
    out.channels = in.channels;
    out.samples = sinc_resample(
        in.samples, static_cast<double>(target_rate) / in.sample_rate, 0, half_taps);
    return out;
}

}  // namespace stemmark
