#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"
#include "stemmark/resample.hpp"
#include "stemmark/stft.hpp"

namespace stemmark {

// Classic phase vocoder time-stretch: analysis hop ha, synthesis hop
// hs = ha * stretch, per-bin phase advance scaled by the hop ratio.
// stretch > 1 lengthens the signal, pitch preserved.
inline AudioBuffer pv_time_stretch(const AudioBuffer& in, double stretch,
                                   const StftConfig& cfg = {2048, 256}) {
    require(stretch > 0.0, ErrorKind::argument, "pv_time_stretch: stretch must be > 0");
    require(in.size() >= cfg.fft_size, ErrorKind::argument,
            "pv_time_stretch: input shorter than one analysis window");
    if (stretch == 1.0) return in;

    Spectrogram a = stft(in, cfg);
    double hs = cfg.hop * stretch;

    Spectrogram s;
    s.fft_size = cfg.fft_size;
    s.hop = cfg.hop;
    s.n_bins = a.n_bins;
    // place synthesis frames back on the analysis hop grid but advance the
    // analysis read position by 1/stretch per output frame
    std::size_t out_len = static_cast<std::size_t>(std::lround(in.size() * stretch));
    s.n_frames = stft_frame_count(out_len, cfg.hop);
    s.frames.assign(s.n_frames * s.n_bins, cplx(0.0, 0.0));

    (void)hs;
    std::vector<double> phase(a.n_bins, 0.0);
    for (std::size_t t = 0; t < s.n_frames; ++t) {
        double read = static_cast<double>(t) / stretch;
        std::size_t t0 = std::min(static_cast<std::size_t>(read),
                                  a.n_frames ? a.n_frames - 1 : 0);
        std::size_t t1 = std::min(t0 + 1, a.n_frames - 1);
        double frac = read - t0;
        for (std::size_t f = 0; f < a.n_bins; ++f) {
            // magnitude: linear blend of the two neighbouring analysis frames
            double m0 = std::abs(a.at(t0, f)), m1 = std::abs(a.at(t1, f));
            double mag = (1.0 - frac) * m0 + frac * m1;

            if (t == 0) {
                phase[f] = std::arg(a.at(t0, f));
            } else {
                // instantaneous per-hop phase advance estimated at the read
                // position, accumulated once per synthesis hop
                double omega = 2.0 * M_PI * f * cfg.hop / cfg.fft_size;
                double dev = std::arg(a.at(t1, f)) - std::arg(a.at(t0, f)) - omega;
                dev -= 2.0 * M_PI * std::floor((dev + M_PI) / (2.0 * M_PI));
                phase[f] += omega + dev;
            }
            s.at(t, f) = std::polar(mag, phase[f]);
        }
    }

    AudioBuffer out = istft(s, out_len);
    out.sample_rate = in.sample_rate;
    return out;
}

// Pitch-preserving speed change: output duration = input / speed.
inline AudioBuffer pv_speed(const AudioBuffer& in, double speed,
                            const StftConfig& cfg = {2048, 256}) {
    require(speed > 0.0, ErrorKind::argument, "pv_speed: speed must be > 0");
    AudioBuffer out = pv_time_stretch(in, 1.0 / speed, cfg);
    std::size_t want = static_cast<std::size_t>(std::lround(in.size() / speed));
    out.samples.resize(want, 0.0);
    return out;
}

// Duration-preserving pitch shift: stretch by the pitch ratio, then
// sinc-resample back to the original length.
inline AudioBuffer pv_pitch_shift(const AudioBuffer& in, double semitones,
                                  const StftConfig& cfg = {2048, 256}) {
    double r = std::pow(2.0, semitones / 12.0);
    if (r == 1.0) return in;
    AudioBuffer stretched = pv_time_stretch(in, r, cfg);
    AudioBuffer out = in;
    out.samples = sinc_resample(stretched.samples, 1.0 / r, in.size());
    return out;
}

// Combined speed and pitch change: output duration = input / speed, pitch
// scaled by 2^(semitones/12).
inline AudioBuffer pv_speed_pitch(const AudioBuffer& in, double speed,
                                  double semitones,
                                  const StftConfig& cfg = {2048, 256}) {
    require(speed > 0.0, ErrorKind::argument, "pv_speed_pitch: speed must be > 0");
    double r = std::pow(2.0, semitones / 12.0);
    AudioBuffer stretched = pv_time_stretch(in, r / speed, cfg);
    std::size_t want = static_cast<std::size_t>(std::lround(in.size() / speed));
    AudioBuffer out = in;
    out.samples = sinc_resample(stretched.samples, 1.0 / r, want);
    return out;
}

}  // namespace stemmark
