#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"

namespace stemmark {

// Generator parameters for the two synthetic stem families used by the
// toy benchmark: stem A is a tonal source below 3 kHz, stem B filtered
// noise bursts with energy above 1 kHz. Deterministic given a seed.
struct SyntheticStemSet {
    double carrier_seconds = 6.0;
    int min_partials_a = 3;
    int max_partials_a = 6;
    double min_freq_a = 300.0;
    double max_freq_a = 2800.0;
    double burst_rate_b = 2.5;     // bursts per second
    double noise_floor_b = 0.12;   // envelope floor between bursts
    std::size_t segment_len = kSegmentSamples;
};

namespace synth_detail {

// Slow sinusoidal amplitude envelope that never reaches zero.
inline double envelope(double t, double rate_hz, double phase) {
    return 0.55 + 0.45 * std::sin(2.0 * M_PI * rate_hz * t + phase);
}

// Two cascaded one-pole high-pass stages (~12 dB/oct above fc).
inline void highpass2(std::vector<double>& x, double fc, int rate) {
    double a = std::exp(-2.0 * M_PI * fc / rate);
    for (int pass = 0; pass < 2; ++pass) {
        double y = 0.0, px = 0.0;
        for (double& s : x) {
            double ny = a * (y + s - px);
            px = s;
            y = ny;
            s = ny;
        }
    }
}

}  // namespace synth_detail

// Tonal stem: 3-6 sinusoids with random slow envelopes, all below 3 kHz,
// plus a faint broadband floor for numerical conditioning.
inline AudioBuffer synth_stem_a(const SyntheticStemSet& set, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t n = static_cast<std::size_t>(set.carrier_seconds * kCanonicalRate);
    AudioBuffer b;
    b.samples.assign(n, 0.0);
    int n_partials = static_cast<int>(rng.uniform_int(set.min_partials_a, set.max_partials_a));
    for (int p = 0; p < n_partials; ++p) {
        double freq = std::exp(rng.uniform(std::log(set.min_freq_a), std::log(set.max_freq_a)));
        double amp = rng.uniform(0.2, 0.5) / n_partials;
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        double env_rate = rng.uniform(0.2, 1.0);
        double env_phase = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t i = 0; i < n; ++i) {
            double t = static_cast<double>(i) / kCanonicalRate;
            b.samples[i] += amp * synth_detail::envelope(t, env_rate, env_phase) *
                            std::sin(2.0 * M_PI * freq * t + phase);
        }
    }
    for (std::size_t i = 0; i < n; ++i) b.samples[i] += 2e-3 * rng.gaussian();
    return b;
}

// Noisy stem: high-passed white noise gated by a burst envelope, energy
// concentrated above 1 kHz. The envelope keeps a small floor so frames
// are never fully silent.
inline AudioBuffer synth_stem_b(const SyntheticStemSet& set, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t n = static_cast<std::size_t>(set.carrier_seconds * kCanonicalRate);
    std::vector<double> noise(n);
    for (auto& s : noise) s = rng.gaussian();
    synth_detail::highpass2(noise, 1000.0, kCanonicalRate);

    double burst_period = 1.0 / set.burst_rate_b;
    double jitter = rng.uniform(0.0, burst_period);
    AudioBuffer b;
    b.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / kCanonicalRate + jitter;
        double pos = std::fmod(t, burst_period) / burst_period;  // 0..1 in burst
        double env = set.noise_floor_b +
                     (1.0 - set.noise_floor_b) *
                         std::exp(-8.0 * pos) * (1.0 - std::exp(-80.0 * pos));
        b.samples[i] = 0.25 * env * noise[i];
    }
    return b;
}

struct StemPair {
    AudioBuffer stem_a;
    AudioBuffer stem_b;
    SegmentLocator locator;
};

// Deterministic batch of full-length carrier pairs with uniformly random
// segment locators per item.
inline std::vector<StemPair> synth_two_stem_batch(const SyntheticStemSet& set,
                                                  std::size_t batch,
                                                  std::uint64_t seed) {
    require(batch >= 1, ErrorKind::argument, "synth_two_stem_batch: batch must be >= 1");
    std::vector<StemPair> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        StemPair p;
        p.stem_a = synth_stem_a(set, derive_seed(seed, "stem_a", i));
        p.stem_b = synth_stem_b(set, derive_seed(seed, "stem_b", i));
        std::size_t carrier_len = p.stem_a.size();
        require(carrier_len >= set.segment_len, ErrorKind::argument,
                "synth_two_stem_batch: carrier shorter than segment");
        Rng rng(derive_seed(seed, "locator", i));
        p.locator.start = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(carrier_len - set.segment_len)));
        p.locator.length = set.segment_len;
        out.push_back(std::move(p));
    }
    return out;
}

// Music-like fixture: a dozen enveloped partials spread over 200 Hz -
// 6 kHz over a quiet broadband floor. Used for codec calibration and the
// imperceptibility fixtures.
inline AudioBuffer music_like(std::uint64_t seed, std::size_t len = kSegmentSamples) {
    Rng rng(seed);
    AudioBuffer b;
    b.samples.assign(len, 0.0);
    int n_partials = static_cast<int>(rng.uniform_int(8, 14));
    for (int p = 0; p < n_partials; ++p) {
        double freq = std::exp(rng.uniform(std::log(200.0), std::log(6000.0)));
        double amp = rng.uniform(0.1, 0.4) / std::sqrt(static_cast<double>(n_partials));
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        double env_rate = rng.uniform(0.3, 2.0);
        double env_phase = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t i = 0; i < len; ++i) {
            double t = static_cast<double>(i) / kCanonicalRate;
            b.samples[i] += amp * synth_detail::envelope(t, env_rate, env_phase) *
                            std::sin(2.0 * M_PI * freq * t + phase);
        }
    }
    for (std::size_t i = 0; i < len; ++i) b.samples[i] += 3e-3 * rng.gaussian();
    return b;
}

}  // namespace stemmark
