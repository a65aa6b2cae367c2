#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "stemmark/common.hpp"

namespace stemmark {

inline constexpr int kCanonicalRate = 44100;
inline constexpr std::size_t kSegmentSamples = 88200;  // 2 s at 44.1 kHz

// Mono float waveform, nominally in [-1, 1]. The universal carrier type.
struct AudioBuffer {
    std::vector<double> samples;
    int sample_rate = kCanonicalRate;
    int channels = 1;

    std::size_t size() const { return samples.size(); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

inline AudioBuffer make_buffer(std::vector<double> samples,
                               int sample_rate = kCanonicalRate) {
    require(sample_rate > 0, ErrorKind::argument, "sample_rate must be > 0");
    AudioBuffer b;
    b.samples = std::move(samples);
    b.sample_rate = sample_rate;
    return b;
}

inline void check_nonempty(const AudioBuffer& b, const char* op) {
    require(!b.samples.empty(), ErrorKind::argument,
            std::string(op) + ": empty buffer");
    require(b.sample_rate > 0, ErrorKind::argument,
            std::string(op) + ": sample_rate must be > 0");
}

inline bool all_finite(const AudioBuffer& b) {
    for (double s : b.samples)
        if (!std::isfinite(s)) return false;
    return true;
}

inline double rms(const AudioBuffer& b) {
    if (b.samples.empty()) return 0.0;
    double acc = 0.0;
    for (double s : b.samples) acc += s * s;
    return std::sqrt(acc / b.samples.size());
}

// Window of a full-length carrier holding one watermark segment.
struct SegmentLocator {
    std::size_t start = 0;
    std::size_t length = kSegmentSamples;
};

inline AudioBuffer crop_segment(const AudioBuffer& buffer,
                                const SegmentLocator& loc) {
    check_nonempty(buffer, "crop_segment");
    require(loc.length > 0, ErrorKind::argument, "crop_segment: zero length");
    require(loc.start + loc.length <= buffer.size(), ErrorKind::argument,
            "crop_segment: locator out of range");
    AudioBuffer out;
    out.sample_rate = buffer.sample_rate;
    out.samples.assign(buffer.samples.begin() + loc.start,
                       buffer.samples.begin() + loc.start + loc.length);
    return out;
}

inline AudioBuffer splice_segment(const AudioBuffer& carrier,
                                  const AudioBuffer& segment,
                                  const SegmentLocator& loc) {
    check_nonempty(carrier, "splice_segment");
    check_nonempty(segment, "splice_segment");
    require(segment.sample_rate == carrier.sample_rate, ErrorKind::argument,
            "splice_segment: sample rate mismatch");
    require(segment.size() == loc.length, ErrorKind::argument,
            "splice_segment: segment length != locator length");
    require(loc.start + loc.length <= carrier.size(), ErrorKind::argument,
            "splice_segment: locator out of range");
    AudioBuffer out = carrier;
    std::copy(segment.samples.begin(), segment.samples.end(),
              out.samples.begin() + loc.start);
    return out;
}

}  // namespace stemmark
