#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"

namespace stemmark {

enum class WavEncoding { pcm16, pcm24, float32 };

namespace wav_detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16)
         | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(x & 0xFF);
    v.push_back((x >> 8) & 0xFF);
    v.push_back((x >> 16) & 0xFF);
    v.push_back((x >> 24) & 0xFF);
}
inline void wr_u16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(x & 0xFF);
    v.push_back((x >> 8) & 0xFF);
}
inline void wr_tag(std::vector<unsigned char>& v, const char* tag) {
    v.insert(v.end(), tag, tag + 4);
}

}  // namespace wav_detail

// Reads a RIFF/WAVE file (PCM16, PCM24, or IEEE float32). Multichannel
// input is averaged down to mono; samples are scaled to [-1, 1].
inline AudioBuffer read_wav(const std::string& path) {
    using namespace wav_detail;
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "read_wav: cannot open " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    require(data.size() >= 12, ErrorKind::format, "read_wav: file too short");
    require(std::memcmp(data.data(), "RIFF", 4) == 0 &&
                std::memcmp(data.data() + 8, "WAVE", 4) == 0,
            ErrorKind::format, "read_wav: not a RIFF/WAVE file");

    std::uint16_t format = 0, n_channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* pcm = nullptr;
    std::size_t pcm_bytes = 0;

    std::size_t pos = 12;
    while (pos + 8 <= data.size()) {
        const unsigned char* hdr = data.data() + pos;
        std::uint32_t chunk_size = rd_u32(hdr + 4);
        std::size_t body = pos + 8;
        require(body + chunk_size <= data.size(), ErrorKind::format,
                "read_wav: truncated chunk");
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            require(chunk_size >= 16, ErrorKind::format, "read_wav: short fmt chunk");
            const unsigned char* p = data.data() + body;
            format = rd_u16(p);
            n_channels = rd_u16(p + 2);
            rate = rd_u32(p + 4);
            bits = rd_u16(p + 14);
            if (format == 0xFFFE) {  // WAVE_FORMAT_EXTENSIBLE
                require(chunk_size >= 40, ErrorKind::format,
                        "read_wav: short extensible fmt chunk");
                format = rd_u16(p + 24);  // first word of the sub-format GUID
            }
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            pcm = data.data() + body;
            pcm_bytes = chunk_size;
        }
        pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
    }

    require(have_fmt, ErrorKind::format, "read_wav: missing fmt chunk");
    require(pcm != nullptr, ErrorKind::format, "read_wav: missing data chunk");
    require(n_channels > 0, ErrorKind::format, "read_wav: header claims 0 channels");
    require(rate > 0, ErrorKind::format, "read_wav: header claims 0 sample rate");

    int bytes_per = bits / 8;
    bool is_float = (format == 3 && bits == 32);
    bool is_pcm16 = (format == 1 && bits == 16);
    bool is_pcm24 = (format == 1 && bits == 24);
    require(is_float || is_pcm16 || is_pcm24, ErrorKind::format,
            "read_wav: unsupported encoding (format=" + std::to_string(format) +
                ", bits=" + std::to_string(bits) + ")");

    std::size_t frame_bytes = static_cast<std::size_t>(bytes_per) * n_channels;
    require(frame_bytes > 0 && pcm_bytes % frame_bytes == 0, ErrorKind::format,
            "read_wav: data chunk not a whole number of frames");
    std::size_t n_frames = pcm_bytes / frame_bytes;

    AudioBuffer out;
    out.sample_rate = static_cast<int>(rate);
    out.samples.resize(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < n_channels; ++c) {
            const unsigned char* p = pcm + i * frame_bytes + c * bytes_per;
            double v;
            if (is_float) {
                float fv;
                std::memcpy(&fv, p, 4);
                v = fv;
            } else if (is_pcm16) {
                std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                v = s / 32768.0;
            } else {
                std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                if (s & 0x800000) s |= ~0xFFFFFF;  // sign extend
                v = s / 8388608.0;
            }
            acc += v;
        }
        out.samples[i] = acc / n_channels;
    }
    return out;
}

// Writes a mono WAV file. PCM targets hard-clip out-of-range samples;
// the return value counts clipped samples.
inline std::size_t write_wav(const AudioBuffer& buffer, const std::string& path,
                             WavEncoding encoding = WavEncoding::float32) {
    using namespace wav_detail;
    check_nonempty(buffer, "write_wav");
    require(all_finite(buffer), ErrorKind::numeric,
            "write_wav: non-finite samples");

    int bytes_per = encoding == WavEncoding::pcm16 ? 2
                  : encoding == WavEncoding::pcm24 ? 3 : 4;
    std::uint16_t fmt = encoding == WavEncoding::float32 ? 3 : 1;
    std::uint32_t data_bytes =
        static_cast<std::uint32_t>(buffer.size() * bytes_per);

    std::vector<unsigned char> out;
    out.reserve(44 + data_bytes);
    wr_tag(out, "RIFF");
    wr_u32(out, 36 + data_bytes);
    wr_tag(out, "WAVE");
    wr_tag(out, "fmt ");
    wr_u32(out, 16);
    wr_u16(out, fmt);
    wr_u16(out, 1);  // mono
    wr_u32(out, static_cast<std::uint32_t>(buffer.sample_rate));
    wr_u32(out, static_cast<std::uint32_t>(buffer.sample_rate * bytes_per));
    wr_u16(out, static_cast<std::uint16_t>(bytes_per));
    wr_u16(out, static_cast<std::uint16_t>(bytes_per * 8));
    wr_tag(out, "data");
    wr_u32(out, data_bytes);

    std::size_t clipped = 0;
    for (double s : buffer.samples) {
        if (encoding == WavEncoding::float32) {
            float fv = static_cast<float>(s);
            unsigned char b[4];
            std::memcpy(b, &fv, 4);
            out.insert(out.end(), b, b + 4);
        } else {
            double v = s;
            if (v > 1.0 || v < -1.0) {
                ++clipped;
                v = std::clamp(v, -1.0, 1.0);
            }
            if (encoding == WavEncoding::pcm16) {
                // 0.5 -> 16384; full scale clamps to 32767
                long q = std::lround(v * 32768.0);
                q = std::clamp(q, -32768l, 32767l);
                wr_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
            } else {
                long q = std::lround(v * 8388608.0);
                q = std::clamp(q, -8388608l, 8388607l);
                out.push_back(q & 0xFF);
                out.push_back((q >> 8) & 0xFF);
                out.push_back((q >> 16) & 0xFF);
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorKind::io, "write_wav: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    require(f.good(), ErrorKind::io, "write_wav: write failed for " + path);
    return clipped;
}

}  // namespace stemmark
