#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stemmark/audio.hpp"
#include "stemmark/common.hpp"
#include "stemmark/fft.hpp"
#include "stemmark/phase_vocoder.hpp"
#include "stemmark/resample.hpp"
#include "stemmark/stft.hpp"

namespace stemmark {

enum class AttackKind {
    N, PK, SP, AMP, BST, DK, QT, PHS,       // Basic/Noise
    LP, BF, SM, SPAUG,                      // Filter
    RS, ECHO, RV, SPD, PCH, SPCH            // Time/Pitch
};

enum class AttackCategory { Origin, BasicNoise, Filter, TimePitch };

inline const std::vector<AttackKind>& category_members(AttackCategory c) {
    static const std::vector<AttackKind> basic{
        AttackKind::N,  AttackKind::PK, AttackKind::SP, AttackKind::AMP,
        AttackKind::BST, AttackKind::DK, AttackKind::QT, AttackKind::PHS};
    static const std::vector<AttackKind> filter{
        AttackKind::LP, AttackKind::BF, AttackKind::SM, AttackKind::SPAUG};
    static const std::vector<AttackKind> timepitch{
        AttackKind::RS, AttackKind::ECHO, AttackKind::RV,
        AttackKind::SPD, AttackKind::PCH, AttackKind::SPCH};
    static const std::vector<AttackKind> none{};
    switch (c) {
        case AttackCategory::BasicNoise: return basic;
        case AttackCategory::Filter: return filter;
        case AttackCategory::TimePitch: return timepitch;
        default: return none;
    }
}

inline const std::vector<AttackKind>& all_attack_kinds() {
    static const std::vector<AttackKind> all = [] {
        std::vector<AttackKind> v;
        for (auto c : {AttackCategory::BasicNoise, AttackCategory::Filter,
                       AttackCategory::TimePitch})
            for (AttackKind k : category_members(c)) v.push_back(k);
        return v;
    }();
    return all;
}

inline std::string attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::N: return "N";
        case AttackKind::PK: return "PK";
        case AttackKind::SP: return "SP";
        case AttackKind::AMP: return "AMP";
        case AttackKind::BST: return "BST";
        case AttackKind::DK: return "DK";
        case AttackKind::QT: return "QT";
        case AttackKind::PHS: return "PHS";
        case AttackKind::LP: return "LP";
        case AttackKind::BF: return "BF";
        case AttackKind::SM: return "SM";
        case AttackKind::SPAUG: return "SPAUG";
        case AttackKind::RS: return "RS";
        case AttackKind::ECHO: return "ECHO";
        case AttackKind::RV: return "RV";
        case AttackKind::SPD: return "SPD";
        case AttackKind::PCH: return "PCH";
        case AttackKind::SPCH: return "SPCH";
    }
    fail(ErrorKind::argument, "attack_kind_name: unknown kind");
}

inline AttackKind attack_kind_from_name(const std::string& s) {
    for (AttackKind k : all_attack_kinds())
        if (attack_kind_name(k) == s) return k;
    fail(ErrorKind::argument, "attack_kind_from_name: unknown kind " + s);
}

inline std::string attack_category_name(AttackCategory c) {
    switch (c) {
        case AttackCategory::Origin: return "Origin";
        case AttackCategory::BasicNoise: return "Basic/Noise";
        case AttackCategory::Filter: return "Filter";
        case AttackCategory::TimePitch: return "Time/Pitch";
    }
    fail(ErrorKind::argument, "attack_category_name: unknown category");
}

inline AttackCategory category_of_kind(AttackKind k) {
    for (auto c : {AttackCategory::BasicNoise, AttackCategory::Filter,
                   AttackCategory::TimePitch}) {
        const auto& m = category_members(c);
        if (std::find(m.begin(), m.end(), k) != m.end()) return c;
    }
    fail(ErrorKind::argument, "category_of_kind: unknown kind");
}

// kind + named parameters + a seed for any noise realization; params use a
// sorted map so serialized specs are byte-stable
struct AttackSpec {
    AttackKind kind;
    std::uint64_t seed = 0;
    std::map<std::string, double> params;

    double param(const std::string& name) const {
        auto it = params.find(name);
        require(it != params.end(), ErrorKind::argument,
                "attack spec missing parameter " + name +
                    " for kind " + attack_kind_name(kind));
        return it->second;
    }
};

inline AttackSpec sample_attack_spec(AttackKind kind, std::uint64_t rng_seed) {
    Rng rng(derive_seed(rng_seed, "attack_params", static_cast<std::size_t>(kind)));
    AttackSpec s;
    s.kind = kind;
    s.seed = derive_seed(rng_seed, "attack_noise", static_cast<std::size_t>(kind));
    switch (kind) {
        case AttackKind::N:
            s.params["snr_db"] = rng.uniform(20.0, 40.0);
            break;
        case AttackKind::PK:
            s.params["snr_db"] = rng.uniform(20.0, 40.0);
            break;
        case AttackKind::SP:
            s.params["fraction"] = 0.001;
            break;
        case AttackKind::AMP: {
            double g = 0.0;
            while (std::abs(g) < 0.1) g = rng.uniform(-1.0, 1.0);
            s.params["gain"] = g;
            break;
        }
        case AttackKind::BST:
            s.params["gain"] = 1.2;
            break;
        case AttackKind::DK:
            s.params["gain"] = 0.8;
            break;
        case AttackKind::QT: {
            const int depths[3] = {8, 10, 12};
            s.params["bits"] = depths[rng.uniform_int(0, 2)];
            break;
        }
        case AttackKind::PHS:
            s.params["theta"] = rng.uniform(-M_PI, M_PI);
            break;
        case AttackKind::LP:
            s.params["cutoff_hz"] = rng.uniform(3000.0, 6000.0);
            s.params["q"] = 0.707;
            break;
        case AttackKind::BF:
            s.params["center_hz"] = rng.uniform(300.0, 4000.0);
            s.params["q"] = rng.uniform(0.7, 2.0);
            break;
        case AttackKind::SM:
            s.params["window"] = rng.uniform_int(2, 10);
            break;
        case AttackKind::SPAUG:
            s.params["time_stripes"] = rng.uniform_int(1, 3);
            s.params["freq_stripes"] = rng.uniform_int(1, 3);
            break;
        case AttackKind::RS: {
            const int rates[4] = {16000, 22050, 24000, 32000};
            s.params["rate"] = rates[rng.uniform_int(0, 3)];
            break;
        }
        case AttackKind::ECHO:
            s.params["alpha"] = 0.3;
            s.params["delay"] = 4410;
            break;
        case AttackKind::RV:
            s.params["rt60_s"] = rng.uniform(0.2, 0.6);
            break;
        case AttackKind::SPD:
            s.params["speed"] = rng.uniform(0.9, 1.1);
            break;
        case AttackKind::PCH:
            s.params["semitones"] = rng.uniform(-2.0, 2.0);
            break;
        case AttackKind::SPCH:
            s.params["speed"] = rng.uniform(0.9, 1.1);
            s.params["semitones"] = rng.uniform(-2.0, 2.0);
            break;
    }
    return s;
}

namespace attack_detail {

// RBJ audio-EQ biquads, direct form I
struct BiquadCoeffs {
    double b0, b1, b2, a1, a2;

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(x.size());
        double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = b0 * x[i] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x[i];
            y2 = y1;
            y1 = v;
            y[i] = v;
        }
        return y;
    }
};

inline BiquadCoeffs lowpass(double fc, double q, double fs) {
    double w = 2.0 * M_PI * fc / fs;
    double alpha = std::sin(w) / (2.0 * q);
    double c = std::cos(w);
    double a0 = 1.0 + alpha;
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0,
            -2.0 * c / a0, (1.0 - alpha) / a0};
}

inline BiquadCoeffs bandpass(double fc, double q, double fs) {
    // constant 0 dB peak gain
    double w = 2.0 * M_PI * fc / fs;
    double alpha = std::sin(w) / (2.0 * q);
    double c = std::cos(w);
    double a0 = 1.0 + alpha;
    return {alpha / a0, 0.0, -alpha / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
}

inline double rms_power(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc / std::max<std::size_t>(x.size(), 1);
}

// add a noise vector at the requested SNR relative to the signal power
inline void mix_at_snr(std::vector<double>& x, const std::vector<double>& noise,
                       double snr_db) {
    double px = rms_power(x), pn = rms_power(noise);
    require(pn > 0.0, ErrorKind::numeric, "mix_at_snr: zero-power noise");
    double g = std::sqrt(px * std::pow(10.0, -snr_db / 10.0) / pn);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += g * noise[i];
}

// Paul Kellet's economy pink filter on white gaussian noise
inline std::vector<double> pink_noise(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> p(n);
    double b0 = 0, b1 = 0, b2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double w = rng.gaussian();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        p[i] = b0 + b1 + b2 + w * 0.1848;
    }
    double peak = 0.0;
    for (double v : p) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : p) v /= peak;
    return p;
}

// global phase rotation of the analytic signal, via a zero-padded FFT
inline std::vector<double> phase_rotate(const std::vector<double>& x, double theta) {
    std::size_t n = 1;
    while (n < x.size()) n <<= 1;
    std::vector<cplx> z(n, cplx(0.0, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = cplx(x[i], 0.0);
    fft_inplace(z, false);
    cplx rot = std::polar(1.0, theta);
    for (std::size_t k = 1; k < n / 2; ++k) {
        z[k] *= rot;
        z[n - k] = std::conj(z[k]);
    }
    z[0] *= std::cos(theta);
    z[n / 2] *= std::cos(theta);
    fft_inplace(z, true);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = z[i].real();
    return y;
}

inline std::vector<double> fft_convolve(const std::vector<double>& x,
                                        const std::vector<double>& h,
                                        std::size_t out_len) {
    std::size_t need = x.size() + h.size() - 1;
    std::size_t n = 1;
    while (n < need) n <<= 1;
    std::vector<double> xa(n, 0.0), ha(n, 0.0);
    std::copy(x.begin(), x.end(), xa.begin());
    std::copy(h.begin(), h.end(), ha.begin());
    auto X = rfft(xa);
    auto H = rfft(ha);
    for (std::size_t k = 0; k < X.size(); ++k) X[k] *= H[k];
    std::vector<double> full = irfft(X, n);
    full.resize(out_len);
    return full;
}

}  // namespace attack_detail

inline AudioBuffer apply_attack(const AudioBuffer& in, const AttackSpec& spec) {
    using namespace attack_detail;
    check_nonempty(in, "apply_attack");
    AudioBuffer out = in;
    std::vector<double>& x = out.samples;
    switch (spec.kind) {
        case AttackKind::N: {
            Rng rng(spec.seed);
            std::vector<double> noise(x.size());
            for (double& v : noise) v = rng.gaussian();
            mix_at_snr(x, noise, spec.param("snr_db"));
            break;
        }
        case AttackKind::PK: {
            std::vector<double> noise = pink_noise(x.size(), spec.seed);
            mix_at_snr(x, noise, spec.param("snr_db"));
            break;
        }
        case AttackKind::SP: {
            double frac = spec.param("fraction");
            require(frac >= 0.0 && frac <= 1.0, ErrorKind::argument,
                    "SP: fraction out of range");
            std::size_t kill = static_cast<std::size_t>(std::lround(frac * x.size()));
            Rng rng(spec.seed);
            for (std::size_t i = 0; i < kill; ++i)
                x[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1))] = 0.0;
            break;
        }
        case AttackKind::AMP: {
            double g = spec.param("gain");
            require(std::abs(g) >= 0.1 && std::abs(g) <= 1.0, ErrorKind::argument,
                    "AMP: gain out of range");
            for (double& v : x) v *= g;
            break;
        }
        case AttackKind::BST:
        case AttackKind::DK: {
            double g = spec.param("gain");
            for (double& v : x) v *= g;
            break;
        }
        case AttackKind::QT: {
            int bits = static_cast<int>(spec.param("bits"));
            require(bits >= 2 && bits <= 16, ErrorKind::argument, "QT: bad bit depth");
            double q = static_cast<double>((1 << (bits - 1)) - 1);
            for (double& v : x)
                v = std::round(std::clamp(v, -1.0, 1.0) * q) / q;
            break;
        }
        case AttackKind::PHS:
            x = phase_rotate(x, spec.param("theta"));
            break;
        case AttackKind::LP:
            x = lowpass(spec.param("cutoff_hz"), spec.param("q"), in.sample_rate)
                    .apply(x);
            break;
        case AttackKind::BF:
            x = bandpass(spec.param("center_hz"), spec.param("q"), in.sample_rate)
                    .apply(x);
            break;
        case AttackKind::SM: {
            int w = static_cast<int>(spec.param("window"));
            require(w >= 2 && w <= 10, ErrorKind::argument, "SM: bad window");
            std::vector<double> y(x.size(), 0.0);
            for (std::size_t i = 0; i < x.size(); ++i) {
                int lo = static_cast<int>(i) - w / 2;
                double acc = 0.0;
                for (int k = lo; k < lo + w; ++k)
                    if (k >= 0 && k < static_cast<int>(x.size())) acc += x[k];
                y[i] = acc / w;
            }
            x = std::move(y);
            break;
        }
        case AttackKind::SPAUG: {
            StftConfig cfg{1024, 256};
            Spectrogram s = stft(out, cfg);
            Rng rng(spec.seed);
            int kt = static_cast<int>(spec.param("time_stripes"));
            int kf = static_cast<int>(spec.param("freq_stripes"));
            // 50 ms of frames, 500 Hz of bins
            std::size_t max_tw = std::max<std::size_t>(
                1, static_cast<std::size_t>(0.050 * in.sample_rate / cfg.hop));
            std::size_t max_fw = std::max<std::size_t>(
                1, static_cast<std::size_t>(500.0 * cfg.fft_size / in.sample_rate));
            for (int i = 0; i < kt; ++i) {
                std::size_t w = static_cast<std::size_t>(
                    rng.uniform_int(1, static_cast<std::int64_t>(max_tw)));
                std::size_t t0 = static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<std::int64_t>(s.n_frames - w)));
                for (std::size_t t = t0; t < t0 + w; ++t)
                    for (std::size_t f = 0; f < s.n_bins; ++f)
                        s.at(t, f) = cplx(0.0, 0.0);
            }
            for (int i = 0; i < kf; ++i) {
                std::size_t w = static_cast<std::size_t>(
                    rng.uniform_int(1, static_cast<std::int64_t>(max_fw)));
                std::size_t f0 = static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<std::int64_t>(s.n_bins - w)));
                for (std::size_t t = 0; t < s.n_frames; ++t)
                    for (std::size_t f = f0; f < f0 + w; ++f)
                        s.at(t, f) = cplx(0.0, 0.0);
            }
            out = istft(s, in.size());
            out.sample_rate = in.sample_rate;
            break;
        }
        case AttackKind::RS: {
            int rate = static_cast<int>(spec.param("rate"));
            require(rate >= 8000 && rate < in.sample_rate, ErrorKind::argument,
                    "RS: bad rate");
            AudioBuffer down = resample_to_rate(out, rate);
            out.samples = sinc_resample(
                down.samples, static_cast<double>(in.sample_rate) / rate, in.size());
            break;
        }
        case AttackKind::ECHO: {
            double alpha = spec.param("alpha");
            std::size_t d = static_cast<std::size_t>(spec.param("delay"));
            require(d > 0 && d < x.size(), ErrorKind::argument, "ECHO: bad delay");
            for (std::size_t i = x.size(); i-- > d;) x[i] += alpha * x[i - d];
            break;
        }
        case AttackKind::RV: {
            double rt60 = spec.param("rt60_s");
            require(rt60 > 0.0, ErrorKind::argument, "RV: bad rt60");
            std::size_t L = static_cast<std::size_t>(rt60 * in.sample_rate);
            std::vector<double> h(L, 0.0);
            Rng rng(spec.seed);
            h[0] = 1.0;  // direct path
            for (std::size_t t = 1; t < L; ++t)
                h[t] = 0.02 * rng.gaussian() *
                       std::pow(10.0, -3.0 * static_cast<double>(t) /
                                          (rt60 * in.sample_rate));
            x = fft_convolve(x, h, x.size());
            break;
        }
        case AttackKind::SPD:
            out = pv_speed(out, spec.param("speed"));
            break;
        case AttackKind::PCH:
            out = pv_pitch_shift(out, spec.param("semitones"));
            break;
        case AttackKind::SPCH:
            out = pv_speed_pitch(out, spec.param("speed"), spec.param("semitones"));
            break;
    }
    require(all_finite(out), ErrorKind::numeric, "apply_attack: non-finite output");
    return out;
}

struct CategoryResult {
    AudioBuffer audio;
    std::optional<AttackSpec> spec;  // empty for Origin
};

inline CategoryResult apply_category(const AudioBuffer& in, AttackCategory category,
                                     std::uint64_t rng_seed) {
    if (category == AttackCategory::Origin) return {in, std::nullopt};
    const auto& members = category_members(category);
    Rng rng(derive_seed(rng_seed, "attack_pick", 0));
    AttackKind kind = members[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1))];
    AttackSpec spec = sample_attack_spec(kind, rng_seed);
    return {apply_attack(in, spec), spec};
}

}  // namespace stemmark
