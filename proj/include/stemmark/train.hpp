#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stemmark/attacks.hpp"
#include "stemmark/audio.hpp"
#include "stemmark/codec.hpp"
#include "stemmark/common.hpp"
#include "stemmark/loudness.hpp"
#include "stemmark/metrics.hpp"
#include "stemmark/separator.hpp"
#include "stemmark/stft.hpp"
#include "stemmark/synth.hpp"

namespace stemmark {

// ---------------------------------------------------------------------------
// Trainable codec: per-pattern gains, per-bin band weights, decoder affine

struct TrainableCodec {
    CodecConfig cfg;
    std::size_t n_bins = 0;
    std::vector<double> gains;         // [32], >= 0
    std::vector<double> band_weights;  // [n_bins], in [0, 1]
    double dec_scale = 1.0;
    double dec_bias = 0.0;
    double pattern_norm0 = 0.0;  // frozen score normalizer from the init mask

    static TrainableCodec reference(const CodecConfig& cfg = CodecConfig{}) {
        TrainableCodec c;
        c.cfg = cfg;
        c.n_bins = cfg.stft.fft_size / 2 + 1;
        c.gains.assign(kPayloadBits, cfg.default_gamma);
        // reuse the bank construction for the band mask so the two stay in sync
        WatermarkKey dummy{};
        PatternBank b = derive_pattern_bank(dummy, cfg);
        c.band_weights = b.band_mask;
        c.pattern_norm0 = b.pattern_norm;
        return c;
    }

    std::size_t n_params() const { return kPayloadBits + n_bins + 2; }

    std::vector<double> pack() const {
        std::vector<double> p;
        p.reserve(n_params());
        p.insert(p.end(), gains.begin(), gains.end());
        p.insert(p.end(), band_weights.begin(), band_weights.end());
        p.push_back(dec_scale);
        p.push_back(dec_bias);
        return p;
    }

    void unpack(const std::vector<double>& p) {
        require(p.size() == n_params(), ErrorKind::argument,
                "TrainableCodec::unpack: size mismatch");
        std::copy(p.begin(), p.begin() + kPayloadBits, gains.begin());
        std::copy(p.begin() + kPayloadBits, p.begin() + kPayloadBits + n_bins,
                  band_weights.begin());
        dec_scale = p[kPayloadBits + n_bins];
        dec_bias = p[kPayloadBits + n_bins + 1];
    }

    // clip back to the constraint set after an optimizer step
    void project() {
        for (double& g : gains) g = std::max(g, 0.0);
        for (double& w : band_weights) w = std::clamp(w, 0.0, 1.0);
    }

    void save(const std::string& path) const {
        nlohmann::json j;
        j["format"] = "stemmark-codec";
        j["version"] = 1;
        j["fft_size"] = cfg.stft.fft_size;
        j["hop"] = cfg.stft.hop;
        j["gains"] = gains;
        j["band_weights"] = band_weights;
        j["dec_scale"] = dec_scale;
        j["dec_bias"] = dec_bias;
        j["pattern_norm0"] = pattern_norm0;
        std::ofstream f(path, std::ios::trunc);
        require(f.good(), ErrorKind::io, "TrainableCodec::save: cannot open " + path);
        f << j.dump();
    }

    static TrainableCodec load(const std::string& path,
                               const CodecConfig& cfg = CodecConfig{}) {
        std::ifstream f(path);
        require(f.good(), ErrorKind::io, "TrainableCodec::load: cannot open " + path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, std::string("TrainableCodec::load: ") + e.what());
        }
        require(j.value("format", "") == "stemmark-codec", ErrorKind::format,
                "TrainableCodec::load: not a codec checkpoint");
        require(j.value("version", 0) == 1, ErrorKind::format,
                "TrainableCodec::load: unsupported version");
        TrainableCodec c = reference(cfg);
        require(j.at("fft_size").get<std::size_t>() == cfg.stft.fft_size &&
                    j.at("hop").get<std::size_t>() == cfg.stft.hop,
                ErrorKind::format, "TrainableCodec::load: geometry mismatch");
        c.gains = j.at("gains").get<std::vector<double>>();
        c.band_weights = j.at("band_weights").get<std::vector<double>>();
        require(c.gains.size() == kPayloadBits && c.band_weights.size() == c.n_bins,
                ErrorKind::format, "TrainableCodec::load: parameter shape mismatch");
        c.dec_scale = j.at("dec_scale").get<double>();
        c.dec_bias = j.at("dec_bias").get<double>();
        c.pattern_norm0 = j.at("pattern_norm0").get<double>();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Differentiable embed: same forward as embed_segment_with_bank, but the
// final phase field is cached so backward (and frozen replays for finite
// differences) treat it as a constant. Straight-through on phase.

struct EmbedCache {
    std::size_t n_frames = 0, n_bins = 0;
    std::vector<double> host_mag;  // |X| of the clean segment
    std::vector<double> shape;     // perceptual depth factor c, detached
    std::vector<double> m;         // modulation field at forward params
    // last analysis spectrogram of the Griffin-Lim loop; frozen replays
    // rescale exactly these frames so the phase is straight-through
    std::vector<cplx> last_spec;

    cplx unit(std::size_t i) const {
        double a = std::abs(last_spec[i]);
        return a > 0.0 ? last_spec[i] / a : cplx(1.0, 0.0);
    }
};

inline AudioBuffer codec_embed_forward(const TrainableCodec& tc,
                                       const PatternBank& bank,
                                       const Payload& payload,
                                       const AudioBuffer& segment,
                                       EmbedCache& cache) {
    const CodecConfig& cfg = tc.cfg;
    require(segment.size() == cfg.segment_len, ErrorKind::argument,
            "codec_embed_forward: bad segment length");
    cache.m = modulation_field(bank, payload, tc.gains, tc.band_weights);

    bool frozen = !cache.last_spec.empty();
    Spectrogram spec = stft(segment, cfg.stft);
    cache.n_frames = spec.n_frames;
    cache.n_bins = spec.n_bins;

    if (!frozen) {
        cache.host_mag = magnitude(spec);
        // depth shaping, identical to the reference embed
        double qref = 0.0;
        std::size_t nq = 0;
        for (std::size_t t = 0; t < spec.n_frames; ++t)
            for (std::size_t f = 0; f < spec.n_bins; ++f)
                if (bank.band_mask[f] != 0.0) {
                    double a = cache.host_mag[t * spec.n_bins + f];
                    qref += a * a;
                    ++nq;
                }
        qref /= std::max<std::size_t>(nq, 1);
        cache.shape.assign(spec.frames.size(), 1.0);
        for (std::size_t t = 0; t < spec.n_frames; ++t)
            for (std::size_t f = 0; f < spec.n_bins; ++f)
                if (bank.band_mask[f] != 0.0) {
                    std::size_t i = t * spec.n_bins + f;
                    double a = cache.host_mag[i];
                    cache.shape[i] = std::min(
                        std::max(std::sqrt(qref / (a * a + 1e-12 * qref)), 1.0),
                        cfg.shape_max);
                }
    }

    std::vector<double> target(spec.frames.size());
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i] = cache.host_mag[i] *
                    std::max(1.0 + cache.m[i] * cache.shape[i], 0.0);

    if (frozen) {
        Spectrogram z = spec;
        for (std::size_t i = 0; i < z.frames.size(); ++i) {
            double a = std::abs(cache.last_spec[i]);
            z.frames[i] = a > 0.0 ? cache.last_spec[i] * (target[i] / a)
                                  : cplx(target[i], 0.0);
        }
        AudioBuffer out = istft(z, segment.size());
        out.sample_rate = segment.sample_rate;
        return out;
    }

    AudioBuffer out;
    for (std::size_t it = 0; it <= cfg.embed_iters; ++it) {
        Spectrogram z = spec;
        for (std::size_t i = 0; i < z.frames.size(); ++i) {
            double a = std::abs(z.frames[i]);
            z.frames[i] = a > 0.0 ? z.frames[i] * (target[i] / a)
                                  : cplx(target[i], 0.0);
        }
        if (it == cfg.embed_iters) {
            cache.last_spec.assign(spec.frames.begin(), spec.frames.end());
            out = istft(z, segment.size());
        } else {
            out = istft(z, segment.size());
            spec = stft(out, cfg.stft);
        }
    }
    out.sample_rate = segment.sample_rate;
    return out;
}

// d_out is dL/d(watermarked segment); accumulates into dgains/dweights.
inline void codec_embed_backward(const TrainableCodec& tc, const PatternBank& bank,
                                 const Payload& payload, const EmbedCache& cache,
                                 const std::vector<double>& d_out,
                                 std::vector<double>& dgains,
                                 std::vector<double>& dweights) {
    const CodecConfig& cfg = tc.cfg;
    Spectrogram dz = istft_adjoint(d_out, cache.n_frames, cfg.stft);
    std::size_t cells = cache.n_frames * cache.n_bins;

    // through target = |X| * relu(1 + m c): dm = Re(dz conj(u)) |X| c [active]
    std::vector<double> dm(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        bool active = 1.0 + cache.m[i] * cache.shape[i] > 0.0;
        cplx u = cache.unit(i);
        double dt = dz.frames[i].real() * u.real() + dz.frames[i].imag() * u.imag();
        dm[i] = active ? dt * cache.host_mag[i] * cache.shape[i] : 0.0;
    }

    // m = (1/32) sum_b s_b g_b P_b w_f
    for (std::size_t b = 0; b < kPayloadBits; ++b) {
        double s = (payload.bits[b] ? 1.0 : -1.0) / static_cast<double>(kPayloadBits);
        const signed char* p = &bank.patterns[b * cells];
        double acc_g = 0.0;
        for (std::size_t t = 0; t < cache.n_frames; ++t)
            for (std::size_t f = 0; f < cache.n_bins; ++f) {
                std::size_t i = t * cache.n_bins + f;
                double common = s * p[i] * dm[i];
                acc_g += common * tc.band_weights[f];
                dweights[f] += common * tc.gains[b];
            }
        dgains[b] += acc_g;
    }
}

// ---------------------------------------------------------------------------
// Differentiable decode: standardized log-magnitude residual, correlation
// scores through the frozen normalizer, then the decoder affine + BCE.

struct DecodeCache {
    Spectrogram spec;
    std::vector<double> mag;
    std::vector<double> r1;  // per-bin standardized residual
    std::vector<double> sd;  // per-bin smoothed std
    std::vector<double> scores;
};

inline std::vector<double> codec_decode_scores(const TrainableCodec& tc,
                                               const PatternBank& bank,
                                               const AudioBuffer& est_seg,
                                               DecodeCache& cache) {
    const CodecConfig& cfg = tc.cfg;
    require(est_seg.size() == cfg.segment_len, ErrorKind::argument,
            "codec_decode_scores: bad segment length");
    cache.spec = stft(est_seg, cfg.stft);
    cache.mag = magnitude(cache.spec);
    std::size_t T = cache.spec.n_frames, F = cache.spec.n_bins;

    std::vector<double> r(cache.mag.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::log(cache.mag[i] + kLogEps);

    cache.sd.assign(F, 1.0);
    for (std::size_t f = 0; f < F; ++f) {
        double mu = 0.0;
        for (std::size_t t = 0; t < T; ++t) mu += r[t * F + f];
        mu /= T;
        double var = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            double d = r[t * F + f] - mu;
            var += d * d;
        }
        var /= T;
        cache.sd[f] = std::sqrt(var + cfg.std_floor * cfg.std_floor);
        for (std::size_t t = 0; t < T; ++t)
            r[t * F + f] = (r[t * F + f] - mu) / cache.sd[f];
    }
    cache.r1 = r;

    double nb = 0.0;
    for (std::size_t f = 0; f < F; ++f) nb += bank.band_mask[f];
    for (std::size_t t = 0; t < T; ++t) {
        double nu = 0.0;
        for (std::size_t f = 0; f < F; ++f) nu += r[t * F + f] * bank.band_mask[f];
        nu /= nb;
        for (std::size_t f = 0; f < F; ++f) r[t * F + f] -= nu;
    }

    std::size_t cells = T * F;
    cache.scores.assign(kPayloadBits, 0.0);
    for (std::size_t b = 0; b < kPayloadBits; ++b) {
        const signed char* p = &bank.patterns[b * cells];
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f) {
                std::size_t i = t * F + f;
                acc += r[i] * p[i] * bank.band_mask[f];
            }
        cache.scores[b] = acc / tc.pattern_norm0;
    }
    return cache.scores;
}

// dscores -> dL/d(est segment samples)
inline std::vector<double> codec_decode_backward(const TrainableCodec& tc,
                                                 const PatternBank& bank,
                                                 const DecodeCache& cache,
                                                 const std::vector<double>& dscores) {
    std::size_t T = cache.spec.n_frames, F = cache.spec.n_bins;
    std::size_t cells = T * F;

    std::vector<double> dr2(cells, 0.0);
    for (std::size_t b = 0; b < kPayloadBits; ++b) {
        const signed char* p = &bank.patterns[b * cells];
        double s = dscores[b] / tc.pattern_norm0;
        if (s == 0.0) continue;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f) {
                std::size_t i = t * F + f;
                dr2[i] += s * p[i] * bank.band_mask[f];
            }
    }

    // adjoint of the per-frame in-band mean removal
    double nb = 0.0;
    for (std::size_t f = 0; f < F; ++f) nb += bank.band_mask[f];
    std::vector<double> dr1(cells);
    for (std::size_t t = 0; t < T; ++t) {
        double sum = 0.0;
        for (std::size_t f = 0; f < F; ++f) sum += dr2[t * F + f];
        for (std::size_t f = 0; f < F; ++f)
            dr1[t * F + f] = dr2[t * F + f] - bank.band_mask[f] * sum / nb;
    }

    // backward through per-bin standardization (batchnorm-style over time)
    std::vector<double> dr0(cells);
    for (std::size_t f = 0; f < F; ++f) {
        double mean_dy = 0.0, mean_dyy = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            mean_dy += dr1[t * F + f];
            mean_dyy += dr1[t * F + f] * cache.r1[t * F + f];
        }
        mean_dy /= T;
        mean_dyy /= T;
        for (std::size_t t = 0; t < T; ++t)
            dr0[t * F + f] = (dr1[t * F + f] - mean_dy -
                              cache.r1[t * F + f] * mean_dyy) /
                             cache.sd[f];
    }

    // through log(|Z| + eps) and the magnitude
    Spectrogram dz = cache.spec;  // reuse geometry
    for (std::size_t i = 0; i < cells; ++i) {
        double mag = cache.mag[i];
        double dmag = dr0[i] / (mag + kLogEps);
        dz.frames[i] = mag > 0.0 ? cache.spec.frames[i] * (dmag / mag)
                                 : cplx(dmag, 0.0);
    }
    return stft_adjoint(dz, tc.cfg.segment_len);
}

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
    double w_bce = 100.0;
    double lambda_stft = 0.01;
    double lambda_spec = 0.01;
    double w_perc = 0.0;
};

struct LossBreakdown {
    double total = 0.0;
    double bce = 0.0;
    double stft = 0.0;
    double spec = 0.0;
    double nmr = 0.0;
};

inline double combine_losses(const LossWeights& w, LossBreakdown& b) {
    auto check = [](double v, const char* name) {
        require(std::isfinite(v), ErrorKind::numeric,
                std::string("total_loss: non-finite component ") + name);
    };
    check(b.bce, "bce");
    check(b.stft, "stft");
    check(b.spec, "spec");
    check(b.nmr, "nmr");
    b.total = w.w_bce * b.bce + w.lambda_stft * b.stft + w.lambda_spec * b.spec +
              w.w_perc * b.nmr;
    return b.total;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// mean BCE of sigmoid(a*score + c) against the payload bits
inline double bce_loss(const TrainableCodec& tc, const std::vector<double>& scores,
                       const Payload& payload) {
    double acc = 0.0;
    for (std::size_t b = 0; b < kPayloadBits; ++b) {
        double z = tc.dec_scale * scores[b] + tc.dec_bias;
        double y = payload.bits[b];
        // numerically stable: log(1+e^-|z|) + max(z,0) - y z
        acc += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y * z;
    }
    return acc / kPayloadBits;
}

// dL/dscore_b for the mean BCE above; also accumulates affine grads
inline std::vector<double> bce_backward(const TrainableCodec& tc,
                                        const std::vector<double>& scores,
                                        const Payload& payload, double upstream,
                                        double& dscale, double& dbias) {
    std::vector<double> ds(kPayloadBits, 0.0);
    for (std::size_t b = 0; b < kPayloadBits; ++b) {
        double z = tc.dec_scale * scores[b] + tc.dec_bias;
        double g = (sigmoid(z) - payload.bits[b]) * upstream / kPayloadBits;
        ds[b] = g * tc.dec_scale;
        dscale += g * scores[b];
        dbias += g;
    }
    return ds;
}

// Eq. 3: waveform L1 between separated estimates and stop-gradient targets.
inline double separator_loss(const std::array<AudioBuffer, kNumStems>& estimates,
                             const std::array<AudioBuffer, kNumStems>& targets) {
    double acc = 0.0;
    for (std::size_t s = 0; s < kNumStems; ++s) {
        require(estimates[s].size() == targets[s].size(), ErrorKind::argument,
                "separator_loss: length mismatch");
        double l1 = 0.0;
        for (std::size_t i = 0; i < estimates[s].size(); ++i)
            l1 += std::abs(estimates[s].samples[i] - targets[s].samples[i]);
        acc += l1 / estimates[s].size();
    }
    return acc;
}

// gradient of multi_res_stft_loss + mel_l1 + nmr w.r.t. the watermarked
// segment, scaled by the given weights; accumulated into d_wm
inline void spectral_losses_backward(const AudioBuffer& seg, const AudioBuffer& wm,
                                     double w_stft, double w_spec, double w_nmr,
                                     std::vector<double>& d_wm) {
    MelConfig mc;
    std::size_t K = mc.resolutions.size();
    for (const auto& res : mc.resolutions) {
        StftConfig sc{res.fft_size, res.hop};
        Spectrogram A = stft(seg, sc);
        Spectrogram B = stft(wm, sc);
        std::size_t cells = B.frames.size();
        std::vector<double> dmag(cells, 0.0);

        if (w_stft != 0.0) {
            for (std::size_t i = 0; i < cells; ++i) {
                double la = std::log(std::abs(A.frames[i]) + kLogEps);
                double lb = std::log(std::abs(B.frames[i]) + kLogEps);
                double sgn = lb > la ? 1.0 : (lb < la ? -1.0 : 0.0);
                dmag[i] += w_stft * sgn /
                           ((std::abs(B.frames[i]) + kLogEps) * cells * K);
            }
        }
        if (w_spec != 0.0) {
            std::vector<double> magA = magnitude(A), magB = magnitude(B);
            std::vector<double> fb = mel_filterbank(res.n_mels, B.n_bins,
                                                    res.fft_size, kCanonicalRate);
            std::vector<double> ma = mel_project(magA, A.n_frames, A.n_bins,
                                                 res.n_mels, res.fft_size,
                                                 kCanonicalRate);
            std::vector<double> mb = mel_project(magB, B.n_frames, B.n_bins,
                                                 res.n_mels, res.fft_size,
                                                 kCanonicalRate);
            double norm = static_cast<double>(mb.size()) * K;
            for (std::size_t t = 0; t < B.n_frames; ++t)
                for (std::size_t m = 0; m < res.n_mels; ++m) {
                    double d = mb[t * res.n_mels + m] - ma[t * res.n_mels + m];
                    double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    if (sgn == 0.0) continue;
                    double up = w_spec * sgn / norm;
                    const double* w = &fb[m * B.n_bins];
                    for (std::size_t f = 0; f < B.n_bins; ++f)
                        dmag[t * B.n_bins + f] += up * w[f];
                }
        }

        Spectrogram dz = B;
        for (std::size_t i = 0; i < cells; ++i) {
            double mag = std::abs(B.frames[i]);
            dz.frames[i] = mag > 0.0 ? B.frames[i] * (dmag[i] / mag)
                                     : cplx(dmag[i], 0.0);
        }
        std::vector<double> dx = stft_adjoint(dz, wm.size());
        for (std::size_t i = 0; i < d_wm.size(); ++i) d_wm[i] += dx[i];
    }

    if (w_nmr != 0.0) {
        NmrConfig nc;
        AudioBuffer noise = wm;
        for (std::size_t i = 0; i < noise.size(); ++i)
            noise.samples[i] -= seg.samples[i];
        Spectrogram D = stft(noise, {nc.fft_size, nc.hop});
        std::vector<double> M = nmr_masking_thresholds(seg, nc);
        std::vector<std::size_t> map = nmr_detail::band_of_bin(
            D.n_bins, nc.fft_size, kCanonicalRate, nc.n_bands);
        double norm = static_cast<double>(D.n_frames * nc.n_bands);
        Spectrogram dz = D;
        for (std::size_t t = 0; t < D.n_frames; ++t)
            for (std::size_t f = 0; f < D.n_bins; ++f) {
                std::size_t i = t * D.n_bins + f;
                double dN = w_nmr / (norm * M[t * nc.n_bands + map[f]]);
                dz.frames[i] = 2.0 * D.frames[i] * dN;
            }
        std::vector<double> dx = stft_adjoint(dz, wm.size());
        for (std::size_t i = 0; i < d_wm.size(); ++i) d_wm[i] += dx[i];
    }
}

// ---------------------------------------------------------------------------
// Pipeline: embed -> splice -> normalize -> mix -> attack -> separate ->
// extract -> decode, over an analysis window around the segment.

enum class Wiring { sep_loss_only, sep_loss_plus_bce };

struct TrainConfig {
    std::size_t steps = 1200;
    std::size_t batch = 1;
    double lr_separator = 1e-4;
    double lr_codec = 1e-3;
    std::size_t attack_start_step = 400;
    std::size_t phase2_step = 400;
    Wiring wiring = Wiring::sep_loss_only;
    std::uint64_t seed = 0;
    SyntheticStemSet stems;
    SeparatorConfig sep;
    CodecConfig codec;
    std::size_t probe_every = 100;
    std::size_t probe_items = 8;
    std::size_t analysis_pad = 22050;  // 0.5 s of context either side
};

inline LossWeights phase_weights(const TrainConfig& cfg, std::size_t step) {
    LossWeights w;
    if (step >= cfg.phase2_step) {
        w.lambda_stft = 1.0;
        w.lambda_spec = 1.0;
        w.w_perc = 0.1;
    }
    return w;
}

struct ItemForward {
    StemPair pair;
    std::array<PatternBank, kNumStems> banks;
    std::array<Payload, kNumStems> payloads;
    std::array<AudioBuffer, kNumStems> seg, wm_seg;
    std::array<EmbedCache, kNumStems> ecache;
    std::array<double, kNumStems> lufs_gain{1.0, 1.0};
    std::array<AudioBuffer, kNumStems> norm_win;  // normalized stems, window
    AudioBuffer mix_win;                          // post-attack mixture window
    std::optional<AttackSpec> attack;
    std::size_t win_start = 0, win_len = 0, seg_off = 0;
    Spectrogram mix_spec;
    MlpSeparator::Forward sepfw;
    std::array<std::vector<double>, kNumStems> masks;
    std::array<AudioBuffer, kNumStems> est_win, est_seg;
    std::array<DecodeCache, kNumStems> dcache;
};

// Draw the per-item randomness: stems, locator, keys, payloads.
inline void item_inputs(const TrainConfig& cfg, std::uint64_t item_seed,
                        ItemForward& fw) {
    auto batch = synth_two_stem_batch(cfg.stems, 1, item_seed);
    fw.pair = batch[0];
    Rng kr(derive_seed(item_seed, "keys", 0));
    for (std::size_t s = 0; s < kNumStems; ++s) {
        WatermarkKey key = random_key(kr);
        fw.banks[s] = derive_pattern_bank(key, cfg.codec);
        fw.payloads[s] = Payload::random(kr);
    }
}

// Full forward pass. When `frozen` the caches (phases, LUFS gains, attack
// selection) already populated in fw are reused, which makes the map from
// parameters to losses smooth; used for finite-difference checks.
inline void pipeline_forward(const TrainConfig& cfg, const TrainableCodec& tc,
                             const MlpSeparator& sep, std::uint64_t item_seed,
                             bool use_attack, ItemForward& fw, bool frozen) {
    const std::size_t seg_len = cfg.codec.segment_len;
    const AudioBuffer* carriers[2] = {&fw.pair.stem_a, &fw.pair.stem_b};
    std::size_t carrier_len = fw.pair.stem_a.size();
    const SegmentLocator& loc = fw.pair.locator;

    fw.win_start = loc.start >= cfg.analysis_pad ? loc.start - cfg.analysis_pad : 0;
    std::size_t win_end = std::min(carrier_len, loc.start + seg_len + cfg.analysis_pad);
    fw.win_len = win_end - fw.win_start;
    fw.seg_off = loc.start - fw.win_start;

    fw.mix_win.samples.assign(fw.win_len, 0.0);
    for (std::size_t s = 0; s < kNumStems; ++s) {
        fw.seg[s] = crop_segment(*carriers[s], loc);
        fw.wm_seg[s] = codec_embed_forward(tc, fw.banks[s], fw.payloads[s],
                                           fw.seg[s], fw.ecache[s]);
        AudioBuffer full = splice_segment(*carriers[s], fw.wm_seg[s], loc);
        if (!frozen) fw.lufs_gain[s] = loudness_gain(full);
        fw.norm_win[s].samples.assign(fw.win_len, 0.0);
        for (std::size_t i = 0; i < fw.win_len; ++i) {
            double v = fw.lufs_gain[s] * full.samples[fw.win_start + i];
            fw.norm_win[s].samples[i] = v;
            fw.mix_win.samples[i] += v;
        }
    }

    if (use_attack) {
        if (!frozen) {
            Rng pick(derive_seed(item_seed, "attack_kind", 0));
            const auto& kinds = all_attack_kinds();
            AttackKind k = kinds[static_cast<std::size_t>(pick.uniform_int(
                0, static_cast<std::int64_t>(kinds.size()) - 1))];
            fw.attack = sample_attack_spec(k, derive_seed(item_seed, "attack", 0));
        }
        if (fw.attack) {
            AudioBuffer attacked = apply_attack(fw.mix_win, *fw.attack);
            if (attacked.size() != fw.win_len)  // SPD/SPCH/RS: restore length
                attacked.samples = sinc_resample(
                    attacked.samples,
                    static_cast<double>(fw.win_len) / attacked.size(), fw.win_len);
            fw.mix_win = attacked;
        }
    } else if (!frozen) {
        fw.attack.reset();
    }

    fw.mix_spec = stft(fw.mix_win, cfg.sep.stft);
    fw.sepfw = sep.forward_masks(fw.mix_spec);
    std::size_t T = fw.mix_spec.n_frames, F = fw.mix_spec.n_bins;
    for (std::size_t s = 0; s < kNumStems; ++s) {
        fw.masks[s].resize(T * F);
        Spectrogram z = fw.mix_spec;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f) {
                double m1 = fw.sepfw.mask1(f, t);
                double m = s == 0 ? m1 : 1.0 - m1;
                fw.masks[s][t * F + f] = m;
                z.frames[t * F + f] *= m;
            }
        fw.est_win[s] = istft(z, fw.win_len);
        fw.est_seg[s].samples.assign(
            fw.est_win[s].samples.begin() + fw.seg_off,
            fw.est_win[s].samples.begin() + fw.seg_off + seg_len);
        codec_decode_scores(tc, fw.banks[s], fw.est_seg[s], fw.dcache[s]);
    }
}

inline LossBreakdown item_total_loss(const TrainConfig& cfg, const TrainableCodec& tc,
                                     const ItemForward& fw, const LossWeights& w) {
    LossBreakdown b;
    for (std::size_t s = 0; s < kNumStems; ++s) {
        b.bce += bce_loss(tc, fw.dcache[s].scores, fw.payloads[s]) / kNumStems;
        b.stft += multi_res_stft_loss(fw.seg[s], fw.wm_seg[s]) / kNumStems;
        b.spec += mel_l1_loss(fw.seg[s], fw.wm_seg[s]) / kNumStems;
        if (w.w_perc != 0.0)
            b.nmr += nmr_ratio(fw.seg[s], fw.wm_seg[s]) / kNumStems;
    }
    combine_losses(w, b);
    return b;
}

inline double item_sep_loss(const ItemForward& fw) {
    return separator_loss(fw.est_win, fw.norm_win);
}

struct ItemGrads {
    std::vector<double> codec;          // d L_total
    std::vector<double> sep_from_bce;   // d L_total via the BCE path
    std::vector<double> sep_from_lsep;  // d L_sep
};

// helper: complex spectrogram gradient -> mask + mixture-spec accumulation
inline void mask_product_backward(const Spectrogram& mix_spec,
                                  const std::vector<double>& mask,
                                  const Spectrogram& dz,
                                  std::vector<double>& dmask, Spectrogram& dmix) {
    for (std::size_t i = 0; i < mix_spec.frames.size(); ++i) {
        dmask[i] += dz.frames[i].real() * mix_spec.frames[i].real() +
                    dz.frames[i].imag() * mix_spec.frames[i].imag();
        dmix.frames[i] += mask[i] * dz.frames[i];
    }
}

inline ItemGrads pipeline_backward(const TrainConfig& cfg, const TrainableCodec& tc,
                                   const MlpSeparator& sep, const ItemForward& fw,
                                   const LossWeights& w, bool total_path = true) {
    const std::size_t seg_len = cfg.codec.segment_len;
    std::size_t T = fw.mix_spec.n_frames, F = fw.mix_spec.n_bins;
    ItemGrads g;
    g.codec.assign(tc.n_params(), 0.0);
    g.sep_from_bce.assign(sep.n_params(), 0.0);
    g.sep_from_lsep.assign(sep.n_params(), 0.0);

    double* dgains = g.codec.data();
    double* dweights = g.codec.data() + kPayloadBits;
    double& dscale = g.codec[kPayloadBits + tc.n_bins];
    double& dbias = g.codec[kPayloadBits + tc.n_bins + 1];

    // ---- L_total: BCE path ----
    Spectrogram dmix_spec = fw.mix_spec;
    for (auto& c : dmix_spec.frames) c = cplx(0.0, 0.0);
    Eigen::MatrixXd dmask1 = Eigen::MatrixXd::Zero(F, T);

    for (std::size_t s = 0; total_path && s < kNumStems; ++s) {
        std::vector<double> ds =
            bce_backward(tc, fw.dcache[s].scores, fw.payloads[s],
                         w.w_bce / kNumStems, dscale, dbias);
        std::vector<double> d_est_seg =
            codec_decode_backward(tc, fw.banks[s], fw.dcache[s], ds);
        std::vector<double> d_est_win(fw.win_len, 0.0);
        std::copy(d_est_seg.begin(), d_est_seg.end(),
                  d_est_win.begin() + fw.seg_off);
        Spectrogram dz = istft_adjoint(d_est_win, T, cfg.sep.stft);
        std::vector<double> dmask(T * F, 0.0);
        mask_product_backward(fw.mix_spec, fw.masks[s], dz, dmask, dmix_spec);
        double sign = s == 0 ? 1.0 : -1.0;  // mask2 = 1 - mask1
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f)
                dmask1(f, t) += sign * dmask[t * F + f];
    }

    std::vector<double> dmix;
    if (total_path) {
        // mask MLP: parameter grads (BCE path) and gradient into the features
        Eigen::MatrixXd dfeats = sep.backward_masks(fw.sepfw, dmask1, g.sep_from_bce);
        std::vector<double> dlogmag = sep.dfeats_to_dlogmag(dfeats, T);
        for (std::size_t i = 0; i < dmix_spec.frames.size(); ++i) {
            double mag = std::abs(fw.mix_spec.frames[i]);
            double dmag = dlogmag[i] / (mag + kLogEps);
            dmix_spec.frames[i] += mag > 0.0 ? fw.mix_spec.frames[i] * (dmag / mag)
                                             : cplx(dmag, 0.0);
        }
        // back to the mixture waveform; attack is straight-through
        dmix = stft_adjoint(dmix_spec, fw.win_len);
    }

    // through mixing and splicing: only the segment region reaches the codec
    for (std::size_t s = 0; total_path && s < kNumStems; ++s) {
        std::vector<double> d_wm(seg_len, 0.0);
        std::size_t lo = fw.seg_off, hi = fw.seg_off + seg_len;
        for (std::size_t i = lo; i < hi; ++i)
            d_wm[i - lo] = fw.lufs_gain[s] * dmix[i];

        spectral_losses_backward(fw.seg[s], fw.wm_seg[s],
                                 w.lambda_stft / kNumStems,
                                 w.lambda_spec / kNumStems,
                                 w.w_perc / kNumStems, d_wm);

        std::vector<double> dg(kPayloadBits, 0.0), dw(tc.n_bins, 0.0);
        codec_embed_backward(tc, fw.banks[s], fw.payloads[s], fw.ecache[s], d_wm,
                             dg, dw);
        for (std::size_t b = 0; b < kPayloadBits; ++b) dgains[b] += dg[b];
        for (std::size_t f = 0; f < tc.n_bins; ++f) dweights[f] += dw[f];
    }

    // ---- L_sep: separator parameters only (targets stop-gradient; the
    // mixture is treated as data, so codec grads are structurally zero) ----
    Eigen::MatrixXd dmask1_sep = Eigen::MatrixXd::Zero(F, T);
    Spectrogram scratch = fw.mix_spec;
    for (auto& c : scratch.frames) c = cplx(0.0, 0.0);
    for (std::size_t s = 0; s < kNumStems; ++s) {
        std::vector<double> dest(fw.win_len);
        for (std::size_t i = 0; i < fw.win_len; ++i) {
            double d = fw.est_win[s].samples[i] - fw.norm_win[s].samples[i];
            dest[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) /
                      static_cast<double>(fw.win_len);
        }
        Spectrogram dz = istft_adjoint(dest, T, cfg.sep.stft);
        std::vector<double> dmask(T * F, 0.0);
        mask_product_backward(fw.mix_spec, fw.masks[s], dz, dmask, scratch);
        double sign = s == 0 ? 1.0 : -1.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f)
                dmask1_sep(f, t) += sign * dmask[t * F + f];
    }
    sep.backward_masks(fw.sepfw, dmask1_sep, g.sep_from_lsep);
    return g;
}

// ---------------------------------------------------------------------------
// Training loops

struct CurveRow {
    std::size_t step;
    double total, bce, stft, spec, nmr, sep;
    double probe_ber = -1.0;  // -1 when not probed this step
};

struct TrainResult {
    TrainableCodec codec;
    MlpSeparator separator;
    std::vector<CurveRow> curves;
    bool diverged = false;
};

// Post-separation BER probe on held-out items (no attack).
inline double probe_post_separation_ber(const TrainConfig& cfg,
                                        const TrainableCodec& tc,
                                        const MlpSeparator& sep,
                                        std::uint64_t probe_seed,
                                        std::size_t items) {
    double errs = 0.0, bits = 0.0;
    for (std::size_t i = 0; i < items; ++i) {
        ItemForward fw;
        std::uint64_t s = derive_seed(probe_seed, "probe_item", i);
        item_inputs(cfg, s, fw);
        pipeline_forward(cfg, tc, sep, s, false, fw, false);
        for (std::size_t st = 0; st < kNumStems; ++st)
            for (std::size_t b = 0; b < kPayloadBits; ++b) {
                int bit = fw.dcache[st].scores[b] > 0.0 ? 1 : 0;
                if (bit != fw.payloads[st].bits[b]) errs += 1.0;
                bits += 1.0;
            }
    }
    return errs / bits;
}

// L_sep-only pretraining on clean (unwatermarked) stems.
inline MlpSeparator pretrain_separator(const TrainConfig& cfg, std::size_t steps,
                                       std::uint64_t seed) {
    MlpSeparator sep = MlpSeparator::random_init(cfg.sep, derive_seed(seed, "init", 0));
    Adam opt;
    opt.lr = cfg.lr_separator;
    TrainableCodec zero = TrainableCodec::reference(cfg.codec);
    std::fill(zero.gains.begin(), zero.gains.end(), 0.0);  // gamma 0: clean
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<double> grad(sep.n_params(), 0.0);
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            ItemForward fw;
            std::uint64_t s = derive_seed(seed, "pretrain", step * cfg.batch + i);
            item_inputs(cfg, s, fw);
            pipeline_forward(cfg, zero, sep, s, false, fw, false);
            ItemGrads g = pipeline_backward(cfg, zero, sep, fw, LossWeights{},
                                            /*total_path=*/false);
            for (std::size_t p = 0; p < grad.size(); ++p)
                grad[p] += g.sep_from_lsep[p] / cfg.batch;
        }
        opt.step(sep.params(), grad);
    }
    return sep;
}

inline TrainResult train_joint(const TrainConfig& cfg, const TrainableCodec& codec0,
                               const MlpSeparator& sep0,
                               const std::string& checkpoint_dir = "") {
    TrainResult r;
    r.codec = codec0;
    r.separator = sep0;
    Adam opt_codec, opt_sep;
    opt_codec.lr = cfg.lr_codec;
    opt_sep.lr = cfg.lr_separator;

    std::vector<double> cparams = r.codec.pack();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        LossWeights w = phase_weights(cfg, step);
        bool use_attack = step >= cfg.attack_start_step;

        std::vector<double> gc(r.codec.n_params(), 0.0);
        std::vector<double> gs(r.separator.n_params(), 0.0);
        LossBreakdown acc;
        double sep_acc = 0.0;
        bool finite = true;
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            ItemForward fw;
            std::uint64_t s =
                derive_seed(cfg.seed, "train_item", step * cfg.batch + i);
            item_inputs(cfg, s, fw);
            pipeline_forward(cfg, r.codec, r.separator, s, use_attack, fw, false);
            LossBreakdown b = item_total_loss(cfg, r.codec, fw, w);
            double lsep = item_sep_loss(fw);
            if (!std::isfinite(b.total) || !std::isfinite(lsep)) {
                finite = false;
                break;
            }
            acc.total += b.total / cfg.batch;
            acc.bce += b.bce / cfg.batch;
            acc.stft += b.stft / cfg.batch;
            acc.spec += b.spec / cfg.batch;
            acc.nmr += b.nmr / cfg.batch;
            sep_acc += lsep / cfg.batch;

            ItemGrads g = pipeline_backward(cfg, r.codec, r.separator, fw, w);
            for (std::size_t p = 0; p < gc.size(); ++p)
                gc[p] += g.codec[p] / cfg.batch;
            for (std::size_t p = 0; p < gs.size(); ++p) {
                gs[p] += g.sep_from_lsep[p] / cfg.batch;
                if (cfg.wiring == Wiring::sep_loss_plus_bce)
                    gs[p] += g.sep_from_bce[p] / cfg.batch;
            }
        }
        if (!finite) {
            r.diverged = true;
            break;
        }

        CurveRow row{step, acc.total, acc.bce, acc.stft, acc.spec, acc.nmr,
                     sep_acc};
        if (cfg.probe_every > 0 && step % cfg.probe_every == 0)
            row.probe_ber = probe_post_separation_ber(
                cfg, r.codec, r.separator, derive_seed(cfg.seed, "probe", 0),
                cfg.probe_items);
        r.curves.push_back(row);

        opt_codec.step(cparams, gc);
        r.codec.unpack(cparams);
        r.codec.project();
        cparams = r.codec.pack();
        opt_sep.step(r.separator.params(), gs);
    }

    if (!checkpoint_dir.empty()) {
        r.codec.save(checkpoint_dir + "/codec.json");
        r.separator.save(checkpoint_dir + "/separator.json");
    }
    return r;
}

inline void write_curves_csv(const std::vector<CurveRow>& curves,
                             const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), ErrorKind::io, "write_curves_csv: cannot open " + path);
    f << "step,total,bce,stft,spec,nmr,sep,probe_ber\n";
    f.precision(17);
    for (const auto& r : curves) {
        f << r.step << ',' << r.total << ',' << r.bce << ',' << r.stft << ','
          << r.spec << ',' << r.nmr << ',' << r.sep << ',';
        if (r.probe_ber >= 0.0) f << r.probe_ber;
        f << '\n';
    }
}

}  // namespace stemmark
