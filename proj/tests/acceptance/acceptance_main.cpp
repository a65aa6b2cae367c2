// Acceptance gate: one pass/fail line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stemmark/attacks.hpp"
#include "stemmark/codec.hpp"
#include "stemmark/eval.hpp"
#include "stemmark/loudness.hpp"
#include "stemmark/metrics.hpp"
#include "stemmark/separator.hpp"
#include "stemmark/stft.hpp"
#include "stemmark/synth.hpp"
#include "stemmark/train.hpp"

using namespace stemmark;
using clk = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int n, bool pass, const std::string& what, const std::string& detail) {
    std::printf("%s  criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", n,
                what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double elapsed_s(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

AudioBuffer fixture_carrier(std::uint64_t i) {
    SyntheticStemSet set;
    switch (i % 3) {
        case 0: return music_like(1000 + i);
        case 1: {
            AudioBuffer b = synth_stem_a(set, 2000 + i);
            b.samples.resize(kSegmentSamples);
            return b;
        }
        default: {
            // two-stem mixture host; stem B alone (bursty broadband noise)
            // sits at the blind-decode margin at default strength
            AudioBuffer a = synth_stem_a(set, 3000 + i);
            AudioBuffer b = synth_stem_b(set, 4000 + i);
            a.samples.resize(kSegmentSamples);
            for (std::size_t k = 0; k < kSegmentSamples; ++k)
                a.samples[k] += b.samples[k];
            return a;
        }
    }
}

// ---------------------------------------------------------------------------

void criterion_1_codec_round_trip() {
    auto t0 = clk::now();
    std::size_t items = 100, right_errs = 0;
    double wrong_ber = 0.0;
    for (std::size_t i = 0; i < items; ++i) {
        AudioBuffer seg = fixture_carrier(i);
        Rng kr(derive_seed(10, "key", i));
        WatermarkKey key = random_key(kr);
        Payload payload = Payload::random(kr);
        AudioBuffer wm = embed_segment(seg, key, payload,
                                       EmbedStrength{CodecConfig{}.default_gamma});
        DecodeResult dec = decode_segment(wm, key);
        for (std::size_t b = 0; b < kPayloadBits; ++b)
            if (dec.payload.bits[b] != payload.bits[b]) ++right_errs;
        Rng kr2(derive_seed(11, "key2", i));
        WatermarkKey other = random_key(kr2);
        wrong_ber += bit_error_rate(payload.bits, decode_segment(wm, other).payload.bits);
    }
    wrong_ber /= items;
    double secs = elapsed_s(t0);
    bool pass = right_errs == 0 && std::abs(wrong_ber - 0.5) <= 0.15 && secs < 60.0;
    report(1, pass, "codec round trip over 100 triples",
           fmt("errors=%zu wrong-key BER=%.3f runtime=%.1fs", right_errs, wrong_ber,
               secs));
}

void criterion_2_stft_fidelity() {
    std::vector<StftConfig> geometries{{2048, 512}, {1024, 256}, {512, 128},
                                       {2048, 256}};
    double worst = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        Rng rng(derive_seed(20, "buf", i));
        AudioBuffer x;
        x.samples.resize(kSegmentSamples);
        for (auto& s : x.samples) s = 0.4 * rng.gaussian();
        for (const auto& g : geometries) {
            AudioBuffer back = istft(stft(x, g), x.size());
            for (std::size_t k = 0; k < x.size(); ++k)
                worst = std::max(worst, std::abs(back.samples[k] - x.samples[k]));
        }
    }
    report(2, worst <= 1e-4, "istft/stft round trip on 50 random buffers",
           fmt("max abs error=%.2e over %zu geometries", worst, std::size_t{4}));
}

void criterion_3_loudness() {
    AudioBuffer sine;
    sine.samples.resize(3 * kCanonicalRate);
    for (std::size_t i = 0; i < sine.size(); ++i)
        sine.samples[i] = std::sin(2.0 * M_PI * 997.0 * i / kCanonicalRate);
    double lufs = *measure_integrated_lufs(sine).integrated_lufs;
    AudioBuffer norm = normalize_to_lufs(sine, -16.0);
    double re = *measure_integrated_lufs(norm).integrated_lufs;
    bool pass = std::abs(lufs - (-3.01)) <= 0.1 && std::abs(re - (-16.0)) <= 0.1;
    report(3, pass, "BS.1770 sine anchor and -16 LUFS normalization",
           fmt("997 Hz sine=%.3f LUFS renormalized=%.3f LUFS", lufs, re));
}

void criterion_4_attack_catalog() {
    std::size_t n_basic = category_members(AttackCategory::BasicNoise).size();
    std::size_t n_filter = category_members(AttackCategory::Filter).size();
    std::size_t n_time = category_members(AttackCategory::TimePitch).size();
    bool partition = n_basic == 8 && n_filter == 4 && n_time == 6 &&
                     all_attack_kinds().size() == 18;

    AudioBuffer x = music_like(40, 44100);
    bool deterministic = true;
    bool ranges = true;
    for (AttackKind k : all_attack_kinds())
        for (std::uint64_t s = 0; s < 5; ++s) {
            AttackSpec spec = sample_attack_spec(k, derive_seed(41, "s", s));
            deterministic = deterministic && apply_attack(x, spec).samples ==
                                                 apply_attack(x, spec).samples;
            switch (k) {
                case AttackKind::LP:
                    ranges = ranges && spec.param("cutoff_hz") >= 3000.0 &&
                             spec.param("cutoff_hz") <= 6000.0;
                    break;
                case AttackKind::SM:
                    ranges = ranges && spec.param("window") >= 2 &&
                             spec.param("window") <= 10;
                    break;
                case AttackKind::SP:
                    ranges = ranges && spec.param("fraction") == 0.001;
                    break;
                case AttackKind::ECHO:
                    ranges = ranges && spec.param("delay") == 4410.0;
                    break;
                case AttackKind::RS:
                    ranges = ranges && spec.param("rate") >= 16000.0;
                    break;
                default: break;
            }
        }
    report(4, partition && deterministic && ranges,
           "attack catalog 8/4/6 partition, determinism, quoted ranges",
           fmt("partition=%zu/%zu/%zu deterministic=%d ranges=%d", n_basic, n_filter,
               n_time, (int)deterministic, (int)ranges));
}

void criterion_5_metric_identities() {
    std::vector<int> truth{1, 0, 1, 1, 0, 0, 1, 0};
    std::vector<int> decoded{1, 0, 0, 1, 0, 1, 1, 0};
    bool ber_ok = bit_error_rate(truth, truth) == 0.0 &&
                  bit_error_rate(truth, decoded) == 0.25;

    AudioBuffer x = music_like(50), y = music_like(51);
    AudioBuffer ys = y;
    for (auto& s : ys.samples) s *= 3.7;
    double si_dev = std::abs(si_snr_db(x, ys) - si_snr_db(x, y));

    AudioBuffer xe = x;
    for (auto& s : xe.samples) s *= M_E;
    double mrs = multi_res_stft_loss(x, xe);
    double nmr_self = nmr_ratio(x, x);

    bool pass = ber_ok && si_dev <= 1e-6 && std::abs(mrs - 1.0) <= 1e-3 &&
                nmr_self == 0.0;
    report(5, pass, "metric identities",
           fmt("BER exact=%d si-invariance=%.2e stft(x,e*x)=%.6f nmr(x,x)=%.1e",
               (int)ber_ok, si_dev, mrs, nmr_self));
}

void criterion_6_stop_gradient() {
    TrainConfig cfg;
    cfg.sep.hidden = 16;
    cfg.analysis_pad = 4096;
    cfg.probe_every = 0;
    TrainableCodec codec = TrainableCodec::reference(cfg.codec);
    MlpSeparator sep = MlpSeparator::random_init(cfg.sep, 61);

    // Eq. 3 stop-gradient: the L_sep backward never reaches codec parameters
    bool zero = true;
    for (std::size_t batch = 0; batch < 100 && zero; ++batch) {
        ItemForward fw;
        std::uint64_t s = derive_seed(60, "batch", batch);
        item_inputs(cfg, s, fw);
        pipeline_forward(cfg, codec, sep, s, false, fw, false);
        ItemGrads g = pipeline_backward(cfg, codec, sep, fw, LossWeights{}, false);
        for (double v : g.codec)
            if (v != 0.0) zero = false;
    }

    // analytic vs central finite differences on one frozen item
    ItemForward base;
    std::uint64_t fdseed = derive_seed(60, "fd", 0);
    item_inputs(cfg, fdseed, base);
    pipeline_forward(cfg, codec, sep, fdseed, false, base, false);
    LossWeights w = phase_weights(cfg, cfg.phase2_step);
    ItemGrads g = pipeline_backward(cfg, codec, sep, base, w);

    auto total_at = [&](const std::vector<double>& p, const MlpSeparator& s) {
        TrainableCodec c2 = codec;
        c2.unpack(p);
        ItemForward work = base;
        pipeline_forward(cfg, c2, s, fdseed, false, work, true);
        return item_total_loss(cfg, c2, work, w).total;
    };
    auto sep_at = [&](const MlpSeparator& s) {
        ItemForward work = base;
        pipeline_forward(cfg, codec, s, fdseed, false, work, true);
        return item_sep_loss(work);
    };

    std::vector<std::size_t> inband;
    for (std::size_t f = 0; f < codec.n_bins; ++f)
        if (codec.band_weights[f] != 0.0) inband.push_back(f);
    std::vector<std::size_t> idx;
    for (std::size_t b : {0, 7, 15, 23, 31}) idx.push_back(b);
    for (std::size_t k = 0; k < 7; ++k)
        idx.push_back(kPayloadBits + inband[k * (inband.size() - 1) / 6]);
    idx.push_back(kPayloadBits + codec.n_bins);
    idx.push_back(kPayloadBits + codec.n_bins + 1);

    double h = 1e-5, worst = 0.0;
    std::vector<double> p0 = codec.pack();
    std::size_t checked = 0;
    for (std::size_t i : idx) {
        std::vector<double> pp = p0, pm = p0;
        pp[i] += h;
        pm[i] -= h;
        double fd = (total_at(pp, sep) - total_at(pm, sep)) / (2 * h);
        double scale = std::max({std::abs(fd), std::abs(g.codec[i]), 1e-6});
        worst = std::max(worst, std::abs(g.codec[i] - fd) / scale);
        ++checked;
    }
    Rng pick(62);
    for (int k = 0; k < 8; ++k) {
        std::size_t i = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<std::int64_t>(sep.n_params()) - 1));
        MlpSeparator sp = sep, sm = sep;
        sp.params()[i] += h;
        sm.params()[i] -= h;
        double fd_sep = (sep_at(sp) - sep_at(sm)) / (2 * h);
        double sc1 = std::max({std::abs(fd_sep), std::abs(g.sep_from_lsep[i]), 1e-8});
        worst = std::max(worst, std::abs(g.sep_from_lsep[i] - fd_sep) / sc1);
        double fd_tot = (total_at(p0, sp) - total_at(p0, sm)) / (2 * h);
        double sc2 = std::max({std::abs(fd_tot), std::abs(g.sep_from_bce[i]), 1e-8});
        worst = std::max(worst, std::abs(g.sep_from_bce[i] - fd_tot) / sc2);
        checked += 2;
    }
    bool pass = zero && worst < 1e-3;
    report(6, pass, "Eq. 3 stop-gradient and gradient checks",
           fmt("dLsep/dcodec zero on 100 batches=%d, worst FD mismatch=%.2e over %zu "
               "params",
               (int)zero, worst, checked));
}

EvalReport criterion_7_eval_determinism() {
    auto t0 = clk::now();
    EvalConfig cfg;
    cfg.master_seed = 70;
    cfg.items_per_category = 100;
    cfg.jobs = 1;
    EvalReport a = run_separation_first_eval(cfg);
    double run1 = elapsed_s(t0);
    cfg.jobs = 2;
    auto t1 = clk::now();
    EvalReport b = run_separation_first_eval(cfg);
    double run2 = elapsed_s(t1);

    std::string ja = report_to_json(a).dump();
    bool identical = ja == report_to_json(b).dump();
    bool shape = a.items.size() == 2 * 4 * 100 && a.aggregates.size() == 8;
    bool pass = identical && shape && run1 < 600.0 && run2 < 600.0;
    report(7, pass, "eval determinism across --jobs, 2 stems x 4 categories x 100",
           fmt("identical=%d shape=%d runtimes=%.0fs/%.0fs", (int)identical,
               (int)shape, run1, run2));
    return a;
}

void criterion_9_category_ordering(const EvalReport& r) {
    auto mean_of = [&](const std::string& cat) {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& a : r.aggregates)
            if (a.category == cat) {
                acc += a.mean_ber_percent * a.items;
                n += a.items;
            }
        return acc / n;
    };
    double origin = mean_of("Origin");
    double basic = mean_of("Basic/Noise");
    double timep = mean_of("Time/Pitch");
    bool pass = origin <= basic && basic <= timep;
    report(9, pass, "category BER ordering with oracle separation",
           fmt("Origin=%.2f%% Basic/Noise=%.2f%% Time/Pitch=%.2f%%", origin, basic,
               timep));
}

void criteria_8_and_10_joint_training() {
    auto t0 = clk::now();
    TrainConfig cfg;
    cfg.sep.hidden = 64;
    cfg.seed = 80;
    cfg.steps = 400;
    cfg.lr_codec = 3e-2;
    cfg.lr_separator = 3e-4;
    cfg.wiring = Wiring::sep_loss_only;
    // stays in the exploratory phase-1 loss regime and unattacked: the
    // claim under test is the Origin-category gap
    cfg.attack_start_step = cfg.steps;
    cfg.phase2_step = cfg.steps;
    cfg.probe_every = 0;

    MlpSeparator pretrained =
        pretrain_separator(cfg, 150, derive_seed(cfg.seed, "pre"));
    TrainableCodec codec0 = TrainableCodec::reference(cfg.codec);
    double ber_frozen =
        probe_post_separation_ber(cfg, codec0, pretrained, 81, 32);

    TrainResult r = train_joint(cfg, codec0, pretrained);
    double ber_joint =
        probe_post_separation_ber(cfg, r.codec, r.separator, 81, 32);
    double secs = elapsed_s(t0);

    bool pass8 = !r.diverged && ber_joint <= 0.5 * ber_frozen && ber_joint <= 0.10 &&
                 secs < 1200.0;
    report(8, pass8, "joint training halves post-separation BER",
           fmt("frozen=%.1f%% joint=%.1f%% runtime=%.0fs", 100.0 * ber_frozen,
               100.0 * ber_joint, secs));

    // criterion 10: held-out per-stem SI-SDR of the jointly trained separator
    // vs the L_sep-only pretrained one
    std::array<double, kNumStems> si_pre{}, si_joint{};
    std::size_t n_items = 12;
    for (std::size_t i = 0; i < n_items; ++i) {
        auto batch = synth_two_stem_batch(cfg.stems, 1, derive_seed(82, "ho", i));
        std::array<AudioBuffer, kNumStems> stems{
            normalize_to_lufs(batch[0].stem_a), normalize_to_lufs(batch[0].stem_b)};
        AudioBuffer mix = stems[0];
        for (std::size_t k = 0; k < mix.size(); ++k)
            mix.samples[k] += stems[1].samples[k];
        SeparationOutput a = pretrained.separate(mix);
        SeparationOutput b = r.separator.separate(mix);
        for (std::size_t s = 0; s < kNumStems; ++s) {
            si_pre[s] += si_sdr_db(stems[s], a.stems[s]) / n_items;
            si_joint[s] += si_sdr_db(stems[s], b.stems[s]) / n_items;
        }
    }
    double worst_drop = 0.0;
    for (std::size_t s = 0; s < kNumStems; ++s)
        worst_drop = std::max(worst_drop, si_pre[s] - si_joint[s]);
    report(10, worst_drop <= 1.0, "separation integrity after joint training",
           fmt("stem1 %.2f->%.2f dB, stem2 %.2f->%.2f dB, worst drop %.2f dB",
               si_pre[0], si_joint[0], si_pre[1], si_joint[1], worst_drop));
}

void criterion_11_imperceptibility() {
    double snr_min = 1e9, nmr_max = 0.0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        AudioBuffer seg = music_like(300 + i);
        Rng kr(derive_seed(110, "key", i));
        WatermarkKey key = random_key(kr);
        Payload payload = Payload::random(kr);
        AudioBuffer wm = embed_segment(seg, key, payload,
                                       EmbedStrength{CodecConfig{}.default_gamma});
        snr_min = std::min(snr_min, snr_db(seg, wm));
        nmr_max = std::max(nmr_max, nmr_ratio(seg, wm));
    }
    bool pass = snr_min >= 25.0 && nmr_max < 1.0;
    report(11, pass, "reference codec imperceptibility on music-like fixtures",
           fmt("min SNR=%.2f dB max NMR=%.3f over 20 fixtures", snr_min, nmr_max));
}

}  // namespace

int main() {
    criterion_1_codec_round_trip();
    criterion_2_stft_fidelity();
    criterion_3_loudness();
    criterion_4_attack_catalog();
    criterion_5_metric_identities();
    criterion_6_stop_gradient();
    EvalReport report7 = criterion_7_eval_determinism();
    criteria_8_and_10_joint_training();
    criterion_9_category_ordering(report7);
    criterion_11_imperceptibility();
    std::printf("%d of 11 criteria passed\n", 11 - failures);
    return failures == 0 ? 0 : 1;
}
