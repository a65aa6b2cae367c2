#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "stemmark/metrics.hpp"
#include "stemmark/train.hpp"

using namespace stemmark;

namespace {

// small-but-real training geometry so the finite-difference loops stay cheap
TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.sep.hidden = 16;
    cfg.analysis_pad = 4096;
    cfg.probe_every = 0;
    return cfg;
}

struct FrozenItem {
    TrainConfig cfg;
    TrainableCodec codec;
    MlpSeparator sep;
    ItemForward base;
    std::uint64_t seed;

    FrozenItem()
        : cfg(tiny_config()),
          codec(TrainableCodec::reference(cfg.codec)),
          sep(MlpSeparator::random_init(cfg.sep, 21)),
          seed(derive_seed(404, "fd_item", 0)) {
        item_inputs(cfg, seed, base);
        pipeline_forward(cfg, codec, sep, seed, false, base, false);
    }

    double total_at(const std::vector<double>& cparams, const MlpSeparator& s,
                    const LossWeights& w) const {
        TrainableCodec c2 = codec;
        c2.unpack(cparams);
        ItemForward work = base;
        pipeline_forward(cfg, c2, s, seed, false, work, true);
        return item_total_loss(cfg, c2, work, w).total;
    }

    double sep_at(const MlpSeparator& s) const {
        ItemForward work = base;
        pipeline_forward(cfg, codec, s, seed, false, work, true);
        return item_sep_loss(work);
    }
};

}  // namespace

TEST_CASE("trainable codec parameter layout and projection") {
    TrainableCodec tc = TrainableCodec::reference();
    REQUIRE(tc.gains.size() == kPayloadBits);
    REQUIRE(tc.band_weights.size() == tc.n_bins);
    for (double g : tc.gains) REQUIRE(g == tc.cfg.default_gamma);
    // band weights start as the 300 Hz - 10 kHz mask
    WatermarkKey k{};
    PatternBank b = derive_pattern_bank(k, tc.cfg);
    REQUIRE(tc.band_weights == b.band_mask);
    REQUIRE(tc.pattern_norm0 == b.pattern_norm);

    std::vector<double> p = tc.pack();
    REQUIRE(p.size() == tc.n_params());
    p[0] = -0.3;
    p[kPayloadBits + 5] = 1.7;
    tc.unpack(p);
    tc.project();
    REQUIRE(tc.gains[0] == 0.0);
    REQUIRE(tc.band_weights[5] == 1.0);

    std::vector<double> wrong(3, 0.0);
    REQUIRE_THROWS_AS(tc.unpack(wrong), Error);
}

TEST_CASE("trainable codec checkpoint round trip") {
    TrainableCodec tc = TrainableCodec::reference();
    tc.gains[3] = 0.123456789;
    tc.band_weights[40] = 0.5;
    tc.dec_scale = 2.5;
    tc.dec_bias = -0.125;

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "stemmark_train_test";
    fs::create_directories(dir);
    std::string path = (dir / "codec.json").string();
    tc.save(path);
    TrainableCodec back = TrainableCodec::load(path);
    REQUIRE(back.pack() == tc.pack());
    REQUIRE(back.pattern_norm0 == tc.pattern_norm0);

    std::string junk = (dir / "junk.json").string();
    {
        std::ofstream f(junk);
        f << "{\"format\":\"other\"}";
    }
    REQUIRE_THROWS_AS(TrainableCodec::load(junk), Error);
    REQUIRE_THROWS_AS(TrainableCodec::load((dir / "missing.json").string()), Error);
    fs::remove_all(dir);
}

TEST_CASE("differentiable embed matches the reference codec at init") {
    CodecConfig cfg;
    TrainableCodec tc = TrainableCodec::reference(cfg);
    Rng rng(derive_seed(500, "embed", 0));
    WatermarkKey key = random_key(rng);
    Payload payload = Payload::random(rng);
    PatternBank bank = derive_pattern_bank(key, cfg);
    AudioBuffer seg = music_like(501);

    AudioBuffer ref = embed_segment_with_bank(seg, bank, payload, cfg.default_gamma, cfg);
    EmbedCache cache;
    AudioBuffer out = codec_embed_forward(tc, bank, payload, seg, cache);
    REQUIRE(out.samples == ref.samples);

    // frozen replay at the same parameters reproduces the forward exactly
    AudioBuffer replay = codec_embed_forward(tc, bank, payload, seg, cache);
    REQUIRE(replay.samples == out.samples);
}

TEST_CASE("differentiable decode matches the reference scores") {
    CodecConfig cfg;
    TrainableCodec tc = TrainableCodec::reference(cfg);
    Rng rng(derive_seed(502, "decode", 0));
    WatermarkKey key = random_key(rng);
    Payload payload = Payload::random(rng);
    PatternBank bank = derive_pattern_bank(key, cfg);
    AudioBuffer seg = music_like(503);
    AudioBuffer wm = embed_segment_with_bank(seg, bank, payload, cfg.default_gamma, cfg);

    DecodeResult ref = decode_segment_with_bank(wm, bank, cfg);
    DecodeCache dc;
    std::vector<double> scores = codec_decode_scores(tc, bank, wm, dc);
    REQUIRE(scores.size() == kPayloadBits);
    for (std::size_t b = 0; b < kPayloadBits; ++b)
        REQUIRE(scores[b] == Catch::Approx(ref.scores[b]).margin(1e-12));
}

TEST_CASE("bce loss and gradient identities") {
    TrainableCodec tc = TrainableCodec::reference();
    Payload p;
    p.bits.assign(kPayloadBits, 1);
    // strongly positive scores with all-ones payload: loss near zero
    std::vector<double> good(kPayloadBits, 20.0);
    REQUIRE(bce_loss(tc, good, p) < 1e-8);
    // zero score: log 2 per bit regardless of the label
    std::vector<double> zero(kPayloadBits, 0.0);
    REQUIRE(bce_loss(tc, zero, p) == Catch::Approx(std::log(2.0)).margin(1e-12));

    // gradient vs central differences in the scores and the affine
    Rng rng(504);
    std::vector<double> s(kPayloadBits);
    for (auto& v : s) v = rng.uniform(-2.0, 2.0);
    Payload y = Payload::random(rng);
    tc.dec_scale = 1.3;
    tc.dec_bias = -0.2;
    double dscale = 0.0, dbias = 0.0;
    std::vector<double> ds = bce_backward(tc, s, y, 1.0, dscale, dbias);
    double h = 1e-6;
    for (std::size_t b : {std::size_t{0}, std::size_t{7}, std::size_t{31}}) {
        std::vector<double> sp = s, sm = s;
        sp[b] += h;
        sm[b] -= h;
        double fd = (bce_loss(tc, sp, y) - bce_loss(tc, sm, y)) / (2 * h);
        REQUIRE(ds[b] == Catch::Approx(fd).margin(1e-6));
    }
    TrainableCodec tp = tc, tm = tc;
    tp.dec_scale += h;
    tm.dec_scale -= h;
    REQUIRE(dscale ==
            Catch::Approx((bce_loss(tp, s, y) - bce_loss(tm, s, y)) / (2 * h))
                .margin(1e-6));
    tp = tc;
    tm = tc;
    tp.dec_bias += h;
    tm.dec_bias -= h;
    REQUIRE(dbias ==
            Catch::Approx((bce_loss(tp, s, y) - bce_loss(tm, s, y)) / (2 * h))
                .margin(1e-6));
}

TEST_CASE("loss weight schedule and component bookkeeping") {
    TrainConfig cfg;
    cfg.phase2_step = 400;
    LossWeights w1 = phase_weights(cfg, 0);
    REQUIRE(w1.w_bce == 100.0);
    REQUIRE(w1.lambda_stft == 0.01);
    REQUIRE(w1.lambda_spec == 0.01);
    REQUIRE(w1.w_perc == 0.0);
    LossWeights w2 = phase_weights(cfg, 400);
    REQUIRE(w2.w_bce == 100.0);
    REQUIRE(w2.lambda_stft == 1.0);
    REQUIRE(w2.lambda_spec == 1.0);
    REQUIRE(w2.w_perc == 0.1);

    LossBreakdown b;
    b.bce = 0.5;
    b.stft = 2.0;
    b.spec = 3.0;
    b.nmr = 4.0;
    REQUIRE(combine_losses(w2, b) ==
            Catch::Approx(100.0 * 0.5 + 2.0 + 3.0 + 0.4).margin(1e-12));

    b.stft = std::nan("");
    try {
        combine_losses(w2, b);
        FAIL("expected a numeric error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("stft") != std::string::npos);
    }
}

TEST_CASE("separator loss basics") {
    AudioBuffer a = music_like(505, 4096), b = music_like(506, 4096);
    REQUIRE(separator_loss({a, b}, {a, b}) == 0.0);
    AudioBuffer shifted = a;
    for (double& s : shifted.samples) s += 0.25;
    REQUIRE(separator_loss({shifted, b}, {a, b}) == Catch::Approx(0.25).margin(1e-12));
    AudioBuffer shorty;
    shorty.samples.assign(100, 0.0);
    REQUIRE_THROWS_AS(separator_loss({shorty, b}, {a, b}), Error);
}

TEST_CASE("synthetic stems have the advertised band split") {
    SyntheticStemSet set;
    auto band_ratio = [](const AudioBuffer& x) {
        Spectrogram s = stft(x, {2048, 512});
        double lo = 0.0, hi = 0.0;
        double hz_per_bin = static_cast<double>(kCanonicalRate) / 2048;
        for (std::size_t t = 0; t < s.n_frames; ++t)
            for (std::size_t f = 0; f < s.n_bins; ++f) {
                double p = std::norm(s.at(t, f));
                (f * hz_per_bin < 3000.0 ? lo : hi) += p;
            }
        return lo / hi;
    };
    for (std::uint64_t i = 0; i < 4; ++i) {
        REQUIRE(band_ratio(synth_stem_a(set, derive_seed(507, "a", i))) > 10.0);
        REQUIRE(band_ratio(synth_stem_b(set, derive_seed(507, "b", i))) < 1.0);
    }
}

TEST_CASE("sep loss gradient never reaches the codec") {
    FrozenItem fx;
    ItemGrads g = pipeline_backward(fx.cfg, fx.codec, fx.sep, fx.base, LossWeights{},
                                    /*total_path=*/false);
    for (double v : g.codec) REQUIRE(v == 0.0);
    for (double v : g.sep_from_bce) REQUIRE(v == 0.0);
    double mag = 0.0;
    for (double v : g.sep_from_lsep) mag += std::abs(v);
    REQUIRE(mag > 0.0);
}

TEST_CASE("codec gradients through the pipeline match finite differences") {
    FrozenItem fx;
    LossWeights w = phase_weights(fx.cfg, fx.cfg.phase2_step);  // exercise nmr too
    ItemGrads g = pipeline_backward(fx.cfg, fx.codec, fx.sep, fx.base, w);

    std::vector<double> p0 = fx.codec.pack();
    // in-band bin indices for meaningful band-weight probes
    std::vector<std::size_t> inband;
    for (std::size_t f = 0; f < fx.codec.n_bins; ++f)
        if (fx.codec.band_weights[f] != 0.0) inband.push_back(f);

    std::vector<std::size_t> idx;
    for (std::size_t b : {0, 5, 11, 17, 23, 29, 31}) idx.push_back(b);  // gains
    for (std::size_t k = 0; k < 11; ++k)  // band weights spread over the band
        idx.push_back(kPayloadBits + inband[k * (inband.size() - 1) / 10]);
    idx.push_back(kPayloadBits + fx.codec.n_bins);      // dec_scale
    idx.push_back(kPayloadBits + fx.codec.n_bins + 1);  // dec_bias
    REQUIRE(idx.size() >= 20);

    double h = 1e-5;
    for (std::size_t i : idx) {
        std::vector<double> pp = p0, pm = p0;
        pp[i] += h;
        pm[i] -= h;
        double fd = (fx.total_at(pp, fx.sep, w) - fx.total_at(pm, fx.sep, w)) / (2 * h);
        double scale = std::max({std::abs(fd), std::abs(g.codec[i]), 1e-6});
        INFO("param " << i << " analytic " << g.codec[i] << " fd " << fd);
        REQUIRE(std::abs(g.codec[i] - fd) / scale < 1e-3);
    }
}

TEST_CASE("separator gradients of both losses match finite differences") {
    FrozenItem fx;
    LossWeights w = phase_weights(fx.cfg, 0);
    ItemGrads g = pipeline_backward(fx.cfg, fx.codec, fx.sep, fx.base, w);

    Rng pick(508);
    double h = 1e-5;
    for (int k = 0; k < 10; ++k) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(
            0, static_cast<std::int64_t>(fx.sep.n_params()) - 1));
        MlpSeparator sp = fx.sep, sm = fx.sep;
        sp.params()[i] += h;
        sm.params()[i] -= h;

        double fd_sep = (fx.sep_at(sp) - fx.sep_at(sm)) / (2 * h);
        double scale = std::max({std::abs(fd_sep), std::abs(g.sep_from_lsep[i]), 1e-8});
        INFO("sep param " << i);
        REQUIRE(std::abs(g.sep_from_lsep[i] - fd_sep) / scale < 1e-3);

        double fd_tot = (fx.total_at(fx.codec.pack(), sp, w) -
                         fx.total_at(fx.codec.pack(), sm, w)) /
                        (2 * h);
        double scale2 = std::max({std::abs(fd_tot), std::abs(g.sep_from_bce[i]), 1e-8});
        REQUIRE(std::abs(g.sep_from_bce[i] - fd_tot) / scale2 < 1e-3);
    }
}

TEST_CASE("joint training is deterministic") {
    TrainConfig cfg = tiny_config();
    cfg.steps = 4;
    cfg.attack_start_step = 2;  // cover the attacked branch too
    cfg.phase2_step = 2;
    cfg.seed = 99;

    TrainableCodec c0 = TrainableCodec::reference(cfg.codec);
    MlpSeparator s0 = MlpSeparator::random_init(cfg.sep, 22);
    TrainResult a = train_joint(cfg, c0, s0);
    TrainResult b = train_joint(cfg, c0, s0);
    REQUIRE_FALSE(a.diverged);
    REQUIRE(a.curves.size() == cfg.steps);
    REQUIRE(a.codec.pack() == b.codec.pack());
    REQUIRE(a.separator.params() == b.separator.params());
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
        REQUIRE(a.curves[i].total == b.curves[i].total);
        REQUIRE(a.curves[i].sep == b.curves[i].sep);
        REQUIRE(std::isfinite(a.curves[i].total));
    }
    // parameters actually moved
    REQUIRE(a.codec.pack() != c0.pack());
    REQUIRE(a.separator.params() != s0.params());

    // the wiring switch changes the separator trajectory but not the fact
    // that the codec is driven by L_total either way
    TrainConfig cfg2 = cfg;
    cfg2.wiring = Wiring::sep_loss_plus_bce;
    TrainResult c = train_joint(cfg2, c0, s0);
    REQUIRE(c.separator.params() != a.separator.params());
}

TEST_CASE("pretraining and the ber probe run end to end") {
    TrainConfig cfg = tiny_config();
    MlpSeparator sep = pretrain_separator(cfg, 3, 23);
    double ber = probe_post_separation_ber(cfg, TrainableCodec::reference(cfg.codec),
                                           sep, 24, 2);
    REQUIRE(ber >= 0.0);
    REQUIRE(ber <= 1.0);
    double again = probe_post_separation_ber(
        cfg, TrainableCodec::reference(cfg.codec), sep, 24, 2);
    REQUIRE(ber == again);
}

TEST_CASE("training curve csv") {
    std::vector<CurveRow> rows;
    rows.push_back({0, 1.0, 0.5, 0.1, 0.2, 0.0, 0.3, 0.25});
    rows.push_back({1, 0.9, 0.4, 0.1, 0.2, 0.0, 0.2, -1.0});
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "stemmark_train_csv";
    fs::create_directories(dir);
    std::string path = (dir / "curve.csv").string();
    write_curves_csv(rows, path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    REQUIRE(line == "step,total,bce,stft,spec,nmr,sep,probe_ber");
    std::getline(f, line);
    REQUIRE(line.substr(0, 2) == "0,");
    REQUIRE(line.find("0.25") != std::string::npos);
    std::getline(f, line);
    REQUIRE(line.back() == ',');  // unprobed step leaves the field empty
    fs::remove_all(dir);
}
