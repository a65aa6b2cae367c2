#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "stemmark/attacks.hpp"
#include "stemmark/metrics.hpp"
#include "stemmark/synth.hpp"

using namespace stemmark;

namespace {

AudioBuffer tone(double freq, std::size_t n = 44100, double amp = 0.5) {
    AudioBuffer b;
    b.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        b.samples[i] = amp * std::sin(2.0 * M_PI * freq * i / kCanonicalRate);
    return b;
}

// dominant frequency via zero-padded FFT peak
double dominant_hz(const AudioBuffer& b) {
    std::size_t n = 1;
    while (n < 4 * b.size()) n <<= 1;
    std::vector<double> x(n, 0.0);
    std::copy(b.samples.begin(), b.samples.end(), x.begin());
    auto spec = rfft(x);
    std::size_t best = 0;
    double best_mag = 0.0;
    for (std::size_t k = 1; k < spec.size(); ++k)
        if (std::abs(spec[k]) > best_mag) {
            best_mag = std::abs(spec[k]);
            best = k;
        }
    return best * static_cast<double>(kCanonicalRate) / n;
}

double steady_rms(const AudioBuffer& b) {
    // skip transients at both ends
    std::size_t lo = b.size() / 8, hi = b.size() - b.size() / 8;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += b.samples[i] * b.samples[i];
    return std::sqrt(acc / (hi - lo));
}

}  // namespace

TEST_CASE("catalog partition") {
    REQUIRE(all_attack_kinds().size() == 18);
    REQUIRE(category_members(AttackCategory::BasicNoise).size() == 8);
    REQUIRE(category_members(AttackCategory::Filter).size() == 4);
    REQUIRE(category_members(AttackCategory::TimePitch).size() == 6);
    REQUIRE(category_members(AttackCategory::Origin).empty());

    std::set<std::string> names;
    for (AttackKind k : all_attack_kinds()) {
        names.insert(attack_kind_name(k));
        REQUIRE(attack_kind_from_name(attack_kind_name(k)) == k);
        AttackCategory c = category_of_kind(k);
        const auto& m = category_members(c);
        REQUIRE(std::find(m.begin(), m.end(), k) != m.end());
    }
    REQUIRE(names.size() == 18);
}

TEST_CASE("spec sampling is deterministic and in range") {
    for (AttackKind k : all_attack_kinds()) {
        AttackSpec a = sample_attack_spec(k, 42);
        AttackSpec b = sample_attack_spec(k, 42);
        REQUIRE(a.params == b.params);
        REQUIRE(a.seed == b.seed);
        AttackSpec c = sample_attack_spec(k, 43);
        REQUIRE((c.params != a.params || c.seed != a.seed));
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        AttackSpec n = sample_attack_spec(AttackKind::N, seed);
        REQUIRE(n.param("snr_db") >= 20.0);
        REQUIRE(n.param("snr_db") <= 40.0);
        AttackSpec a = sample_attack_spec(AttackKind::AMP, seed);
        REQUIRE(std::abs(a.param("gain")) >= 0.1);
        REQUIRE(std::abs(a.param("gain")) <= 1.0);
        AttackSpec q = sample_attack_spec(AttackKind::QT, seed);
        REQUIRE((q.param("bits") == 8 || q.param("bits") == 10 ||
                 q.param("bits") == 12));
        AttackSpec lp = sample_attack_spec(AttackKind::LP, seed);
        REQUIRE(lp.param("cutoff_hz") >= 3000.0);
        REQUIRE(lp.param("cutoff_hz") <= 6000.0);
        AttackSpec sm = sample_attack_spec(AttackKind::SM, seed);
        REQUIRE(sm.param("window") >= 2);
        REQUIRE(sm.param("window") <= 10);
        REQUIRE(sm.param("window") == std::floor(sm.param("window")));
        AttackSpec rs = sample_attack_spec(AttackKind::RS, seed);
        double r = rs.param("rate");
        REQUIRE((r == 16000 || r == 22050 || r == 24000 || r == 32000));
        AttackSpec spd = sample_attack_spec(AttackKind::SPD, seed);
        REQUIRE(spd.param("speed") >= 0.9);
        REQUIRE(spd.param("speed") <= 1.1);
        AttackSpec pch = sample_attack_spec(AttackKind::PCH, seed);
        REQUIRE(std::abs(pch.param("semitones")) <= 2.0);
    }
}

TEST_CASE("attacks are deterministic, finite, and length-lawful") {
    AudioBuffer x = music_like(123);
    double rms_in = rms(x);
    for (AttackKind k : all_attack_kinds()) {
        AttackSpec spec = sample_attack_spec(k, 7);
        AudioBuffer y1 = apply_attack(x, spec);
        AudioBuffer y2 = apply_attack(x, spec);
        REQUIRE(y1.samples == y2.samples);
        REQUIRE(all_finite(y1));

        INFO("kind=" << attack_kind_name(k));
        if (k == AttackKind::SPD || k == AttackKind::SPCH) {
            double speed = spec.param("speed");
            auto want = static_cast<std::ptrdiff_t>(std::lround(x.size() / speed));
            REQUIRE(std::abs(static_cast<std::ptrdiff_t>(y1.size()) - want) <= 1);
        } else if (k == AttackKind::RS) {
            REQUIRE(std::abs(static_cast<std::ptrdiff_t>(y1.size()) -
                             static_cast<std::ptrdiff_t>(x.size())) <= 1);
        } else {
            REQUIRE(y1.size() == x.size());
        }

        // energy sanity: nothing louder than +6 dB
        REQUIRE(rms(y1) <= rms_in * 2.0);
    }
}

TEST_CASE("amp gain one is the identity") {
    AudioBuffer x = music_like(5);
    AttackSpec spec{AttackKind::AMP, 0, {{"gain", 1.0}}};
    AudioBuffer y = apply_attack(x, spec);
    REQUIRE(y.samples == x.samples);
}

TEST_CASE("echo adds a delayed scaled copy") {
    AudioBuffer x;
    x.samples.assign(10000, 0.0);
    x.samples[100] = 1.0;
    AttackSpec spec{AttackKind::ECHO, 0, {{"alpha", 0.3}, {"delay", 4410}}};
    AudioBuffer y = apply_attack(x, spec);
    REQUIRE(y.samples[100] == 1.0);
    REQUIRE(y.samples[100 + 4410] == Catch::Approx(0.3).margin(1e-12));
    std::size_t nonzero = 0;
    for (double v : y.samples)
        if (v != 0.0) ++nonzero;
    REQUIRE(nonzero == 2);
}

TEST_CASE("quantizer formula at 8 bits") {
    AudioBuffer x;
    x.samples = {0.30, -0.30, 0.0, 1.0, -1.0, 2.0};
    AttackSpec spec{AttackKind::QT, 0, {{"bits", 8}}};
    AudioBuffer y = apply_attack(x, spec);
    REQUIRE(y.samples[0] == Catch::Approx(std::round(0.30 * 127) / 127).margin(1e-15));
    REQUIRE(y.samples[1] == -y.samples[0]);
    REQUIRE(y.samples[2] == 0.0);
    REQUIRE(y.samples[3] == 1.0);
    REQUIRE(y.samples[4] == -1.0);
    REQUIRE(y.samples[5] == 1.0);  // clamped before quantizing
}

TEST_CASE("noise attacks hit their target snr") {
    AudioBuffer x = music_like(9);
    for (double snr : {20.0, 30.0, 40.0}) {
        for (AttackKind k : {AttackKind::N, AttackKind::PK}) {
            AttackSpec spec{k, 99, {{"snr_db", snr}}};
            AudioBuffer y = apply_attack(x, spec);
            REQUIRE(snr_db(x, y) == Catch::Approx(snr).margin(0.5));
        }
    }
}

TEST_CASE("sample suppression zeroes the declared fraction") {
    AudioBuffer x;
    x.samples.assign(100000, 1.0);
    AttackSpec spec{AttackKind::SP, 3, {{"fraction", 0.001}}};
    AudioBuffer y = apply_attack(x, spec);
    std::size_t zeros = 0;
    for (double v : y.samples)
        if (v == 0.0) ++zeros;
    REQUIRE(zeros >= 95);   // collisions possible
    REQUIRE(zeros <= 100);
}

TEST_CASE("phase rotation preserves magnitude spectrum, pi flips polarity") {
    AudioBuffer x = music_like(11, 16384);
    AttackSpec flip{AttackKind::PHS, 0, {{"theta", M_PI}}};
    AudioBuffer y = apply_attack(x, flip);
    for (std::size_t i = 0; i < x.size(); ++i)
        REQUIRE(y.samples[i] == Catch::Approx(-x.samples[i]).margin(1e-8));

    AttackSpec rot{AttackKind::PHS, 0, {{"theta", 1.234}}};
    AudioBuffer z = apply_attack(x, rot);
    auto sx = rfft(x.samples);
    auto sz = rfft(z.samples);
    for (std::size_t k = 1; k + 1 < sx.size(); k += 97)
        REQUIRE(std::abs(sz[k]) == Catch::Approx(std::abs(sx[k])).margin(
                    1e-6 * (1.0 + std::abs(sx[k]))));
}

TEST_CASE("lowpass attenuates per the biquad response") {
    // RBJ lowpass at fc with Q = 0.707 is -3 dB at the cutoff
    double fc = 4000.0;
    AttackSpec spec{AttackKind::LP, 0, {{"cutoff_hz", fc}, {"q", 0.707}}};
    AudioBuffer at_fc = tone(fc);
    double drop_fc = 20.0 * std::log10(steady_rms(apply_attack(at_fc, spec)) /
                                       steady_rms(at_fc));
    REQUIRE(drop_fc == Catch::Approx(-3.0).margin(0.3));

    AudioBuffer low = tone(500.0);
    double drop_low = 20.0 * std::log10(steady_rms(apply_attack(low, spec)) /
                                        steady_rms(low));
    REQUIRE(std::abs(drop_low) < 0.5);

    AudioBuffer high = tone(12000.0);
    double drop_high = 20.0 * std::log10(steady_rms(apply_attack(high, spec)) /
                                         steady_rms(high));
    REQUIRE(drop_high < -15.0);
}

TEST_CASE("bandpass passes the center and rejects far bands") {
    AttackSpec spec{AttackKind::BF, 0, {{"center_hz", 1000.0}, {"q", 1.0}}};
    AudioBuffer center = tone(1000.0);
    double drop_c = 20.0 * std::log10(steady_rms(apply_attack(center, spec)) /
                                      steady_rms(center));
    REQUIRE(std::abs(drop_c) < 0.5);
    AudioBuffer far = tone(8000.0);
    double drop_f = 20.0 * std::log10(steady_rms(apply_attack(far, spec)) /
                                      steady_rms(far));
    REQUIRE(drop_f < -10.0);
}

TEST_CASE("moving average matches a direct oracle") {
    AudioBuffer x;
    x.samples = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    AttackSpec spec{AttackKind::SM, 0, {{"window", 2}}};
    AudioBuffer y = apply_attack(x, spec);
    // window 2 starting at i-1: mean(x[i-1], x[i]) with edge zero-fill
    REQUIRE(y.samples[0] == Catch::Approx(0.5).margin(1e-12));
    for (std::size_t i = 1; i < x.size(); ++i)
        REQUIRE(y.samples[i] ==
                Catch::Approx((x.samples[i - 1] + x.samples[i]) / 2.0).margin(1e-12));
}

TEST_CASE("spectrogram masking removes energy deterministically") {
    AudioBuffer x = music_like(13);
    AttackSpec spec = sample_attack_spec(AttackKind::SPAUG, 21);
    AudioBuffer y1 = apply_attack(x, spec);
    AudioBuffer y2 = apply_attack(x, spec);
    REQUIRE(y1.samples == y2.samples);
    double ey = 0.0, ex = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        ex += x.samples[i] * x.samples[i];
        ey += y1.samples[i] * y1.samples[i];
    }
    REQUIRE(ey < ex);
    REQUIRE(ey > 0.25 * ex);  // stripes are narrow
}

TEST_CASE("resample round trip is benign in-band and kills super-Nyquist") {
    AudioBuffer x = tone(1000.0);
    AttackSpec spec{AttackKind::RS, 0, {{"rate", 16000}}};
    AudioBuffer y = apply_attack(x, spec);
    AudioBuffer xt = x, yt = y;
    xt.samples.resize(std::min(xt.size(), yt.size()));
    yt.samples.resize(xt.size());
    REQUIRE(snr_db(xt, yt) > 25.0);

    // 15 kHz cannot survive a 16 kHz bottleneck
    AudioBuffer hi = tone(15000.0);
    AudioBuffer gone = apply_attack(hi, spec);
    REQUIRE(steady_rms(gone) < 0.05 * steady_rms(hi));
}

TEST_CASE("reverb keeps the direct path") {
    AudioBuffer x;
    x.samples.assign(44100, 0.0);
    x.samples[0] = 1.0;
    AttackSpec spec{AttackKind::RV, 17, {{"rt60_s", 0.4}}};
    AudioBuffer y = apply_attack(x, spec);
    REQUIRE(y.samples[0] == Catch::Approx(1.0).margin(1e-9));
    double tail = 0.0;
    for (std::size_t i = 1; i < y.size(); ++i) tail += y.samples[i] * y.samples[i];
    REQUIRE(tail > 0.0);
    REQUIRE(tail < 1.0);
}

TEST_CASE("speed change preserves pitch") {
    AudioBuffer x = tone(440.0, 88200);
    for (double speed : {0.9, 1.1}) {
        AttackSpec spec{AttackKind::SPD, 0, {{"speed", speed}}};
        AudioBuffer y = apply_attack(x, spec);
        auto want = static_cast<std::ptrdiff_t>(std::lround(x.size() / speed));
        REQUIRE(std::abs(static_cast<std::ptrdiff_t>(y.size()) - want) <= 1);
        REQUIRE(dominant_hz(y) == Catch::Approx(440.0).margin(5.0));
    }
}

TEST_CASE("pitch shift moves the dominant frequency") {
    AudioBuffer x = tone(440.0, 88200);
    for (double st : {-2.0, 2.0}) {
        AttackSpec spec{AttackKind::PCH, 0, {{"semitones", st}}};
        AudioBuffer y = apply_attack(x, spec);
        REQUIRE(y.size() == x.size());
        double want = 440.0 * std::pow(2.0, st / 12.0);
        REQUIRE(dominant_hz(y) == Catch::Approx(want).epsilon(0.02));
    }
}

TEST_CASE("combined speed and pitch") {
    AudioBuffer x = tone(440.0, 88200);
    AttackSpec spec{AttackKind::SPCH, 0, {{"speed", 1.05}, {"semitones", 1.0}}};
    AudioBuffer y = apply_attack(x, spec);
    auto want = static_cast<std::ptrdiff_t>(std::lround(x.size() / 1.05));
    REQUIRE(std::abs(static_cast<std::ptrdiff_t>(y.size()) - want) <= 1);
    REQUIRE(dominant_hz(y) ==
            Catch::Approx(440.0 * std::pow(2.0, 1.0 / 12.0)).epsilon(0.02));
}

TEST_CASE("apply_category honors the contract") {
    AudioBuffer x = music_like(19);
    CategoryResult o = apply_category(x, AttackCategory::Origin, 1);
    REQUIRE(o.audio.samples == x.samples);
    REQUIRE(!o.spec.has_value());

    for (auto c : {AttackCategory::BasicNoise, AttackCategory::Filter,
                   AttackCategory::TimePitch}) {
        CategoryResult r1 = apply_category(x, c, 5);
        CategoryResult r2 = apply_category(x, c, 5);
        REQUIRE(r1.spec.has_value());
        REQUIRE(r1.audio.samples == r2.audio.samples);
        REQUIRE(r1.spec->params == r2.spec->params);
        const auto& m = category_members(c);
        REQUIRE(std::find(m.begin(), m.end(), r1.spec->kind) != m.end());
    }

    // the draw actually varies with the seed
    std::set<std::string> seen;
    for (std::uint64_t s = 0; s < 24; ++s)
        seen.insert(attack_kind_name(
            apply_category(x, AttackCategory::BasicNoise, s).spec->kind));
    REQUIRE(seen.size() >= 3);
}

TEST_CASE("phase vocoder at unit stretch is near-transparent") {
    AudioBuffer x = music_like(23);
    AudioBuffer y = pv_time_stretch(x, 1.0);
    REQUIRE(y.samples == x.samples);

    AudioBuffer z = pv_speed(x, 1.0);
    REQUIRE(z.size() == x.size());
}

TEST_CASE("sinc resampler round trips a band-limited signal") {
    AudioBuffer x = tone(997.0, 44100);
    std::vector<double> up = sinc_resample(x.samples, 32000.0 / 44100.0);
    std::vector<double> back = sinc_resample(up, 44100.0 / 32000.0, x.size());
    AudioBuffer y;
    y.samples = std::move(back);
    REQUIRE(snr_db(x, y) > 40.0);
    REQUIRE_THROWS_AS(sinc_resample(x.samples, -1.0), Error);
}
