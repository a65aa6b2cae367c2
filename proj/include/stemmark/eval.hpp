#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stemmark/attacks.hpp"
#include "stemmark/audio.hpp"
#include "stemmark/codec.hpp"
#include "stemmark/common.hpp"
#include "stemmark/loudness.hpp"
#include "stemmark/metrics.hpp"
#include "stemmark/resample.hpp"
#include "stemmark/separator.hpp"
#include "stemmark/synth.hpp"
#include "stemmark/train.hpp"
#include "stemmark/wav.hpp"

namespace stemmark {

// ---------------------------------------------------------------------------
// Separation-first robustness evaluation:
// embed -> splice -> normalize -> mix -> attack -> separate -> extract -> decode

enum class SeparatorChoice { oracle, checkpoint };

struct EvalConfig {
    std::uint64_t master_seed = 0;
    std::size_t items_per_category = 100;
    std::vector<AttackCategory> categories{
        AttackCategory::Origin, AttackCategory::BasicNoise,
        AttackCategory::Filter, AttackCategory::TimePitch};
    // dataset: synthetic generator by default, or a directory of
    // <id>.stem1.wav / <id>.stem2.wav pairs
    SyntheticStemSet stems;
    std::string stem_dir;
    // codec: reference spread-spectrum at the given strength, or a trained
    // checkpoint
    CodecConfig codec;
    double gamma = CodecConfig{}.default_gamma;
    std::string codec_checkpoint;
    SeparatorChoice separator = SeparatorChoice::oracle;
    std::string separator_checkpoint;
    std::size_t jobs = 1;
};

struct ItemRecord {
    std::string category;
    std::size_t stem = 0;
    std::size_t item = 0;             // index within the category
    std::string attack = "Origin";    // kind name, or "Origin" for identity
    std::map<std::string, double> attack_params;
    std::uint64_t attack_seed = 0;
    std::size_t locator_start = 0;
    double ber_percent = 0.0;
    double wm_snr_db = 0.0;
    double wm_nmr = 0.0;
    double sep_si_snr_db = 0.0;

    bool operator==(const ItemRecord&) const = default;
};

struct CategoryAggregate {
    std::string category;
    std::size_t stem = 0;
    std::size_t items = 0;
    double mean_ber_percent = 0.0;

    bool operator==(const CategoryAggregate&) const = default;
};

struct EvalReport {
    std::string schema = "stemmark-eval-report/1";
    std::uint64_t master_seed = 0;
    std::vector<ItemRecord> items;  // category-major, then item, then stem
    std::vector<CategoryAggregate> aggregates;
    // Table 2 shape: watermark imperceptibility per stem
    std::array<double, kNumStems> mean_wm_snr_db{};
    std::array<double, kNumStems> mean_wm_nmr{};
    // Table 3 shape: separation quality on clean vs watermarked mixtures,
    // computed on Origin-category items
    bool has_separation_table = false;
    std::array<double, kNumStems> sdr_before{}, sdr_after{};
    std::array<double, kNumStems> si_sdr_before{}, si_sdr_after{};

    bool operator==(const EvalReport&) const = default;
};

namespace eval_detail {

// per-item work product folded into the report in fixed order
struct ItemResult {
    std::array<ItemRecord, kNumStems> records;
    bool origin_metrics = false;
    std::array<double, kNumStems> sdr_before{}, sdr_after{};
    std::array<double, kNumStems> si_sdr_before{}, si_sdr_after{};
};

struct StemDataset {
    std::vector<std::array<std::string, kNumStems>> pairs;
};

inline StemDataset scan_stem_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), ErrorKind::io,
            "eval: stem directory not found: " + dir);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        std::string tail = ".stem1.wav";
        if (name.size() > tail.size() &&
            name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
            ids.push_back(name.substr(0, name.size() - tail.size()));
    }
    std::sort(ids.begin(), ids.end());
    require(!ids.empty(), ErrorKind::io, "eval: no .stem1.wav files in " + dir);
    StemDataset ds;
    for (const auto& id : ids) {
        std::array<std::string, kNumStems> p{dir + "/" + id + ".stem1.wav",
                                             dir + "/" + id + ".stem2.wav"};
        require(fs::exists(p[1]), ErrorKind::io,
                "eval: missing pair file " + p[1]);
        ds.pairs.push_back(p);
    }
    return ds;
}

// Codec front: reference path or trained checkpoint, one interface.
struct CodecFront {
    CodecConfig cfg;
    double gamma;
    std::optional<TrainableCodec> trained;

    AudioBuffer embed(const AudioBuffer& seg, const PatternBank& bank,
                      const Payload& payload) const {
        if (trained) {
            EmbedCache cache;
            return codec_embed_forward(*trained, bank, payload, seg, cache);
        }
        return embed_segment_with_bank(seg, bank, payload, gamma, cfg);
    }

    Payload decode(const AudioBuffer& seg, const PatternBank& bank) const {
        if (trained) {
            DecodeCache cache;
            std::vector<double> scores = codec_decode_scores(*trained, bank, seg, cache);
            Payload p;
            p.bits.resize(kPayloadBits);
            for (std::size_t b = 0; b < kPayloadBits; ++b)
                p.bits[b] =
                    trained->dec_scale * scores[b] + trained->dec_bias > 0.0 ? 1 : 0;
            return p;
        }
        return decode_segment_with_bank(seg, bank, cfg).payload;
    }
};

inline ItemResult eval_one_item(const EvalConfig& cfg, const CodecFront& codec,
                                const MlpSeparator* mlp, AttackCategory category,
                                std::size_t item_index, const StemDataset* dataset) {
    std::uint64_t item_seed = derive_seed(
        cfg.master_seed,
        std::string("eval/") + attack_category_name(category), item_index);

    // dataset item: carriers + locator
    StemPair pair;
    if (dataset) {
        const auto& paths = dataset->pairs[item_index % dataset->pairs.size()];
        pair.stem_a = read_wav(paths[0]);
        pair.stem_b = read_wav(paths[1]);
        require(pair.stem_a.size() == pair.stem_b.size(), ErrorKind::format,
                "eval: stem pair length mismatch: " + paths[0]);
        require(pair.stem_a.size() >= cfg.codec.segment_len, ErrorKind::format,
                "eval: stems shorter than one segment: " + paths[0]);
        Rng rng(derive_seed(item_seed, "locator", 0));
        pair.locator.start = static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<std::int64_t>(pair.stem_a.size() - cfg.codec.segment_len)));
        pair.locator.length = cfg.codec.segment_len;
    } else {
        pair = synth_two_stem_batch(cfg.stems, 1, item_seed)[0];
    }
    const AudioBuffer* carriers[kNumStems] = {&pair.stem_a, &pair.stem_b};

    // embed + splice + normalize per stem; keep clean normalized stems for
    // the Table-3 comparison
    Rng kr(derive_seed(item_seed, "keys", 0));
    std::array<PatternBank, kNumStems> banks;
    std::array<Payload, kNumStems> payloads;
    std::array<AudioBuffer, kNumStems> wm_norm, clean_norm;
    std::array<double, kNumStems> wm_snr{}, wm_nmr{};
    for (std::size_t s = 0; s < kNumStems; ++s) {
        WatermarkKey key = random_key(kr);
        banks[s] = derive_pattern_bank(key, cfg.codec);
        payloads[s] = Payload::random(kr);
        AudioBuffer seg = crop_segment(*carriers[s], pair.locator);
        AudioBuffer wm_seg = codec.embed(seg, banks[s], payloads[s]);
        wm_snr[s] = snr_db(seg, wm_seg);
        wm_nmr[s] = nmr_ratio(seg, wm_seg);
        AudioBuffer full = splice_segment(*carriers[s], wm_seg, pair.locator);
        wm_norm[s] = normalize_to_lufs(full);
        clean_norm[s] = normalize_to_lufs(*carriers[s]);
    }

    AudioBuffer mixture;
    mixture.samples.assign(wm_norm[0].size(), 0.0);
    for (std::size_t s = 0; s < kNumStems; ++s)
        for (std::size_t i = 0; i < mixture.size(); ++i)
            mixture.samples[i] += wm_norm[s].samples[i];

    // one attack per item, applied to the mixture
    std::uint64_t attack_seed = derive_seed(item_seed, "attack", 0);
    CategoryResult attacked = apply_category(mixture, category, attack_seed);

    // references for the oracle and for SI-SNR diagnostics get the same
    // attack, per stem
    std::array<AudioBuffer, kNumStems> ref_attacked;
    for (std::size_t s = 0; s < kNumStems; ++s)
        ref_attacked[s] = attacked.spec ? apply_attack(wm_norm[s], *attacked.spec)
                                        : wm_norm[s];

    SeparationOutput sep =
        mlp ? mlp->separate(attacked.audio)
            : oracle_mask_separate(attacked.audio, ref_attacked);

    // aligned extraction: under time-scaling attacks the locator scales
    // with the length change and the slice is resampled back to 2 s
    double scale =
        static_cast<double>(attacked.audio.size()) / mixture.size();
    std::size_t seg_len = cfg.codec.segment_len;
    std::size_t ext_start = static_cast<std::size_t>(
        std::llround(pair.locator.start * scale));
    std::size_t ext_len = static_cast<std::size_t>(std::llround(seg_len * scale));
    ext_len = std::min(ext_len, attacked.audio.size());
    ext_start = std::min(ext_start, attacked.audio.size() - ext_len);

    ItemResult out;
    for (std::size_t s = 0; s < kNumStems; ++s) {
        AudioBuffer slice;
        slice.samples.assign(sep.stems[s].samples.begin() + ext_start,
                             sep.stems[s].samples.begin() + ext_start + ext_len);
        if (slice.size() != seg_len)
            slice.samples = sinc_resample(
                slice.samples, static_cast<double>(seg_len) / slice.size(), seg_len);
        Payload decoded = codec.decode(slice, banks[s]);

        ItemRecord& r = out.records[s];
        r.category = attack_category_name(category);
        r.stem = s;
        r.item = item_index;
        if (attacked.spec) {
            r.attack = attack_kind_name(attacked.spec->kind);
            r.attack_params = attacked.spec->params;
            r.attack_seed = attacked.spec->seed;
        }
        r.locator_start = pair.locator.start;
        r.ber_percent = 100.0 * bit_error_rate(payloads[s].bits, decoded.bits);
        r.wm_snr_db = wm_snr[s];
        r.wm_nmr = wm_nmr[s];
        r.sep_si_snr_db = si_snr_db(ref_attacked[s], sep.stems[s]);
    }

    // Table 3: separation quality with and without the watermark, measured
    // on unattacked items only
    if (category == AttackCategory::Origin) {
        AudioBuffer clean_mix;
        clean_mix.samples.assign(clean_norm[0].size(), 0.0);
        for (std::size_t s = 0; s < kNumStems; ++s)
            for (std::size_t i = 0; i < clean_mix.size(); ++i)
                clean_mix.samples[i] += clean_norm[s].samples[i];
        SeparationOutput before =
            mlp ? mlp->separate(clean_mix)
                : oracle_mask_separate(clean_mix, clean_norm);
        out.origin_metrics = true;
        for (std::size_t s = 0; s < kNumStems; ++s) {
            out.sdr_before[s] = sdr_db(clean_norm[s], before.stems[s]);
            out.si_sdr_before[s] = si_sdr_db(clean_norm[s], before.stems[s]);
            out.sdr_after[s] = sdr_db(wm_norm[s], sep.stems[s]);
            out.si_sdr_after[s] = si_sdr_db(wm_norm[s], sep.stems[s]);
        }
    }
    return out;
}

}  // namespace eval_detail

inline EvalReport run_separation_first_eval(const EvalConfig& cfg) {
    using namespace eval_detail;
    require(cfg.items_per_category >= 1, ErrorKind::argument,
            "eval: items_per_category must be >= 1");
    require(!cfg.categories.empty(), ErrorKind::argument,
            "eval: no categories requested");

    CodecFront codec{cfg.codec, cfg.gamma, std::nullopt};
    if (!cfg.codec_checkpoint.empty())
        codec.trained = TrainableCodec::load(cfg.codec_checkpoint, cfg.codec);

    std::optional<MlpSeparator> mlp;
    if (cfg.separator == SeparatorChoice::checkpoint) {
        require(!cfg.separator_checkpoint.empty(), ErrorKind::argument,
                "eval: separator checkpoint path required");
        mlp = MlpSeparator::load(cfg.separator_checkpoint);
    }

    std::optional<StemDataset> dataset;
    if (!cfg.stem_dir.empty()) dataset = scan_stem_dir(cfg.stem_dir);

    // flat task list in fixed report order; workers fill pre-assigned slots
    struct Task {
        AttackCategory category;
        std::size_t item;
    };
    std::vector<Task> tasks;
    for (AttackCategory c : cfg.categories)
        for (std::size_t i = 0; i < cfg.items_per_category; ++i)
            tasks.push_back({c, i});
    std::vector<ItemResult> results(tasks.size());

    std::size_t jobs = std::max<std::size_t>(cfg.jobs, 1);
    auto worker = [&](std::size_t w) {
        for (std::size_t t = w; t < tasks.size(); t += jobs)
            results[t] = eval_one_item(cfg, codec, mlp ? &*mlp : nullptr,
                                       tasks[t].category, tasks[t].item,
                                       dataset ? &*dataset : nullptr);
    };
    if (jobs == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker, w);
        for (auto& th : pool) th.join();
    }

    EvalReport report;
    report.master_seed = cfg.master_seed;
    for (const auto& r : results)
        for (std::size_t s = 0; s < kNumStems; ++s)
            report.items.push_back(r.records[s]);

    for (AttackCategory c : cfg.categories)
        for (std::size_t s = 0; s < kNumStems; ++s) {
            CategoryAggregate agg;
            agg.category = attack_category_name(c);
            agg.stem = s;
            for (const auto& rec : report.items)
                if (rec.category == agg.category && rec.stem == s) {
                    agg.mean_ber_percent += rec.ber_percent;
                    ++agg.items;
                }
            agg.mean_ber_percent /= agg.items;
            report.aggregates.push_back(agg);
        }

    for (std::size_t s = 0; s < kNumStems; ++s) {
        std::size_t n = 0;
        for (const auto& rec : report.items)
            if (rec.stem == s) {
                report.mean_wm_snr_db[s] += rec.wm_snr_db;
                report.mean_wm_nmr[s] += rec.wm_nmr;
                ++n;
            }
        report.mean_wm_snr_db[s] /= n;
        report.mean_wm_nmr[s] /= n;
    }

    std::size_t n_origin = 0;
    for (const auto& r : results)
        if (r.origin_metrics) {
            ++n_origin;
            for (std::size_t s = 0; s < kNumStems; ++s) {
                report.sdr_before[s] += r.sdr_before[s];
                report.si_sdr_before[s] += r.si_sdr_before[s];
                report.sdr_after[s] += r.sdr_after[s];
                report.si_sdr_after[s] += r.si_sdr_after[s];
            }
        }
    if (n_origin > 0) {
        report.has_separation_table = true;
        for (std::size_t s = 0; s < kNumStems; ++s) {
            report.sdr_before[s] /= n_origin;
            report.si_sdr_before[s] /= n_origin;
            report.sdr_after[s] /= n_origin;
            report.si_sdr_after[s] /= n_origin;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["schema"] = r.schema;
    j["master_seed"] = r.master_seed;
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : r.aggregates)
        j["aggregates"].push_back({{"category", a.category},
                                   {"stem", a.stem},
                                   {"items", a.items},
                                   {"mean_ber_percent", a.mean_ber_percent}});
    j["perceptual"] = {{"mean_wm_snr_db", r.mean_wm_snr_db},
                       {"mean_wm_nmr", r.mean_wm_nmr}};
    if (r.has_separation_table)
        j["separation"] = {{"sdr_before", r.sdr_before},
                           {"sdr_after", r.sdr_after},
                           {"si_sdr_before", r.si_sdr_before},
                           {"si_sdr_after", r.si_sdr_after}};
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& rec : r.items) {
        nlohmann::ordered_json ji;
        ji["category"] = rec.category;
        ji["stem"] = rec.stem;
        ji["item"] = rec.item;
        ji["attack"] = rec.attack;
        ji["attack_params"] = rec.attack_params;
        ji["attack_seed"] = rec.attack_seed;
        ji["locator_start"] = rec.locator_start;
        ji["ber_percent"] = rec.ber_percent;
        ji["wm_snr_db"] = rec.wm_snr_db;
        ji["wm_nmr"] = rec.wm_nmr;
        ji["sep_si_snr_db"] = rec.sep_si_snr_db;
        j["items"].push_back(std::move(ji));
    }
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.schema = j.at("schema").get<std::string>();
        require(r.schema == EvalReport{}.schema, ErrorKind::format,
                "report: unsupported schema " + r.schema);
        r.master_seed = j.at("master_seed").get<std::uint64_t>();
        for (const auto& ja : j.at("aggregates")) {
            CategoryAggregate a;
            a.category = ja.at("category").get<std::string>();
            a.stem = ja.at("stem").get<std::size_t>();
            a.items = ja.at("items").get<std::size_t>();
            a.mean_ber_percent = ja.at("mean_ber_percent").get<double>();
            r.aggregates.push_back(a);
        }
        r.mean_wm_snr_db =
            j.at("perceptual").at("mean_wm_snr_db").get<std::array<double, kNumStems>>();
        r.mean_wm_nmr =
            j.at("perceptual").at("mean_wm_nmr").get<std::array<double, kNumStems>>();
        if (j.contains("separation")) {
            r.has_separation_table = true;
            const auto& js = j.at("separation");
            r.sdr_before = js.at("sdr_before").get<std::array<double, kNumStems>>();
            r.sdr_after = js.at("sdr_after").get<std::array<double, kNumStems>>();
            r.si_sdr_before =
                js.at("si_sdr_before").get<std::array<double, kNumStems>>();
            r.si_sdr_after =
                js.at("si_sdr_after").get<std::array<double, kNumStems>>();
        }
        for (const auto& ji : j.at("items")) {
            ItemRecord rec;
            rec.category = ji.at("category").get<std::string>();
            rec.stem = ji.at("stem").get<std::size_t>();
            rec.item = ji.at("item").get<std::size_t>();
            rec.attack = ji.at("attack").get<std::string>();
            rec.attack_params =
                ji.at("attack_params").get<std::map<std::string, double>>();
            rec.attack_seed = ji.at("attack_seed").get<std::uint64_t>();
            rec.locator_start = ji.at("locator_start").get<std::size_t>();
            rec.ber_percent = ji.at("ber_percent").get<double>();
            rec.wm_snr_db = ji.at("wm_snr_db").get<double>();
            rec.wm_nmr = ji.at("wm_nmr").get<double>();
            rec.sep_si_snr_db = ji.at("sep_si_snr_db").get<double>();
            r.items.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("report: malformed json: ") + e.what());
    }
    return r;
}

enum class ReportFormat { json, csv };

inline void emit_report(const EvalReport& r, const std::string& path,
                        ReportFormat format) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), ErrorKind::io, "emit_report: cannot open " + path);
    if (format == ReportFormat::json) {
        f << report_to_json(r).dump(2) << "\n";
        return;
    }
    f.precision(17);
    f << "row,category,stem,item,attack,attack_seed,locator_start,"
         "ber_percent,wm_snr_db,wm_nmr,sep_si_snr_db\n";
    for (const auto& rec : r.items)
        f << "item," << rec.category << ',' << rec.stem << ',' << rec.item << ','
          << rec.attack << ',' << rec.attack_seed << ',' << rec.locator_start
          << ',' << rec.ber_percent << ',' << rec.wm_snr_db << ',' << rec.wm_nmr
          << ',' << rec.sep_si_snr_db << '\n';
    for (const auto& a : r.aggregates)
        f << "aggregate," << a.category << ',' << a.stem << ',' << a.items
          << ",,,," << a.mean_ber_percent << ",,,\n";
}

inline EvalReport load_report(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::io, "load_report: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("load_report: ") + e.what());
    }
    return report_from_json(j);
}

// Table-1-shaped text summary: one row per stem, one column per category.
inline std::string format_ber_table(const EvalReport& r) {
    std::vector<std::string> cats;
    for (const auto& a : r.aggregates)
        if (std::find(cats.begin(), cats.end(), a.category) == cats.end())
            cats.push_back(a.category);
    std::string out = "stem";
    for (const auto& c : cats) out += "\t" + c;
    out += "\n";
    for (std::size_t s = 0; s < kNumStems; ++s) {
        out += std::to_string(s + 1);
        for (const auto& c : cats)
            for (const auto& a : r.aggregates)
                if (a.category == c && a.stem == s) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "\t%.2f", a.mean_ber_percent);
                    out += buf;
                }
        out += "\n";
    }
    return out;
}

}  // namespace stemmark
