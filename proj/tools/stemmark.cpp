// stemmark: embed/decode watermarks, attack, separate, evaluate, and run the
// toy joint-training demonstration. JSON config + flag overrides; every run
// logs the fully resolved config and all randomness flows from one seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "stemmark/attacks.hpp"
#include "stemmark/codec.hpp"
#include "stemmark/eval.hpp"
#include "stemmark/separator.hpp"
#include "stemmark/train.hpp"
#include "stemmark/wav.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using namespace stemmark;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("STEMMARK_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            fail(ErrorKind::argument, "STEMMARK_SEED must be an integer");
        }
    }
    return 0;
}

void log_config(const ordered_json& cfg) {
    std::cerr << "config: " << cfg.dump() << "\n";
}

// --dry-run contract: print the resolved config, touch nothing
bool finish_dry_run(bool dry, const ordered_json& cfg) {
    log_config(cfg);
    if (dry) std::cout << cfg.dump(2) << "\n";
    return dry;
}

// key/payload arguments accept either a file path or the literal value
WatermarkKey load_key_arg(const std::string& arg) {
    if (std::filesystem::exists(arg)) return read_key_file(arg);
    return key_from_hex(arg);
}

Payload load_payload_arg(const std::string& arg) {
    if (std::filesystem::exists(arg)) return read_payload_file(arg);
    return payload_from_string(arg);
}

json load_config_file(const std::string& path,
                      const std::vector<std::string>& allowed) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::io, "cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("config parse error: ") + e.what());
    }
    require(j.is_object(), ErrorKind::format, "config must be a JSON object");
    for (const auto& [k, v] : j.items())
        require(std::find(allowed.begin(), allowed.end(), k) != allowed.end(),
                ErrorKind::format, "unknown config key: " + k);
    return j;
}

AttackCategory category_from_name(const std::string& s) {
    for (AttackCategory c : {AttackCategory::Origin, AttackCategory::BasicNoise,
                             AttackCategory::Filter, AttackCategory::TimePitch})
        if (attack_category_name(c) == s) return c;
    fail(ErrorKind::argument, "unknown attack category: " + s);
}

// ---------------------------------------------------------------------------

int cmd_embed(const std::string& in, const std::string& key_arg,
              const std::string& bits_arg, const std::string& out, double gamma,
              std::size_t start, bool dry) {
    ordered_json cfg{{"command", "embed"}, {"in", in},      {"out", out},
                     {"gamma", gamma},     {"start", start}};
    if (finish_dry_run(dry, cfg)) return 0;

    AudioBuffer carrier = read_wav(in);
    WatermarkKey key = load_key_arg(key_arg);
    Payload payload = load_payload_arg(bits_arg);
    SegmentLocator loc{start, CodecConfig{}.segment_len};
    AudioBuffer seg = crop_segment(carrier, loc);
    AudioBuffer wm = embed_segment(seg, key, payload, EmbedStrength{gamma});
    write_wav(splice_segment(carrier, wm, loc), out);
    std::cout << "embedded " << kPayloadBits << " bits at sample " << start << "\n";
    return 0;
}

int cmd_decode(const std::string& in, const std::string& key_arg,
               std::size_t start, bool dry) {
    ordered_json cfg{{"command", "decode"}, {"in", in}, {"start", start}};
    if (finish_dry_run(dry, cfg)) return 0;

    AudioBuffer carrier = read_wav(in);
    WatermarkKey key = load_key_arg(key_arg);
    SegmentLocator loc{start, CodecConfig{}.segment_len};
    DecodeResult res = decode_segment(crop_segment(carrier, loc), key);
    std::cout << payload_to_string(res.payload) << "\n";
    return 0;
}

int cmd_attack(const std::string& in, const std::string& kind,
               const std::string& category, std::uint64_t seed,
               const std::string& out, bool dry) {
    ordered_json cfg{{"command", "attack"}, {"in", in},   {"kind", kind},
                     {"category", category}, {"seed", seed}, {"out", out}};
    if (finish_dry_run(dry, cfg)) return 0;
    require(kind.empty() != category.empty(), ErrorKind::argument,
            "attack: give exactly one of --kind / --category");

    AudioBuffer audio = read_wav(in);
    if (!kind.empty()) {
        AttackSpec spec = sample_attack_spec(attack_kind_from_name(kind), seed);
        write_wav(apply_attack(audio, spec), out);
        std::cout << "applied " << kind << "\n";
    } else {
        CategoryResult res = apply_category(audio, category_from_name(category), seed);
        write_wav(res.audio, out);
        std::cout << "applied "
                  << (res.spec ? attack_kind_name(res.spec->kind) : "Origin") << "\n";
    }
    return 0;
}

int cmd_separate(const std::string& in, const std::string& checkpoint,
                 const std::string& ref1, const std::string& ref2,
                 const std::string& out_prefix, bool dry) {
    ordered_json cfg{{"command", "separate"},
                     {"in", in},
                     {"checkpoint", checkpoint},
                     {"out_prefix", out_prefix}};
    if (finish_dry_run(dry, cfg)) return 0;

    AudioBuffer mix = read_wav(in);
    SeparationOutput sep;
    if (!checkpoint.empty()) {
        sep = MlpSeparator::load(checkpoint).separate(mix);
    } else {
        require(!ref1.empty() && !ref2.empty(), ErrorKind::argument,
                "separate: oracle mode needs --ref1 and --ref2");
        sep = oracle_mask_separate(mix, {read_wav(ref1), read_wav(ref2)});
    }
    for (std::size_t s = 0; s < kNumStems; ++s)
        write_wav(sep.stems[s],
                  out_prefix + ".stem" + std::to_string(s + 1) + ".wav");
    std::cout << "wrote " << kNumStems << " stems\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path,
                 const std::optional<std::uint64_t>& seed_flag,
                 std::optional<std::size_t> items, std::optional<std::size_t> jobs,
                 const std::string& out_dir_flag, bool dry) {
    static const std::vector<std::string> keys{
        "seed",       "items",     "categories",          "stem_dir",
        "gamma",      "codec_checkpoint", "separator",    "separator_checkpoint",
        "jobs",       "out_dir"};
    json file = config_path.empty() ? json::object()
                                    : load_config_file(config_path, keys);

    EvalConfig cfg;
    cfg.master_seed = file.value("seed", std::uint64_t{0});
    if (seed_flag || std::getenv("STEMMARK_SEED"))
        cfg.master_seed = resolve_seed(seed_flag);
    cfg.items_per_category = file.value("items", std::size_t{100});
    if (items) cfg.items_per_category = *items;
    if (file.contains("categories")) {
        cfg.categories.clear();
        for (const auto& c : file.at("categories"))
            cfg.categories.push_back(category_from_name(c.get<std::string>()));
    }
    cfg.stem_dir = file.value("stem_dir", "");
    cfg.gamma = file.value("gamma", cfg.gamma);
    cfg.codec_checkpoint = file.value("codec_checkpoint", "");
    std::string sep_mode = file.value("separator", "oracle");
    require(sep_mode == "oracle" || sep_mode == "checkpoint", ErrorKind::format,
            "separator must be oracle or checkpoint");
    cfg.separator = sep_mode == "oracle" ? SeparatorChoice::oracle
                                         : SeparatorChoice::checkpoint;
    cfg.separator_checkpoint = file.value("separator_checkpoint", "");
    cfg.jobs = file.value("jobs", std::size_t{1});
    if (jobs) cfg.jobs = *jobs;
    std::string out_dir = file.value("out_dir", ".");
    if (!out_dir_flag.empty()) out_dir = out_dir_flag;

    ordered_json resolved{{"command", "evaluate"},
                          {"seed", cfg.master_seed},
                          {"items", cfg.items_per_category},
                          {"stem_dir", cfg.stem_dir},
                          {"gamma", cfg.gamma},
                          {"codec_checkpoint", cfg.codec_checkpoint},
                          {"separator", sep_mode},
                          {"separator_checkpoint", cfg.separator_checkpoint},
                          {"jobs", cfg.jobs},
                          {"out_dir", out_dir}};
    resolved["categories"] = ordered_json::array();
    for (AttackCategory c : cfg.categories)
        resolved["categories"].push_back(attack_category_name(c));
    if (finish_dry_run(dry, resolved)) return 0;

    EvalReport report = run_separation_first_eval(cfg);
    std::filesystem::create_directories(out_dir);
    emit_report(report, out_dir + "/report.json", ReportFormat::json);
    emit_report(report, out_dir + "/report.csv", ReportFormat::csv);
    std::cout << format_ber_table(report);
    return 0;
}

int cmd_train_toy(const std::string& config_path,
                  const std::optional<std::uint64_t>& seed_flag,
                  std::optional<std::size_t> steps, const std::string& out_dir_flag,
                  bool dry) {
    static const std::vector<std::string> keys{
        "seed",        "steps",        "batch",       "lr_separator",
        "lr_codec",    "attack_start_step", "phase2_step", "wiring",
        "probe_every", "probe_items",  "analysis_pad", "hidden",
        "pretrain_steps", "out_dir"};
    json file = config_path.empty() ? json::object()
                                    : load_config_file(config_path, keys);

    TrainConfig cfg;
    cfg.seed = file.value("seed", std::uint64_t{0});
    if (seed_flag || std::getenv("STEMMARK_SEED")) cfg.seed = resolve_seed(seed_flag);
    cfg.steps = file.value("steps", cfg.steps);
    if (steps) cfg.steps = *steps;
    cfg.batch = file.value("batch", cfg.batch);
    cfg.lr_separator = file.value("lr_separator", cfg.lr_separator);
    cfg.lr_codec = file.value("lr_codec", cfg.lr_codec);
    cfg.attack_start_step = file.value("attack_start_step", cfg.attack_start_step);
    cfg.phase2_step = file.value("phase2_step", cfg.phase2_step);
    std::string wiring = file.value("wiring", "sep_loss_only");
    require(wiring == "sep_loss_only" || wiring == "sep_loss_plus_bce",
            ErrorKind::format, "wiring must be sep_loss_only or sep_loss_plus_bce");
    cfg.wiring = wiring == "sep_loss_only" ? Wiring::sep_loss_only
                                           : Wiring::sep_loss_plus_bce;
    cfg.probe_every = file.value("probe_every", cfg.probe_every);
    cfg.probe_items = file.value("probe_items", cfg.probe_items);
    cfg.analysis_pad = file.value("analysis_pad", cfg.analysis_pad);
    cfg.sep.hidden = file.value("hidden", cfg.sep.hidden);
    std::size_t pretrain_steps = file.value("pretrain_steps", std::size_t{200});
    std::string out_dir = file.value("out_dir", ".");
    if (!out_dir_flag.empty()) out_dir = out_dir_flag;

    ordered_json resolved{{"command", "train-toy"},
                          {"seed", cfg.seed},
                          {"steps", cfg.steps},
                          {"batch", cfg.batch},
                          {"lr_separator", cfg.lr_separator},
                          {"lr_codec", cfg.lr_codec},
                          {"attack_start_step", cfg.attack_start_step},
                          {"phase2_step", cfg.phase2_step},
                          {"wiring", wiring},
                          {"probe_every", cfg.probe_every},
                          {"probe_items", cfg.probe_items},
                          {"analysis_pad", cfg.analysis_pad},
                          {"hidden", cfg.sep.hidden},
                          {"pretrain_steps", pretrain_steps},
                          {"out_dir", out_dir}};
    if (finish_dry_run(dry, resolved)) return 0;

    std::filesystem::create_directories(out_dir);
    MlpSeparator pretrained =
        pretrain_separator(cfg, pretrain_steps, derive_seed(cfg.seed, "pretrain"));
    pretrained.save(out_dir + "/separator_pretrained.json");

    TrainableCodec codec0 = TrainableCodec::reference(cfg.codec);
    double ber_before = probe_post_separation_ber(
        cfg, codec0, pretrained, derive_seed(cfg.seed, "final_probe"),
        cfg.probe_items);

    TrainResult result = train_joint(cfg, codec0, pretrained, out_dir);
    write_curves_csv(result.curves, out_dir + "/curves.csv");
    double ber_after = probe_post_separation_ber(
        cfg, result.codec, result.separator, derive_seed(cfg.seed, "final_probe"),
        cfg.probe_items);

    std::cout << "pretrained post-separation BER: " << 100.0 * ber_before << "%\n";
    std::cout << "joint-trained post-separation BER: " << 100.0 * ber_after << "%\n";
    if (result.diverged) std::cout << "warning: training diverged, kept last good state\n";
    return 0;
}

int cmd_report(const std::string& in, bool dry) {
    ordered_json cfg{{"command", "report"}, {"in", in}};
    if (finish_dry_run(dry, cfg)) return 0;
    std::cout << format_ber_table(load_report(in));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"separation-first multi-stream audio watermarking lab"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    bool dry = false;
    std::optional<std::uint64_t> seed_flag;
    app.add_flag("--dry-run", dry, "print the resolved config and exit");
    app.add_option("--seed", seed_flag,
                   "master seed (fallback: STEMMARK_SEED env, then 0)");

    std::string in, out, key_arg, bits_arg, kind, category, checkpoint;
    std::string ref1, ref2, out_prefix, config_path, out_dir;
    double gamma = CodecConfig{}.default_gamma;
    std::size_t start = 0;
    std::optional<std::size_t> items, jobs, steps;

    auto* embed = app.add_subcommand("embed", "embed a payload into one segment");
    embed->add_option("--in", in, "input wav")->required();
    embed->add_option("--key", key_arg, "key file or 64 hex chars")->required();
    embed->add_option("--bits", bits_arg, "payload file or 32 bit chars")->required();
    embed->add_option("--out", out, "output wav")->required();
    embed->add_option("--gamma", gamma, "embedding strength");
    embed->add_option("--start", start, "segment start sample");

    auto* decode = app.add_subcommand("decode", "decode a payload from one segment");
    decode->add_option("--in", in, "input wav")->required();
    decode->add_option("--key", key_arg, "key file or 64 hex chars")->required();
    decode->add_option("--start", start, "segment start sample");

    auto* attack = app.add_subcommand("attack", "apply one attack or category");
    attack->add_option("--in", in, "input wav")->required();
    attack->add_option("--kind", kind, "attack kind (N, LP, SPD, ...)");
    attack->add_option("--category", category, "attack category name");
    attack->add_option("--out", out, "output wav")->required();

    auto* separate = app.add_subcommand("separate", "split a mixture into stems");
    separate->add_option("--in", in, "mixture wav")->required();
    separate->add_option("--checkpoint", checkpoint, "separator checkpoint json");
    separate->add_option("--ref1", ref1, "oracle reference stem 1");
    separate->add_option("--ref2", ref2, "oracle reference stem 2");
    separate->add_option("--out-prefix", out_prefix, "output prefix")->required();

    auto* evaluate = app.add_subcommand("evaluate", "separation-first robustness eval");
    evaluate->add_option("--config", config_path, "eval config json");
    evaluate->add_option("--items", items, "items per category");
    evaluate->add_option("--jobs", jobs, "parallel workers");
    evaluate->add_option("--out-dir", out_dir, "report output directory");

    auto* train = app.add_subcommand("train-toy", "toy joint-training demonstration");
    train->add_option("--config", config_path, "train config json");
    train->add_option("--steps", steps, "joint training steps");
    train->add_option("--out-dir", out_dir, "checkpoint output directory");

    auto* report = app.add_subcommand("report", "print the table for a saved report");
    report->add_option("--in", in, "report.json path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (embed->parsed())
            return cmd_embed(in, key_arg, bits_arg, out, gamma, start, dry);
        if (decode->parsed()) return cmd_decode(in, key_arg, start, dry);
        if (attack->parsed())
            return cmd_attack(in, kind, category, resolve_seed(seed_flag), out, dry);
        if (separate->parsed())
            return cmd_separate(in, checkpoint, ref1, ref2, out_prefix, dry);
        if (evaluate->parsed())
            return cmd_evaluate(config_path, seed_flag, items, jobs, out_dir, dry);
        if (train->parsed())
            return cmd_train_toy(config_path, seed_flag, steps, out_dir, dry);
        if (report->parsed()) return cmd_report(in, dry);
    } catch (const stemmark::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
