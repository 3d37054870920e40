// single entry point: corpus synthesis, two-stage training, token codec I/O,
// probing, evaluation, and the finite-difference suite
//
// exit codes: 0 success, 1 validation error (bad flags, bad config, bad
// inputs), 2 runtime failure

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xy/config.hpp"
#include "xy/eval.hpp"
#include "xy/gradcheck.hpp"
#include "xy/model.hpp"
#include "xy/synth.hpp"
#include "xy/train.hpp"
#include "xy/wav.hpp"

namespace {

using namespace xy;

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// config file -> --set overrides -> dedicated flags, strongest last
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
    RunConfig cfg = load_run_config(path);
    for (const std::string& s : sets) {
        const size_t eq = s.find('=');
        XY_CHECK(eq != std::string::npos && eq > 0, "--set expects section.key=value, got: " + s);
        apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

std::vector<TrainItem> load_split(const std::string& data_dir, const std::string& split,
                                  int expected_rate) {
    const std::string manifest = data_dir + "/" + split + ".jsonl";
    std::vector<TrainItem> items;
    for (const ManifestEntry& e : load_manifest(manifest)) {
        const Audio a = load_wav(resolve_audio_path(manifest, e.audio));
        XY_CHECK(a.sample_rate == expected_rate,
                 "sample rate mismatch in " + e.audio + ": expected " +
                     std::to_string(expected_rate) + ", got " + std::to_string(a.sample_rate));
        items.push_back({a.samples, e.text});
    }
    XY_CHECK(!items.empty(), "empty split: " + manifest);
    return items;
}

void write_trace(const std::string& path, const std::vector<nlohmann::json>& trace) {
    std::ofstream f(path, std::ios::binary);
    XY_CHECK(f.good(), "cannot open for write: " + path);
    for (const auto& row : trace) f << row.dump() << "\n";
    XY_CHECK(f.good(), "write failed: " + path);
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    XY_CHECK(f.good(), "cannot open for write: " + path);
    f << body;
    XY_CHECK(f.good(), "write failed: " + path);
}

// run snapshot next to the outputs: resolved config plus its hash
void write_run_snapshot(const std::string& out_dir, const RunConfig& cfg) {
    write_text(out_dir + "/config.ini", dump_run_config(cfg));
    std::cout << "config hash " << hash_hex(config_hash(cfg)) << "\n";
}

std::unique_ptr<XyCodec> load_model(const std::string& checkpoint) {
    std::unique_ptr<XyCodec> model = XyCodec::load(checkpoint);
    log_info("loaded checkpoint " + checkpoint);
    return model;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const CorpusSummary s = gen_corpus(cfg.corpus, out_dir);
    std::cout << "corpus written to " << out_dir << ": " << s.train.size() << " train, "
              << s.dev.size() << " dev, " << s.test.size() << " test utterances\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                 const std::string& checkpoint) {
    std::filesystem::create_directories(out_dir);
    std::unique_ptr<XyCodec> model =
        checkpoint.empty() ? std::make_unique<XyCodec>(cfg.model) : load_model(checkpoint);
    const std::vector<TrainItem> items =
        load_split(data_dir, "train", model->config().sample_rate);

    const std::vector<nlohmann::json> trace = run_pretrain(*model, items, cfg.pretrain);
    write_trace(out_dir + "/pretrain_trace.jsonl", trace);
    model->save(out_dir + "/model.ckpt");
    write_run_snapshot(out_dir, cfg);
    std::cout << "pretrained " << cfg.pretrain.steps << " steps on " << items.size()
              << " utterances; final losses " << trace.back()["losses"].dump() << "\n"
              << "checkpoint " << out_dir << "/model.ckpt\n";
    return 0;
}

int cmd_posttrain(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const std::string& checkpoint) {
    std::filesystem::create_directories(out_dir);
    std::unique_ptr<XyCodec> model = load_model(checkpoint);
    DiscriminatorSet discs(cfg.disc);
    const std::vector<TrainItem> items =
        load_split(data_dir, "train", model->config().sample_rate);

    const std::vector<nlohmann::json> trace = run_posttrain(*model, discs, items, cfg.posttrain);
    write_trace(out_dir + "/posttrain_trace.jsonl", trace);
    model->save(out_dir + "/model.ckpt");
    write_run_snapshot(out_dir, cfg);
    std::cout << "posttrained " << cfg.posttrain.steps << " steps on " << items.size()
              << " utterances; final losses " << trace.back()["losses"].dump() << "\n"
              << "checkpoint " << out_dir << "/model.ckpt\n";
    return 0;
}

int cmd_encode(const std::string& checkpoint, const std::string& in_path,
               const std::string& out_path) {
    std::unique_ptr<XyCodec> model = load_model(checkpoint);
    const Audio a = load_wav(in_path);
    XY_CHECK(a.sample_rate == model->config().sample_rate,
             "sample rate mismatch: model expects " +
                 std::to_string(model->config().sample_rate));
    const TokenSequence seq = model->encode_to_tokens(a.samples);
    save_tokens(out_path, seq);
    const real rate_hz = seq.frame_rate_micro_hz * 1e-6;
    std::cout << "encoded " << a.samples.size() << " samples -> " << seq.codes.size()
              << " frames x " << seq.num_layers << " layers ("
              << bitrate_bps(seq.num_layers, seq.codebook_size, rate_hz) << " bps) -> "
              << out_path << "\n";
    return 0;
}

int cmd_decode(const std::string& checkpoint, const std::string& in_path,
               const std::string& out_path) {
    std::unique_ptr<XyCodec> model = load_model(checkpoint);
    const TokenSequence seq = load_tokens(in_path);
    const std::vector<real> wav = model->decode_from_tokens(seq);
    save_wav(out_path, Audio{model->config().sample_rate, wav});
    std::cout << "decoded " << seq.codes.size() << " frames -> " << wav.size()
              << " samples -> " << out_path << "\n";
    return 0;
}

int cmd_probe(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
              const std::string& out_path) {
    std::unique_ptr<XyCodec> model = load_model(checkpoint);
    const int rate = model->config().sample_rate;
    const std::vector<TrainItem> train = load_split(data_dir, "train", rate);
    const std::vector<TrainItem> test = load_split(data_dir, "test", rate);

    const auto features = [&](const std::vector<real>& wav) {
        return codec_probe_features(*model, wav);
    };
    const CtcProbe probe = train_probe(probe_examples(features, train), cfg.probe);
    const real wer = probe_wer(probe, probe_examples(features, test));
    std::cout << "probe wer " << wer << " (" << train.size() << " train / " << test.size()
              << " test utterances)\n";
    if (!out_path.empty()) {
        nlohmann::json j{{"probe_wer", wer},
                         {"n_train", train.size()},
                         {"n_test", test.size()},
                         {"config_hash", hash_hex(config_hash(cfg))}};
        write_text(out_path, j.dump(2) + "\n");
        std::cout << "report " << out_path << "\n";
    }
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::unique_ptr<XyCodec> model = load_model(checkpoint);
    const int rate = model->config().sample_rate;
    const std::vector<TrainItem> train = load_split(data_dir, "train", rate);
    const std::vector<TrainItem> test = load_split(data_dir, "test", rate);

    const EvalReport rep = evaluate_codec(*model, train, test, cfg.probe);
    nlohmann::json j = rep;
    j["config_hash"] = hash_hex(config_hash(cfg));
    write_text(out_dir + "/report.json", j.dump(2) + "\n");
    write_text(out_dir + "/report.csv", report_csv(rep));
    std::cout << "evaluated " << rep.n_utterances << " utterances at " << rep.bitrate
              << " bps\n  stoi " << rep.stoi_mean << "  mcd " << rep.mcd_mean << " dB  sim "
              << rep.sim_mean << "  probe wer " << rep.probe_wer << "  codebook utilization "
              << rep.codebook_utilization << "\nreports in " << out_dir << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    std::vector<GradCheckResult> results = run_gradcheck(seed);
    results.push_back(gradcheck_pretrain_graph(seed + 1));
    bool all_ok = true;
    for (const GradCheckResult& r : results) {
        all_ok = all_ok && r.ok();
        std::printf("%-22s max rel err %.3e  tol %.0e  %s\n", r.name.c_str(), r.err, r.tol,
                    r.ok() ? "ok" : "FAIL");
    }
    if (!all_ok) {
        std::cout << "gradcheck FAILED\n";
        return 2;
    }
    std::cout << "all " << results.size() << " gradient checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xy_codec: residual-quantized speech codec trainer and token pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint, in_path;
    std::vector<std::string> sets;
    uint64_t seed = 0;
    int steps = 0;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (ini sections)")->required();
        sub->add_option("--set", sets, "override, section.key=value (repeatable)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize a labeled toy corpus");
    add_config(gen);
    gen->add_option("--out", out_path, "corpus directory")->required();
    CLI::Option* gen_seed = gen->add_option("--seed", seed, "override corpus.seed");

    CLI::App* pre = app.add_subcommand("pretrain", "stage 1: reconstruction + transcription");
    add_config(pre);
    pre->add_option("--data", data_dir, "corpus directory with train.jsonl")->required();
    pre->add_option("--out", out_path, "output directory")->required();
    pre->add_option("--checkpoint", checkpoint, "resume weights from a checkpoint");
    CLI::Option* pre_seed = pre->add_option("--seed", seed, "override pretrain.seed");
    CLI::Option* pre_steps = pre->add_option("--steps", steps, "override pretrain.steps");

    CLI::App* post = app.add_subcommand("posttrain", "stage 2: adversarial decoder refinement");
    add_config(post);
    post->add_option("--data", data_dir, "corpus directory with train.jsonl")->required();
    post->add_option("--out", out_path, "output directory")->required();
    post->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
    CLI::Option* post_seed = post->add_option("--seed", seed, "override posttrain.seed");
    CLI::Option* post_steps = post->add_option("--steps", steps, "override posttrain.steps");

    CLI::App* enc = app.add_subcommand("encode", "WAV -> token file");
    enc->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    enc->add_option("--in", in_path, "input WAV")->required();
    enc->add_option("--out", out_path, "output token file")->required();

    CLI::App* dec = app.add_subcommand("decode", "token file -> WAV");
    dec->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    dec->add_option("--in", in_path, "input token file")->required();
    dec->add_option("--out", out_path, "output WAV")->required();

    CLI::App* prb = app.add_subcommand("probe", "train a transcription probe on codec tokens");
    add_config(prb);
    prb->add_option("--data", data_dir, "corpus directory with train/test.jsonl")->required();
    prb->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    prb->add_option("--out", out_path, "optional JSON report path");

    CLI::App* ev = app.add_subcommand("eval", "reconstruction metrics + probe on the test split");
    add_config(ev);
    ev->add_option("--data", data_dir, "corpus directory with train/test.jsonl")->required();
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--out", out_path, "report directory")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    CLI::Option* gc_seed = gc->add_option("--seed", seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(gc)) return cmd_gradcheck(gc_seed->count() ? seed : 42);
        if (app.got_subcommand(enc)) return cmd_encode(checkpoint, in_path, out_path);
        if (app.got_subcommand(dec)) return cmd_decode(checkpoint, in_path, out_path);

        RunConfig cfg = resolve_config(config_path, sets);
        if (app.got_subcommand(gen)) {
            if (gen_seed->count()) cfg.corpus.seed = seed;
            return cmd_gen_data(cfg, out_path);
        }
        if (app.got_subcommand(pre)) {
            if (pre_seed->count()) cfg.pretrain.seed = seed;
            if (pre_steps->count()) cfg.pretrain.steps = steps;
            return cmd_pretrain(cfg, data_dir, out_path, checkpoint);
        }
        if (app.got_subcommand(post)) {
            if (post_seed->count()) cfg.posttrain.seed = seed;
            if (post_steps->count()) cfg.posttrain.steps = steps;
            return cmd_posttrain(cfg, data_dir, out_path, checkpoint);
        }
        if (app.got_subcommand(prb)) return cmd_probe(cfg, data_dir, checkpoint, out_path);
        if (app.got_subcommand(ev)) return cmd_eval(cfg, data_dir, checkpoint, out_path);
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
