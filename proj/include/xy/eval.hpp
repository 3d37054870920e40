#pragma once

// held-out evaluation: acoustic metrics per utterance, a trained recognition
// probe over quantized embeddings, and the bitrate identity, reported as
// JSON and CSV

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "xy/metrics.hpp"
#include "xy/model.hpp"
#include "xy/probe.hpp"
#include "xy/rvq.hpp"
#include "xy/train.hpp"

namespace xy {

// layers * bits-per-code * token rate
inline real bitrate_bps(int num_layers, int codebook_size, real frame_hz) {
    XY_CHECK(num_layers >= 1 && codebook_size >= 2 && frame_hz > 0, "bitrate_bps: bad config");
    return num_layers * std::log2(static_cast<real>(codebook_size)) * frame_hz;
}

struct EvalRow {
    std::string audio;
    real stoi_score = 0;
    real mcd_db = 0;
    real sim = 0;
};

struct EvalReport {
    int n_utterances = 0;
    real stoi_mean = 0;
    real mcd_mean = 0;
    real sim_mean = 0;
    real probe_wer = -1;  // negative: probing skipped
    real bitrate = 0;
    real codebook_utilization = 0;
    std::vector<EvalRow> rows;
};

inline void to_json(nlohmann::json& j, const EvalRow& r) {
    j = nlohmann::json{
        {"audio", r.audio}, {"stoi", r.stoi_score}, {"mcd", r.mcd_db}, {"sim", r.sim}};
}

inline void from_json(const nlohmann::json& j, EvalRow& r) {
    r.audio = j.at("audio").get<std::string>();
    r.stoi_score = j.at("stoi").get<real>();
    r.mcd_db = j.at("mcd").get<real>();
    r.sim = j.at("sim").get<real>();
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"n_utterances", r.n_utterances},
                       {"stoi_mean", r.stoi_mean},
                       {"mcd_mean", r.mcd_mean},
                       {"sim_mean", r.sim_mean},
                       {"probe_wer", r.probe_wer},
                       {"bitrate", r.bitrate},
                       {"codebook_utilization", r.codebook_utilization},
                       {"rows", r.rows}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    r.n_utterances = j.at("n_utterances").get<int>();
    r.stoi_mean = j.at("stoi_mean").get<real>();
    r.mcd_mean = j.at("mcd_mean").get<real>();
    r.sim_mean = j.at("sim_mean").get<real>();
    r.probe_wer = j.at("probe_wer").get<real>();
    r.bitrate = j.at("bitrate").get<real>();
    r.codebook_utilization = j.at("codebook_utilization").get<real>();
    r.rows = j.at("rows").get<std::vector<EvalRow>>();
}

// one row per utterance plus a trailing summary row
inline std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "audio,stoi,mcd,sim\n";
    for (const EvalRow& row : r.rows)
        out << row.audio << "," << row.stoi_score << "," << row.mcd_db << "," << row.sim << "\n";
    out << "MEAN," << r.stoi_mean << "," << r.mcd_mean << "," << r.sim_mean << "\n";
    return out.str();
}

using ReconstructFn = std::function<std::vector<real>(const std::vector<real>&)>;
using FeatureFn = std::function<ad::Tensor(const std::vector<real>&)>;

// acoustic metrics against any reconstruction function; outputs longer than
// the reference (padding) are trimmed before comparison
inline EvalReport evaluate_acoustics(const ReconstructFn& reconstruct,
                                     const std::vector<TrainItem>& test, int sample_rate) {
    XY_CHECK(!test.empty(), "evaluate_acoustics: empty test set");
    EvalReport rep;
    rep.n_utterances = static_cast<int>(test.size());
    int idx = 0;
    for (const TrainItem& item : test) {
        std::vector<real> out = reconstruct(item.wav);
        XY_CHECK(out.size() >= item.wav.size(), "evaluate_acoustics: reconstruction too short");
        out.resize(item.wav.size());
        EvalRow row;
        row.audio = std::to_string(idx++);
        row.stoi_score = stoi(item.wav, out, sample_rate);
        row.mcd_db = mcd(item.wav, out, sample_rate);
        row.sim = sim_proxy(item.wav, out, sample_rate);
        rep.stoi_mean += row.stoi_score;
        rep.mcd_mean += row.mcd_db;
        rep.sim_mean += row.sim;
        rep.rows.push_back(std::move(row));
    }
    rep.stoi_mean /= rep.n_utterances;
    rep.mcd_mean /= rep.n_utterances;
    rep.sim_mean /= rep.n_utterances;
    return rep;
}

// quantized embeddings replicated up to 50 Hz, the probing front end
inline ad::Tensor codec_probe_features(const XyCodec& model, const std::vector<real>& wav) {
    const TokenSequence seq = model.encode_to_tokens(wav);
    const ad::Tensor emb = model.quantizer().embed_codes(seq.codes);
    return upsample_to_50hz(emb, seq.frame_rate_micro_hz * 1e-6);
}

inline std::vector<ProbeExample> probe_examples(const FeatureFn& features,
                                                const std::vector<TrainItem>& items) {
    std::vector<ProbeExample> out;
    out.reserve(items.size());
    for (const TrainItem& item : items) out.push_back({features(item.wav), item.text});
    return out;
}

// full protocol: reconstruction metrics on the test split, then a fresh
// probe trained on the train split and scored on the test split
inline EvalReport evaluate_codec(const ReconstructFn& reconstruct, const FeatureFn& features,
                                 const std::vector<TrainItem>& train,
                                 const std::vector<TrainItem>& test, const ProbeConfig& pcfg,
                                 int sample_rate, real bitrate) {
    EvalReport rep = evaluate_acoustics(reconstruct, test, sample_rate);
    rep.bitrate = bitrate;
    if (!train.empty()) {
        const CtcProbe probe = train_probe(probe_examples(features, train), pcfg);
        rep.probe_wer = probe_wer(probe, probe_examples(features, test));
    }
    return rep;
}

inline EvalReport evaluate_codec(const XyCodec& model, const std::vector<TrainItem>& train,
                                 const std::vector<TrainItem>& test, const ProbeConfig& pcfg) {
    const ModelConfig& cfg = model.config();
    EvalReport rep = evaluate_codec(
        [&](const std::vector<real>& wav) { return model.reconstruct(wav); },
        [&](const std::vector<real>& wav) { return codec_probe_features(model, wav); }, train,
        test, pcfg, cfg.sample_rate,
        bitrate_bps(cfg.rvq_layers, cfg.rvq_codebook,
                    cfg.sample_rate / static_cast<real>(model.samples_per_token())));

    // utilization of the codebooks over the whole test split
    std::vector<std::vector<int>> all_codes;
    for (const TrainItem& item : test)
        for (const auto& row : model.encode_to_tokens(item.wav).codes) all_codes.push_back(row);
    rep.codebook_utilization =
        ResidualVq::utilization(all_codes, cfg.rvq_layers, cfg.rvq_codebook);
    return rep;
}

}  // namespace xy
