#pragma once

// run configuration: a strict sectioned key=value file covering the model,
// discriminators, both training stages, the probe, and the corpus generator;
// unknown sections or keys are rejected, and the canonical dump is hashable

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "xy/common.hpp"
#include "xy/model.hpp"
#include "xy/probe.hpp"
#include "xy/synth.hpp"
#include "xy/train.hpp"

namespace xy {

struct RunConfig {
    ModelConfig model;
    DiscConfig disc;
    PretrainRunConfig pretrain;
    PosttrainRunConfig posttrain;
    ProbeConfig probe;
    CorpusConfig corpus;
};

namespace detail {

struct FieldBinding {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline real parse_real(const std::string& s) {
    size_t pos = 0;
    const real v = std::stod(s, &pos);
    XY_CHECK(pos == s.size(), "config: bad number '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s) {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    XY_CHECK(pos == s.size(), "config: bad integer '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    XY_CHECK(false, "config: bad boolean '" + s + "'");
    return false;
}

inline std::string format_real(real v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

template <typename Ref>
FieldBinding field_int(const std::string& sec, const std::string& key, Ref ref) {
    return {sec, key, [ref](RunConfig& c, const std::string& s) {
                ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_int(s));
            },
            [ref](const RunConfig& c) {
                return std::to_string(ref(const_cast<RunConfig&>(c)));
            }};
}

template <typename Ref>
FieldBinding field_real(const std::string& sec, const std::string& key, Ref ref) {
    return {sec, key,
            [ref](RunConfig& c, const std::string& s) { ref(c) = parse_real(s); },
            [ref](const RunConfig& c) {
                return format_real(ref(const_cast<RunConfig&>(c)));
            }};
}

template <typename Ref>
FieldBinding field_bool(const std::string& sec, const std::string& key, Ref ref) {
    return {sec, key,
            [ref](RunConfig& c, const std::string& s) { ref(c) = parse_bool(s); },
            [ref](const RunConfig& c) {
                return ref(const_cast<RunConfig&>(c)) ? "true" : "false";
            }};
}

template <typename Ref>
FieldBinding field_int_list(const std::string& sec, const std::string& key, Ref ref) {
    return {sec, key,
            [ref, key](RunConfig& c, const std::string& s) {
                std::vector<int> vals;
                std::stringstream ss(s);
                std::string part;
                while (std::getline(ss, part, ',')) {
                    part = trim(part);
                    if (!part.empty()) vals.push_back(static_cast<int>(parse_int(part)));
                }
                XY_CHECK(!vals.empty(), "config: empty list for " + key);
                ref(c) = vals;
            },
            [ref](const RunConfig& c) {
                std::string out;
                for (int v : ref(const_cast<RunConfig&>(c)))
                    out += (out.empty() ? "" : ",") + std::to_string(v);
                return out;
            }};
}

inline const std::vector<FieldBinding>& config_fields() {
    static const std::vector<FieldBinding> fields = [] {
        std::vector<FieldBinding> f;
        auto I = [&](const char* s, const char* k, auto ref) { f.push_back(field_int(s, k, ref)); };
        auto R = [&](const char* s, const char* k, auto ref) { f.push_back(field_real(s, k, ref)); };
        auto B = [&](const char* s, const char* k, auto ref) { f.push_back(field_bool(s, k, ref)); };
        auto L = [&](const char* s, const char* k, auto ref) {
            f.push_back(field_int_list(s, k, ref));
        };

        I("model", "sample_rate", [](RunConfig& c) -> int& { return c.model.sample_rate; });
        I("model", "mel_bins", [](RunConfig& c) -> int& { return c.model.mel_bins; });
        I("model", "mel_win", [](RunConfig& c) -> int& { return c.model.mel_win; });
        I("model", "mel_hop", [](RunConfig& c) -> int& { return c.model.mel_hop; });
        I("model", "mel_fft", [](RunConfig& c) -> int& { return c.model.mel_fft; });
        I("model", "d_sem", [](RunConfig& c) -> int& { return c.model.d_sem; });
        I("model", "d_ac", [](RunConfig& c) -> int& { return c.model.d_ac; });
        I("model", "d_model", [](RunConfig& c) -> int& { return c.model.d_model; });
        I("model", "n_heads", [](RunConfig& c) -> int& { return c.model.n_heads; });
        I("model", "enc_layers", [](RunConfig& c) -> int& { return c.model.enc_layers; });
        I("model", "adapter_layers", [](RunConfig& c) -> int& { return c.model.adapter_layers; });
        I("model", "dec_layers", [](RunConfig& c) -> int& { return c.model.dec_layers; });
        I("model", "d_lm", [](RunConfig& c) -> int& { return c.model.d_lm; });
        I("model", "lm_heads", [](RunConfig& c) -> int& { return c.model.lm_heads; });
        I("model", "lm_layers", [](RunConfig& c) -> int& { return c.model.lm_layers; });
        I("model", "rvq_layers", [](RunConfig& c) -> int& { return c.model.rvq_layers; });
        I("model", "rvq_codebook", [](RunConfig& c) -> int& { return c.model.rvq_codebook; });
        I("model", "head_fft", [](RunConfig& c) -> int& { return c.model.head_fft; });
        B("model", "two_channel", [](RunConfig& c) -> bool& { return c.model.two_channel; });
        B("model", "bypass_quantizer",
          [](RunConfig& c) -> bool& { return c.model.bypass_quantizer; });
        I("model", "seed", [](RunConfig& c) -> uint64_t& { return c.model.seed; });

        L("disc", "periods", [](RunConfig& c) -> std::vector<int>& { return c.disc.periods; });
        L("disc", "msd_pools",
          [](RunConfig& c) -> std::vector<int>& { return c.disc.msd_pools; });
        L("disc", "stft_ffts",
          [](RunConfig& c) -> std::vector<int>& { return c.disc.stft_ffts; });
        I("disc", "channels", [](RunConfig& c) -> int& { return c.disc.channels; });
        I("disc", "seed", [](RunConfig& c) -> uint64_t& { return c.disc.seed; });

        I("pretrain", "steps", [](RunConfig& c) -> int& { return c.pretrain.steps; });
        I("pretrain", "batch_size", [](RunConfig& c) -> int& { return c.pretrain.batch_size; });
        I("pretrain", "lm_warmup_steps",
          [](RunConfig& c) -> int& { return c.pretrain.lm_warmup_steps; });
        R("pretrain", "lr", [](RunConfig& c) -> real& { return c.pretrain.lr; });
        R("pretrain", "lm_warmup_lr",
          [](RunConfig& c) -> real& { return c.pretrain.lm_warmup_lr; });
        R("pretrain", "asr_weight",
          [](RunConfig& c) -> real& { return c.pretrain.weights.asr; });
        R("pretrain", "recon_weight",
          [](RunConfig& c) -> real& { return c.pretrain.weights.recon; });
        R("pretrain", "commit_weight",
          [](RunConfig& c) -> real& { return c.pretrain.weights.commit; });
        B("pretrain", "freeze_semantic_decoder",
          [](RunConfig& c) -> bool& { return c.pretrain.freeze_semantic_decoder; });
        I("pretrain", "log_every", [](RunConfig& c) -> int& { return c.pretrain.log_every; });
        I("pretrain", "seed", [](RunConfig& c) -> uint64_t& { return c.pretrain.seed; });

        I("posttrain", "steps", [](RunConfig& c) -> int& { return c.posttrain.steps; });
        I("posttrain", "batch_size",
          [](RunConfig& c) -> int& { return c.posttrain.batch_size; });
        I("posttrain", "segment_samples",
          [](RunConfig& c) -> int& { return c.posttrain.segment_samples; });
        R("posttrain", "gen_lr", [](RunConfig& c) -> real& { return c.posttrain.gen_lr; });
        R("posttrain", "disc_lr", [](RunConfig& c) -> real& { return c.posttrain.disc_lr; });
        R("posttrain", "recon_weight",
          [](RunConfig& c) -> real& { return c.posttrain.weights.recon; });
        R("posttrain", "feat_weight",
          [](RunConfig& c) -> real& { return c.posttrain.weights.feat; });
        R("posttrain", "adv_weight",
          [](RunConfig& c) -> real& { return c.posttrain.weights.adv; });
        I("posttrain", "log_every", [](RunConfig& c) -> int& { return c.posttrain.log_every; });
        I("posttrain", "seed", [](RunConfig& c) -> uint64_t& { return c.posttrain.seed; });

        I("probe", "hidden", [](RunConfig& c) -> int& { return c.probe.hidden; });
        I("probe", "layers", [](RunConfig& c) -> int& { return c.probe.layers; });
        I("probe", "epochs", [](RunConfig& c) -> int& { return c.probe.epochs; });
        R("probe", "lr", [](RunConfig& c) -> real& { return c.probe.lr; });
        I("probe", "seed", [](RunConfig& c) -> uint64_t& { return c.probe.seed; });

        I("corpus", "n_train", [](RunConfig& c) -> int& { return c.corpus.n_train; });
        I("corpus", "n_dev", [](RunConfig& c) -> int& { return c.corpus.n_dev; });
        I("corpus", "n_test", [](RunConfig& c) -> int& { return c.corpus.n_test; });
        I("corpus", "seed", [](RunConfig& c) -> uint64_t& { return c.corpus.seed; });
        I("corpus", "n_speakers", [](RunConfig& c) -> int& { return c.corpus.n_speakers; });
        I("corpus", "words_min", [](RunConfig& c) -> int& { return c.corpus.words_min; });
        I("corpus", "words_max", [](RunConfig& c) -> int& { return c.corpus.words_max; });
        R("corpus", "rate_jitter", [](RunConfig& c) -> real& { return c.corpus.rate_jitter; });
        R("corpus", "noise_floor", [](RunConfig& c) -> real& { return c.corpus.noise_floor; });
        I("corpus", "sample_rate", [](RunConfig& c) -> int& { return c.corpus.sample_rate; });
        R("corpus", "unit_ms", [](RunConfig& c) -> real& { return c.corpus.unit_ms; });
        return f;
    }();
    return fields;
}

inline const FieldBinding* find_field(const std::string& section, const std::string& key) {
    for (const FieldBinding& f : config_fields())
        if (f.section == section && f.key == key) return &f;
    return nullptr;
}

}  // namespace detail

// strict parse: every key must be known and live under its declared section
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            XY_CHECK(t.back() == ']', "config line " + std::to_string(line_no) +
                                          ": unterminated section header");
            section = detail::trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const auto& f : detail::config_fields()) known |= f.section == section;
            XY_CHECK(known, "config line " + std::to_string(line_no) + ": unknown section [" +
                                section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        XY_CHECK(eq != std::string::npos,
                 "config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        XY_CHECK(!section.empty(),
                 "config line " + std::to_string(line_no) + ": key before any section");
        const detail::FieldBinding* f = detail::find_field(section, key);
        XY_CHECK(f != nullptr, "config line " + std::to_string(line_no) + ": unknown key " +
                                   section + "." + key);
        f->set(cfg, value);
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    XY_CHECK(in.good(), "config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

// canonical serialization: fixed field order, every key present
inline std::string dump_run_config(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& f : detail::config_fields()) {
        if (f.section != section) {
            if (!out.empty()) out += "\n";
            out += "[" + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

// flag-style override, e.g. "pretrain.steps" = "100"; flag > file > default
inline void apply_override(RunConfig& cfg, const std::string& dotted, const std::string& value) {
    const size_t dot = dotted.find('.');
    XY_CHECK(dot != std::string::npos, "config override: expected section.key, got " + dotted);
    const detail::FieldBinding* f =
        detail::find_field(dotted.substr(0, dot), dotted.substr(dot + 1));
    XY_CHECK(f != nullptr, "config override: unknown key " + dotted);
    f->set(cfg, value);
}

inline uint64_t config_hash(const RunConfig& cfg) { return fnv1a(dump_run_config(cfg)); }

}  // namespace xy
