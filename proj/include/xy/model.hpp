#pragma once

// Speech codec: 100 Hz log-mel -> two parallel encoder branches (semantic,
// acoustic) at 50 Hz -> fused and downsampled to 12.5 Hz -> residual VQ ->
// acoustic decoder (transposed convs + spectral ISTFT head, back to waveform)
// and a prefix-conditioned causal LM head that transcribes from the quantized
// stream. Discriminators for adversarial refinement live here too.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/checkpoint.hpp"
#include "xy/common.hpp"
#include "xy/dsp.hpp"
#include "xy/rvq.hpp"
#include "xy/text.hpp"

#include "json.hpp"

namespace xy {

// LM token space: BOS, the 27 text symbols (ids 1..27), EOS
inline constexpr int kLmBos = 0;
inline constexpr int kLmEos = kCharVocab + 1;
inline constexpr int kLmVocab = kCharVocab + 2;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct ModelConfig {
    int sample_rate = 16000;

    // 100 Hz mel front end
    int mel_bins = 80;
    int mel_win = 400;
    int mel_hop = 160;
    int mel_fft = 512;

    // widths and depths
    int d_sem = 32;         // semantic branch width at 50 Hz
    int d_ac = 32;          // acoustic branch width at 50 Hz
    int d_model = 48;       // fused width, quantizer dim
    int n_heads = 4;
    int enc_layers = 1;     // transformer depth per branch at 50 Hz
    int adapter_layers = 1; // transformer depth at 12.5 Hz before the quantizer
    int dec_layers = 1;     // acoustic decoder transformer depth at 50 Hz
    int d_lm = 32;          // semantic decoder width
    int lm_heads = 2;
    int lm_layers = 1;

    // residual quantizer
    int rvq_layers = 8;
    int rvq_codebook = 64;

    // spectral synthesis head: win == n_fft, frames at 100 Hz
    int head_fft = 512;

    bool two_channel = true;  // off: acoustic branch only, same downstream stack
    bool bypass_quantizer = false;
    uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"sample_rate", c.sample_rate}, {"mel_bins", c.mel_bins},
                       {"mel_win", c.mel_win},         {"mel_hop", c.mel_hop},
                       {"mel_fft", c.mel_fft},         {"d_sem", c.d_sem},
                       {"d_ac", c.d_ac},               {"d_model", c.d_model},
                       {"n_heads", c.n_heads},         {"enc_layers", c.enc_layers},
                       {"adapter_layers", c.adapter_layers}, {"dec_layers", c.dec_layers},
                       {"d_lm", c.d_lm},               {"lm_heads", c.lm_heads},
                       {"lm_layers", c.lm_layers},     {"rvq_layers", c.rvq_layers},
                       {"rvq_codebook", c.rvq_codebook}, {"head_fft", c.head_fft},
                       {"two_channel", c.two_channel},
                       {"bypass_quantizer", c.bypass_quantizer}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    const nlohmann::json known = nlohmann::json(ModelConfig{});
    for (const auto& item : j.items())
        XY_CHECK(known.contains(item.key()), "unknown model config key: " + item.key());
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.mel_bins = j.value("mel_bins", c.mel_bins);
    c.mel_win = j.value("mel_win", c.mel_win);
    c.mel_hop = j.value("mel_hop", c.mel_hop);
    c.mel_fft = j.value("mel_fft", c.mel_fft);
    c.d_sem = j.value("d_sem", c.d_sem);
    c.d_ac = j.value("d_ac", c.d_ac);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.adapter_layers = j.value("adapter_layers", c.adapter_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.d_lm = j.value("d_lm", c.d_lm);
    c.lm_heads = j.value("lm_heads", c.lm_heads);
    c.lm_layers = j.value("lm_layers", c.lm_layers);
    c.rvq_layers = j.value("rvq_layers", c.rvq_layers);
    c.rvq_codebook = j.value("rvq_codebook", c.rvq_codebook);
    c.head_fft = j.value("head_fft", c.head_fft);
    c.two_channel = j.value("two_channel", c.two_channel);
    c.bypass_quantizer = j.value("bypass_quantizer", c.bypass_quantizer);
    c.seed = j.value("seed", c.seed);
}

// ---------------------------------------------------------------------------
// Layer building blocks
// ---------------------------------------------------------------------------

// interleaved sin/cos position table [T x d], constant
inline ad::Tensor sinusoidal_encoding(int T, int d) {
    XY_CHECK(T >= 1 && d >= 2 && d % 2 == 0, "sinusoidal_encoding: need T >= 1, even d");
    std::vector<real> v(static_cast<size_t>(T) * d);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < d / 2; ++i) {
            const real rate = std::pow(10000.0, -2.0 * i / d);
            v[static_cast<size_t>(t) * d + 2 * i] = std::sin(t * rate);
            v[static_cast<size_t>(t) * d + 2 * i + 1] = std::cos(t * rate);
        }
    return ad::Tensor::from(std::move(v), {T, d});
}

// additive attention mask [T x T]: 0 at or below the diagonal, -1e9 above
inline ad::Tensor causal_mask(int T) {
    std::vector<real> v(static_cast<size_t>(T) * T, 0.0);
    for (int r = 0; r < T; ++r)
        for (int c = r + 1; c < T; ++c) v[static_cast<size_t>(r) * T + c] = -1e9;
    return ad::Tensor::from(std::move(v), {T, T});
}

inline ad::Tensor broadcast_rows(const ad::Tensor& row, int T) {
    XY_CHECK(row.rank() == 2 && row.shape()[0] == 1, "broadcast_rows: [1 x C] expected");
    return ad::matmul(ad::Tensor::from(std::vector<real>(static_cast<size_t>(T), 1.0), {T, 1}),
                      row);
}

struct Linear {
    Linear(const std::string& name, int in, int out, Rng& rng) {
        w = {name + ".w", ad::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<real>(in)), true),
             false};
        b = {name + ".b", ad::Tensor::zeros({1, out}, true), false};
    }

    ad::Tensor fwd(const ad::Tensor& x) const {
        return ad::matmul(x, w.tensor) + broadcast_rows(b.tensor, x.shape()[0]);
    }

    void collect(std::vector<ad::Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }

    ad::Parameter w, b;
};

struct Conv {
    Conv(const std::string& name, int k, int cin, int cout, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = {name + ".w",
             ad::randn({k, cin, cout}, rng, 1.0 / std::sqrt(static_cast<real>(k * cin)), true),
             false};
        b = {name + ".b", ad::Tensor::zeros({cout}, true), false};
    }

    ad::Tensor fwd(const ad::Tensor& x) const { return ad::conv1d(x, w.tensor, b.tensor, stride, pad); }

    void collect(std::vector<ad::Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }

    int stride, pad;
    ad::Parameter w, b;
};

struct TConv {
    TConv(const std::string& name, int k, int cin, int cout, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = {name + ".w",
             ad::randn({k, cin, cout}, rng, 1.0 / std::sqrt(static_cast<real>(k * cin)), true),
             false};
        b = {name + ".b", ad::Tensor::zeros({cout}, true), false};
    }

    ad::Tensor fwd(const ad::Tensor& x) const {
        return ad::transposed_conv1d(x, w.tensor, b.tensor, stride, pad);
    }

    void collect(std::vector<ad::Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }

    int stride, pad;
    ad::Parameter w, b;
};

// pre-norm block: x + attn(ln(x)), then x + ffn(ln(x)); optional causal mask
struct TransformerBlock {
    TransformerBlock(const std::string& name, int d_, int heads_, Rng& rng)
        : d(d_),
          heads(heads_),
          wq(name + ".attn.q", d_, d_, rng),
          wk(name + ".attn.k", d_, d_, rng),
          wv(name + ".attn.v", d_, d_, rng),
          wo(name + ".attn.o", d_, d_, rng),
          ff1(name + ".ffn.in", d_, 2 * d_, rng),
          ff2(name + ".ffn.out", 2 * d_, d_, rng) {
        XY_CHECK(d_ % heads_ == 0, "TransformerBlock: width must divide into heads");
        ln1_g = {name + ".ln1.g", ad::Tensor::from(std::vector<real>(static_cast<size_t>(d_), 1.0), {d_}, true), false};
        ln1_b = {name + ".ln1.b", ad::Tensor::zeros({d_}, true), false};
        ln2_g = {name + ".ln2.g", ad::Tensor::from(std::vector<real>(static_cast<size_t>(d_), 1.0), {d_}, true), false};
        ln2_b = {name + ".ln2.b", ad::Tensor::zeros({d_}, true), false};
    }

    ad::Tensor fwd(const ad::Tensor& x, bool causal) const {
        const int T = x.shape()[0];
        const int dh = d / heads;
        const real scale = 1.0 / std::sqrt(static_cast<real>(dh));

        ad::Tensor h = ad::layer_norm(x, ln1_g.tensor, ln1_b.tensor);
        ad::Tensor q = wq.fwd(h), k = wk.fwd(h), v = wv.fwd(h);
        ad::Tensor mask;
        if (causal) mask = causal_mask(T);
        std::vector<ad::Tensor> ctx;
        ctx.reserve(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            ad::Tensor qi = ad::slice(q, 1, hd * dh, dh);
            ad::Tensor ki = ad::slice(k, 1, hd * dh, dh);
            ad::Tensor vi = ad::slice(v, 1, hd * dh, dh);
            ad::Tensor scores = ad::mul_scalar(ad::matmul(qi, ki, false, true), scale);
            if (causal) scores = scores + mask;
            ctx.push_back(ad::matmul(ad::softmax(scores), vi));
        }
        ad::Tensor attended = x + wo.fwd(ad::concat(ctx, 1));

        ad::Tensor h2 = ad::layer_norm(attended, ln2_g.tensor, ln2_b.tensor);
        return attended + ff2.fwd(ad::gelu(ff1.fwd(h2)));
    }

    void collect(std::vector<ad::Parameter*>& ps) {
        ps.push_back(&ln1_g);
        ps.push_back(&ln1_b);
        wq.collect(ps);
        wk.collect(ps);
        wv.collect(ps);
        wo.collect(ps);
        ps.push_back(&ln2_g);
        ps.push_back(&ln2_b);
        ff1.collect(ps);
        ff2.collect(ps);
    }

    int d, heads;
    ad::Parameter ln1_g, ln1_b, ln2_g, ln2_b;
    Linear wq, wk, wv, wo, ff1, ff2;
};

// conv front end + transformer stack taking 100 Hz mel to 50 Hz features
struct EncoderBranch {
    EncoderBranch(const std::string& name, int mel_bins, int d, int heads, int layers, Rng& rng)
        : in_conv(name + ".conv_in", 3, mel_bins, d, 1, 1, rng),
          down(name + ".conv_down", 3, d, d, 2, 1, rng) {
        for (int l = 0; l < layers; ++l)
            blocks.emplace_back(name + ".block" + std::to_string(l), d, heads, rng);
    }

    ad::Tensor fwd(const ad::Tensor& mel) const {
        ad::Tensor h = ad::gelu(in_conv.fwd(mel));
        h = ad::gelu(down.fwd(h));
        h = h + sinusoidal_encoding(h.shape()[0], h.shape()[1]);
        for (const auto& b : blocks) h = b.fwd(h, false);
        return h;
    }

    void collect(std::vector<ad::Parameter*>& ps) {
        in_conv.collect(ps);
        down.collect(ps);
        for (auto& b : blocks) b.collect(ps);
    }

    Conv in_conv, down;
    std::vector<TransformerBlock> blocks;
};

// ---------------------------------------------------------------------------
// Codec
// ---------------------------------------------------------------------------

struct EncodeResult {
    ad::Tensor z;  // [T12 x d_model] pre-quantizer latents
    int t100 = 0;  // mel frames consumed (8 per latent row)
};

class XyCodec {
public:
    explicit XyCodec(const ModelConfig& cfg)
        : cfg_(cfg),
          rng_(cfg.seed),
          fb_(dsp::mel_filterbank(cfg.mel_bins, cfg.mel_fft, cfg.sample_rate, 0.0,
                             cfg.sample_rate / 2.0)),
          sem_(cfg.two_channel
                   ? std::make_unique<EncoderBranch>("enc.sem", cfg.mel_bins, cfg.d_sem,
                                                     cfg.n_heads, cfg.enc_layers, rng_)
                   : nullptr),
          ac_(std::make_unique<EncoderBranch>("enc.ac", cfg.mel_bins, cfg.d_ac, cfg.n_heads,
                                              cfg.enc_layers, rng_)),
          fuse_("enc.fuse", (cfg.two_channel ? cfg.d_sem : 0) + cfg.d_ac, cfg.d_model, rng_),
          down_("enc.down", 8, cfg.d_model, cfg.d_model, 4, 2, rng_),
          up_("dec.up", 8, cfg.d_model, cfg.d_model, 4, 2, rng_),
          up2_("dec.up2", 4, cfg.d_model, cfg.d_model, 2, 1, rng_),
          head_("dec.head", cfg.d_model, 2 * (cfg.head_fft / 2 + 1), rng_),
          lm_prefix_("lm.prefix", cfg.d_model, cfg.d_lm, rng_),
          lm_head_("lm.head", cfg.d_lm, kLmVocab, rng_) {
        XY_CHECK(cfg.mel_hop >= 1 && cfg.mel_win >= cfg.mel_hop && cfg.mel_fft >= cfg.mel_win,
                 "XyCodec: bad mel front end");
        XY_CHECK(cfg.head_fft % 2 == 0, "XyCodec: head_fft must be even");
        for (int l = 0; l < cfg.adapter_layers; ++l)
            adapter_.emplace_back("enc.adapter" + std::to_string(l), cfg.d_model, cfg.n_heads,
                                  rng_);
        for (int l = 0; l < cfg.dec_layers; ++l)
            dec_blocks_.emplace_back("dec.block" + std::to_string(l), cfg.d_model, cfg.n_heads,
                                     rng_);
        for (int l = 0; l < cfg.lm_layers; ++l)
            lm_blocks_.emplace_back("lm.block" + std::to_string(l), cfg.d_lm, cfg.lm_heads, rng_);
        lm_embed_ = {"lm.embed",
                     ad::randn({kLmVocab, cfg.d_lm}, rng_,
                               1.0 / std::sqrt(static_cast<real>(cfg.d_lm)), true),
                     false};

        RvqConfig rc;
        rc.num_layers = cfg.rvq_layers;
        rc.codebook_size = cfg.rvq_codebook;
        rc.dim = cfg.d_model;
        rc.seed = cfg.seed ^ 0x5bd1e995u;
        rvq_ = std::make_unique<ResidualVq>(rc);
    }

    XyCodec(const XyCodec&) = delete;
    XyCodec& operator=(const XyCodec&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ResidualVq& quantizer() { return *rvq_; }
    const ResidualVq& quantizer() const { return *rvq_; }

    // samples per latent row: mel_hop x 2 (50 Hz) x 4 (12.5 Hz)
    int samples_per_token() const { return cfg_.mel_hop * 8; }

    // zero-pads so the mel frame count is a positive multiple of 8
    std::vector<real> pad_waveform(const std::vector<real>& wav) const {
        const int unit = samples_per_token();
        const int len = static_cast<int>(wav.size());
        const int target = std::max(unit, (len + unit - 1) / unit * unit);
        std::vector<real> out = wav;
        out.resize(static_cast<size_t>(target), 0.0);
        return out;
    }

    ad::Tensor log_mel_input(const std::vector<real>& wav) const {
        dsp::StftSpec spec{cfg_.mel_win, cfg_.mel_hop, cfg_.mel_fft};
        return dsp::log_mel(wav, spec, fb_);
    }

    EncodeResult encode(const std::vector<real>& wav) const {
        XY_CHECK(static_cast<int>(wav.size()) % samples_per_token() == 0 && !wav.empty(),
                 "encode: waveform length must be a positive multiple of samples_per_token");
        ad::Tensor mel = log_mel_input(wav);
        const int t100 = mel.shape()[0];
        XY_CHECK(t100 % 8 == 0, "encode: mel frame count must be a multiple of 8");
        // scale log-mel (floor at ln(1e-5)) into a roughly unit range
        ad::Tensor x = ad::affine(mel, 0.2, 1.2);
        ad::Tensor branches =
            sem_ ? ad::concat({sem_->fwd(x), ac_->fwd(x)}, 1) : ac_->fwd(x);
        ad::Tensor fused = ad::gelu(fuse_.fwd(branches));
        ad::Tensor z = down_.fwd(fused);
        z = z + sinusoidal_encoding(z.shape()[0], z.shape()[1]);
        for (const auto& b : adapter_) z = b.fwd(z, false);
        return {z, t100};
    }

    // straight-through quantization; bypass mode passes latents unchanged
    QuantizeResult quantize(const ad::Tensor& z) const {
        if (cfg_.bypass_quantizer) {
            QuantizeResult res;
            res.quantized = z;
            res.commit = ad::Tensor::scalar(0.0);
            res.codes.assign(static_cast<size_t>(z.shape()[0]),
                             std::vector<int>(static_cast<size_t>(cfg_.rvq_layers), 0));
            return res;
        }
        XY_CHECK(rvq_->initialized(), "quantize: codebooks not initialized");
        return rvq_->quantize(z);
    }

    // quantized latents [T12 x d_model] -> waveform [T12 x 8 x mel_hop]
    ad::Tensor decode(const ad::Tensor& q) const {
        XY_CHECK(q.rank() == 2 && q.shape()[1] == cfg_.d_model, "decode: bad latent shape");
        ad::Tensor h = ad::gelu(up_.fwd(q));
        h = h + sinusoidal_encoding(h.shape()[0], h.shape()[1]);
        for (const auto& b : dec_blocks_) h = b.fwd(h, false);
        h = ad::gelu(up2_.fwd(h));
        ad::Tensor frames = head_.fwd(h);  // [T100 x 2*(head_fft/2+1)]
        const int out_len = frames.shape()[0] * cfg_.mel_hop;
        return dsp::istft_synth(frames, cfg_.head_fft, cfg_.mel_hop, out_len);
    }

    // text tokens shifted for teacher forcing: input [BOS, y...], target [y..., EOS]
    static std::vector<int> lm_target_ids(const std::string& txt) {
        std::vector<int> targets = text_to_ids(normalize_text(txt));
        targets.push_back(kLmEos);
        return targets;
    }

    // quantized latents form the prefix; one logit row per text position,
    // starting at BOS, so row t predicts token t of [text..., EOS]
    ad::Tensor lm_logits(const ad::Tensor& q, const std::string& txt) const {
        XY_CHECK(q.rank() == 2 && q.shape()[1] == cfg_.d_model, "lm_logits: bad prefix shape");
        const std::vector<int> chars = text_to_ids(normalize_text(txt));
        const int P = q.shape()[0];
        const int U = static_cast<int>(chars.size());

        std::vector<int> in_ids;
        in_ids.reserve(static_cast<size_t>(U) + 1);
        in_ids.push_back(kLmBos);
        for (int c : chars) in_ids.push_back(c);

        ad::Tensor prefix = lm_prefix_.fwd(q);
        ad::Tensor tokens = ad::embedding(lm_embed_.tensor, in_ids);
        ad::Tensor seq = ad::concat({prefix, tokens}, 0);
        seq = seq + sinusoidal_encoding(seq.shape()[0], cfg_.d_lm);
        for (const auto& b : lm_blocks_) seq = b.fwd(seq, true);
        return lm_head_.fwd(ad::slice(seq, 0, P, U + 1));
    }

    // teacher-forced transcription loss, summed over tokens as written
    ad::Tensor asr_loss(const ad::Tensor& q, const std::string& txt) const {
        return ad::cross_entropy(lm_logits(q, txt), lm_target_ids(txt));
    }

    // text-only variant used to warm the language model up before freezing it
    ad::Tensor lm_text_loss(const std::string& txt) const {
        ad::Tensor empty_prefix = ad::Tensor::zeros({1, cfg_.d_model});
        return ad::cross_entropy(lm_logits(empty_prefix, txt), lm_target_ids(txt));
    }

    // discrete interface used by the file formats and the CLI
    TokenSequence encode_to_tokens(const std::vector<real>& wav) const {
        XY_CHECK(!cfg_.bypass_quantizer, "encode_to_tokens: quantizer is bypassed");
        EncodeResult enc = encode(pad_waveform(wav));
        TokenSequence seq;
        seq.frame_rate_micro_hz = static_cast<uint32_t>(
            std::llround(1e6 * cfg_.sample_rate / samples_per_token()));
        seq.num_layers = cfg_.rvq_layers;
        seq.codebook_size = cfg_.rvq_codebook;
        seq.codes = rvq_->encode_frames(enc.z.v(), enc.z.shape()[0]);
        return seq;
    }

    std::vector<real> decode_from_tokens(const TokenSequence& seq) const {
        XY_CHECK(!cfg_.bypass_quantizer, "decode_from_tokens: quantizer is bypassed");
        XY_CHECK(seq.num_layers == cfg_.rvq_layers && seq.codebook_size == cfg_.rvq_codebook,
                 "decode_from_tokens: token geometry does not match the model");
        ad::Tensor q = rvq_->embed_codes(seq.codes);
        return decode(q).v();
    }

    // full reconstruction path (pad -> encode -> quantize -> decode)
    std::vector<real> reconstruct(const std::vector<real>& wav) const {
        EncodeResult enc = encode(pad_waveform(wav));
        return decode(quantize(enc.z).quantized).v();
    }

    // parameter groups
    std::vector<ad::Parameter*> encoder_parameters() {
        std::vector<ad::Parameter*> ps;
        if (sem_) sem_->collect(ps);
        ac_->collect(ps);
        fuse_.collect(ps);
        down_.collect(ps);
        for (auto& b : adapter_) b.collect(ps);
        return ps;
    }

    std::vector<ad::Parameter*> decoder_parameters() {
        std::vector<ad::Parameter*> ps;
        up_.collect(ps);
        for (auto& b : dec_blocks_) b.collect(ps);
        up2_.collect(ps);
        head_.collect(ps);
        return ps;
    }

    // the prefix adapter stays trainable when the decoder body is frozen
    std::vector<ad::Parameter*> lm_adapter_parameters() {
        std::vector<ad::Parameter*> ps;
        lm_prefix_.collect(ps);
        return ps;
    }

    std::vector<ad::Parameter*> lm_body_parameters() {
        std::vector<ad::Parameter*> ps;
        ps.push_back(&lm_embed_);
        for (auto& b : lm_blocks_) b.collect(ps);
        lm_head_.collect(ps);
        return ps;
    }

    std::vector<ad::Parameter*> lm_parameters() {
        std::vector<ad::Parameter*> ps = lm_adapter_parameters();
        for (auto* p : lm_body_parameters()) ps.push_back(p);
        return ps;
    }

    std::vector<ad::Parameter*> parameters() {
        std::vector<ad::Parameter*> ps = encoder_parameters();
        for (auto* p : decoder_parameters()) ps.push_back(p);
        for (auto* p : lm_parameters()) ps.push_back(p);
        return ps;
    }

    void set_encoder_frozen(bool f) {
        for (auto* p : encoder_parameters()) p->set_frozen(f);
    }
    // the semantic branch acts as a fixed feature extractor while the
    // acoustic branch and the fused stack keep training
    void set_semantic_branch_frozen(bool f) {
        if (!sem_) return;
        std::vector<ad::Parameter*> ps;
        sem_->collect(ps);
        for (auto* p : ps) p->set_frozen(f);
    }
    // freezes the decoder body only; the prefix adapter keeps learning
    void set_lm_frozen(bool f) {
        for (auto* p : lm_body_parameters()) p->set_frozen(f);
    }

    // persistence: config travels inside the checkpoint as a byte tensor
    std::vector<NamedTensor> to_named_tensors() {
        std::vector<NamedTensor> out;
        const std::string cfg_json = nlohmann::json(cfg_).dump();
        std::vector<real> bytes(cfg_json.size());
        for (size_t i = 0; i < cfg_json.size(); ++i)
            bytes[i] = static_cast<real>(static_cast<unsigned char>(cfg_json[i]));
        out.push_back({"__config__",
                       ad::Tensor::from(std::move(bytes), {static_cast<int>(cfg_json.size())})});
        for (auto* p : parameters()) out.push_back({p->name, p->tensor});
        for (auto& e : rvq_->to_named_tensors("rvq.")) out.push_back(std::move(e));
        return out;
    }

    void save(const std::string& path) { save_checkpoint(path, to_named_tensors()); }

    static std::unique_ptr<XyCodec> load(const std::string& path) {
        const std::vector<NamedTensor> entries = load_checkpoint(path);
        const NamedTensor* cfg_entry = nullptr;
        for (const auto& e : entries)
            if (e.name == "__config__") cfg_entry = &e;
        XY_CHECK(cfg_entry, "checkpoint has no embedded config");
        std::string cfg_json(cfg_entry->tensor.numel(), '\0');
        for (int i = 0; i < cfg_entry->tensor.numel(); ++i)
            cfg_json[static_cast<size_t>(i)] =
                static_cast<char>(static_cast<int>(cfg_entry->tensor.v()[static_cast<size_t>(i)]));
        ModelConfig cfg = nlohmann::json::parse(cfg_json).get<ModelConfig>();

        auto model = std::make_unique<XyCodec>(cfg);
        std::vector<NamedTensor> param_entries;
        std::vector<NamedTensor> rvq_entries;
        for (const auto& e : entries) {
            if (e.name == "__config__") continue;
            if (e.name.rfind("rvq.", 0) == 0)
                rvq_entries.push_back(e);
            else
                param_entries.push_back(e);
        }
        std::vector<ad::Parameter*> ps = model->parameters();
        restore_parameters(ps, param_entries);
        model->rvq_->from_named_tensors("rvq.", rvq_entries);
        return model;
    }

private:
    ModelConfig cfg_;
    Rng rng_;
    dsp::FilterBank fb_;
    std::unique_ptr<EncoderBranch> sem_, ac_;
    Linear fuse_;
    Conv down_;
    std::vector<TransformerBlock> adapter_;
    TConv up_, up2_;
    std::vector<TransformerBlock> dec_blocks_;
    Linear head_;
    Linear lm_prefix_, lm_head_;
    ad::Parameter lm_embed_;
    std::vector<TransformerBlock> lm_blocks_;
    std::unique_ptr<ResidualVq> rvq_;
};

// ---------------------------------------------------------------------------
// Discriminators
// ---------------------------------------------------------------------------

// one discriminator's verdict: a score map plus intermediate feature maps
struct DiscOutput {
    ad::Tensor score;                // [T' x 1]
    std::vector<ad::Tensor> feats;   // post-activation maps, outermost first
};

// four-stage conv discriminator over a [T x C] input
struct ConvDisc {
    ConvDisc(const std::string& name, int cin, int c1, int c2, int k, int s, Rng& rng)
        : l1(name + ".l1", k, cin, c1, s, k / 2, rng),
          l2(name + ".l2", k, c1, c2, s, k / 2, rng),
          l3(name + ".l3", 5, c2, c2, 1, 2, rng),
          out(name + ".out", 3, c2, 1, 1, 1, rng) {}

    DiscOutput fwd(const ad::Tensor& x) const {
        DiscOutput r;
        ad::Tensor h = ad::gelu(l1.fwd(x));
        r.feats.push_back(h);
        h = ad::gelu(l2.fwd(h));
        r.feats.push_back(h);
        h = ad::gelu(l3.fwd(h));
        r.feats.push_back(h);
        r.score = out.fwd(h);
        return r;
    }

    void collect(std::vector<ad::Parameter*>& ps) {
        l1.collect(ps);
        l2.collect(ps);
        l3.collect(ps);
        out.collect(ps);
    }

    Conv l1, l2, l3, out;
};

struct DiscConfig {
    std::vector<int> periods = {2, 3};    // multi-period on phase-folded waveform
    std::vector<int> msd_pools = {1, 2};  // multi-scale on pooled waveform
    std::vector<int> stft_ffts = {256, 512};  // multi-resolution log-spectrogram
    int channels = 8;
    uint64_t seed = 2;
};

class DiscriminatorSet {
public:
    explicit DiscriminatorSet(const DiscConfig& cfg) : cfg_(cfg) {
        Rng rng(cfg.seed ^ 0xd15cu);
        XY_CHECK(!cfg.periods.empty() || !cfg.msd_pools.empty() || !cfg.stft_ffts.empty(),
                 "DiscriminatorSet: no discriminators configured");
        for (int p : cfg.periods) {
            XY_CHECK(p >= 2, "DiscriminatorSet: period must be >= 2");
            period_.emplace_back("disc.period" + std::to_string(p), p, cfg.channels,
                                 2 * cfg.channels, 5, 3, rng);
        }
        for (int s : cfg.msd_pools) {
            XY_CHECK(s >= 1, "DiscriminatorSet: pool must be >= 1");
            msd_.emplace_back("disc.scale" + std::to_string(s), 1, cfg.channels,
                              2 * cfg.channels, 15, 4, rng);
        }
        for (int f : cfg.stft_ffts) {
            XY_CHECK(f >= 32 && (f & (f - 1)) == 0, "DiscriminatorSet: fft must be a power of two");
            stft_.emplace_back("disc.stft" + std::to_string(f), f / 2 + 1, 2 * cfg.channels,
                               2 * cfg.channels, 3, 2, rng);
        }
    }

    DiscriminatorSet(const DiscriminatorSet&) = delete;
    DiscriminatorSet& operator=(const DiscriminatorSet&) = delete;

    int count() const {
        return static_cast<int>(period_.size() + msd_.size() + stft_.size());
    }

    // wav is a rank-1 waveform tensor; gradients flow into it when it is the
    // generator output
    std::vector<DiscOutput> fwd(const ad::Tensor& wav) const {
        XY_CHECK(wav.rank() == 1 && wav.numel() >= 64, "DiscriminatorSet: waveform too short");
        std::vector<DiscOutput> outs;
        for (size_t i = 0; i < period_.size(); ++i) {
            // as_frames zero-fills the ragged tail, folding phases into channels
            outs.push_back(period_[i].fwd(ad::as_frames(wav, cfg_.periods[i])));
        }
        for (size_t i = 0; i < msd_.size(); ++i) {
            ad::Tensor col = ad::as_frames(wav, 1);  // [L x 1]
            const int pool = cfg_.msd_pools[i];
            if (pool > 1) col = ad::avg_pool1d(col, pool, pool);
            outs.push_back(msd_[i].fwd(col));
        }
        for (size_t i = 0; i < stft_.size(); ++i) {
            const int f = cfg_.stft_ffts[i];
            dsp::StftSpec spec{f, f / 4, f};
            outs.push_back(stft_[i].fwd(dsp::log_spectral_frames(wav, spec, nullptr)));
        }
        return outs;
    }

    std::vector<ad::Parameter*> parameters() {
        std::vector<ad::Parameter*> ps;
        for (auto& d : period_) d.collect(ps);
        for (auto& d : msd_) d.collect(ps);
        for (auto& d : stft_) d.collect(ps);
        return ps;
    }

    const DiscConfig& config() const { return cfg_; }

private:
    DiscConfig cfg_;
    std::vector<ConvDisc> period_, msd_, stft_;
};

}  // namespace xy
