#pragma once

// two-stage training: weighted multitask pretraining with EMA codebook
// maintenance, then adversarial decoder refinement with the encoder and
// quantizer frozen and the text decoder dropped from the graph

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "xy/autodiff.hpp"
#include "xy/dsp.hpp"
#include "xy/losses.hpp"
#include "xy/model.hpp"
#include "xy/optim.hpp"
#include "xy/rvq.hpp"

namespace xy {

enum class Stage { pretrain, posttrain };

struct TrainItem {
    std::vector<real> wav;
    std::string text;
};

struct TrainState {
    long step = 0;
    Stage stage = Stage::pretrain;
    uint64_t seed = 1;
    Rng rng{1};
    std::unique_ptr<AdamW> gen_opt;
    std::unique_ptr<AdamW> disc_opt;
};

namespace detail {

inline void check_finite_loss(real v, const char* what, long step) {
    XY_CHECK(std::isfinite(v), std::string(what) + ": non-finite loss at step " +
                                   std::to_string(step) + " (value " + std::to_string(v) + ")");
}

// one forward pass per batch collecting latent rows, used to seed the codebooks
inline void init_quantizer_from_batch(XyCodec& model, const std::vector<TrainItem>& batch) {
    std::vector<real> frames;
    int n = 0;
    for (const TrainItem& item : batch) {
        const EncodeResult enc = model.encode(model.pad_waveform(item.wav));
        const auto& v = enc.z.v();
        frames.insert(frames.end(), v.begin(), v.end());
        n += enc.z.shape()[0];
    }
    model.quantizer().init_codebooks(frames, n);
}

}  // namespace detail

// forward, weighted backward, optimizer step, codebook maintenance; returns
// the loss breakdown as one loggable record
inline nlohmann::json pretrain_step(XyCodec& model, const std::vector<TrainItem>& batch,
                                    const PretrainWeights& w,
                                    const std::vector<dsp::MelScale>& scales, TrainState& st) {
    XY_CHECK(st.stage == Stage::pretrain, "pretrain_step: wrong stage");
    XY_CHECK(st.gen_opt != nullptr, "pretrain_step: optimizer missing");
    XY_CHECK(!batch.empty(), "pretrain_step: empty batch");
    const bool bypass = model.config().bypass_quantizer;
    if (!bypass && !model.quantizer().initialized())
        detail::init_quantizer_from_batch(model, batch);

    const real inv_b = 1.0 / static_cast<real>(batch.size());
    std::vector<real> ema_frames;
    std::vector<std::vector<int>> ema_codes;
    real lr = 0;
    nlohmann::json losses;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        ad::Tensor recon = ad::Tensor::scalar(0.0);
        ad::Tensor asr = ad::Tensor::scalar(0.0);
        ad::Tensor commit = ad::Tensor::scalar(0.0);
        for (const TrainItem& item : batch) {
            const std::vector<real> wav = model.pad_waveform(item.wav);
            const EncodeResult enc = model.encode(wav);
            const QuantizeResult q = model.quantize(enc.z);
            recon = recon + dsp::multiscale_mel_loss(model.decode(q.quantized), wav, scales);
            commit = commit + q.commit;
            if (w.asr > 0) asr = asr + model.asr_loss(q.quantized, item.text);
            if (!bypass) {
                const auto& v = enc.z.v();
                ema_frames.insert(ema_frames.end(), v.begin(), v.end());
                for (const auto& row : q.codes) ema_codes.push_back(row);
            }
        }
        recon = ad::mul_scalar(recon, inv_b);
        asr = ad::mul_scalar(asr, inv_b);
        commit = ad::mul_scalar(commit, inv_b);
        ad::Tensor total = pretrain_total(recon, asr, commit, w);
        detail::check_finite_loss(total.item(), "pretrain_step", st.step);
        tape.backward(total);
        lr = st.gen_opt->step();
        st.gen_opt->zero_grad();
        losses = {{"total", total.item()},
                  {"recon", recon.item()},
                  {"asr", asr.item()},
                  {"commit", commit.item()}};
    }

    real util = 0;
    if (!bypass) {
        model.quantizer().ema_update(ema_frames, static_cast<int>(ema_codes.size()), ema_codes);
        util = ResidualVq::utilization(ema_codes, model.config().rvq_layers,
                                       model.config().rvq_codebook);
    }
    ++st.step;
    return {{"step", st.step},
            {"stage", "pretrain"},
            {"losses", losses},
            {"lr", lr},
            {"codebook_utilization", util}};
}

// alternating least-squares adversarial update: discriminators first on
// detached reconstructions, then the decoder against the refreshed scores
inline nlohmann::json posttrain_step(XyCodec& model, DiscriminatorSet& discs,
                                     const std::vector<std::vector<real>>& segments,
                                     const PosttrainWeights& w,
                                     const std::vector<dsp::MelScale>& scales, TrainState& st) {
    XY_CHECK(st.stage == Stage::posttrain, "posttrain_step: wrong stage");
    XY_CHECK(st.gen_opt && st.disc_opt, "posttrain_step: optimizers missing");
    XY_CHECK(!segments.empty(), "posttrain_step: empty batch");
    for (auto* p : model.encoder_parameters())
        XY_CHECK(p->frozen, "posttrain_step: encoder must be frozen");
    const real inv_b = 1.0 / static_cast<real>(segments.size());

    std::vector<std::vector<real>> real_wavs, fake_wavs;
    for (const auto& seg : segments) {
        real_wavs.push_back(model.pad_waveform(seg));
        fake_wavs.push_back(model.reconstruct(seg));  // no tape: detached by construction
    }

    real disc_value = 0, disc_lr = 0;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        ad::Tensor dl = ad::Tensor::scalar(0.0);
        for (size_t i = 0; i < segments.size(); ++i) {
            const auto on_real = discs.fwd(ad::Tensor::from(
                real_wavs[i], {static_cast<int>(real_wavs[i].size())}));
            const auto on_fake = discs.fwd(ad::Tensor::from(
                fake_wavs[i], {static_cast<int>(fake_wavs[i].size())}));
            dl = dl + disc_loss(on_real, on_fake);
        }
        dl = ad::mul_scalar(dl, inv_b);
        detail::check_finite_loss(dl.item(), "posttrain_step[disc]", st.step);
        tape.backward(dl);
        disc_lr = st.disc_opt->step();
        st.disc_opt->zero_grad();
        disc_value = dl.item();
    }

    nlohmann::json losses;
    real gen_lr = 0;
    {
        ad::Tape tape;
        ad::TapeScope scope(tape);
        ad::Tensor recon = ad::Tensor::scalar(0.0);
        ad::Tensor feat = ad::Tensor::scalar(0.0);
        ad::Tensor adv = ad::Tensor::scalar(0.0);
        for (size_t i = 0; i < segments.size(); ++i) {
            const EncodeResult enc = model.encode(real_wavs[i]);
            const QuantizeResult q = model.quantize(enc.z);
            ad::Tensor x_hat = model.decode(q.quantized);
            recon = recon + dsp::multiscale_mel_loss(x_hat, real_wavs[i], scales);
            const auto on_fake = discs.fwd(x_hat);
            const auto on_real = discs.fwd(ad::Tensor::from(
                real_wavs[i], {static_cast<int>(real_wavs[i].size())}));
            feat = feat + feat_match_loss(on_real, on_fake);
            adv = adv + adv_loss(on_fake);
        }
        recon = ad::mul_scalar(recon, inv_b);
        feat = ad::mul_scalar(feat, inv_b);
        adv = ad::mul_scalar(adv, inv_b);
        ad::Tensor total = generator_total(recon, feat, adv, w);
        detail::check_finite_loss(total.item(), "posttrain_step[gen]", st.step);
        tape.backward(total);
        gen_lr = st.gen_opt->step();
        st.gen_opt->zero_grad();
        st.disc_opt->zero_grad();  // scores feed the generator loss; drop their grads
        losses = {{"gen_total", total.item()},
                  {"disc", disc_value},
                  {"recon", recon.item()},
                  {"feat", feat.item()},
                  {"adv", adv.item()}};
    }

    ++st.step;
    return {{"step", st.step},
            {"stage", "posttrain"},
            {"losses", losses},
            {"lr", gen_lr},
            {"disc_lr", disc_lr},
            {"codebook_utilization", 0.0}};
}

struct PretrainRunConfig {
    int steps = 2000;             // full toy schedule; tests use far fewer
    int batch_size = 4;
    int lm_warmup_steps = 200;    // text-only steps before the decoder freezes
    real lr = 2e-3;
    real lm_warmup_lr = 2e-3;
    PretrainWeights weights;
    bool freeze_semantic_decoder = true;
    int log_every = 20;
    uint64_t seed = 1;
};

struct PosttrainRunConfig {
    int steps = 1000;
    int batch_size = 4;
    int segment_samples = 16000;  // 1 s crops; long inputs are cut, short ones padded
    real gen_lr = 1e-5;
    real disc_lr = 1e-4;
    PosttrainWeights weights;
    int log_every = 20;
    uint64_t seed = 1;
};

namespace detail {

inline std::vector<const TrainItem*> sample_batch(const std::vector<TrainItem>& items, int n,
                                                  Rng& rng) {
    std::vector<const TrainItem*> batch;
    for (int i = 0; i < n; ++i)
        batch.push_back(&items[rng.below(static_cast<uint32_t>(items.size()))]);
    return batch;
}

}  // namespace detail

// text-only warm-up, freeze schedule, then the main multitask loop;
// returns one record per logged step (first and last always included)
inline std::vector<nlohmann::json> run_pretrain(XyCodec& model,
                                                const std::vector<TrainItem>& items,
                                                const PretrainRunConfig& cfg) {
    XY_CHECK(!items.empty(), "run_pretrain: empty training set");
    XY_CHECK(cfg.steps >= 1 && cfg.batch_size >= 1, "run_pretrain: bad schedule");
    std::vector<nlohmann::json> trace;
    TrainState st;
    st.seed = cfg.seed;
    st.rng = Rng(cfg.seed);

    // the text decoder learns the transcript distribution first, so freezing
    // it afterwards leaves a meaningful recognizer in the loss
    if (cfg.weights.asr > 0 && cfg.lm_warmup_steps > 0) {
        AdamWConfig oc;
        oc.lr_peak = cfg.lm_warmup_lr;
        oc.warmup_steps = std::max(1, cfg.lm_warmup_steps / 20);
        oc.total_steps = cfg.lm_warmup_steps;
        AdamW opt(model.lm_parameters(), oc);
        for (int s = 0; s < cfg.lm_warmup_steps; ++s) {
            ad::Tape tape;
            ad::TapeScope scope(tape);
            ad::Tensor loss = ad::Tensor::scalar(0.0);
            for (const TrainItem* item :
                 detail::sample_batch(items, cfg.batch_size, st.rng))
                loss = loss + model.lm_text_loss(item->text);
            loss = ad::mul_scalar(loss, 1.0 / cfg.batch_size);
            detail::check_finite_loss(loss.item(), "lm_warmup", s);
            tape.backward(loss);
            const real lr = opt.step();
            opt.zero_grad();
            if (s % cfg.log_every == 0 || s == cfg.lm_warmup_steps - 1)
                trace.push_back({{"step", s},
                                 {"stage", "lm_warmup"},
                                 {"losses", {{"lm_text", loss.item()}}},
                                 {"lr", lr},
                                 {"codebook_utilization", 0.0}});
        }
    }

    model.set_lm_frozen(cfg.freeze_semantic_decoder);
    model.set_semantic_branch_frozen(true);

    AdamWConfig oc;
    oc.lr_peak = cfg.lr;
    oc.warmup_steps = std::max(1, cfg.steps / 20);
    oc.total_steps = cfg.steps;
    st.gen_opt = std::make_unique<AdamW>(model.parameters(), oc);

    const auto scales = dsp::mel_loss_scales(model.config().sample_rate);
    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<TrainItem> batch;
        for (const TrainItem* it : detail::sample_batch(items, cfg.batch_size, st.rng))
            batch.push_back(*it);
        nlohmann::json rec = pretrain_step(model, batch, cfg.weights, scales, st);
        if (s % cfg.log_every == 0 || s == cfg.steps - 1) trace.push_back(std::move(rec));
    }
    return trace;
}

// freezes the encoder and quantizer, drops the text decoder from the graph,
// and alternates discriminator/generator updates on random crops
inline std::vector<nlohmann::json> run_posttrain(XyCodec& model, DiscriminatorSet& discs,
                                                 const std::vector<TrainItem>& items,
                                                 const PosttrainRunConfig& cfg) {
    XY_CHECK(!items.empty(), "run_posttrain: empty training set");
    XY_CHECK(cfg.steps >= 1 && cfg.batch_size >= 1, "run_posttrain: bad schedule");
    const int unit = model.samples_per_token();
    const int seg = std::max(unit, (cfg.segment_samples / unit) * unit);

    model.set_encoder_frozen(true);
    TrainState st;
    st.stage = Stage::posttrain;
    st.seed = cfg.seed;
    st.rng = Rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    AdamWConfig gc;
    gc.lr_peak = cfg.gen_lr;
    gc.warmup_steps = std::max(1, cfg.steps / 20);
    gc.total_steps = cfg.steps;
    st.gen_opt = std::make_unique<AdamW>(model.decoder_parameters(), gc);
    AdamWConfig dc = gc;
    dc.lr_peak = cfg.disc_lr;
    st.disc_opt = std::make_unique<AdamW>(discs.parameters(), dc);

    const auto scales = dsp::mel_loss_scales(model.config().sample_rate);
    std::vector<nlohmann::json> trace;
    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<std::vector<real>> segs;
        for (const TrainItem* it : detail::sample_batch(items, cfg.batch_size, st.rng)) {
            std::vector<real> wav = model.pad_waveform(it->wav);
            if (static_cast<int>(wav.size()) > seg) {
                const uint32_t span = static_cast<uint32_t>(wav.size()) - seg + 1;
                const size_t off = st.rng.below(span);
                wav = std::vector<real>(wav.begin() + off, wav.begin() + off + seg);
                wav = model.pad_waveform(wav);
            }
            segs.push_back(std::move(wav));
        }
        nlohmann::json rec = posttrain_step(model, discs, segs, cfg.weights, scales, st);
        if (s % cfg.log_every == 0 || s == cfg.steps - 1) trace.push_back(std::move(rec));
    }
    return trace;
}

}  // namespace xy
