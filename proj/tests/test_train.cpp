#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "xy/losses.hpp"
#include "xy/synth.hpp"
#include "xy/train.hpp"

using namespace xy;
using namespace xy::ad;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.mel_bins = 20;
    cfg.d_sem = 8;
    cfg.d_ac = 8;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.enc_layers = 1;
    cfg.adapter_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_lm = 16;
    cfg.lm_heads = 2;
    cfg.lm_layers = 1;
    cfg.rvq_layers = 2;
    cfg.rvq_codebook = 8;
    cfg.seed = 5;
    return cfg;
}

std::vector<TrainItem> tiny_items() {
    const PhonemeBank bank = gen_phoneme_bank(11);
    std::vector<TrainItem> items;
    for (const std::string& text : {"ab", "cd", "ea", "db"}) {
        UtteranceSpec spec;
        spec.text = text;
        spec.speaker_id = 1 + items.size();
        items.push_back({synth_utterance(spec, bank), text});
    }
    return items;
}

DiscOutput fixed_score(real v) {
    DiscOutput o;
    o.score = Tensor::from({v, v}, {2, 1});
    return o;
}

}  // namespace

TEST_CASE("pretrain total is the weighted sum of its parts") {
    PretrainWeights w;
    auto total = [&](real r, real a, real c) {
        return pretrain_total(Tensor::scalar(r), Tensor::scalar(a), Tensor::scalar(c), w).item();
    };
    CHECK(total(1, 1, 1) == Catch::Approx(36.0).margin(1e-12));
    CHECK(total(0, 0, 0) == 0.0);
    CHECK(total(0.5, 0, 0) == Catch::Approx(7.5).margin(1e-12));

    // exact linearity under random components and weights
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        PretrainWeights rw{rng.uniform() * 30, rng.uniform() * 30, rng.uniform() * 30};
        const real r = rng.uniform(), a = rng.uniform(), c = rng.uniform();
        const real got = pretrain_total(Tensor::scalar(r), Tensor::scalar(a), Tensor::scalar(c),
                                        rw)
                             .item();
        CHECK(got == Catch::Approx(rw.asr * a + rw.recon * r + rw.commit * c).margin(1e-12));
    }

    CHECK_THROWS(total(-0.1, 0, 0));  // negative component signals an upstream bug
}

TEST_CASE("asr loss hand values") {
    // near-one-hot logits on the target: loss vanishes
    Tensor sharp = Tensor::from({50.0, 0.0, 0.0, 0.0, 50.0, 0.0}, {2, 3});
    CHECK(asr_loss(sharp, {0, 1}).item() < 1e-6);

    // uniform logits over V classes, N rows: N ln V
    Tensor uniform = Tensor::zeros({3, 5});
    CHECK(asr_loss(uniform, {0, 3, 4}).item() ==
          Catch::Approx(3.0 * std::log(5.0)).epsilon(1e-12));

    // two binary steps at p(correct) = 1/4 each
    const real off = std::log(3.0);
    Tensor quarter = Tensor::from({0.0, off, 0.0, off}, {2, 2});
    CHECK(asr_loss(quarter, {0, 0}).item() == Catch::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS(asr_loss(uniform, {0, 1}));  // row/target length mismatch
}

TEST_CASE("least squares adversarial values at reference points") {
    const std::vector<DiscOutput> ones = {fixed_score(1.0)};
    const std::vector<DiscOutput> zeros = {fixed_score(0.0)};
    const std::vector<DiscOutput> halves = {fixed_score(0.5)};

    // Nash point: real scored one, fake scored zero
    CHECK(disc_loss(ones, zeros).item() == Catch::Approx(0.0).margin(1e-12));
    CHECK(adv_loss(zeros).item() == Catch::Approx(1.0).margin(1e-12));
    CHECK(adv_loss(ones).item() == Catch::Approx(0.0).margin(1e-12));

    CHECK(disc_loss(halves, halves).item() == Catch::Approx(0.5).margin(1e-12));

    const std::vector<DiscOutput> mixed = {fixed_score(1.0), fixed_score(0.0)};
    CHECK(adv_loss(mixed).item() == Catch::Approx(0.5).margin(1e-12));

    CHECK_THROWS(disc_loss({}, {}));
    CHECK_THROWS(adv_loss({}));
}

TEST_CASE("feature matching is normalized and one-sided") {
    auto with_feats = [](std::vector<real> v) {
        DiscOutput o;
        o.score = Tensor::from({0.0}, {1, 1});
        o.feats.push_back(Tensor::from(v, {1, static_cast<int>(v.size())}));
        return std::vector<DiscOutput>{o};
    };

    CHECK(feat_match_loss(with_feats({0.3, -0.7}), with_feats({0.3, -0.7})).item() ==
          Catch::Approx(0.0).margin(1e-12));

    // sum|diff| = 2 over mean magnitude 1
    CHECK(feat_match_loss(with_feats({2.0, 0.0}), with_feats({0.0, 0.0})).item() ==
          Catch::Approx(2.0).epsilon(1e-6));

    // scaling both feature sets leaves the value unchanged
    const real base = feat_match_loss(with_feats({0.4, -1.2, 0.8}), with_feats({0.1, 0.3, -0.5}))
                          .item();
    const real scaled =
        feat_match_loss(with_feats({0.4 * 3.7, -1.2 * 3.7, 0.8 * 3.7}),
                        with_feats({0.1 * 3.7, 0.3 * 3.7, -0.5 * 3.7}))
            .item();
    CHECK(std::abs(base - scaled) / base < 1e-6);

    // gradient reaches only the fake features
    Tensor real_f = Tensor::from({1.0, 2.0}, {1, 2}, true);
    Tensor fake_f = Tensor::from({0.5, 1.0}, {1, 2}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        DiscOutput r, f;
        r.score = Tensor::from({0.0}, {1, 1});
        f.score = Tensor::from({0.0}, {1, 1});
        r.feats.push_back(real_f);
        f.feats.push_back(fake_f);
        Tensor loss = feat_match_loss({r}, {f});
        tape.backward(loss);
    }
    real g_real = 0, g_fake = 0;
    for (real g : real_f.grad_or_zero()) g_real += std::abs(g);
    for (real g : fake_f.grad_or_zero()) g_fake += std::abs(g);
    CHECK(g_real == 0.0);
    CHECK(g_fake > 0.0);
}

TEST_CASE("generator total weighted sum") {
    PosttrainWeights w;
    auto total = [&](real r, real f, real a) {
        return generator_total(Tensor::scalar(r), Tensor::scalar(f), Tensor::scalar(a), w).item();
    };
    CHECK(total(1, 1, 1) == Catch::Approx(17.0).margin(1e-12));
    CHECK(total(0, 0, 0) == 0.0);
    CHECK(total(0, 2, 3) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("adversarial losses pass finite difference checks") {
    DiscConfig dcfg;
    dcfg.channels = 3;
    dcfg.seed = 4;
    DiscriminatorSet discs(dcfg);
    Rng rng(6);
    Tensor fake = randn({96}, rng, 0.3);
    const std::vector<real> real_wav = [&] {
        Tensor t = randn({96}, rng, 0.3);
        return t.v();
    }();

    auto on_real = discs.fwd(Tensor::from(real_wav, {96}));

    CHECK(finite_diff_check(
              [&](const Tensor& x) { return adv_loss(discs.fwd(x)); }, fake, 1e-5) < 1e-3);
    CHECK(finite_diff_check(
              [&](const Tensor& x) {
                  return disc_loss(discs.fwd(Tensor::from(real_wav, {96})), discs.fwd(x));
              },
              fake, 1e-5) < 1e-3);
    CHECK(finite_diff_check(
              [&](const Tensor& x) { return feat_match_loss(on_real, discs.fwd(x)); }, fake,
              1e-5) < 1e-3);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
    CHECK_THROWS(xy::detail::check_finite_loss(std::nan(""), "test", 3));
    CHECK_THROWS(xy::detail::check_finite_loss(HUGE_VAL, "test", 3));
    xy::detail::check_finite_loss(1.5, "test", 3);  // no throw
}

TEST_CASE("pretrain step runs, initializes codebooks, and learns") {
    XyCodec model(tiny_config());
    const auto items = tiny_items();
    const auto scales = dsp::mel_loss_scales(16000);

    TrainState st;
    AdamWConfig oc;
    oc.lr_peak = 2e-3;
    oc.warmup_steps = 5;
    oc.total_steps = 100;
    st.gen_opt = std::make_unique<AdamW>(model.parameters(), oc);

    PretrainWeights w;
    nlohmann::json first = pretrain_step(model, items, w, scales, st);
    CHECK(model.quantizer().initialized());
    CHECK(first["stage"] == "pretrain");
    CHECK(first["step"] == 1);
    for (const char* k : {"total", "recon", "asr", "commit"})
        CHECK(std::isfinite(first["losses"][k].get<real>()));
    CHECK(first["codebook_utilization"].get<real>() > 0);

    for (int s = 1; s < 100; ++s) pretrain_step(model, items, w, scales, st);
    nlohmann::json last = pretrain_step(model, items, w, scales, st);
    const real drop = 1.0 - last["losses"]["total"].get<real>() /
                                first["losses"]["total"].get<real>();
    CHECK(drop >= 0.3);  // a memorizable four-utterance set collapses quickly
}

TEST_CASE("pretrain run freezes the right parts and is deterministic") {
    const auto items = tiny_items();
    PretrainRunConfig cfg;
    cfg.steps = 12;
    cfg.batch_size = 2;
    cfg.lm_warmup_steps = 0;  // freeze the decoder body at initialization
    cfg.lr = 1e-3;
    cfg.log_every = 4;
    cfg.seed = 3;

    XyCodec model(tiny_config());
    std::vector<std::vector<real>> sem_before, lm_before;
    for (auto* p : model.lm_body_parameters()) lm_before.push_back(p->tensor.v());
    std::vector<ad::Parameter*> sem_params;
    for (auto* p : model.encoder_parameters())
        if (p->name.rfind("enc.sem", 0) == 0) sem_params.push_back(p);
    for (auto* p : sem_params) sem_before.push_back(p->tensor.v());
    REQUIRE(!sem_params.empty());

    const auto trace = run_pretrain(model, items, cfg);
    REQUIRE(!trace.empty());
    CHECK(trace.front()["stage"] == "pretrain");

    for (size_t i = 0; i < sem_params.size(); ++i)
        CHECK(sem_params[i]->tensor.v() == sem_before[i]);  // fixed semantic branch
    const auto lm_params = model.lm_body_parameters();
    for (size_t i = 0; i < lm_params.size(); ++i)
        CHECK(lm_params[i]->tensor.v() == lm_before[i]);  // fixed decoder body

    // identical config and seed reproduce the trace exactly
    XyCodec rerun(tiny_config());
    CHECK(run_pretrain(rerun, items, cfg) == trace);
}

TEST_CASE("asr weight zero skips the text pathway") {
    const auto items = tiny_items();
    PretrainRunConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 2;
    cfg.lm_warmup_steps = 50;  // would run if asr were active
    cfg.weights.asr = 0;
    cfg.log_every = 1;
    cfg.seed = 4;

    XyCodec model(tiny_config());
    const auto trace = run_pretrain(model, items, cfg);
    for (const auto& rec : trace) {
        CHECK(rec["stage"] == "pretrain");  // no warm-up entries
        CHECK(rec["losses"]["asr"].get<real>() == 0.0);
    }
}

TEST_CASE("posttrain freezes encoder and quantizer, trains decoder and discs") {
    const auto items = tiny_items();
    XyCodec model(tiny_config());

    // a short pretrain gives the quantizer its codebooks
    PretrainRunConfig pre;
    pre.steps = 4;
    pre.batch_size = 2;
    pre.lm_warmup_steps = 0;
    pre.seed = 7;
    run_pretrain(model, items, pre);

    const std::vector<real> probe_wav = model.pad_waveform(items[0].wav);
    const std::vector<real> out_before = model.reconstruct(probe_wav);
    std::vector<std::vector<real>> enc_before, lm_before;
    for (auto* p : model.encoder_parameters()) enc_before.push_back(p->tensor.v());
    for (auto* p : model.lm_parameters()) lm_before.push_back(p->tensor.v());
    const auto rvq_before = model.quantizer().to_named_tensors("rvq.");

    DiscConfig dcfg;
    dcfg.channels = 4;
    dcfg.seed = 21;
    DiscriminatorSet discs(dcfg);
    std::vector<std::vector<real>> disc_before;
    for (auto* p : discs.parameters()) disc_before.push_back(p->tensor.v());

    PosttrainRunConfig post;
    post.steps = 6;
    post.batch_size = 2;
    post.segment_samples = 2560;
    post.gen_lr = 1e-3;
    post.disc_lr = 1e-3;
    post.log_every = 2;
    post.seed = 9;
    const auto trace = run_posttrain(model, discs, items, post);
    REQUIRE(!trace.empty());
    CHECK(trace.front()["stage"] == "posttrain");
    for (const char* k : {"gen_total", "disc", "recon", "feat", "adv"})
        CHECK(std::isfinite(trace.front()["losses"][k].get<real>()));

    const auto enc_params = model.encoder_parameters();
    for (size_t i = 0; i < enc_params.size(); ++i)
        CHECK(enc_params[i]->tensor.v() == enc_before[i]);  // bitwise frozen
    const auto lm_params = model.lm_parameters();
    for (size_t i = 0; i < lm_params.size(); ++i)
        CHECK(lm_params[i]->tensor.v() == lm_before[i]);  // absent from the graph
    const auto rvq_after = model.quantizer().to_named_tensors("rvq.");
    REQUIRE(rvq_after.size() == rvq_before.size());
    for (size_t i = 0; i < rvq_after.size(); ++i)
        CHECK(rvq_after[i].tensor.v() == rvq_before[i].tensor.v());

    CHECK(model.reconstruct(probe_wav) != out_before);  // decoder actually trained
    bool disc_moved = false;
    const auto disc_params = discs.parameters();
    for (size_t i = 0; i < disc_params.size(); ++i)
        if (disc_params[i]->tensor.v() != disc_before[i]) disc_moved = true;
    CHECK(disc_moved);
}

TEST_CASE("discriminator objective improves over a short run") {
    const auto items = tiny_items();
    XyCodec model(tiny_config());
    PretrainRunConfig pre;
    pre.steps = 4;
    pre.batch_size = 2;
    pre.lm_warmup_steps = 0;
    pre.seed = 15;
    run_pretrain(model, items, pre);

    DiscConfig dcfg;
    dcfg.channels = 4;
    dcfg.seed = 22;
    DiscriminatorSet discs(dcfg);

    PosttrainRunConfig post;
    post.steps = 30;
    post.batch_size = 2;
    post.segment_samples = 1280;
    post.gen_lr = 1e-4;
    post.disc_lr = 2e-3;
    post.log_every = 1;
    post.seed = 30;
    const auto trace = run_posttrain(model, discs, items, post);
    REQUIRE(static_cast<int>(trace.size()) == post.steps);
    CHECK(trace.back()["losses"]["disc"].get<real>() <
          trace.front()["losses"]["disc"].get<real>());
}
