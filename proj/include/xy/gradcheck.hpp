#pragma once

// curated finite-difference suite: every differentiable op, every loss, and
// the end-to-end pretraining graph (quantizer bypassed there: the codebook
// lookup is piecewise constant, so its straight-through path has no valid
// finite-difference oracle; the commitment term is checked on its input side)

#include <cmath>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/ctc.hpp"
#include "xy/dsp.hpp"
#include "xy/losses.hpp"
#include "xy/model.hpp"
#include "xy/rvq.hpp"
#include "xy/train.hpp"

namespace xy {

struct GradCheckResult {
    std::string name;
    real err = 0;
    real tol = 0;
    bool ok() const { return err < tol; }
};

inline std::vector<GradCheckResult> run_gradcheck(uint64_t seed = 42) {
    using namespace ad;
    Rng rng(seed);
    std::vector<GradCheckResult> out;
    auto add = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& fn,
                   Tensor point, real tol = 1e-3) {
        out.push_back({name, finite_diff_check(fn, std::move(point), 1e-5), tol});
    };

    // elementwise and shape ops
    Tensor a = randn({3, 4}, rng, 1.0);
    Tensor b = randn({4, 5}, rng, 1.0);
    Tensor other = randn({3, 4}, rng, 1.0);
    add("add", [&](const Tensor& x) { return sum_all(mul(x + other, x + other)); }, a);
    add("sub", [&](const Tensor& x) { return sum_all(mul(x - other, x - other)); }, a);
    add("mul", [&](const Tensor& x) { return sum_all(mul(x, x)); }, a);
    add("div", [&](const Tensor& x) { return sum_all(div(x, affine(mul(x, x), 1.0, 2.0))); }, a);
    add("affine", [&](const Tensor& x) { return sum_all(mul(affine(x, 0.7, -0.3), x)); }, a);
    add("gelu", [&](const Tensor& x) { return sum_all(gelu(x)); }, a);
    add("tanh", [&](const Tensor& x) { return sum_all(ad::tanh(x)); }, a);
    add("sigmoid", [&](const Tensor& x) { return sum_all(sigmoid(x)); }, a);
    add("exp", [&](const Tensor& x) { return sum_all(ad::exp(x)); }, a);
    add("log", [&](const Tensor& x) { return sum_all(ad::log(affine(mul(x, x), 1.0, 0.5))); }, a);
    add("sqrt", [&](const Tensor& x) { return sum_all(ad::sqrt(affine(mul(x, x), 1.0, 0.5))); }, a);
    add("clamp", [&](const Tensor& x) { return sum_all(mul(clamp(x, -0.6, 0.6), x)); }, a);
    add("matmul", [&](const Tensor& x) { return sum_all(matmul(x, b)); }, a);
    add("matmul_tt",
        [&](const Tensor& x) { return sum_all(matmul(b, x, true, true)); }, a);
    add("softmax", [&](const Tensor& x) { return sum_all(mul(softmax(x), x)); }, a);
    add("concat",
        [&](const Tensor& x) { return sum_all(mul(concat({x, x}, 1), concat({x, x}, 1))); }, a);
    add("slice", [&](const Tensor& x) { return sum_all(mul(slice(x, 0, 1, 2), slice(x, 0, 1, 2))); },
        a);
    add("mean_all", [&](const Tensor& x) { return mean_all(mul(x, x)); }, a);
    Tensor l1_ref = Tensor::from(std::vector<real>(20, 0.3), {4, 5});
    add("l1_distance", [&](const Tensor& x) { return l1_distance(x, l1_ref); },
        randn({4, 5}, rng, 1.0));

    Tensor g = randn({4, 3}, rng, 1.0);
    add("layer_norm",
        [&](const Tensor& x) {
            Tensor gamma = Tensor::from({1.0, 0.9, 1.1}, {3});
            Tensor beta = Tensor::from({0.1, -0.1, 0.0}, {3});
            return sum_all(mul(layer_norm(x, gamma, beta), x));
        },
        g);
    add("embedding",
        [&](const Tensor& table) {
            return sum_all(mul(embedding(table, {0, 2, 1}), embedding(table, {0, 2, 1})));
        },
        randn({3, 4}, rng, 1.0));
    add("cross_entropy", [&](const Tensor& x) { return cross_entropy(x, {1, 0}); },
        randn({2, 3}, rng, 1.0));

    // temporal ops; weights are [K x Cin x Cout]
    Tensor w1d = randn({3, 2, 4}, rng, 0.5);
    Tensor b1d = randn({4}, rng, 0.1);
    Tensor x1d = randn({8, 2}, rng, 1.0);
    add("conv1d",
        [&](const Tensor& x) {
            Tensor y = conv1d(x, w1d, b1d, 2, 1);
            return sum_all(mul(y, y));
        },
        x1d);
    add("conv1d_w",
        [&](const Tensor& w) {
            Tensor y = conv1d(x1d, w, b1d, 2, 1);
            return sum_all(mul(y, y));
        },
        w1d);
    add("transposed_conv1d",
        [&](const Tensor& x) {
            Tensor y = transposed_conv1d(x, w1d, b1d, 2, 1);
            return sum_all(mul(y, y));
        },
        x1d);
    add("as_frames", [&](const Tensor& x) { return sum_all(mul(as_frames(x, 3), as_frames(x, 3))); },
        randn({7}, rng, 1.0));
    add("replication_upsample",
        [&](const Tensor& x) { return sum_all(mul(replication_upsample(x, 3),
                                                  replication_upsample(x, 3))); },
        x1d);
    add("avg_pool1d",
        [&](const Tensor& x) { return sum_all(mul(avg_pool1d(x, 2, 2), avg_pool1d(x, 2, 2))); },
        x1d);

    // spectral losses
    {
        Rng wrng(seed + 1);
        Tensor x_hat = randn({700}, wrng, 0.2);
        std::vector<real> x_ref(700);
        for (real& v : x_ref) v = 0.2 * wrng.normal();
        std::vector<dsp::MelScale> scales;
        {
            dsp::MelScale s;
            s.stft = {64, 16, 64};
            s.fb = dsp::mel_filterbank(8, 64, 16000, 0.0, 8000.0);
            scales.push_back(std::move(s));
            dsp::MelScale s2;
            s2.stft = {128, 32, 128};
            s2.fb = dsp::mel_filterbank(16, 128, 16000, 0.0, 8000.0);
            scales.push_back(std::move(s2));
        }
        add("multiscale_mel_loss",
            [&](const Tensor& x) { return dsp::multiscale_mel_loss(x, x_ref, scales); }, x_hat);
        add("istft_synth",
            [&](const Tensor& fr) {
                Tensor w = dsp::istft_synth(fr, 16, 4, 40);
                return sum_all(mul(w, w));
            },
            randn({10, 18}, rng, 0.5));
        add("log_spectral_frames",
            [&](const Tensor& x) {
                Tensor img = dsp::log_spectral_frames(x, {32, 8, 32}, nullptr);
                return sum_all(mul(img, img));
            },
            randn({64}, rng, 0.4));
    }

    // sequence losses
    {
        Rng crng(seed + 2);
        add("ctc_loss", [&](const Tensor& lg) { return ctc_loss(lg, {1, 2}); },
            randn({5, 4}, crng, 0.8));
    }

    // quantizer commitment, input side: assignments are locally constant
    {
        RvqConfig rc;
        rc.num_layers = 2;
        rc.codebook_size = 4;
        rc.dim = 3;
        rc.seed = seed + 3;
        ResidualVq rvq(rc);
        Rng qrng(seed + 4);
        std::vector<real> frames(24);
        for (real& v : frames) v = qrng.normal();
        rvq.init_codebooks(frames, 8);
        add("commitment_loss",
            [&](const Tensor& z) { return rvq.quantize(z).commit; },
            randn({4, 3}, qrng, 1.0));
    }

    // adversarial losses through the discriminator stack
    {
        DiscConfig dc;
        dc.channels = 3;
        dc.seed = seed + 5;
        DiscriminatorSet discs(dc);
        Rng drng(seed + 6);
        Tensor fake = randn({96}, drng, 0.3);
        std::vector<real> real_wav(96);
        for (real& v : real_wav) v = 0.3 * drng.normal();
        const auto on_real = discs.fwd(Tensor::from(real_wav, {96}));
        add("adv_loss", [&](const Tensor& x) { return adv_loss(discs.fwd(x)); }, fake);
        add("disc_loss",
            [&](const Tensor& x) {
                return disc_loss(discs.fwd(Tensor::from(real_wav, {96})), discs.fwd(x));
            },
            fake);
        add("feat_match_loss",
            [&](const Tensor& x) { return feat_match_loss(on_real, discs.fwd(x)); }, fake);
    }

    // teacher-forced transcription loss through the language model
    {
        ModelConfig mc;
        mc.mel_bins = 12;
        mc.d_sem = 4;
        mc.d_ac = 4;
        mc.d_model = 8;
        mc.n_heads = 2;
        mc.d_lm = 8;
        mc.rvq_layers = 2;
        mc.rvq_codebook = 4;
        mc.seed = seed + 7;
        XyCodec model(mc);
        Rng arng(seed + 8);
        add("asr_loss", [&](const Tensor& q) { return model.asr_loss(q, "ab"); },
            randn({3, 8}, arng, 1.0));
    }

    return out;
}

// full pretraining objective differentiated through a bypass codec; checks a
// small random subset of parameter elements against central differences
inline GradCheckResult gradcheck_pretrain_graph(uint64_t seed = 43, int n_elements = 8) {
    ModelConfig mc;
    mc.mel_bins = 12;
    mc.d_sem = 4;
    mc.d_ac = 4;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_lm = 8;
    mc.rvq_layers = 2;
    mc.rvq_codebook = 4;
    mc.bypass_quantizer = true;
    mc.seed = seed;
    XyCodec model(mc);

    Rng rng(seed + 1);
    std::vector<real> wav(static_cast<size_t>(model.samples_per_token()));
    for (size_t i = 0; i < wav.size(); ++i)
        wav[i] = 0.4 * std::sin(2.0 * kPi * 330.0 * i / 16000.0) + 0.05 * rng.normal();
    const std::string text = "ab";
    const auto scales = [&] {
        std::vector<dsp::MelScale> s(1);
        s[0].stft = {64, 16, 64};
        s[0].fb = dsp::mel_filterbank(8, 64, 16000, 0.0, 8000.0);
        return s;
    }();
    PretrainWeights w;

    auto loss_value = [&]() -> real {
        const EncodeResult enc = model.encode(wav);
        const QuantizeResult q = model.quantize(enc.z);
        ad::Tensor recon = dsp::multiscale_mel_loss(model.decode(q.quantized), wav, scales);
        ad::Tensor asr = model.asr_loss(q.quantized, text);
        return pretrain_total(recon, asr, q.commit, w).item();
    };

    // analytic gradients from one taped pass
    ad::Tape tape;
    {
        ad::TapeScope scope(tape);
        const EncodeResult enc = model.encode(wav);
        const QuantizeResult q = model.quantize(enc.z);
        ad::Tensor recon = dsp::multiscale_mel_loss(model.decode(q.quantized), wav, scales);
        ad::Tensor asr = model.asr_loss(q.quantized, text);
        tape.backward(pretrain_total(recon, asr, q.commit, w));
    }

    auto params = model.parameters();
    GradCheckResult res{"pretrain_graph", 0.0, 1e-2};
    const real eps = 1e-5;
    for (int k = 0; k < n_elements; ++k) {
        ad::Parameter* p = params[rng.below(static_cast<uint32_t>(params.size()))];
        const int i = static_cast<int>(rng.below(static_cast<uint32_t>(p->tensor.numel())));
        const real analytic = p->tensor.g().empty() ? 0.0 : p->tensor.g()[i];
        const real saved = p->tensor.v()[i];
        p->tensor.v()[i] = saved + eps;
        const real fp = loss_value();
        p->tensor.v()[i] = saved - eps;
        const real fm = loss_value();
        p->tensor.v()[i] = saved;
        const real central = (fp - fm) / (2 * eps);
        const real rel =
            std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-8);
        res.err = std::max(res.err, rel);
    }
    return res;
}

}  // namespace xy
