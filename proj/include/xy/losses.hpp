#pragma once

// training objectives: weighted pretrain total over reconstruction, transcription,
// and commitment; least-squares adversarial terms with normalized feature matching

#include <cmath>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"
#include "xy/model.hpp"

namespace xy {

struct PretrainWeights {
    real asr = 20.0;
    real recon = 15.0;
    real commit = 1.0;
};

struct PosttrainWeights {
    real recon = 15.0;
    real feat = 1.0;
    real adv = 1.0;
};

// summed negative log likelihood of the target tokens under the logit rows
inline ad::Tensor asr_loss(const ad::Tensor& logits, const std::vector<int>& targets) {
    XY_CHECK(logits.rank() == 2, "asr_loss: rank-2 logits expected");
    XY_CHECK(logits.shape()[0] == static_cast<int>(targets.size()),
             "asr_loss: one logit row per target");
    return ad::cross_entropy(logits, targets);
}

inline ad::Tensor pretrain_total(const ad::Tensor& recon, const ad::Tensor& asr,
                                 const ad::Tensor& commit, const PretrainWeights& w) {
    XY_CHECK(w.asr >= 0 && w.recon >= 0 && w.commit >= 0, "pretrain_total: negative weight");
    XY_CHECK(recon.numel() == 1 && asr.numel() == 1 && commit.numel() == 1,
             "pretrain_total: scalar components expected");
    XY_CHECK(recon.item() >= 0 && asr.item() >= 0 && commit.item() >= 0,
             "pretrain_total: negative component loss");
    return ad::mul_scalar(asr, w.asr) + ad::mul_scalar(recon, w.recon) +
           ad::mul_scalar(commit, w.commit);
}

namespace detail {

// score maps are pooled to one scalar per discriminator before the squares
inline ad::Tensor pooled(const DiscOutput& o) { return ad::mean_all(o.score); }

inline ad::Tensor squared_gap_to_one(const ad::Tensor& s) {
    ad::Tensor e = ad::affine(s, -1.0, 1.0);  // 1 - s
    return ad::mul(e, e);
}

}  // namespace detail

// least-squares real/fake objective for the discriminators; the fake input
// must already be detached from the generator graph
inline ad::Tensor disc_loss(const std::vector<DiscOutput>& on_real,
                            const std::vector<DiscOutput>& on_fake) {
    XY_CHECK(!on_real.empty() && on_real.size() == on_fake.size(),
             "disc_loss: mismatched or empty discriminator outputs");
    ad::Tensor acc = ad::Tensor::scalar(0.0);
    for (size_t k = 0; k < on_real.size(); ++k) {
        ad::Tensor fake = detail::pooled(on_fake[k]);
        acc = acc + detail::squared_gap_to_one(detail::pooled(on_real[k])) + ad::mul(fake, fake);
    }
    return ad::mul_scalar(acc, 1.0 / static_cast<real>(on_real.size()));
}

// generator side of the same game: push fake scores toward one
inline ad::Tensor adv_loss(const std::vector<DiscOutput>& on_fake) {
    XY_CHECK(!on_fake.empty(), "adv_loss: empty discriminator outputs");
    ad::Tensor acc = ad::Tensor::scalar(0.0);
    for (const DiscOutput& o : on_fake)
        acc = acc + detail::squared_gap_to_one(detail::pooled(o));
    return ad::mul_scalar(acc, 1.0 / static_cast<real>(on_fake.size()));
}

// per-layer L1 gap between real and fake features, normalized by the mean
// magnitude of the real features; the real side is treated as a constant
inline ad::Tensor feat_match_loss(const std::vector<DiscOutput>& on_real,
                                  const std::vector<DiscOutput>& on_fake) {
    XY_CHECK(!on_real.empty() && on_real.size() == on_fake.size(),
             "feat_match_loss: mismatched or empty discriminator outputs");
    ad::Tensor acc = ad::Tensor::scalar(0.0);
    int layers = 0;
    for (size_t k = 0; k < on_real.size(); ++k) {
        XY_CHECK(on_real[k].feats.size() == on_fake[k].feats.size(),
                 "feat_match_loss: layer count mismatch");
        for (size_t l = 0; l < on_real[k].feats.size(); ++l) {
            const ad::Tensor& rf = on_real[k].feats[l];
            ad::Tensor ref = ad::Tensor::from(rf.v(), rf.shape());  // detached copy
            real mean_abs = 0;
            for (real v : ref.v()) mean_abs += std::abs(v);
            mean_abs /= static_cast<real>(ref.numel());
            ad::Tensor gap = ad::l1_distance(on_fake[k].feats[l], ref);
            acc = acc + ad::mul_scalar(gap, 1.0 / (mean_abs + 1e-8));
            ++layers;
        }
    }
    XY_CHECK(layers > 0, "feat_match_loss: no feature layers");
    return ad::mul_scalar(acc, 1.0 / static_cast<real>(layers));
}

inline ad::Tensor generator_total(const ad::Tensor& recon, const ad::Tensor& feat,
                                  const ad::Tensor& adv, const PosttrainWeights& w) {
    XY_CHECK(w.recon >= 0 && w.feat >= 0 && w.adv >= 0, "generator_total: negative weight");
    XY_CHECK(recon.numel() == 1 && feat.numel() == 1 && adv.numel() == 1,
             "generator_total: scalar components expected");
    return ad::mul_scalar(recon, w.recon) + ad::mul_scalar(feat, w.feat) +
           ad::mul_scalar(adv, w.adv);
}

}  // namespace xy
