#pragma once

#include <cmath>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"

namespace xy {

struct AdamWConfig {
    real lr_peak = 1e-4;
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    real weight_decay = 0.01;
    real clip_norm = 1.0;  // <= 0 disables clipping
    int warmup_steps = 0;
    int total_steps = 1;
};

// linear warmup to lr_peak, then cosine decay to zero at total_steps
inline real lr_at(const AdamWConfig& cfg, long step) {
    if (step <= 0) return 0.0;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr_peak * static_cast<real>(step) / cfg.warmup_steps;
    const long total = std::max<long>(cfg.total_steps, cfg.warmup_steps + 1);
    if (step >= total) return 0.0;
    const real progress = static_cast<real>(step - cfg.warmup_steps) / (total - cfg.warmup_steps);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(kPi * progress));
}

class AdamW {
public:
    AdamW(std::vector<ad::Parameter*> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->tensor.numel(), 0.0);
            v_[i].assign(params_[i]->tensor.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->tensor.g().clear();
    }

    // applies one update from the accumulated gradients; returns the lr used
    real step() {
        ++step_count_;
        const real lr = lr_at(cfg_, step_count_);

        real scale = 1.0;
        if (cfg_.clip_norm > 0) {
            real sq = 0;
            for (auto* p : params_) {
                if (p->frozen || p->tensor.g().empty()) continue;
                for (real g : p->tensor.g()) sq += g * g;
            }
            const real norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / (norm + 1e-12);
        }

        const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(step_count_));
        const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(step_count_));
        for (size_t i = 0; i < params_.size(); ++i) {
            ad::Parameter* p = params_[i];
            if (p->frozen) continue;
            auto& theta = p->tensor.v();
            const auto& grad = p->tensor.g();
            for (size_t j = 0; j < theta.size(); ++j) {
                const real g = grad.empty() ? 0.0 : grad[j] * scale;
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const real mhat = m_[i][j] / bc1;
                const real vhat = v_[i][j] / bc2;
                theta[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * theta[j]);
            }
        }
        return lr;
    }

    long step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<ad::Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<real>> m_, v_;
    long step_count_ = 0;
};

}  // namespace xy
