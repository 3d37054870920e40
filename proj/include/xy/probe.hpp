#pragma once

// Transcription probe: frozen frame embeddings -> replicate-upsample to 50 Hz
// -> 2-layer bidirectional LSTM -> linear head -> CTC. Measures how much
// text content an embedding stream carries, reported as greedy-decode WER.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"
#include "xy/ctc.hpp"
#include "xy/metrics.hpp"
#include "xy/optim.hpp"
#include "xy/text.hpp"

namespace xy {

// replication factor lifting rate_hz up to >= 50 Hz (1 when already there)
inline int upsample_factor(real rate_hz) {
  XY_CHECK(rate_hz > 0 && rate_hz <= 50.0, "upsample_factor: rate must be in (0, 50]");
  return static_cast<int>(std::ceil(50.0 / rate_hz - 1e-9));
}

inline ad::Tensor upsample_to_50hz(const ad::Tensor& frames, real rate_hz) {
  const int f = upsample_factor(rate_hz);
  return f == 1 ? frames : ad::replication_upsample(frames, f);
}

// single-direction LSTM layer; weights [in+hidden, 4*hidden] with gate order
// (input, forget, cell, output), forget-gate bias starts at +1
class LstmLayer {
 public:
  LstmLayer(const std::string& name, int in_dim, int hidden, Rng& rng)
      : in_dim_(in_dim), hidden_(hidden) {
    XY_CHECK(in_dim > 0 && hidden > 0, "LstmLayer: dims must be positive");
    const real scale = 1.0 / std::sqrt(static_cast<real>(in_dim + hidden));
    w_ = {name + ".w", ad::randn({in_dim + hidden, 4 * hidden}, rng, scale, true), false};
    std::vector<real> b(static_cast<size_t>(4 * hidden), 0.0);
    for (int j = hidden; j < 2 * hidden; ++j) b[static_cast<size_t>(j)] = 1.0;
    b_ = {name + ".b", ad::Tensor::from(std::move(b), {1, 4 * hidden}, true), false};
  }

  // x [T x in_dim] -> hidden states [T x hidden]; reversed=true scans backward
  ad::Tensor run(const ad::Tensor& x, bool reversed) const {
    XY_CHECK(x.rank() == 2 && x.shape()[1] == in_dim_, "LstmLayer::run: bad input shape");
    const int T = x.shape()[0];
    ad::Tensor h = ad::Tensor::zeros({1, hidden_});
    ad::Tensor c = ad::Tensor::zeros({1, hidden_});
    std::vector<ad::Tensor> rows(static_cast<size_t>(T));
    for (int step = 0; step < T; ++step) {
      const int t = reversed ? T - 1 - step : step;
      ad::Tensor xt = ad::slice(x, 0, t, 1);
      ad::Tensor z = ad::matmul(ad::concat({xt, h}, 1), w_.tensor) + b_.tensor;
      ad::Tensor i = ad::sigmoid(ad::slice(z, 1, 0, hidden_));
      ad::Tensor f = ad::sigmoid(ad::slice(z, 1, hidden_, hidden_));
      ad::Tensor g = ad::tanh(ad::slice(z, 1, 2 * hidden_, hidden_));
      ad::Tensor o = ad::sigmoid(ad::slice(z, 1, 3 * hidden_, hidden_));
      c = f * c + i * g;
      h = o * ad::tanh(c);
      rows[static_cast<size_t>(t)] = h;
    }
    return ad::concat(rows, 0);
  }

  std::vector<ad::Parameter*> parameters() { return {&w_, &b_}; }

 private:
  int in_dim_, hidden_;
  ad::Parameter w_, b_;
};

struct ProbeConfig {
  int hidden = 64;
  int layers = 2;
  int epochs = 30;
  real lr = 2e-3;
  uint64_t seed = 7;
};

// frozen features at some frame rate plus the reference transcript
struct ProbeExample {
  ad::Tensor features;  // [T x dim], requires_grad stays false
  std::string text;
};

class CtcProbe {
 public:
  CtcProbe(int in_dim, const ProbeConfig& cfg) : cfg_(cfg) {
    XY_CHECK(cfg.layers >= 1, "CtcProbe: needs at least one layer");
    Rng rng(cfg.seed);
    int dim = in_dim;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string base = "probe.l" + std::to_string(l);
      fwd_.emplace_back(base + ".fwd", dim, cfg.hidden, rng);
      bwd_.emplace_back(base + ".bwd", dim, cfg.hidden, rng);
      dim = 2 * cfg.hidden;
    }
    const real scale = 1.0 / std::sqrt(static_cast<real>(dim));
    head_w_ = {"probe.head.w", ad::randn({dim, kCharVocab + 1}, rng, scale, true), false};
    head_b_ = {"probe.head.b", ad::Tensor::zeros({1, kCharVocab + 1}, true), false};
  }

  // features [T x in_dim] -> logits [T x 28] (blank + 27 symbols)
  ad::Tensor logits(const ad::Tensor& features) const {
    ad::Tensor h = features;
    for (size_t l = 0; l < fwd_.size(); ++l)
      h = ad::concat({fwd_[l].run(h, false), bwd_[l].run(h, true)}, 1);
    const int T = h.shape()[0];
    ad::Tensor ones = ad::Tensor::from(std::vector<real>(static_cast<size_t>(T), 1.0), {T, 1});
    return ad::matmul(h, head_w_.tensor) + ad::matmul(ones, head_b_.tensor);
  }

  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> ps;
    for (size_t l = 0; l < fwd_.size(); ++l) {
      for (ad::Parameter* p : fwd_[l].parameters()) ps.push_back(p);
      for (ad::Parameter* p : bwd_[l].parameters()) ps.push_back(p);
    }
    ps.push_back(&head_w_);
    ps.push_back(&head_b_);
    return ps;
  }

  const ProbeConfig& config() const { return cfg_; }

 private:
  ProbeConfig cfg_;
  std::vector<LstmLayer> fwd_, bwd_;
  ad::Parameter head_w_, head_b_;
};

inline std::string greedy_transcript(const CtcProbe& probe, const ad::Tensor& features) {
  return ids_to_text(ctc_greedy_decode(probe.logits(features)));
}

// mean WER of greedy transcripts against references
inline real probe_wer(const CtcProbe& probe, const std::vector<ProbeExample>& examples) {
  XY_CHECK(!examples.empty(), "probe_wer: no examples");
  real total = 0;
  for (const ProbeExample& e : examples)
    total += wer(greedy_transcript(probe, e.features), normalize_text(e.text));
  return total / static_cast<real>(examples.size());
}

// trains a fresh probe on frozen features with per-utterance CTC updates;
// examples too short for their target are skipped (at least one must remain)
inline CtcProbe train_probe(const std::vector<ProbeExample>& train, const ProbeConfig& cfg) {
  XY_CHECK(!train.empty(), "train_probe: no training examples");
  const int in_dim = train[0].features.shape()[1];
  std::vector<size_t> usable;
  for (size_t i = 0; i < train.size(); ++i) {
    XY_CHECK(train[i].features.shape()[1] == in_dim, "train_probe: inconsistent feature dims");
    const std::vector<int> ids = text_to_ids(normalize_text(train[i].text));
    if (train[i].features.shape()[0] >= ctc_min_frames(ids)) usable.push_back(i);
  }
  XY_CHECK(!usable.empty(), "train_probe: every example is shorter than its target");

  CtcProbe probe(in_dim, cfg);
  AdamWConfig opt_cfg;
  opt_cfg.lr_peak = cfg.lr;
  opt_cfg.warmup_steps = static_cast<int>(usable.size());
  opt_cfg.total_steps = cfg.epochs * static_cast<int>(usable.size());
  AdamW opt(probe.parameters(), opt_cfg);

  Rng rng(cfg.seed ^ 0xabcdef12345678ull);
  std::vector<size_t> order = usable;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(static_cast<uint32_t>(i))]);
    real epoch_loss = 0;
    for (size_t idx : order) {
      const ProbeExample& e = train[idx];
      const std::vector<int> ids = text_to_ids(normalize_text(e.text));
      ad::Tape tape;
      ad::TapeScope scope(tape);
      opt.zero_grad();
      ad::Tensor loss = ctc_loss(probe.logits(e.features), ids);
      XY_CHECK(std::isfinite(loss.item()), "train_probe: non-finite loss");
      tape.backward(loss);
      opt.step();
      epoch_loss += loss.item();
    }
    log_debug("probe epoch " + std::to_string(epoch) + " mean ctc loss " +
              std::to_string(epoch_loss / static_cast<real>(order.size())));
  }
  return probe;
}

// one-hot frame features [T x dim] for oracle and control experiments
inline ad::Tensor one_hot_frames(const std::vector<int>& labels, int dim) {
  XY_CHECK(dim > 0, "one_hot_frames: dim must be positive");
  const int T = static_cast<int>(labels.size());
  std::vector<real> v(static_cast<size_t>(T) * dim, 0.0);
  for (int t = 0; t < T; ++t) {
    XY_CHECK(labels[static_cast<size_t>(t)] >= 0 && labels[static_cast<size_t>(t)] < dim,
             "one_hot_frames: label out of range");
    v[static_cast<size_t>(t) * dim + labels[static_cast<size_t>(t)]] = 1.0;
  }
  return ad::Tensor::from(std::move(v), {T, dim});
}

}  // namespace xy
