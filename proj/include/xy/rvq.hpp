#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/checkpoint.hpp"
#include "xy/common.hpp"

namespace xy {

// ---------------------------------------------------------------------------
// Residual vector quantizer with EMA codebook updates
// ---------------------------------------------------------------------------

struct RvqConfig {
    int num_layers = 8;
    int codebook_size = 1024;
    int dim = 0;
    real ema_decay = 0.99;
    real dead_ratio = 0.03;    // of the per-code fair share of a batch
    int replace_period = 200;  // ema updates between dead-code sweeps
    uint64_t seed = 0x9e3779b9;
};

struct QuantizeResult {
    std::vector<std::vector<int>> codes;  // [T][num_layers]
    ad::Tensor quantized;                 // [T x dim], straight-through to the input
    ad::Tensor commit;                    // scalar, sum over layers of |residual after layer|
};

inline real bits_per_second(real frame_rate_hz, int num_layers, int codebook_size) {
    XY_CHECK(frame_rate_hz > 0 && num_layers >= 1 && codebook_size >= 2, "bits_per_second: bad arguments");
    return frame_rate_hz * num_layers * std::log2(static_cast<real>(codebook_size));
}

class ResidualVq {
public:
    explicit ResidualVq(RvqConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
        XY_CHECK(cfg.num_layers >= 1 && cfg.codebook_size >= 2 && cfg.dim >= 1, "ResidualVq: bad config");
        XY_CHECK(cfg.ema_decay > 0 && cfg.ema_decay < 1, "ResidualVq: decay must be in (0,1)");
        vectors_.assign(cfg.num_layers,
                        std::vector<real>(static_cast<size_t>(cfg.codebook_size) * cfg.dim, 0.0));
        cluster_size_.assign(cfg.num_layers, std::vector<real>(cfg.codebook_size, 0.0));
        embed_sum_ = vectors_;
    }

    const RvqConfig& config() const { return cfg_; }
    bool initialized() const { return initialized_; }
    long update_count() const { return update_count_; }
    const std::vector<real>& layer_vectors(int layer) const { return vectors_[layer]; }
    const std::vector<real>& layer_cluster_size(int layer) const { return cluster_size_[layer]; }

    // k-means++ seeding plus a fixed number of Lloyd iterations per layer,
    // each layer fit on the residuals left by the previous ones
    void init_codebooks(const std::vector<real>& frames, int n) {
        XY_CHECK(n >= 1 && static_cast<int>(frames.size()) == n * cfg_.dim,
                 "init_codebooks: bad frame matrix");
        std::vector<real> residual = frames;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            vectors_[l] = kmeans(residual, n, cfg_.codebook_size, 10);
            for (int t = 0; t < n; ++t) {
                real* r = residual.data() + static_cast<size_t>(t) * cfg_.dim;
                const int c = nearest_code(vectors_[l], r);
                const real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) r[d] -= v[d];
            }
            std::fill(cluster_size_[l].begin(), cluster_size_[l].end(), 1.0);
            embed_sum_[l] = vectors_[l];
        }
        initialized_ = true;
    }

    // codes for raw frames, no autodiff involvement
    std::vector<std::vector<int>> encode_frames(const std::vector<real>& frames, int n) const {
        XY_CHECK(initialized_, "ResidualVq: codebooks not initialized");
        XY_CHECK(static_cast<int>(frames.size()) == n * cfg_.dim, "encode_frames: bad frame matrix");
        std::vector<std::vector<int>> codes(n, std::vector<int>(cfg_.num_layers));
        std::vector<real> r(cfg_.dim);
        for (int t = 0; t < n; ++t) {
            std::copy(frames.begin() + static_cast<size_t>(t) * cfg_.dim,
                      frames.begin() + static_cast<size_t>(t + 1) * cfg_.dim, r.begin());
            for (int l = 0; l < cfg_.num_layers; ++l) {
                const int c = nearest_code(vectors_[l], r.data());
                codes[t][l] = c;
                const real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) r[d] -= v[d];
            }
        }
        return codes;
    }

    // sum of code vectors over the first `layers` books (all when layers < 0)
    ad::Tensor embed_codes(const std::vector<std::vector<int>>& codes, int layers = -1) const {
        XY_CHECK(initialized_, "ResidualVq: codebooks not initialized");
        const int T = static_cast<int>(codes.size());
        XY_CHECK(T >= 1, "embed_codes: empty code sequence");
        const int L = layers < 0 ? cfg_.num_layers : layers;
        XY_CHECK(L >= 1 && L <= cfg_.num_layers, "embed_codes: bad layer count");
        ad::Tensor out = ad::Tensor::zeros({T, cfg_.dim});
        for (int t = 0; t < T; ++t) {
            XY_CHECK(static_cast<int>(codes[t].size()) == cfg_.num_layers, "embed_codes: ragged codes");
            real* o = out.v().data() + static_cast<size_t>(t) * cfg_.dim;
            for (int l = 0; l < L; ++l) {
                const int c = codes[t][l];
                XY_CHECK(c >= 0 && c < cfg_.codebook_size, "embed_codes: code out of range");
                const real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) o[d] += v[d];
            }
        }
        return out;
    }

    // straight-through quantization: values are the summed code vectors, the
    // incoming gradient passes to z unchanged; commit carries the L1 size of
    // every post-layer residual with sign gradients into z
    QuantizeResult quantize(const ad::Tensor& z) const {
        XY_CHECK(initialized_, "ResidualVq: codebooks not initialized");
        XY_CHECK(z.rank() == 2 && z.shape()[1] == cfg_.dim, "quantize: bad input shape");
        const int T = z.shape()[0];
        QuantizeResult res;
        res.codes.assign(T, std::vector<int>(cfg_.num_layers));

        ad::Tape* tp = ad::tape_if_grad({&z});
        res.quantized = ad::make_out(z.shape(), tp != nullptr);
        res.commit = ad::make_out({1}, tp != nullptr);

        std::vector<real> sign_sum(static_cast<size_t>(T) * cfg_.dim, 0.0);
        std::vector<real> r(cfg_.dim);
        real commit = 0;
        for (int t = 0; t < T; ++t) {
            std::copy(z.v().begin() + static_cast<size_t>(t) * cfg_.dim,
                      z.v().begin() + static_cast<size_t>(t + 1) * cfg_.dim, r.begin());
            real* q = res.quantized.v().data() + static_cast<size_t>(t) * cfg_.dim;
            real* s = sign_sum.data() + static_cast<size_t>(t) * cfg_.dim;
            for (int l = 0; l < cfg_.num_layers; ++l) {
                const int c = nearest_code(vectors_[l], r.data());
                res.codes[t][l] = c;
                const real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) {
                    q[d] += v[d];
                    r[d] -= v[d];
                    commit += std::abs(r[d]);
                    s[d] += r[d] > 0 ? 1.0 : (r[d] < 0 ? -1.0 : 0.0);
                }
            }
        }
        res.commit.v()[0] = commit;

        if (tp) {
            tp->record([zn = z.node(), qn = res.quantized.node(), cn = res.commit.node(),
                        sign_sum = std::move(sign_sum)] {
                const bool has_q = !qn->grad.empty();
                const bool has_c = !cn->grad.empty();
                if (!has_q && !has_c) return;
                ad::ensure_grad(zn);
                if (has_q)
                    for (size_t i = 0; i < zn->grad.size(); ++i) zn->grad[i] += qn->grad[i];
                if (has_c) {
                    const real go = cn->grad[0];
                    for (size_t i = 0; i < zn->grad.size(); ++i) zn->grad[i] += go * sign_sum[i];
                }
            });
        }
        return res;
    }

    // EMA codebook refresh from one batch; residual inputs are recomputed with
    // the pre-update vectors so they match what quantize saw
    void ema_update(const std::vector<real>& frames, int n, const std::vector<std::vector<int>>& codes) {
        XY_CHECK(initialized_, "ResidualVq: codebooks not initialized");
        XY_CHECK(static_cast<int>(frames.size()) == n * cfg_.dim, "ema_update: bad frame matrix");
        XY_CHECK(static_cast<int>(codes.size()) == n, "ema_update: code count mismatch");

        // residual entering each layer, snapshotted before any update
        std::vector<std::vector<real>> layer_in(cfg_.num_layers);
        std::vector<real> residual = frames;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            layer_in[l] = residual;
            for (int t = 0; t < n; ++t) {
                const int c = codes[t][l];
                XY_CHECK(c >= 0 && c < cfg_.codebook_size, "ema_update: code out of range");
                real* r = residual.data() + static_cast<size_t>(t) * cfg_.dim;
                const real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) r[d] -= v[d];
            }
        }

        const real decay = cfg_.ema_decay;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            std::vector<real> count(cfg_.codebook_size, 0.0);
            std::vector<real> batch_sum(static_cast<size_t>(cfg_.codebook_size) * cfg_.dim, 0.0);
            for (int t = 0; t < n; ++t) {
                const int c = codes[t][l];
                count[c] += 1.0;
                const real* r = layer_in[l].data() + static_cast<size_t>(t) * cfg_.dim;
                real* bs = batch_sum.data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) bs[d] += r[d];
            }
            for (int c = 0; c < cfg_.codebook_size; ++c) {
                cluster_size_[l][c] = decay * cluster_size_[l][c] + (1.0 - decay) * count[c];
                real* es = embed_sum_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                const real* bs = batch_sum.data() + static_cast<size_t>(c) * cfg_.dim;
                real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) {
                    es[d] = decay * es[d] + (1.0 - decay) * bs[d];
                    v[d] = es[d] / (cluster_size_[l][c] + 1e-5);
                }
            }
        }

        ++update_count_;
        if (cfg_.replace_period > 0 && update_count_ % cfg_.replace_period == 0)
            replace_dead_codes(frames, n);
    }

    // codes whose EMA size fell below dead_ratio of the fair share are reseeded
    // from batch rows, sampled without replacement
    void replace_dead_codes(const std::vector<real>& frames, int n) {
        const real threshold = cfg_.dead_ratio * (static_cast<real>(n) / cfg_.codebook_size);
        for (int l = 0; l < cfg_.num_layers; ++l) {
            std::vector<int> dead;
            for (int c = 0; c < cfg_.codebook_size; ++c)
                if (cluster_size_[l][c] < threshold) dead.push_back(c);
            if (dead.empty()) continue;
            std::vector<int> rows;
            while (static_cast<int>(rows.size()) < static_cast<int>(dead.size())) {
                const int want = std::min<int>(n, static_cast<int>(dead.size()) - static_cast<int>(rows.size()));
                auto perm = rng_.sample_without_replacement(n, want);
                rows.insert(rows.end(), perm.begin(), perm.end());
            }
            for (size_t i = 0; i < dead.size(); ++i) {
                const int c = dead[i];
                const real* src = frames.data() + static_cast<size_t>(rows[i]) * cfg_.dim;
                real* v = vectors_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                real* es = embed_sum_[l].data() + static_cast<size_t>(c) * cfg_.dim;
                for (int d = 0; d < cfg_.dim; ++d) {
                    v[d] = src[d];
                    es[d] = src[d];
                }
                cluster_size_[l][c] = 1.0;
            }
        }
    }

    // fraction of codebook entries referenced at least once, averaged over layers
    static real utilization(const std::vector<std::vector<int>>& codes, int num_layers, int codebook_size) {
        if (codes.empty()) return 0.0;
        real acc = 0;
        std::vector<char> used(codebook_size);
        for (int l = 0; l < num_layers; ++l) {
            std::fill(used.begin(), used.end(), 0);
            int distinct = 0;
            for (const auto& row : codes)
                if (!used[row[l]]) {
                    used[row[l]] = 1;
                    ++distinct;
                }
            acc += static_cast<real>(distinct) / codebook_size;
        }
        return acc / num_layers;
    }

    std::vector<NamedTensor> to_named_tensors(const std::string& prefix) const {
        std::vector<NamedTensor> out;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const std::string base = prefix + "layer" + std::to_string(l) + ".";
            out.push_back({base + "vectors",
                           ad::Tensor::from(vectors_[l], {cfg_.codebook_size, cfg_.dim})});
            out.push_back({base + "cluster_size",
                           ad::Tensor::from(cluster_size_[l], {cfg_.codebook_size})});
            out.push_back({base + "embed_sum",
                           ad::Tensor::from(embed_sum_[l], {cfg_.codebook_size, cfg_.dim})});
        }
        out.push_back({prefix + "initialized",
                       ad::Tensor::from({initialized_ ? 1.0 : 0.0}, {1})});
        return out;
    }

    void from_named_tensors(const std::string& prefix, const std::vector<NamedTensor>& entries) {
        auto find = [&](const std::string& name) -> const NamedTensor& {
            for (const auto& e : entries)
                if (e.name == name) return e;
            XY_CHECK(false, "missing quantizer tensor: " + name);
            return entries.front();
        };
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const std::string base = prefix + "layer" + std::to_string(l) + ".";
            const auto& v = find(base + "vectors");
            XY_CHECK((v.tensor.shape() == std::vector<int>{cfg_.codebook_size, cfg_.dim}),
                     "quantizer vectors shape mismatch");
            vectors_[l] = v.tensor.v();
            cluster_size_[l] = find(base + "cluster_size").tensor.v();
            embed_sum_[l] = find(base + "embed_sum").tensor.v();
        }
        initialized_ = find(prefix + "initialized").tensor.v()[0] != 0.0;
    }

    // argmin over squared distance, lowest index on ties
    int nearest_code(const std::vector<real>& book, const real* frame) const {
        int best = 0;
        real best_d = squared_dist(book.data(), frame);
        for (int c = 1; c < cfg_.codebook_size; ++c) {
            const real d = squared_dist(book.data() + static_cast<size_t>(c) * cfg_.dim, frame);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        return best;
    }

private:
    real squared_dist(const real* a, const real* b) const {
        real acc = 0;
        for (int d = 0; d < cfg_.dim; ++d) {
            const real diff = a[d] - b[d];
            acc += diff * diff;
        }
        return acc;
    }

    // k-means++ seeding, then exactly `iters` Lloyd iterations; empty clusters
    // keep their previous centroid
    std::vector<real> kmeans(const std::vector<real>& data, int n, int k, int iters) {
        const int D = cfg_.dim;
        std::vector<real> centers(static_cast<size_t>(k) * D);
        if (n >= k) {
            std::vector<real> d2(n);
            const int first = rng_.below(n);
            std::copy(data.begin() + static_cast<size_t>(first) * D,
                      data.begin() + static_cast<size_t>(first + 1) * D, centers.begin());
            for (int j = 0; j < n; ++j)
                d2[j] = squared_dist(centers.data(), data.data() + static_cast<size_t>(j) * D);
            for (int c = 1; c < k; ++c) {
                real total = 0;
                for (real v : d2) total += v;
                int pick;
                if (total <= 0) {
                    pick = rng_.below(n);
                } else {
                    real r = rng_.uniform() * total;
                    pick = n - 1;
                    real cum = 0;
                    for (int j = 0; j < n; ++j) {
                        cum += d2[j];
                        if (r < cum) {
                            pick = j;
                            break;
                        }
                    }
                }
                real* dst = centers.data() + static_cast<size_t>(c) * D;
                std::copy(data.begin() + static_cast<size_t>(pick) * D,
                          data.begin() + static_cast<size_t>(pick + 1) * D, dst);
                for (int j = 0; j < n; ++j)
                    d2[j] = std::min(d2[j], squared_dist(dst, data.data() + static_cast<size_t>(j) * D));
            }
        } else {
            // fewer rows than codes: cycle rows with a small jitter to break ties
            for (int c = 0; c < k; ++c) {
                const real* src = data.data() + static_cast<size_t>(c % n) * D;
                real* dst = centers.data() + static_cast<size_t>(c) * D;
                for (int d = 0; d < D; ++d)
                    dst[d] = src[d] + (c >= n ? rng_.normal(0.0, 1e-3) : 0.0);
            }
        }

        std::vector<int> assign(n);
        std::vector<real> sums(static_cast<size_t>(k) * D);
        std::vector<int> counts(k);
        for (int it = 0; it < iters; ++it) {
            for (int j = 0; j < n; ++j) {
                const real* x = data.data() + static_cast<size_t>(j) * D;
                int best = 0;
                real best_d = squared_dist(centers.data(), x);
                for (int c = 1; c < k; ++c) {
                    const real d = squared_dist(centers.data() + static_cast<size_t>(c) * D, x);
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                assign[j] = best;
            }
            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (int j = 0; j < n; ++j) {
                counts[assign[j]] += 1;
                const real* x = data.data() + static_cast<size_t>(j) * D;
                real* s = sums.data() + static_cast<size_t>(assign[j]) * D;
                for (int d = 0; d < D; ++d) s[d] += x[d];
            }
            for (int c = 0; c < k; ++c) {
                if (counts[c] == 0) continue;
                real* ctr = centers.data() + static_cast<size_t>(c) * D;
                const real* s = sums.data() + static_cast<size_t>(c) * D;
                for (int d = 0; d < D; ++d) ctr[d] = s[d] / counts[c];
            }
        }
        return centers;
    }

    RvqConfig cfg_;
    Rng rng_;
    bool initialized_ = false;
    long update_count_ = 0;
    std::vector<std::vector<real>> vectors_;       // per layer [K x dim]
    std::vector<std::vector<real>> cluster_size_;  // per layer [K]
    std::vector<std::vector<real>> embed_sum_;     // per layer [K x dim]
};

// ---------------------------------------------------------------------------
// Token sequence file: "XYTK" | u32 version | u32 frame_rate_micro_hz |
// u16 num_layers | u32 codebook_size | u32 frame_count | u16 codes (frame-major)
// ---------------------------------------------------------------------------

inline constexpr uint32_t kTokenFileVersion = 1;

struct TokenSequence {
    uint32_t frame_rate_micro_hz = 12'500'000;
    int num_layers = 0;
    int codebook_size = 0;
    std::vector<std::vector<int>> codes;  // [T][num_layers]
};

inline void save_tokens(const std::string& path, const TokenSequence& seq) {
    XY_CHECK(seq.num_layers >= 1 && seq.num_layers <= 0xffff, "save_tokens: bad layer count");
    XY_CHECK(seq.codebook_size >= 2 && seq.codebook_size <= 0x10000, "save_tokens: bad codebook size");
    std::ofstream os(path, std::ios::binary);
    XY_CHECK(os.is_open(), "cannot open for write: " + path);
    os.write("XYTK", 4);
    io::write_le<uint32_t>(os, kTokenFileVersion);
    io::write_le<uint32_t>(os, seq.frame_rate_micro_hz);
    io::write_le<uint16_t>(os, static_cast<uint16_t>(seq.num_layers));
    io::write_le<uint32_t>(os, static_cast<uint32_t>(seq.codebook_size));
    io::write_le<uint32_t>(os, static_cast<uint32_t>(seq.codes.size()));
    for (const auto& row : seq.codes) {
        XY_CHECK(static_cast<int>(row.size()) == seq.num_layers, "save_tokens: ragged codes");
        for (int c : row) {
            XY_CHECK(c >= 0 && c < seq.codebook_size, "save_tokens: code out of range");
            io::write_le<uint16_t>(os, static_cast<uint16_t>(c));
        }
    }
    XY_CHECK(os.good(), "token write failed");
}

inline TokenSequence load_tokens(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    XY_CHECK(is.is_open(), "cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    XY_CHECK(is.good() && std::memcmp(magic, "XYTK", 4) == 0, "bad token file magic");
    XY_CHECK(io::read_le<uint32_t>(is) == kTokenFileVersion, "unsupported token file version");
    TokenSequence seq;
    seq.frame_rate_micro_hz = io::read_le<uint32_t>(is);
    seq.num_layers = io::read_le<uint16_t>(is);
    seq.codebook_size = static_cast<int>(io::read_le<uint32_t>(is));
    XY_CHECK(seq.num_layers >= 1, "token file has no layers");
    XY_CHECK(seq.codebook_size >= 2 && seq.codebook_size <= 0x10000, "token file codebook size invalid");
    const uint32_t T = io::read_le<uint32_t>(is);
    seq.codes.assign(T, std::vector<int>(seq.num_layers));
    for (uint32_t t = 0; t < T; ++t)
        for (int l = 0; l < seq.num_layers; ++l) {
            const int c = io::read_le<uint16_t>(is);
            XY_CHECK(c < seq.codebook_size, "token file code out of range");
            seq.codes[t][l] = c;
        }
    return seq;
}

}  // namespace xy
