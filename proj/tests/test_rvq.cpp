#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "xy/rvq.hpp"

using namespace xy;
using namespace xy::ad;

namespace {

std::vector<real> rand_frames(int n, int dim, uint64_t seed, real scale = 1.0) {
    Rng rng(seed);
    std::vector<real> x(static_cast<size_t>(n) * dim);
    for (auto& v : x) v = rng.normal(0.0, scale);
    return x;
}

// independent exhaustive argmin with explicit lowest-index tie-break
int brute_nearest(const std::vector<real>& book, int k, int dim, const real* f) {
    int best = -1;
    real best_d = 0;
    for (int c = 0; c < k; ++c) {
        real d = 0;
        for (int j = 0; j < dim; ++j) {
            real diff = book[static_cast<size_t>(c) * dim + j] - f[j];
            d += diff * diff;
        }
        if (best < 0 || d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("bitrate arithmetic") {
    CHECK(bits_per_second(12.5, 8, 1024) == Catch::Approx(1000.0).margin(1e-9));
    CHECK(bits_per_second(75.0, 2, 1024) == Catch::Approx(1500.0).margin(1e-9));
    real mimi = bits_per_second(12.5, 32, 2048);
    CHECK(mimi >= 4000.0);
    CHECK(mimi <= 4400.0);
    CHECK_THROWS(bits_per_second(0.0, 8, 1024));
    CHECK_THROWS(bits_per_second(12.5, 8, 1));
}

TEST_CASE("nearest code agrees with exhaustive search") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 16;
    cfg.dim = 8;
    ResidualVq vq(cfg);
    auto data = rand_frames(64, 8, 61);
    vq.init_codebooks(data, 64);

    auto frames = rand_frames(200, 8, 62);
    for (int t = 0; t < 200; ++t) {
        const real* f = frames.data() + static_cast<size_t>(t) * 8;
        CHECK(vq.nearest_code(vq.layer_vectors(0), f) ==
              brute_nearest(vq.layer_vectors(0), 16, 8, f));
    }
}

TEST_CASE("ties resolve to the lowest index") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 4;
    cfg.dim = 2;
    ResidualVq vq(cfg);
    vq.init_codebooks(rand_frames(8, 2, 63), 8);
    // two identical rows both nearest to the probe
    std::vector<real> book = {5, 5, 0.5, 0.5, 9, 9, 0.5, 0.5};
    std::vector<NamedTensor> entries = vq.to_named_tensors("q.");
    for (auto& e : entries)
        if (e.name == "q.layer0.vectors") e.tensor.v() = book;
    vq.from_named_tensors("q.", entries);
    real probe[2] = {0.4, 0.6};
    CHECK(vq.nearest_code(vq.layer_vectors(0), probe) == 1);
}

TEST_CASE("quantized output telescopes to the summed code vectors") {
    RvqConfig cfg;
    cfg.num_layers = 4;
    cfg.codebook_size = 8;
    cfg.dim = 6;
    ResidualVq vq(cfg);
    vq.init_codebooks(rand_frames(120, 6, 64), 120);

    auto z_vals = rand_frames(30, 6, 65);
    Tensor z = Tensor::from(z_vals, {30, 6});
    auto res = vq.quantize(z);

    Tensor summed = vq.embed_codes(res.codes);
    for (int i = 0; i < summed.numel(); ++i)
        CHECK(std::abs(summed.v()[i] - res.quantized.v()[i]) < 1e-12);

    // residual shrinks monotonically as layers accumulate (l2 over the batch)
    real prev = 0;
    for (int i = 0; i < z.numel(); ++i) prev += z_vals[i] * z_vals[i];
    for (int l = 1; l <= 4; ++l) {
        Tensor part = vq.embed_codes(res.codes, l);
        real cur = 0;
        for (int i = 0; i < z.numel(); ++i) {
            real d = z_vals[i] - part.v()[i];
            cur += d * d;
        }
        CHECK(cur <= prev + 1e-9);
        prev = cur;
    }

    // commit equals the independently recomputed residual l1 sizes
    real commit = 0;
    for (int t = 0; t < 30; ++t) {
        std::vector<real> r(z_vals.begin() + t * 6, z_vals.begin() + (t + 1) * 6);
        for (int l = 0; l < 4; ++l) {
            const real* v = vq.layer_vectors(l).data() + static_cast<size_t>(res.codes[t][l]) * 6;
            for (int d = 0; d < 6; ++d) {
                r[d] -= v[d];
                commit += std::abs(r[d]);
            }
        }
    }
    CHECK(res.commit.item() == Catch::Approx(commit).epsilon(1e-12));
}

TEST_CASE("straight-through and commit gradients reach the encoder side") {
    RvqConfig cfg;
    cfg.num_layers = 3;
    cfg.codebook_size = 8;
    cfg.dim = 4;
    ResidualVq vq(cfg);
    vq.init_codebooks(rand_frames(80, 4, 66), 80);

    auto z_vals = rand_frames(10, 4, 67);
    Tensor z = Tensor::from(z_vals, {10, 4});
    z.set_requires_grad(true);
    Rng rng(68);
    Tensor w = Tensor::zeros({10, 4});
    for (auto& v : w.v()) v = rng.normal(0, 1);

    Tape tape;
    {
        TapeScope scope(tape);
        auto res = vq.quantize(z);
        Tensor loss = add(sum_all(mul(res.quantized, w)), mul_scalar(res.commit, 0.5));
        tape.backward(loss);
    }
    auto g = z.grad_or_zero();

    // identity pass-through plus 0.5 * summed residual signs
    auto codes = vq.encode_frames(z_vals, 10);
    for (int t = 0; t < 10; ++t) {
        std::vector<real> r(z_vals.begin() + t * 4, z_vals.begin() + (t + 1) * 4);
        std::vector<real> sign(4, 0.0);
        for (int l = 0; l < 3; ++l) {
            const real* v = vq.layer_vectors(l).data() + static_cast<size_t>(codes[t][l]) * 4;
            for (int d = 0; d < 4; ++d) {
                r[d] -= v[d];
                sign[d] += r[d] > 0 ? 1.0 : (r[d] < 0 ? -1.0 : 0.0);
            }
        }
        for (int d = 0; d < 4; ++d)
            CHECK(g[t * 4 + d] == Catch::Approx(w.v()[t * 4 + d] + 0.5 * sign[d]).margin(1e-12));
    }
}

TEST_CASE("ema statistics follow the closed-form geometric recurrence") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 2;
    cfg.dim = 2;
    cfg.replace_period = 0;  // keep the sweep out of this check
    ResidualVq vq(cfg);
    // two far-apart centers so assignments stay put
    vq.init_codebooks({10, 10, -10, -10, 10.5, 10.5, -9.5, -9.5}, 4);

    // batch: 3 frames near one center, none near the other
    std::vector<real> batch = {10.2, 9.8, 9.9, 10.1, 10.3, 10.2};
    const int n = 3;
    auto codes = vq.encode_frames(batch, n);
    const int c = codes[0][0];
    for (int t = 0; t < n; ++t) REQUIRE(codes[t][0] == c);

    const real s0 = vq.layer_cluster_size(0)[c];
    std::vector<real> sum0 = {vq.layer_vectors(0)[c * 2] * (s0),  // embed_sum starts equal to vectors
                              vq.layer_vectors(0)[c * 2 + 1] * (s0)};
    real batch_sum[2] = {10.2 + 9.9 + 10.3, 9.8 + 10.1 + 10.2};

    const int u = 50;
    for (int i = 0; i < u; ++i) vq.ema_update(batch, n, vq.encode_frames(batch, n));

    const real d = cfg.ema_decay;
    const real du = std::pow(d, u);
    const real size_expect = du * s0 + 3.0 * (1.0 - du);
    CHECK(vq.layer_cluster_size(0)[c] == Catch::Approx(size_expect).epsilon(1e-9));
    for (int j = 0; j < 2; ++j) {
        const real sum_expect = du * sum0[j] + batch_sum[j] * (1.0 - du);
        const real vec_expect = sum_expect / (size_expect + 1e-5);
        CHECK(vq.layer_vectors(0)[c * 2 + j] == Catch::Approx(vec_expect).epsilon(1e-7));
    }
}

TEST_CASE("ema pulls a near centroid onto the batch mean") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 2;
    cfg.dim = 2;
    cfg.replace_period = 0;
    ResidualVq vq(cfg);
    vq.init_codebooks({1.05, 2.08, -5, -5, 1.0, 2.0, -5.2, -4.8}, 4);

    std::vector<real> batch = {1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0};
    for (int i = 0; i < 500; ++i) vq.ema_update(batch, 4, vq.encode_frames(batch, 4));

    auto codes = vq.encode_frames(batch, 4);
    const int c = codes[0][0];
    const real dx = vq.layer_vectors(0)[c * 2] - 1.0;
    const real dy = vq.layer_vectors(0)[c * 2 + 1] - 2.0;
    CHECK(std::sqrt(dx * dx + dy * dy) < 1e-3);
}

TEST_CASE("starved codes are reseeded from batch rows") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 4;
    cfg.dim = 2;
    cfg.replace_period = 200;
    ResidualVq vq(cfg);
    // spread init so exactly one code wins the batch cluster
    vq.init_codebooks({10, 10, -10, -10, 0, 10, 10, 0, 9.5, 10.5, -9, -11, 0.5, 9.5, 10.5, 0.5}, 8);

    std::vector<real> batch = {10.0, 10.0, 10.1, 9.9, 9.9, 10.1, 10.05, 10.0, 9.95, 10.0, 10.0, 9.95};
    const int n = 6;
    auto first_codes = vq.encode_frames(batch, n);
    const int winner = first_codes[0][0];

    for (int i = 0; i < 400; ++i) vq.ema_update(batch, n, vq.encode_frames(batch, n));

    // every losing code was rewritten to an exact batch row with reset stats
    for (int c = 0; c < 4; ++c) {
        if (c == winner) continue;
        CHECK(vq.layer_cluster_size(0)[c] <= 1.0);
        bool is_batch_row = false;
        for (int t = 0; t < n; ++t)
            if (vq.layer_vectors(0)[c * 2] == batch[t * 2] &&
                vq.layer_vectors(0)[c * 2 + 1] == batch[t * 2 + 1])
                is_batch_row = true;
        CHECK(is_batch_row);
    }
}

TEST_CASE("same seed gives bitwise-identical codebooks") {
    RvqConfig cfg;
    cfg.num_layers = 3;
    cfg.codebook_size = 16;
    cfg.dim = 4;
    cfg.seed = 777;
    auto data = rand_frames(100, 4, 70);
    ResidualVq a(cfg), b(cfg);
    a.init_codebooks(data, 100);
    b.init_codebooks(data, 100);
    for (int l = 0; l < 3; ++l) CHECK(a.layer_vectors(l) == b.layer_vectors(l));
}

TEST_CASE("kmeans recovers well-separated cluster means") {
    RvqConfig cfg;
    cfg.num_layers = 1;
    cfg.codebook_size = 4;
    cfg.dim = 2;
    ResidualVq vq(cfg);
    Rng rng(71);
    std::vector<real> centers = {8, 8, -8, 8, 8, -8, -8, -8};
    std::vector<real> data;
    for (int j = 0; j < 200; ++j) {
        int c = j % 4;
        data.push_back(centers[c * 2] + rng.normal(0, 0.1));
        data.push_back(centers[c * 2 + 1] + rng.normal(0, 0.1));
    }
    vq.init_codebooks(data, 200);
    for (int c = 0; c < 4; ++c) {
        real best = 1e30;
        for (int m = 0; m < 4; ++m) {
            real dx = vq.layer_vectors(0)[c * 2] - centers[m * 2];
            real dy = vq.layer_vectors(0)[c * 2 + 1] - centers[m * 2 + 1];
            best = std::min(best, std::sqrt(dx * dx + dy * dy));
        }
        CHECK(best < 0.1);
    }
}

TEST_CASE("init with fewer rows than codes still works") {
    RvqConfig cfg;
    cfg.num_layers = 2;
    cfg.codebook_size = 8;
    cfg.dim = 3;
    ResidualVq vq(cfg);
    CHECK_FALSE(vq.initialized());
    vq.init_codebooks(rand_frames(3, 3, 72), 3);
    CHECK(vq.initialized());
    Tensor z = Tensor::from(rand_frames(5, 3, 73), {5, 3});
    CHECK_NOTHROW(vq.quantize(z));
}

TEST_CASE("utilization counts distinct codes per layer") {
    std::vector<std::vector<int>> codes = {{0, 1}, {0, 1}, {2, 1}, {0, 3}};
    // layer 0 uses {0,2} of 4, layer 1 uses {1,3} of 4
    CHECK(ResidualVq::utilization(codes, 2, 4) == Catch::Approx(0.5));
}

TEST_CASE("quantizer state survives a named-tensor round trip") {
    RvqConfig cfg;
    cfg.num_layers = 2;
    cfg.codebook_size = 8;
    cfg.dim = 4;
    ResidualVq a(cfg);
    a.init_codebooks(rand_frames(50, 4, 74), 50);
    auto batch = rand_frames(20, 4, 75);
    for (int i = 0; i < 5; ++i) a.ema_update(batch, 20, a.encode_frames(batch, 20));

    ResidualVq b(cfg);
    b.from_named_tensors("rvq.", a.to_named_tensors("rvq."));
    CHECK(b.initialized());
    auto probe = rand_frames(12, 4, 76);
    CHECK(a.encode_frames(probe, 12) == b.encode_frames(probe, 12));
    for (int l = 0; l < 2; ++l) {
        CHECK(a.layer_vectors(l) == b.layer_vectors(l));
        CHECK(a.layer_cluster_size(l) == b.layer_cluster_size(l));
    }
}

TEST_CASE("token files round-trip and reject corruption") {
    TokenSequence seq;
    seq.num_layers = 8;
    seq.codebook_size = 1024;
    Rng rng(77);
    for (int t = 0; t < 25; ++t) {
        std::vector<int> row(8);
        for (auto& c : row) c = rng.below(1024);
        seq.codes.push_back(row);
    }
    const std::string path = "test_tokens.xytk";
    save_tokens(path, seq);
    TokenSequence back = load_tokens(path);
    CHECK(back.frame_rate_micro_hz == 12'500'000u);
    CHECK(back.num_layers == 8);
    CHECK(back.codebook_size == 1024);
    CHECK(back.codes == seq.codes);

    {
        std::ofstream os(path, std::ios::binary);
        os << "JUNKJUNKJUNK";
    }
    CHECK_THROWS(load_tokens(path));
    std::remove(path.c_str());

    TokenSequence bad = seq;
    bad.codes[0][0] = 5000;
    CHECK_THROWS(save_tokens("test_bad.xytk", bad));
    std::remove("test_bad.xytk");
}
