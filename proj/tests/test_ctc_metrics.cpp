#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "xy/ctc.hpp"
#include "xy/metrics.hpp"
#include "xy/text.hpp"

using namespace xy;
using namespace xy::ad;

namespace {

// independent oracle: enumerate every framewise labeling, collapse it, and
// accumulate the probability of those matching the target
real ctc_brute_force(const Tensor& logits, const std::vector<int>& target) {
    const int T = logits.shape()[0], V1 = logits.shape()[1];
    std::vector<std::vector<real>> p(T, std::vector<real>(V1));
    for (int t = 0; t < T; ++t) {
        real mx = logits.v()[t * V1];
        for (int v = 1; v < V1; ++v) mx = std::max(mx, logits.v()[t * V1 + v]);
        real z = 0;
        for (int v = 0; v < V1; ++v) z += std::exp(logits.v()[t * V1 + v] - mx);
        for (int v = 0; v < V1; ++v) p[t][v] = std::exp(logits.v()[t * V1 + v] - mx) / z;
    }
    real total = 0;
    std::vector<int> path(T);
    std::function<void(int, real)> walk = [&](int t, real prob) {
        if (t == T) {
            std::vector<int> collapsed;
            int prev = -1;
            for (int s : path) {
                if (s != prev && s != kCtcBlank) collapsed.push_back(s);
                prev = s;
            }
            if (collapsed == target) total += prob;
            return;
        }
        for (int v = 0; v < V1; ++v) {
            path[t] = v;
            walk(t + 1, prob * p[t][v]);
        }
    };
    walk(0, 1.0);
    return -std::log(total);
}

std::vector<std::vector<int>> all_targets(int U, int V) {
    std::vector<std::vector<int>> out;
    if (U == 0) {
        out.push_back({});
        return out;
    }
    for (auto& prefix : all_targets(U - 1, V))
        for (int v = 1; v <= V; ++v) {
            auto t = prefix;
            t.push_back(v);
            out.push_back(t);
        }
    return out;
}

std::vector<real> tone_mix(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<real> x(n, 0.0);
    for (int h = 1; h <= 4; ++h) {
        const real f = 180.0 * h + rng.uniform() * 20.0;
        const real a = 0.2 / h;
        const real mod = 2.0 + rng.uniform() * 3.0;
        for (int i = 0; i < n; ++i)
            x[i] += a * std::sin(2.0 * kPi * f * i / 16000.0) *
                    (0.6 + 0.4 * std::sin(2.0 * kPi * mod * i / 16000.0));
    }
    return x;
}

}  // namespace

TEST_CASE("ctc single-frame and two-frame hand cases") {
    Tensor one = Tensor::from({std::log(0.3), std::log(0.7)}, {1, 2});
    CHECK(ctc_loss(one, {1}).item() == Catch::Approx(-std::log(0.7)).epsilon(1e-9));

    Tensor uniform = Tensor::from({0, 0, 0, 0, 0, 0}, {2, 3});
    CHECK(ctc_loss(uniform, {1}).item() == Catch::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("ctc rejects infeasible alignments") {
    Tensor two = Tensor::from({0, 0, 0, 0, 0, 0}, {2, 3});
    CHECK_THROWS(ctc_loss(two, {1, 1}));  // repeat needs a blank separator
    Tensor onef = Tensor::from({0, 0, 0}, {1, 3});
    CHECK_THROWS(ctc_loss(onef, {1, 2}));  // T < U
    CHECK_THROWS(ctc_loss(two, {5}));      // symbol outside vocabulary
    CHECK_THROWS(ctc_loss(two, {0}));      // blank cannot be a target
    Tensor three = Tensor::from(std::vector<real>(9, 0.0), {3, 3});
    CHECK_NOTHROW(ctc_loss(three, {1, 1}));
}

TEST_CASE("ctc matches exhaustive path enumeration on every small instance") {
    int checked = 0;
    for (int V = 1; V <= 3; ++V)
        for (int T = 1; T <= 6; ++T)
            for (int U = 0; U <= 3; ++U)
                for (const auto& target : all_targets(U, V)) {
                    Rng rng(1000 + V * 100 + T * 10 + U + checked);
                    Tensor logits = Tensor::zeros({T, V + 1});
                    for (auto& v : logits.v()) v = rng.normal(0.0, 1.5);
                    if (T < ctc_min_frames(target)) {
                        CHECK_THROWS(ctc_loss(logits, target));
                        continue;
                    }
                    const real got = ctc_loss(logits, target).item();
                    const real want = ctc_brute_force(logits, target);
                    CHECK(got == Catch::Approx(want).margin(1e-6));
                    ++checked;
                }
    // targets with U symbols and r adjacent repeats admit T in [U+r, 6]
    CHECK(checked == 234);
}

TEST_CASE("ctc gradient matches finite differences") {
    Rng rng(88);
    Tensor logits = Tensor::zeros({4, 4});
    for (auto& v : logits.v()) v = rng.normal(0.0, 1.0);
    std::vector<int> target = {2, 1};
    CHECK(finite_diff_check([&](const Tensor& t) { return ctc_loss(t, target); }, logits, 1e-5) < 1e-3);

    Tensor logits2 = Tensor::zeros({6, 3});
    for (auto& v : logits2.v()) v = rng.normal(0.0, 1.5);
    std::vector<int> target2 = {1, 1, 2};
    CHECK(finite_diff_check([&](const Tensor& t) { return ctc_loss(t, target2); }, logits2, 1e-5) < 1e-3);
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
    auto logits_for = [](const std::vector<int>& frames, int V1) {
        Tensor t = Tensor::zeros({static_cast<int>(frames.size()), V1});
        for (size_t i = 0; i < frames.size(); ++i) t.v()[i * V1 + frames[i]] = 5.0;
        return t;
    };
    CHECK(ctc_greedy_decode(logits_for({1, 1, 0, 2}, 3)) == std::vector<int>{1, 2});
    CHECK(ctc_greedy_decode(logits_for({0, 0, 0}, 3)).empty());
    CHECK(ctc_greedy_decode(logits_for({1, 0, 1}, 3)) == std::vector<int>{1, 1});
}

TEST_CASE("wer hand cases and bounds") {
    CHECK(wer("a b c", "a b c") == Catch::Approx(0.0));
    CHECK(wer("a x c", "a b c") == Catch::Approx(1.0 / 3.0));
    CHECK(wer("", "a b") == Catch::Approx(1.0));
    CHECK(wer("a b c d", "a b") == Catch::Approx(1.0));
    CHECK_THROWS(wer("something", ""));

    Rng rng(90);
    for (int trial = 0; trial < 20; ++trial) {
        auto make = [&](int n) {
            std::string s;
            for (int i = 0; i < n; ++i) {
                if (i) s.push_back(' ');
                s.push_back(static_cast<char>('a' + rng.below(4)));
            }
            return s;
        };
        const int nh = 1 + rng.below(6), nr = 1 + rng.below(6);
        const real w = wer(make(nh), make(nr));
        CHECK(w >= 0.0);
        CHECK(w <= static_cast<real>(nh + nr) / nr);
    }
}

TEST_CASE("resampler preserves a tone below the new nyquist") {
    std::vector<real> x(8000);
    for (int i = 0; i < 8000; ++i) x[i] = std::sin(2.0 * kPi * 1000.0 * i / 16000.0);
    auto y = resample(x, 5, 8);
    REQUIRE(static_cast<int>(y.size()) == 5000);
    for (int m = 100; m < 4900; ++m) {
        const real want = std::sin(2.0 * kPi * 1000.0 * m / 10000.0);
        CHECK(std::abs(y[m] - want) < 0.01);
    }
}

TEST_CASE("stoi scores identity and gain-invariance near one, noise low") {
    auto x = tone_mix(16000, 91);
    CHECK(stoi(x, x, 16000) > 0.99);

    auto half = x;
    for (auto& v : half) v *= 0.5;
    CHECK(stoi(x, half, 16000) > 0.99);

    Rng rng(92);
    std::vector<real> noise(16000);
    for (auto& v : noise) v = rng.normal(0.0, 0.1);
    CHECK(stoi(x, noise, 16000) < 0.3);

    CHECK_THROWS(stoi(x, noise, 22050));
    CHECK_THROWS(stoi(x, std::vector<real>(100, 0.0), 16000));
    CHECK_THROWS(stoi(std::vector<real>(2000, 0.0), std::vector<real>(2000, 0.0), 16000));
}

TEST_CASE("mcd is zero at identity and grows with distortion") {
    auto x = tone_mix(8000, 93);
    CHECK(mcd(x, x, 16000) == Catch::Approx(0.0).margin(1e-9));

    Rng rng(94);
    auto mild = x, heavy = x;
    for (auto& v : mild) v += rng.normal(0.0, 0.001);
    for (auto& v : heavy) v += rng.normal(0.0, 0.1);
    const real m1 = mcd(x, mild, 16000);
    const real m2 = mcd(x, heavy, 16000);
    CHECK(m1 > 0.0);
    CHECK(m2 > m1);
    CHECK_THROWS(mcd(x, std::vector<real>(100, 0.0), 16000));
}

TEST_CASE("sim_proxy is exactly one at identity and bounded") {
    auto x = tone_mix(8000, 95);
    CHECK(sim_proxy(x, x, 16000) == Catch::Approx(1.0).margin(1e-12));

    Rng rng(96);
    std::vector<real> other(8000);
    for (auto& v : other) v = rng.normal(0.0, 0.2);
    const real s = sim_proxy(x, other, 16000);
    CHECK(s >= -1.0 - 1e-12);
    CHECK(s <= 1.0 + 1e-12);

    CHECK_THROWS(sim_proxy(std::vector<real>(8000, 0.0), x, 16000));
}

TEST_CASE("text normalization and token round trip") {
    CHECK(normalize_text("Hello, World!") == "hello world");
    CHECK(normalize_text("  A  b\tC ") == "a b c");
    CHECK(normalize_text("123") == "");
    const std::string s = "the quick brown fox";
    CHECK(ids_to_text(text_to_ids(s)) == s);
    CHECK(char_to_id('a') == 1);
    CHECK(char_to_id(' ') == 27);
    CHECK_THROWS(char_to_id('!'));
    CHECK_THROWS(id_to_char(0));
}
