#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "xy/dsp.hpp"
#include "xy/wav.hpp"

using namespace xy;
using namespace xy::ad;
using namespace xy::dsp;

namespace {

std::vector<cplx> naive_dft(const std::vector<cplx>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<cplx> out(n);
    for (int k = 0; k < n; ++k) {
        cplx acc(0, 0);
        for (int j = 0; j < n; ++j) {
            real ang = -2.0 * kPi * k * j / n;
            acc += x[j] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

std::vector<real> rand_signal(int n, uint64_t seed, real scale = 0.5) {
    Rng rng(seed);
    std::vector<real> x(n);
    for (auto& v : x) v = rng.normal(0.0, scale);
    return x;
}

}  // namespace

TEST_CASE("fft matches naive dft and round-trips") {
    Rng rng(41);
    std::vector<cplx> x(16);
    for (auto& v : x) v = cplx(rng.normal(0, 1), rng.normal(0, 1));
    auto ref = naive_dft(x);
    auto got = x;
    fft(got);
    for (int k = 0; k < 16; ++k) {
        CHECK(std::abs(got[k] - ref[k]) < 1e-10);
    }
    ifft(got);
    for (int k = 0; k < 16; ++k) CHECK(std::abs(got[k] - x[k]) < 1e-10);
}

TEST_CASE("rfft zero-pads and irfft inverts it") {
    auto x = rand_signal(24, 42);
    auto spec = rfft(x.data(), 24, 32);
    REQUIRE(spec.size() == 17);

    // against naive dft of the zero-padded signal
    std::vector<cplx> xc(32, cplx(0, 0));
    for (int i = 0; i < 24; ++i) xc[i] = cplx(x[i], 0);
    auto ref = naive_dft(xc);
    for (int k = 0; k <= 16; ++k) CHECK(std::abs(spec[k] - ref[k]) < 1e-10);

    auto back = irfft(spec.data(), 32);
    REQUIRE(back.size() == 32);
    for (int i = 0; i < 24; ++i) CHECK(back[i] == Catch::Approx(x[i]).margin(1e-10));
    for (int i = 24; i < 32; ++i) CHECK(back[i] == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("hann window is periodic") {
    auto w = hann_window(8);
    CHECK(w[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(w[4] == Catch::Approx(1.0).margin(1e-15));
    for (int i = 1; i < 8; ++i) CHECK(w[i] == Catch::Approx(w[8 - i]).margin(1e-15));
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
    auto src = pad_source_indices(5, 5, 2);
    CHECK(src == std::vector<int>{2, 1, 0, 1, 2, 3, 4, 3, 2});
    // zero-extension cells are marked
    auto src2 = pad_source_indices(3, 6, 2);
    CHECK(src2 == std::vector<int>{2, 1, 0, 1, 2, -1, -1, -1, -1, -1});
}

TEST_CASE("stft localizes a pure tone in its exact bin") {
    const int sr = 16000;
    const StftSpec spec{512, 160, 512};
    // bin width sr/512 = 31.25 Hz; 1000 Hz sits exactly in bin 32
    std::vector<real> x(16000);
    for (int i = 0; i < 16000; ++i) x[i] = std::sin(2.0 * kPi * 1000.0 * i / sr);
    auto frames = stft(x, spec);
    REQUIRE(static_cast<int>(frames.size()) == 100);
    for (int t = 20; t < 80; t += 10) {
        int arg = 0;
        for (int k = 1; k < 257; ++k)
            if (std::abs(frames[t][k]) > std::abs(frames[t][arg])) arg = k;
        CHECK(arg == 32);
    }
}

TEST_CASE("stft istft round-trip is exact where frames cover the signal") {
    const StftSpec spec{512, 160, 512};
    auto x = rand_signal(1600, 43);
    auto frames = stft(x, spec);
    const int T = static_cast<int>(frames.size());
    const int out_len = (T - 1) * spec.hop;
    auto y = istft(frames, spec.n_fft, spec.hop, out_len);
    REQUIRE(static_cast<int>(y.size()) == out_len);
    for (int i = 0; i < out_len; ++i) CHECK(y[i] == Catch::Approx(x[i]).margin(1e-9));
}

TEST_CASE("mel filterbank covers interior bins and matches the htk scale") {
    CHECK(hz_to_mel(1000.0) == Catch::Approx(1000.0).margin(0.1));
    CHECK(mel_to_hz(hz_to_mel(437.5)) == Catch::Approx(437.5).margin(1e-9));

    auto fb = mel_filterbank(80, 512, 16000, 0.0, 8000.0);
    REQUIRE(fb.bins == 257);
    REQUIRE(static_cast<int>(fb.w.size()) == 80 * 257);
    for (int m = 0; m < 80; ++m) {
        real row_sum = 0;
        for (int k = 0; k < 257; ++k) row_sum += fb.w[m * 257 + k];
        CHECK(row_sum > 0);
    }
    for (int k = 1; k < 256; ++k) {
        real col_sum = 0;
        for (int m = 0; m < 80; ++m) col_sum += fb.w[m * 257 + k];
        CHECK(col_sum > 0);
    }
    // tiny banks stay non-degenerate through the nearest-bin fallback
    auto tiny = mel_filterbank(8, 32, 16000, 0.0, 8000.0);
    for (int m = 0; m < 8; ++m) {
        real row_sum = 0;
        for (int k = 0; k < tiny.bins; ++k) row_sum += tiny.w[m * tiny.bins + k];
        CHECK(row_sum > 0);
    }
}

TEST_CASE("log_mel frame count follows length over hop") {
    auto fb = mel_filterbank(80, 512, 16000, 0.0, 8000.0);
    const StftSpec spec{400, 160, 512};
    auto m1 = log_mel(rand_signal(16000, 44), spec, fb);
    CHECK(m1.shape() == std::vector<int>{100, 80});
    auto m2 = log_mel(rand_signal(8000, 45), spec, fb);
    CHECK(m2.shape() == std::vector<int>{50, 80});
    // shorter than one window still yields floor(win/hop) frames
    auto m3 = log_mel(rand_signal(100, 46), spec, fb);
    CHECK(m3.shape() == std::vector<int>{2, 80});
}

TEST_CASE("log_mel of silence sits at the log floor") {
    auto fb = mel_filterbank(40, 512, 16000, 0.0, 8000.0);
    std::vector<real> silence(4000, 0.0);
    auto m = log_mel(silence, {400, 160, 512}, fb);
    for (real v : m.v()) CHECK(v == Catch::Approx(std::log(1e-5)).margin(1e-12));
}

TEST_CASE("log_spectral_frames gradient matches finite differences") {
    auto fb = mel_filterbank(8, 32, 16000, 0.0, 8000.0);
    Tensor x = Tensor::from(rand_signal(64, 47), {64});
    Rng rng(48);
    Tensor wts = Tensor::zeros({8, 8});
    for (auto& v : wts.v()) v = rng.normal(0, 1);

    StftSpec spec{32, 8, 32};
    auto loss_mel = [&](const Tensor& t) {
        return sum_all(mul(log_spectral_frames(t, spec, &fb), wts));
    };
    CHECK(finite_diff_check(loss_mel, x, 1e-6) < 1e-3);

    Tensor wts2 = Tensor::zeros({8, 17});
    for (auto& v : wts2.v()) v = rng.normal(0, 1);
    auto loss_raw = [&](const Tensor& t) {
        return sum_all(mul(log_spectral_frames(t, spec, nullptr), wts2));
    };
    CHECK(finite_diff_check(loss_raw, x, 1e-6) < 1e-3);
}

TEST_CASE("istft_synth gradient matches finite differences") {
    Rng rng(49);
    Tensor frames = Tensor::zeros({3, 10});
    for (auto& v : frames.v()) v = rng.normal(0, 1);
    Tensor wts = Tensor::zeros({12});
    for (auto& v : wts.v()) v = rng.normal(0, 1);

    auto loss = [&](const Tensor& t) {
        return sum_all(mul(istft_synth(t, 8, 4, 12), wts));
    };
    CHECK(finite_diff_check(loss, frames, 1e-6) < 1e-3);

    // imaginary parts at DC and Nyquist are inert
    frames.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor y = istft_synth(frames, 8, 4, 12);
        tape.backward(sum_all(mul(y, y)));
    }
    auto g = frames.grad_or_zero();
    for (int t = 0; t < 3; ++t) {
        CHECK(g[t * 10 + 5] == 0.0);  // im at DC
        CHECK(g[t * 10 + 9] == 0.0);  // im at Nyquist
    }
}

TEST_CASE("istft_synth rejects out_len beyond frame coverage") {
    Tensor frames = Tensor::zeros({3, 10});
    CHECK_THROWS(istft_synth(frames, 8, 4, 13));
    CHECK_NOTHROW(istft_synth(frames, 8, 4, 12));
}

TEST_CASE("multiscale mel loss is zero at identity and positive otherwise") {
    auto scales = mel_loss_scales(16000);
    REQUIRE(scales.size() == 7);
    CHECK(scales[0].stft.win == 32);
    CHECK(scales[0].stft.hop == 8);
    CHECK(scales[0].fb.n_mels == 8);
    CHECK(scales[6].stft.win == 2048);
    CHECK(scales[6].fb.n_mels == 80);
    CHECK(scales[4].fb.n_mels == 80);

    auto x = rand_signal(3200, 50);
    Tensor xt = Tensor::from(x, {3200});
    CHECK(multiscale_mel_loss(xt, x, scales).item() == Catch::Approx(0.0).margin(1e-12));

    auto y = rand_signal(3200, 51);
    Tensor yt = Tensor::from(y, {3200});
    CHECK(multiscale_mel_loss(yt, x, scales).item() > 1.0);
}

TEST_CASE("multiscale mel loss gradient matches finite differences") {
    auto scales = mel_loss_scales(16000);
    auto ref = rand_signal(128, 52);
    Tensor x = Tensor::from(rand_signal(128, 53), {128});
    auto images = mel_images(ref, scales);
    auto loss = [&](const Tensor& t) { return multiscale_mel_loss_to(t, images, scales); };
    CHECK(finite_diff_check(loss, x, 1e-6) < 1e-3);
}

TEST_CASE("wav round-trip stays within half a quantization step") {
    Audio a;
    a.sample_rate = 16000;
    a.samples = rand_signal(500, 54, 0.3);
    a.samples[0] = 1.0;
    a.samples[1] = -1.0;
    const std::string path = "test_roundtrip.wav";
    save_wav(path, a);
    Audio b = load_wav(path);
    REQUIRE(b.sample_rate == 16000);
    REQUIRE(b.samples.size() == a.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i)
        CHECK(std::abs(b.samples[i] - a.samples[i]) <= 0.5 / 32767.0 + 1e-12);

    // a second trip is bitwise stable
    save_wav(path, b);
    Audio c = load_wav(path);
    CHECK(c.samples == b.samples);
    std::remove(path.c_str());
}

TEST_CASE("wav loader rejects malformed input") {
    const std::string path = "test_badwav.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "this is not a wav file at all";
    }
    CHECK_THROWS(load_wav(path));
    std::remove(path.c_str());
    CHECK_THROWS(load_wav("does_not_exist_anywhere.wav"));
}
