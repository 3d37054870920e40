#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "xy/common.hpp"
#include "xy/dsp.hpp"

namespace xy {

// ---------------------------------------------------------------------------
// Word error rate
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::istringstream iss(s);
    std::string w;
    while (iss >> w) words.push_back(w);
    return words;
}

// Levenshtein(sub+ins+del) over whitespace tokens, divided by reference length
inline real wer(const std::string& hypothesis, const std::string& reference) {
    const auto hyp = split_words(hypothesis);
    const auto ref = split_words(reference);
    XY_CHECK(!ref.empty(), "wer: empty reference");
    const size_t n = hyp.size(), m = ref.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            const size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return static_cast<real>(prev[m]) / m;
}

// ---------------------------------------------------------------------------
// Rational resampler (windowed sinc)
// ---------------------------------------------------------------------------

inline std::vector<real> resample(const std::vector<real>& x, int up, int down) {
    XY_CHECK(up >= 1 && down >= 1, "resample: bad ratio");
    if (up == down) return x;
    const int len = static_cast<int>(x.size());
    const int out_len = static_cast<int>(static_cast<long>(len) * up / down);
    const real fc = 0.5 * std::min(real(1.0), static_cast<real>(up) / down);  // cycles per input sample
    const int half = 32;
    std::vector<real> y(out_len, 0.0);
    for (int m = 0; m < out_len; ++m) {
        const real t = static_cast<real>(m) * down / up;
        const int n0 = std::max(0, static_cast<int>(std::ceil(t)) - half);
        const int n1 = std::min(len - 1, static_cast<int>(std::floor(t)) + half);
        real acc = 0;
        for (int n = n0; n <= n1; ++n) {
            const real u = t - n;
            real h;
            if (std::abs(u) < 1e-12) {
                h = 2.0 * fc;
            } else {
                h = std::sin(2.0 * kPi * fc * u) / (kPi * u);
            }
            h *= 0.5 * (1.0 + std::cos(kPi * u / half));  // hann taper
            acc += x[n] * h;
        }
        y[m] = acc;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Short-time objective intelligibility
// ---------------------------------------------------------------------------

// standard construction: 10 kHz internal rate, hann 256/128 frames, 512-bin
// spectra, 15 one-third octave bands from 150 Hz, 30-frame segments, clipped
// normalized correlation with a -15 dB bound, averaged over bands and segments
inline real stoi(const std::vector<real>& x, const std::vector<real>& y, int sample_rate) {
    XY_CHECK(sample_rate == 16000, "stoi: expects 16 kHz input");
    XY_CHECK(x.size() == y.size(), "stoi: length mismatch");
    const auto xr = resample(x, 5, 8);
    const auto yr = resample(y, 5, 8);

    const int win = 256, hop = 128, nfft = 512;
    const int L = static_cast<int>(xr.size());
    XY_CHECK(L >= win, "stoi: signal too short");
    const int n_frames = 1 + (L - win) / hop;
    const auto window = dsp::hann_window(win);

    auto frame_spec = [&](const std::vector<real>& s, int t) {
        std::vector<real> buf(win);
        for (int i = 0; i < win; ++i) buf[i] = window[i] * s[static_cast<size_t>(t) * hop + i];
        return rfft(buf.data(), win, nfft);
    };

    // silence removal keyed on the reference signal
    std::vector<real> energy(n_frames);
    real max_e = 0;
    for (int t = 0; t < n_frames; ++t) {
        real e = 0;
        for (int i = 0; i < win; ++i) {
            const real v = window[i] * xr[static_cast<size_t>(t) * hop + i];
            e += v * v;
        }
        energy[t] = std::sqrt(e);
        max_e = std::max(max_e, energy[t]);
    }
    std::vector<int> kept;
    const real gate = max_e * std::pow(10.0, -40.0 / 20.0);
    for (int t = 0; t < n_frames; ++t)
        if (energy[t] > gate) kept.push_back(t);

    const int seg = 30;
    XY_CHECK(static_cast<int>(kept.size()) >= seg, "stoi: too few voiced frames");

    // one-third octave band edges
    const int n_bands = 15;
    std::vector<std::pair<int, int>> band_bins(n_bands);
    for (int j = 0; j < n_bands; ++j) {
        const real cf = 150.0 * std::pow(2.0, j / 3.0);
        const real lo = cf * std::pow(2.0, -1.0 / 6.0);
        const real hi = cf * std::pow(2.0, 1.0 / 6.0);
        int klo = static_cast<int>(std::ceil(lo * nfft / 10000.0));
        int khi = static_cast<int>(std::floor(hi * nfft / 10000.0));
        klo = std::max(klo, 0);
        khi = std::min(khi, nfft / 2);
        XY_CHECK(khi >= klo, "stoi: empty band");
        band_bins[j] = {klo, khi};
    }

    // band amplitudes for the kept frames
    const int M = static_cast<int>(kept.size());
    std::vector<real> xb(static_cast<size_t>(M) * n_bands), yb(static_cast<size_t>(M) * n_bands);
    for (int m = 0; m < M; ++m) {
        const auto sx = frame_spec(xr, kept[m]);
        const auto sy = frame_spec(yr, kept[m]);
        for (int j = 0; j < n_bands; ++j) {
            real ex = 0, ey = 0;
            for (int k = band_bins[j].first; k <= band_bins[j].second; ++k) {
                ex += std::norm(sx[k]);
                ey += std::norm(sy[k]);
            }
            xb[static_cast<size_t>(m) * n_bands + j] = std::sqrt(ex);
            yb[static_cast<size_t>(m) * n_bands + j] = std::sqrt(ey);
        }
    }

    const real clip_gain = 1.0 + std::pow(10.0, 15.0 / 20.0);
    real total = 0;
    int terms = 0;
    std::vector<real> xs(seg), ys(seg);
    for (int m = seg - 1; m < M; ++m) {
        for (int j = 0; j < n_bands; ++j) {
            real nx = 0, ny = 0;
            for (int i = 0; i < seg; ++i) {
                xs[i] = xb[static_cast<size_t>(m - seg + 1 + i) * n_bands + j];
                ys[i] = yb[static_cast<size_t>(m - seg + 1 + i) * n_bands + j];
                nx += xs[i] * xs[i];
                ny += ys[i] * ys[i];
            }
            const real scale = std::sqrt(nx) / (std::sqrt(ny) + 1e-12);
            real mx = 0, my = 0;
            for (int i = 0; i < seg; ++i) {
                ys[i] = std::min(ys[i] * scale, xs[i] * clip_gain);
                mx += xs[i];
                my += ys[i];
            }
            mx /= seg;
            my /= seg;
            real dot = 0, vx = 0, vy = 0;
            for (int i = 0; i < seg; ++i) {
                dot += (xs[i] - mx) * (ys[i] - my);
                vx += (xs[i] - mx) * (xs[i] - mx);
                vy += (ys[i] - my) * (ys[i] - my);
            }
            const real denom = std::sqrt(vx * vy);
            total += denom > 1e-12 ? dot / denom : 0.0;
            ++terms;
        }
    }
    return total / terms;
}

// ---------------------------------------------------------------------------
// Mel-cepstral distance
// ---------------------------------------------------------------------------

inline std::vector<real> mel_cepstra(const ad::Tensor& log_mel_img, int n_cep) {
    const int T = log_mel_img.shape()[0], M = log_mel_img.shape()[1];
    std::vector<real> cep(static_cast<size_t>(T) * n_cep);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < n_cep; ++j) {
            real acc = 0;
            for (int m = 0; m < M; ++m)
                acc += log_mel_img.v()[static_cast<size_t>(t) * M + m] *
                       std::cos(kPi * j * (m + 0.5) / M);
            cep[static_cast<size_t>(t) * n_cep + j] = acc;
        }
    return cep;
}

// mean dB distance over 12 cepstra (c1..c12 of 13, c0 dropped as energy)
inline real mcd(const std::vector<real>& x, const std::vector<real>& y, int sample_rate) {
    XY_CHECK(x.size() == y.size(), "mcd: length mismatch");
    const dsp::StftSpec spec{400, 160, 512};
    const auto fb = dsp::mel_filterbank(80, spec.n_fft, sample_rate, 0.0, sample_rate / 2.0);
    const auto cx = mel_cepstra(dsp::log_mel(x, spec, fb), 13);
    const auto cy = mel_cepstra(dsp::log_mel(y, spec, fb), 13);
    const int T = static_cast<int>(cx.size() / 13);
    const real k = 10.0 / std::log(10.0) * std::sqrt(2.0);
    real acc = 0;
    for (int t = 0; t < T; ++t) {
        real sq = 0;
        for (int j = 1; j < 13; ++j) {
            const real d = cx[static_cast<size_t>(t) * 13 + j] - cy[static_cast<size_t>(t) * 13 + j];
            sq += d * d;
        }
        acc += k * std::sqrt(sq);
    }
    return acc / T;
}

// ---------------------------------------------------------------------------
// Speaker similarity proxy
// ---------------------------------------------------------------------------

// embedding = [mean log-mel | per-channel variance | centroid mean/std | rolloff mean/std]
inline std::vector<real> timbre_embedding(const std::vector<real>& x, int sample_rate) {
    real power = 0;
    for (real v : x) power += v * v;
    XY_CHECK(power > 0, "timbre_embedding: silent input");
    const dsp::StftSpec spec{400, 160, 512};
    const auto fb = dsp::mel_filterbank(80, spec.n_fft, sample_rate, 0.0, sample_rate / 2.0);
    const auto img = dsp::log_mel(x, spec, fb);
    const int T = img.shape()[0], M = img.shape()[1];

    std::vector<real> emb;
    emb.reserve(M * 2 + 4);
    for (int m = 0; m < M; ++m) {
        real mu = 0;
        for (int t = 0; t < T; ++t) mu += img.v()[static_cast<size_t>(t) * M + m];
        mu /= T;
        emb.push_back(mu);
    }
    for (int m = 0; m < M; ++m) {
        real var = 0;
        for (int t = 0; t < T; ++t) {
            const real d = img.v()[static_cast<size_t>(t) * M + m] - emb[m];
            var += d * d;
        }
        emb.push_back(var / T);
    }

    const auto frames = dsp::stft(x, spec);
    const int bins = spec.n_fft / 2 + 1;
    std::vector<real> centroid, rolloff;
    for (const auto& f : frames) {
        real total = 0, weighted = 0;
        for (int k = 0; k < bins; ++k) {
            const real mg = std::abs(f[k]);
            const real freq = static_cast<real>(k) * sample_rate / spec.n_fft;
            total += mg;
            weighted += mg * freq;
        }
        if (total < 1e-12) {
            centroid.push_back(0.0);
            rolloff.push_back(0.0);
            continue;
        }
        centroid.push_back(weighted / total);
        real cum = 0;
        real roll = sample_rate / 2.0;
        for (int k = 0; k < bins; ++k) {
            cum += std::abs(f[k]);
            if (cum >= 0.85 * total) {
                roll = static_cast<real>(k) * sample_rate / spec.n_fft;
                break;
            }
        }
        rolloff.push_back(roll);
    }
    auto push_stats = [&](const std::vector<real>& v) {
        real mu = 0;
        for (real u : v) mu += u;
        mu /= v.size();
        real var = 0;
        for (real u : v) var += (u - mu) * (u - mu);
        emb.push_back(mu);
        emb.push_back(std::sqrt(var / v.size()));
    };
    push_stats(centroid);
    push_stats(rolloff);
    return emb;
}

inline real sim_proxy(const std::vector<real>& x, const std::vector<real>& y, int sample_rate) {
    const auto a = timbre_embedding(x, sample_rate);
    const auto b = timbre_embedding(y, sample_rate);
    XY_CHECK(a.size() == b.size(), "sim_proxy: embedding size mismatch");
    real dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    XY_CHECK(na > 1e-12 && nb > 1e-12, "sim_proxy: silent input has no embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace xy
