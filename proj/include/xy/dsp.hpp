#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"
#include "xy/fft.hpp"

namespace xy::dsp {

// analysis/synthesis framing: periodic hann, reflect-padded center alignment,
// signals shorter than the window zero-extended to one full window
struct StftSpec {
    int win = 400;
    int hop = 160;
    int n_fft = 512;
};

inline std::vector<real> hann_window(int n) {
    std::vector<real> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
    return w;
}

inline int frame_count(int len, const StftSpec& spec) {
    return std::max(len, spec.win) / spec.hop;
}

// source index per padded position; -1 marks zero-extension cells
inline std::vector<int> pad_source_indices(int orig_len, int ext_len, int w2) {
    std::vector<int> src(ext_len + 2 * w2);
    for (int i = 0; i < ext_len + 2 * w2; ++i) {
        int p = i - w2;
        if (p < 0) p = -p;
        if (p >= ext_len) p = 2 * ext_len - 2 - p;
        src[i] = p < orig_len ? p : -1;
    }
    return src;
}

// ---------------------------------------------------------------------------
// Mel filterbank (HTK scale, unit-peak triangles)
// ---------------------------------------------------------------------------

struct FilterBank {
    int n_mels = 0;
    int bins = 0;
    std::vector<real> w;  // [n_mels x bins]
};

inline real hz_to_mel(real f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline real mel_to_hz(real m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

inline FilterBank mel_filterbank(int n_mels, int n_fft, int sample_rate, real fmin, real fmax) {
    XY_CHECK(n_mels >= 1 && fmin >= 0 && fmax > fmin && fmax <= sample_rate / 2.0 + 1e-9,
             "mel_filterbank: bad band range");
    FilterBank fb;
    fb.n_mels = n_mels;
    fb.bins = n_fft / 2 + 1;
    fb.w.assign(static_cast<size_t>(n_mels) * fb.bins, 0.0);

    const real mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
    std::vector<real> edges(n_mels + 2);
    for (int j = 0; j < n_mels + 2; ++j)
        edges[j] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * j / (n_mels + 1));

    for (int m = 0; m < n_mels; ++m) {
        const real fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
        bool any = false;
        for (int k = 0; k < fb.bins; ++k) {
            const real f = static_cast<real>(k) * sample_rate / n_fft;
            real up = (fc - fl) > 0 ? (f - fl) / (fc - fl) : 0.0;
            real down = (fr - fc) > 0 ? (fr - f) / (fr - fc) : 0.0;
            real v = std::max(real(0.0), std::min(up, down));
            fb.w[static_cast<size_t>(m) * fb.bins + k] = v;
            any = any || v > 0;
        }
        if (!any) {
            // filter narrower than one bin: keep it non-degenerate at the
            // bin nearest its center frequency
            int k_near = static_cast<int>(std::round(fc * n_fft / sample_rate));
            k_near = std::min(fb.bins - 1, std::max(0, k_near));
            fb.w[static_cast<size_t>(m) * fb.bins + k_near] = 1.0;
        }
    }
    return fb;
}

// ---------------------------------------------------------------------------
// Differentiable framed log-spectrum: hann -> rfft -> |.| -> (filterbank) -> ln
// ---------------------------------------------------------------------------

// x [L] -> [T x n_out]; fb == nullptr keeps raw magnitude bins
inline ad::Tensor log_spectral_frames(const ad::Tensor& x, const StftSpec& spec,
                                      const FilterBank* fb, real log_floor = 1e-5) {
    XY_CHECK(x.rank() == 1, "log_spectral_frames: rank-1 waveform expected");
    XY_CHECK(spec.win >= 4 && spec.win % 2 == 0 && spec.win <= spec.n_fft,
             "log_spectral_frames: bad window");
    XY_CHECK(spec.hop >= 1 && log_floor > 0, "log_spectral_frames: bad hop or floor");
    const int L0 = x.shape()[0];
    const int win = spec.win, hop = spec.hop, nfft = spec.n_fft;
    const int w2 = win / 2;
    const int L = std::max(L0, win);
    const int T = L / hop;
    XY_CHECK(T >= 1, "log_spectral_frames: empty signal");
    const int bins = nfft / 2 + 1;
    const int n_out = fb ? fb->n_mels : bins;
    if (fb) XY_CHECK(fb->bins == bins, "log_spectral_frames: filterbank bin mismatch");

    const std::vector<real> window = hann_window(win);
    const std::vector<int> src = pad_source_indices(L0, L, w2);
    std::vector<real> padded(src.size(), 0.0);
    for (size_t i = 0; i < src.size(); ++i)
        if (src[i] >= 0) padded[i] = x.v()[src[i]];

    ad::Tape* tp = ad::tape_if_grad({&x});
    ad::Tensor out = ad::make_out({T, n_out}, tp != nullptr);
    std::vector<std::vector<cplx>> spectra(tp ? T : 0);

    std::vector<real> frame(win);
    for (int t = 0; t < T; ++t) {
        for (int n = 0; n < win; ++n) frame[n] = window[n] * padded[static_cast<size_t>(t) * hop + n];
        std::vector<cplx> spec_row = rfft(frame.data(), win, nfft);
        real* o = out.v().data() + static_cast<size_t>(t) * n_out;
        if (fb) {
            for (int m = 0; m < n_out; ++m) {
                const real* row = fb->w.data() + static_cast<size_t>(m) * bins;
                real acc = 0;
                for (int k = 0; k < bins; ++k) acc += row[k] * std::abs(spec_row[k]);
                o[m] = std::log(std::max(acc, log_floor));
            }
        } else {
            for (int k = 0; k < bins; ++k) o[k] = std::log(std::max(std::abs(spec_row[k]), log_floor));
        }
        if (tp) spectra[t] = std::move(spec_row);
    }

    if (tp) tp->record([xn = x.node(), on = out.node(), spectra = std::move(spectra),
                        window, src, fb_w = fb ? fb->w : std::vector<real>(),
                        T, n_out, bins, win, hop, nfft, log_floor] {
        if (on->grad.empty()) return;
        ad::ensure_grad(xn);
        const real ln_floor = std::log(log_floor);
        std::vector<real> g_pad(src.size(), 0.0);
        std::vector<real> g_mag(bins);
        std::vector<cplx> G(nfft);
        for (int t = 0; t < T; ++t) {
            const real* go = on->grad.data() + static_cast<size_t>(t) * n_out;
            const real* po = on->val.data() + static_cast<size_t>(t) * n_out;
            bool any = false;
            for (int m = 0; m < n_out; ++m) any = any || go[m] != 0.0;
            if (!any) continue;
            std::fill(g_mag.begin(), g_mag.end(), 0.0);
            if (!fb_w.empty()) {
                for (int m = 0; m < n_out; ++m) {
                    if (go[m] == 0.0 || po[m] <= ln_floor) continue;
                    const real g_mel = go[m] / std::exp(po[m]);
                    const real* row = fb_w.data() + static_cast<size_t>(m) * bins;
                    for (int k = 0; k < bins; ++k) g_mag[k] += g_mel * row[k];
                }
            } else {
                for (int k = 0; k < bins; ++k)
                    if (go[k] != 0.0 && po[k] > ln_floor) g_mag[k] = go[k] / std::exp(po[k]);
            }
            // half-spectrum gradient back through the real FFT
            std::fill(G.begin(), G.end(), cplx(0, 0));
            const auto& spec_row = spectra[t];
            for (int k = 0; k < bins; ++k) {
                const real mag = std::abs(spec_row[k]);
                if (g_mag[k] == 0.0 || mag < 1e-300) continue;
                G[k] = spec_row[k] * (g_mag[k] / mag);
            }
            ifft(G);  // dL/dy_n = nfft * Re(ifft(G))_n
            for (int n = 0; n < win; ++n)
                g_pad[static_cast<size_t>(t) * hop + n] += window[n] * nfft * G[n].real();
        }
        for (size_t i = 0; i < src.size(); ++i)
            if (src[i] >= 0) xn->grad[src[i]] += g_pad[i];
    });
    return out;
}

// plain analysis for non-differentiable consumers
inline ad::Tensor log_mel(const std::vector<real>& x, const StftSpec& spec, const FilterBank& fb,
                          real log_floor = 1e-5) {
    ad::Tensor t = ad::Tensor::from(x, {static_cast<int>(x.size())});
    return log_spectral_frames(t, spec, &fb, log_floor);
}

// ---------------------------------------------------------------------------
// Differentiable overlap-add synthesis (hann, win == n_fft)
// ---------------------------------------------------------------------------

// frames [T x 2*(n_fft/2+1)] rows = [re_0..re_K, im_0..im_K] -> waveform [out_len];
// imaginary parts at DC and Nyquist are ignored
inline ad::Tensor istft_synth(const ad::Tensor& frames, int n_fft, int hop, int out_len) {
    XY_CHECK(frames.rank() == 2, "istft_synth: rank-2 frames expected");
    const int K = n_fft / 2;
    const int bins = K + 1;
    XY_CHECK(frames.shape()[1] == 2 * bins, "istft_synth: row width must be 2*(n_fft/2+1)");
    XY_CHECK(hop >= 1 && hop <= n_fft, "istft_synth: bad hop");
    const int T = frames.shape()[0];
    const int w2 = n_fft / 2;
    const int full = (T - 1) * hop + n_fft;
    XY_CHECK(out_len >= 1 && w2 + out_len <= full, "istft_synth: out_len exceeds covered span");

    const std::vector<real> window = hann_window(n_fft);
    std::vector<real> dens(full, 0.0);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < n_fft; ++i) dens[static_cast<size_t>(t) * hop + i] += window[i] * window[i];
    for (auto& d : dens) d = std::max(d, real(1e-8));

    ad::Tape* tp = ad::tape_if_grad({&frames});
    ad::Tensor out = ad::make_out({out_len}, tp != nullptr);

    std::vector<real> num(full, 0.0);
    std::vector<cplx> half(bins);
    for (int t = 0; t < T; ++t) {
        const real* row = frames.v().data() + static_cast<size_t>(t) * 2 * bins;
        for (int k = 0; k < bins; ++k) {
            const real im = (k == 0 || k == K) ? 0.0 : row[bins + k];
            half[k] = cplx(row[k], im);
        }
        std::vector<real> y = irfft(half.data(), n_fft);
        for (int i = 0; i < n_fft; ++i)
            num[static_cast<size_t>(t) * hop + i] += window[i] * y[i];
    }
    for (int n = 0; n < out_len; ++n) out.v()[n] = num[w2 + n] / dens[w2 + n];

    if (tp) tp->record([fn = frames.node(), on = out.node(), dens, window,
                        T, K, bins, n_fft, hop, w2, out_len] {
        if (on->grad.empty()) return;
        ad::ensure_grad(fn);
        const int full = (T - 1) * hop + n_fft;
        std::vector<real> v(full, 0.0);
        for (int n = 0; n < out_len; ++n) v[w2 + n] = on->grad[n] / dens[w2 + n];
        std::vector<cplx> buf(n_fft);
        for (int t = 0; t < T; ++t) {
            bool any = false;
            for (int i = 0; i < n_fft; ++i) {
                buf[i] = cplx(window[i] * v[static_cast<size_t>(t) * hop + i], 0.0);
                any = any || buf[i].real() != 0.0;
            }
            if (!any) continue;
            fft(buf);
            real* grow = fn->grad.data() + static_cast<size_t>(t) * 2 * bins;
            for (int k = 0; k < bins; ++k) {
                const real c = (k == 0 || k == K) ? 1.0 : 2.0;
                grow[k] += c / n_fft * buf[k].real();
                if (k != 0 && k != K) grow[bins + k] += c / n_fft * buf[k].imag();
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Multi-scale mel reconstruction loss
// ---------------------------------------------------------------------------

struct MelScale {
    StftSpec stft;
    FilterBank fb;
};

inline std::vector<MelScale> mel_loss_scales(int sample_rate) {
    std::vector<MelScale> scales;
    for (int e = 5; e <= 11; ++e) {
        MelScale s;
        const int win = 1 << e;
        s.stft = {win, win / 4, win};
        s.fb = mel_filterbank(std::min(80, 1 << (e - 2)), win, sample_rate, 0.0, sample_rate / 2.0);
        scales.push_back(std::move(s));
    }
    return scales;
}

inline std::vector<ad::Tensor> mel_images(const std::vector<real>& x,
                                          const std::vector<MelScale>& scales) {
    ad::Tensor t = ad::Tensor::from(x, {static_cast<int>(x.size())});
    std::vector<ad::Tensor> images;
    images.reserve(scales.size());
    for (const auto& s : scales) images.push_back(log_spectral_frames(t, s.stft, &s.fb));
    return images;
}

// sum over scales of the L1 gap between log-mel images of x_hat and the reference
inline ad::Tensor multiscale_mel_loss_to(const ad::Tensor& x_hat,
                                         const std::vector<ad::Tensor>& ref_images,
                                         const std::vector<MelScale>& scales) {
    XY_CHECK(x_hat.rank() == 1, "multiscale_mel_loss: rank-1 waveform expected");
    XY_CHECK(ref_images.size() == scales.size(), "multiscale_mel_loss: scale count mismatch");
    ad::Tensor total;
    for (size_t i = 0; i < scales.size(); ++i) {
        ad::Tensor a = log_spectral_frames(x_hat, scales[i].stft, &scales[i].fb);
        XY_CHECK(a.shape() == ref_images[i].shape(), "multiscale_mel_loss: image shape mismatch");
        ad::Tensor gap = ad::l1_distance(a, ref_images[i]);
        total = total.defined() ? ad::add(total, gap) : gap;
    }
    return total;
}

inline ad::Tensor multiscale_mel_loss(const ad::Tensor& x_hat, const std::vector<real>& x_ref,
                                      const std::vector<MelScale>& scales) {
    XY_CHECK(x_hat.rank() == 1 && x_hat.shape()[0] == static_cast<int>(x_ref.size()),
             "multiscale_mel_loss: length mismatch");
    return multiscale_mel_loss_to(x_hat, mel_images(x_ref, scales), scales);
}

// ---------------------------------------------------------------------------
// Plain STFT/ISTFT conveniences for metrics
// ---------------------------------------------------------------------------

inline std::vector<std::vector<cplx>> stft(const std::vector<real>& x, const StftSpec& spec) {
    const int L0 = static_cast<int>(x.size());
    const int L = std::max(L0, spec.win);
    const int w2 = spec.win / 2;
    const int T = L / spec.hop;
    const std::vector<real> window = hann_window(spec.win);
    const std::vector<int> src = pad_source_indices(L0, L, w2);
    std::vector<real> padded(src.size(), 0.0);
    for (size_t i = 0; i < src.size(); ++i)
        if (src[i] >= 0) padded[i] = x[src[i]];
    std::vector<std::vector<cplx>> frames(T);
    std::vector<real> frame(spec.win);
    for (int t = 0; t < T; ++t) {
        for (int n = 0; n < spec.win; ++n)
            frame[n] = window[n] * padded[static_cast<size_t>(t) * spec.hop + n];
        frames[t] = rfft(frame.data(), spec.win, spec.n_fft);
    }
    return frames;
}

inline std::vector<real> istft(const std::vector<std::vector<cplx>>& frames, int n_fft, int hop,
                               int out_len) {
    const int T = static_cast<int>(frames.size());
    XY_CHECK(T >= 1, "istft: no frames");
    const int bins = n_fft / 2 + 1;
    ad::Tensor packed = ad::Tensor::zeros({T, 2 * bins});
    for (int t = 0; t < T; ++t) {
        XY_CHECK(static_cast<int>(frames[t].size()) == bins, "istft: bad frame width");
        for (int k = 0; k < bins; ++k) {
            packed.v()[static_cast<size_t>(t) * 2 * bins + k] = frames[t][k].real();
            packed.v()[static_cast<size_t>(t) * 2 * bins + bins + k] = frames[t][k].imag();
        }
    }
    return istft_synth(packed, n_fft, hop, out_len).v();
}

}  // namespace xy::dsp
