#pragma once

#include <complex>
#include <map>
#include <vector>

#include "xy/common.hpp"

namespace xy {

using cplx = std::complex<real>;

// Iterative radix-2 Cooley-Tukey. All transform sizes in this project are
// powers of two (loss scales 2^5..2^11, analysis fft 512).
namespace fftdetail {

struct Plan {
    int n = 0;
    std::vector<int> rev;    // bit reversal permutation
    std::vector<cplx> tw;    // twiddles e^{-2*pi*i*k/len} packed per stage
};

inline const Plan& plan_for(int n) {
    thread_local std::map<int, Plan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    Plan p;
    p.n = n;
    p.rev.resize(n);
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < log2n; ++b)
            if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
        p.rev[i] = r;
    }
    for (int len = 2; len <= n; len <<= 1) {
        for (int k = 0; k < len / 2; ++k) {
            real ang = -2.0 * kPi * k / len;
            p.tw.emplace_back(std::cos(ang), std::sin(ang));
        }
    }
    return cache.emplace(n, std::move(p)).first->second;
}

}  // namespace fftdetail

// In-place forward DFT, a.size() must be a power of two.
inline void fft(std::vector<cplx>& a) {
    const int n = static_cast<int>(a.size());
    XY_CHECK(n > 0 && (n & (n - 1)) == 0, "fft size must be a power of two");
    const auto& p = fftdetail::plan_for(n);
    for (int i = 0; i < n; ++i)
        if (i < p.rev[i]) std::swap(a[i], a[p.rev[i]]);
    size_t tw_off = 0;
    for (int len = 2; len <= n; len <<= 1) {
        const cplx* tw = p.tw.data() + tw_off;
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                cplx u = a[i + k];
                cplx v = a[i + k + len / 2] * tw[k];
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
        tw_off += len / 2;
    }
}

// In-place inverse DFT (with 1/n normalization).
inline void ifft(std::vector<cplx>& a) {
    for (auto& x : a) x = std::conj(x);
    fft(a);
    const real inv = 1.0 / static_cast<real>(a.size());
    for (auto& x : a) x = std::conj(x) * inv;
}

// Real signal -> half spectrum [0 .. n/2], n power of two, x.size() <= n
// (zero padded).
inline std::vector<cplx> rfft(const real* x, int len, int n) {
    std::vector<cplx> buf(n, cplx(0, 0));
    for (int i = 0; i < len && i < n; ++i) buf[i] = cplx(x[i], 0);
    fft(buf);
    buf.resize(n / 2 + 1);
    return buf;
}

// Half spectrum [0 .. n/2] -> real signal of length n (Hermitian extension).
inline std::vector<real> irfft(const cplx* spec, int n) {
    std::vector<cplx> buf(n);
    buf[0] = cplx(spec[0].real(), 0);
    buf[n / 2] = cplx(spec[n / 2].real(), 0);
    for (int k = 1; k < n / 2; ++k) {
        buf[k] = spec[k];
        buf[n - k] = std::conj(spec[k]);
    }
    ifft(buf);
    std::vector<real> out(n);
    for (int i = 0; i < n; ++i) out[i] = buf[i].real();
    return out;
}

}  // namespace xy
