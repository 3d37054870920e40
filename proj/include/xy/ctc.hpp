#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"

namespace xy {

inline constexpr int kCtcBlank = 0;

namespace detail {

inline real lse2(real a, real b) {
    if (a == -std::numeric_limits<real>::infinity()) return b;
    if (b == -std::numeric_limits<real>::infinity()) return a;
    const real m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

inline int ctc_min_frames(const std::vector<int>& target) {
    int repeats = 0;
    for (size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++repeats;
    return static_cast<int>(target.size()) + repeats;
}

// -log total probability of all alignments of `target` under the
// blank-augmented lattice; logits [T x (V+1)] with blank at column 0.
// Gradient w.r.t. logits is softmax minus the lattice posterior.
inline ad::Tensor ctc_loss(const ad::Tensor& logits, const std::vector<int>& target) {
    XY_CHECK(logits.rank() == 2, "ctc_loss: logits must be [T x (V+1)]");
    const int T = logits.shape()[0];
    const int V1 = logits.shape()[1];
    const int U = static_cast<int>(target.size());
    XY_CHECK(V1 >= 2, "ctc_loss: vocabulary too small");
    for (int u : target)
        XY_CHECK(u > 0 && u < V1, "ctc_loss: target symbol out of vocabulary");
    XY_CHECK(T >= U, "ctc_loss: input shorter than target");
    XY_CHECK(T >= ctc_min_frames(target),
             "ctc_loss: no feasible alignment (adjacent repeats need blank separators)");

    const real neg_inf = -std::numeric_limits<real>::infinity();
    const int S = 2 * U + 1;
    std::vector<int> ext(S, kCtcBlank);
    for (int u = 0; u < U; ++u) ext[2 * u + 1] = target[u];

    // log softmax rows
    std::vector<real> lp(static_cast<size_t>(T) * V1);
    std::vector<real> probs(static_cast<size_t>(T) * V1);
    for (int t = 0; t < T; ++t) {
        const real* row = logits.v().data() + static_cast<size_t>(t) * V1;
        real mx = row[0];
        for (int v = 1; v < V1; ++v) mx = std::max(mx, row[v]);
        real z = 0;
        for (int v = 0; v < V1; ++v) z += std::exp(row[v] - mx);
        const real logz = mx + std::log(z);
        for (int v = 0; v < V1; ++v) {
            lp[static_cast<size_t>(t) * V1 + v] = row[v] - logz;
            probs[static_cast<size_t>(t) * V1 + v] = std::exp(row[v] - logz);
        }
    }

    auto allow_skip = [&](int s) {
        return s >= 2 && ext[s] != kCtcBlank && ext[s] != ext[s - 2];
    };

    std::vector<real> alpha(static_cast<size_t>(T) * S, neg_inf);
    alpha[0] = lp[kCtcBlank];
    if (S > 1) alpha[1] = lp[ext[1]];
    for (int t = 1; t < T; ++t) {
        const real* prev = alpha.data() + static_cast<size_t>(t - 1) * S;
        real* cur = alpha.data() + static_cast<size_t>(t) * S;
        const real* lpt = lp.data() + static_cast<size_t>(t) * V1;
        for (int s = 0; s < S; ++s) {
            real a = prev[s];
            if (s >= 1) a = detail::lse2(a, prev[s - 1]);
            if (allow_skip(s)) a = detail::lse2(a, prev[s - 2]);
            cur[s] = a == neg_inf ? neg_inf : a + lpt[ext[s]];
        }
    }
    const real* last = alpha.data() + static_cast<size_t>(T - 1) * S;
    const real log_z = S > 1 ? detail::lse2(last[S - 1], last[S - 2]) : last[0];
    XY_CHECK(log_z != neg_inf, "ctc_loss: no feasible alignment");

    ad::Tape* tp = ad::tape_if_grad({&logits});
    ad::Tensor out = ad::make_out({1}, tp != nullptr);
    out.v()[0] = -log_z;

    if (tp) {
        // suffix recursion, emission-inclusive like alpha
        std::vector<real> beta(static_cast<size_t>(T) * S, neg_inf);
        {
            real* lastb = beta.data() + static_cast<size_t>(T - 1) * S;
            const real* lpt = lp.data() + static_cast<size_t>(T - 1) * V1;
            lastb[S - 1] = lpt[ext[S - 1]];
            if (S > 1) lastb[S - 2] = lpt[ext[S - 2]];
        }
        for (int t = T - 2; t >= 0; --t) {
            const real* next = beta.data() + static_cast<size_t>(t + 1) * S;
            real* cur = beta.data() + static_cast<size_t>(t) * S;
            const real* lpt = lp.data() + static_cast<size_t>(t) * V1;
            for (int s = 0; s < S; ++s) {
                real b = next[s];
                if (s + 1 < S) b = detail::lse2(b, next[s + 1]);
                if (s + 2 < S && ext[s + 2] != kCtcBlank && ext[s + 2] != ext[s])
                    b = detail::lse2(b, next[s + 2]);
                cur[s] = b == neg_inf ? neg_inf : b + lpt[ext[s]];
            }
        }
        // posterior over symbols per frame
        std::vector<real> posterior(static_cast<size_t>(T) * V1, 0.0);
        for (int t = 0; t < T; ++t) {
            const real* at = alpha.data() + static_cast<size_t>(t) * S;
            const real* bt = beta.data() + static_cast<size_t>(t) * S;
            const real* lpt = lp.data() + static_cast<size_t>(t) * V1;
            real* post = posterior.data() + static_cast<size_t>(t) * V1;
            for (int s = 0; s < S; ++s) {
                if (at[s] == neg_inf || bt[s] == neg_inf) continue;
                post[ext[s]] += std::exp(at[s] + bt[s] - lpt[ext[s]] - log_z);
            }
        }
        tp->record([ln = logits.node(), on = out.node(), probs = std::move(probs),
                    posterior = std::move(posterior)] {
            if (on->grad.empty()) return;
            ad::ensure_grad(ln);
            const real go = on->grad[0];
            for (size_t i = 0; i < ln->grad.size(); ++i)
                ln->grad[i] += go * (probs[i] - posterior[i]);
        });
    }
    return out;
}

// per-frame argmax, collapse consecutive repeats, drop blanks
inline std::vector<int> ctc_greedy_decode(const ad::Tensor& logits) {
    XY_CHECK(logits.rank() == 2, "ctc_greedy_decode: logits must be [T x (V+1)]");
    const int T = logits.shape()[0], V1 = logits.shape()[1];
    std::vector<int> out;
    int prev = -1;
    for (int t = 0; t < T; ++t) {
        const real* row = logits.v().data() + static_cast<size_t>(t) * V1;
        int arg = 0;
        for (int v = 1; v < V1; ++v)
            if (row[v] > row[arg]) arg = v;
        if (arg != prev && arg != kCtcBlank) out.push_back(arg);
        prev = arg;
    }
    return out;
}

}  // namespace xy
