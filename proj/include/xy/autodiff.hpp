#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "xy/common.hpp"

namespace xy::ad {

// ---------------------------------------------------------------------------
// Tensor / Tape
// ---------------------------------------------------------------------------

struct Node {
    std::vector<int> shape;
    std::vector<real> val;
    std::vector<real> grad;  // empty until backward touches it
    bool requires_grad = false;
};

using NodePtr = std::shared_ptr<Node>;

inline int numel_of(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->val.assign(numel_of(n->shape), 0.0);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from(std::vector<real> vals, std::vector<int> shape, bool requires_grad = false) {
        XY_CHECK(static_cast<int>(vals.size()) == numel_of(shape), "value count does not match shape");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->val = std::move(vals);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(real v) { return from({v}, {1}); }

    bool defined() const { return n_ != nullptr; }
    const NodePtr& node() const { return n_; }
    const std::vector<int>& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int numel() const { return static_cast<int>(n_->val.size()); }
    int rows() const { return n_->shape[0]; }
    int cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }

    std::vector<real>& v() { return n_->val; }
    const std::vector<real>& v() const { return n_->val; }
    std::vector<real>& g() { return n_->grad; }
    const std::vector<real>& g() const { return n_->grad; }

    real item() const {
        XY_CHECK(numel() == 1, "item() on non-scalar tensor");
        return n_->val[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    // gradient (zeros if backward never reached this node)
    std::vector<real> grad_or_zero() const {
        if (!n_->grad.empty()) return n_->grad;
        return std::vector<real>(n_->val.size(), 0.0);
    }

private:
    NodePtr n_;
};

inline void ensure_grad(const NodePtr& n) {
    if (n->grad.empty()) n->grad.assign(n->val.size(), 0.0);
}

// Reverse-mode tape: ops push a backward closure during forward; backward()
// runs them in reverse, visiting each recorded node exactly once.
class Tape {
public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    void backward(const Tensor& loss) {
        XY_CHECK(loss.numel() == 1, "backward requires a scalar loss");
        XY_CHECK(!steps_.empty(), "backward on an empty tape");
        ensure_grad(loss.node());
        loss.node()->grad[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

namespace detail {
inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}
}  // namespace detail

// RAII: make `tape` the recording target for ops on this thread.
struct TapeScope {
    explicit TapeScope(Tape& t) : prev_(detail::active_tape()) { detail::active_tape() = &t; }
    ~TapeScope() { detail::active_tape() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

inline Tape* tape_if_grad(std::initializer_list<const Tensor*> inputs) {
    Tape* tp = detail::active_tape();
    if (!tp) return nullptr;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return tp;
    return nullptr;
}

inline Tensor make_out(std::vector<int> shape, bool rg) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(rg);
    return t;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    XY_CHECK(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out(a.shape(), tp != nullptr);
    const int n = a.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = a.v()[i] + b.v()[i];
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node()] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            ensure_grad(an);
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            ensure_grad(bn);
            for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
        }
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out(a.shape(), tp != nullptr);
    const int n = a.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = a.v()[i] - b.v()[i];
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node()] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            ensure_grad(an);
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            ensure_grad(bn);
            for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
        }
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out(a.shape(), tp != nullptr);
    const int n = a.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = a.v()[i] * b.v()[i];
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node()] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            ensure_grad(an);
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->val[i];
        }
        if (bn->requires_grad) {
            ensure_grad(bn);
            for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->val[i];
        }
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out(a.shape(), tp != nullptr);
    const int n = a.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = a.v()[i] / b.v()[i];
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node()] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            ensure_grad(an);
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] / bn->val[i];
        }
        if (bn->requires_grad) {
            ensure_grad(bn);
            for (size_t i = 0; i < on->grad.size(); ++i)
                bn->grad[i] -= on->grad[i] * an->val[i] / (bn->val[i] * bn->val[i]);
        }
    });
    return out;
}

// a*x + b elementwise with scalar a, b
inline Tensor affine(const Tensor& x, real a, real b) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = a * x.v()[i] + b;
    if (tp) tp->record([xn = x.node(), on = out.node(), a] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += a * on->grad[i];
    });
    return out;
}

inline Tensor mul_scalar(const Tensor& x, real a) { return affine(x, a, 0.0); }
inline Tensor add_scalar(const Tensor& x, real b) { return affine(x, 1.0, b); }

inline Tensor exp(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = std::exp(x.v()[i]);
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * on->val[i];
    });
    return out;
}

inline Tensor log(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) {
        XY_CHECK(x.v()[i] > 0, "log: non-positive input");
        out.v()[i] = std::log(x.v()[i]);
    }
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] / xn->val[i];
    });
    return out;
}

inline Tensor sqrt(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = std::sqrt(x.v()[i]);
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[i] += on->grad[i] * 0.5 / std::max(on->val[i], real(1e-12));
    });
    return out;
}

// clamp with pass-through gradient strictly inside [lo, hi]
inline Tensor clamp(const Tensor& x, real lo, real hi) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = std::min(hi, std::max(lo, x.v()[i]));
    if (tp) tp->record([xn = x.node(), on = out.node(), lo, hi] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i)
            if (xn->val[i] > lo && xn->val[i] < hi) xn->grad[i] += on->grad[i];
    });
    return out;
}

inline Tensor tanh(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = std::tanh(x.v()[i]);
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[i] += on->grad[i] * (1.0 - on->val[i] * on->val[i]);
    });
    return out;
}

inline Tensor sigmoid(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    for (int i = 0; i < n; ++i) out.v()[i] = 1.0 / (1.0 + std::exp(-x.v()[i]));
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[i] += on->grad[i] * on->val[i] * (1.0 - on->val[i]);
    });
    return out;
}

// exact GELU: x * Phi(x)
inline Tensor gelu(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    const int n = x.numel();
    const real inv_sqrt2 = 0.70710678118654752440;
    for (int i = 0; i < n; ++i) {
        real xi = x.v()[i];
        out.v()[i] = 0.5 * xi * (1.0 + std::erf(xi * inv_sqrt2));
    }
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        const real inv_sqrt2 = 0.70710678118654752440;
        const real inv_sqrt2pi = 0.39894228040143267794;
        for (size_t i = 0; i < on->grad.size(); ++i) {
            real xi = xn->val[i];
            real phi_cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
            real phi_pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
            xn->grad[i] += on->grad[i] * (phi_cdf + xi * phi_pdf);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and distances
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out({1}, tp != nullptr);
    real s = 0;
    for (real v : x.v()) s += v;
    out.v()[0] = s;
    if (tp) tp->record([xn = x.node(), on = out.node()] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    });
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out({1}, tp != nullptr);
    real s = 0;
    for (real v : x.v()) s += v;
    const real inv = 1.0 / x.numel();
    out.v()[0] = s * inv;
    if (tp) tp->record([xn = x.node(), on = out.node(), inv] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0] * inv;
    });
    return out;
}

// sum |a - b|; subgradient 0 at ties
inline Tensor l1_distance(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l1_distance");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out({1}, tp != nullptr);
    real s = 0;
    for (int i = 0; i < a.numel(); ++i) s += std::abs(a.v()[i] - b.v()[i]);
    out.v()[0] = s;
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node()] {
        if (on->grad.empty()) return;
        const real go = on->grad[0];
        for (size_t i = 0; i < an->val.size(); ++i) {
            real d = an->val[i] - bn->val[i];
            real sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (an->requires_grad) {
                ensure_grad(an);
                an->grad[i] += go * sg;
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                bn->grad[i] -= go * sg;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {
// C[m x n] += A (op) B with raw buffers; ta/tb select transposes.
inline void gemm_acc(int m, int n, int k, const real* A, bool ta, const real* B, bool tb, real* C) {
    if (!ta && !tb) {
        for (int i = 0; i < m; ++i) {
            const real* a_row = A + static_cast<size_t>(i) * k;
            real* c_row = C + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const real aik = a_row[kk];
                if (aik == 0.0) continue;
                const real* b_row = B + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
            }
        }
    } else if (!ta && tb) {
        for (int i = 0; i < m; ++i) {
            const real* a_row = A + static_cast<size_t>(i) * k;
            real* c_row = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const real* b_row = B + static_cast<size_t>(j) * k;
                real acc = 0;
                for (int kk = 0; kk < k; ++kk) acc += a_row[kk] * b_row[kk];
                c_row[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (int kk = 0; kk < k; ++kk) {
            const real* a_row = A + static_cast<size_t>(kk) * m;
            const real* b_row = B + static_cast<size_t>(kk) * n;
            for (int i = 0; i < m; ++i) {
                const real aik = a_row[i];
                if (aik == 0.0) continue;
                real* c_row = C + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                real acc = 0;
                for (int kk = 0; kk < k; ++kk)
                    acc += A[static_cast<size_t>(kk) * m + i] * B[static_cast<size_t>(j) * k + kk];
                C[static_cast<size_t>(i) * n + j] += acc;
            }
    }
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    XY_CHECK(a.rank() == 2 && b.rank() == 2, "matmul requires rank-2 tensors");
    const int m = ta ? a.shape()[1] : a.shape()[0];
    const int ka = ta ? a.shape()[0] : a.shape()[1];
    const int kb = tb ? b.shape()[1] : b.shape()[0];
    const int n = tb ? b.shape()[0] : b.shape()[1];
    XY_CHECK(ka == kb, "matmul: inner dimension mismatch");
    Tape* tp = tape_if_grad({&a, &b});
    Tensor out = make_out({m, n}, tp != nullptr);
    detail::gemm_acc(m, n, ka, a.v().data(), ta, b.v().data(), tb, out.v().data());
    if (tp) tp->record([an = a.node(), bn = b.node(), on = out.node(), m, n, ka, ta, tb] {
        if (on->grad.empty()) return;
        const real* go = on->grad.data();
        // dA = dC B^T (layout-adjusted for the transpose flags), dB = A^T dC
        if (an->requires_grad) {
            ensure_grad(an);
            if (!ta)
                detail::gemm_acc(m, ka, n, go, false, bn->val.data(), !tb, an->grad.data());
            else
                detail::gemm_acc(ka, m, n, bn->val.data(), tb, go, true, an->grad.data());
        }
        if (bn->requires_grad) {
            ensure_grad(bn);
            if (!tb)
                detail::gemm_acc(ka, n, m, an->val.data(), !ta, go, false, bn->grad.data());
            else
                detail::gemm_acc(n, ka, m, go, true, an->val.data(), ta, bn->grad.data());
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions, [T x C] time-major; weights [K x Cin x Cout]
// ---------------------------------------------------------------------------

inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    XY_CHECK(x.rank() == 2 && w.rank() == 3, "conv1d: x must be [T x Cin], w [K x Cin x Cout]");
    const int T = x.shape()[0], cin = x.shape()[1];
    const int K = w.shape()[0], wcin = w.shape()[1], cout = w.shape()[2];
    XY_CHECK(cin == wcin, "conv1d: channel mismatch");
    XY_CHECK(!b.defined() || b.numel() == cout, "conv1d: bias size mismatch");
    XY_CHECK(stride >= 1 && pad >= 0, "conv1d: bad stride/pad");
    const int T_out = (T + 2 * pad - K) / stride + 1;
    XY_CHECK(T_out >= 1, "conv1d: input too short");
    Tape* tp = tape_if_grad({&x, &w, &b});
    Tensor out = make_out({T_out, cout}, tp != nullptr);

    real* o = out.v().data();
    const real* xv = x.v().data();
    const real* wv = w.v().data();
    if (b.defined())
        for (int t = 0; t < T_out; ++t)
            for (int c = 0; c < cout; ++c) o[static_cast<size_t>(t) * cout + c] = b.v()[c];
    for (int t = 0; t < T_out; ++t) {
        const int in0 = t * stride - pad;
        real* o_row = o + static_cast<size_t>(t) * cout;
        for (int k = 0; k < K; ++k) {
            const int ti = in0 + k;
            if (ti < 0 || ti >= T) continue;
            const real* x_row = xv + static_cast<size_t>(ti) * cin;
            const real* w_k = wv + static_cast<size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const real xi = x_row[ci];
                if (xi == 0.0) continue;
                const real* w_row = w_k + static_cast<size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) o_row[co] += xi * w_row[co];
            }
        }
    }
    if (tp) tp->record([xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr,
                        on = out.node(), T, cin, K, cout, T_out, stride, pad] {
        if (on->grad.empty()) return;
        const real* go = on->grad.data();
        if (bn && bn->requires_grad) {
            ensure_grad(bn);
            for (int t = 0; t < T_out; ++t)
                for (int c = 0; c < cout; ++c) bn->grad[c] += go[static_cast<size_t>(t) * cout + c];
        }
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        if (need_dx) ensure_grad(xn);
        if (need_dw) ensure_grad(wn);
        if (!need_dx && !need_dw) return;
        for (int t = 0; t < T_out; ++t) {
            const int in0 = t * stride - pad;
            const real* go_row = go + static_cast<size_t>(t) * cout;
            for (int k = 0; k < K; ++k) {
                const int ti = in0 + k;
                if (ti < 0 || ti >= T) continue;
                for (int ci = 0; ci < cin; ++ci) {
                    const real* w_row = wn->val.data() + (static_cast<size_t>(k) * cin + ci) * cout;
                    if (need_dx) {
                        real acc = 0;
                        for (int co = 0; co < cout; ++co) acc += go_row[co] * w_row[co];
                        xn->grad[static_cast<size_t>(ti) * cin + ci] += acc;
                    }
                    if (need_dw) {
                        const real xi = xn->val[static_cast<size_t>(ti) * cin + ci];
                        if (xi == 0.0) continue;
                        real* dw_row = wn->grad.data() + (static_cast<size_t>(k) * cin + ci) * cout;
                        for (int co = 0; co < cout; ++co) dw_row[co] += xi * go_row[co];
                    }
                }
            }
        }
    });
    return out;
}

inline Tensor transposed_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    XY_CHECK(x.rank() == 2 && w.rank() == 3, "transposed_conv1d: x must be [T x Cin], w [K x Cin x Cout]");
    const int T = x.shape()[0], cin = x.shape()[1];
    const int K = w.shape()[0], wcin = w.shape()[1], cout = w.shape()[2];
    XY_CHECK(cin == wcin, "transposed_conv1d: channel mismatch");
    const int T_out = (T - 1) * stride + K - 2 * pad;
    XY_CHECK(T_out >= 1, "transposed_conv1d: empty output");
    Tape* tp = tape_if_grad({&x, &w, &b});
    Tensor out = make_out({T_out, cout}, tp != nullptr);

    real* o = out.v().data();
    if (b.defined())
        for (int t = 0; t < T_out; ++t)
            for (int c = 0; c < cout; ++c) o[static_cast<size_t>(t) * cout + c] = b.v()[c];
    for (int t = 0; t < T; ++t) {
        const real* x_row = x.v().data() + static_cast<size_t>(t) * cin;
        for (int k = 0; k < K; ++k) {
            const int to = t * stride + k - pad;
            if (to < 0 || to >= T_out) continue;
            real* o_row = o + static_cast<size_t>(to) * cout;
            const real* w_k = w.v().data() + static_cast<size_t>(k) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const real xi = x_row[ci];
                if (xi == 0.0) continue;
                const real* w_row = w_k + static_cast<size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) o_row[co] += xi * w_row[co];
            }
        }
    }
    if (tp) tp->record([xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr,
                        on = out.node(), T, cin, K, cout, T_out, stride, pad] {
        if (on->grad.empty()) return;
        const real* go = on->grad.data();
        if (bn && bn->requires_grad) {
            ensure_grad(bn);
            for (int t = 0; t < T_out; ++t)
                for (int c = 0; c < cout; ++c) bn->grad[c] += go[static_cast<size_t>(t) * cout + c];
        }
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        if (need_dx) ensure_grad(xn);
        if (need_dw) ensure_grad(wn);
        if (!need_dx && !need_dw) return;
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < K; ++k) {
                const int to = t * stride + k - pad;
                if (to < 0 || to >= T_out) continue;
                const real* go_row = go + static_cast<size_t>(to) * cout;
                for (int ci = 0; ci < cin; ++ci) {
                    const real* w_row = wn->val.data() + (static_cast<size_t>(k) * cin + ci) * cout;
                    if (need_dx) {
                        real acc = 0;
                        for (int co = 0; co < cout; ++co) acc += go_row[co] * w_row[co];
                        xn->grad[static_cast<size_t>(t) * cin + ci] += acc;
                    }
                    if (need_dw) {
                        const real xi = xn->val[static_cast<size_t>(t) * cin + ci];
                        if (xi == 0.0) continue;
                        real* dw_row = wn->grad.data() + (static_cast<size_t>(k) * cin + ci) * cout;
                        for (int co = 0; co < cout; ++co) dw_row[co] += xi * go_row[co];
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    XY_CHECK(!parts.empty(), "concat: no inputs");
    const int rank = parts[0].rank();
    XY_CHECK(axis >= 0 && axis < rank && rank <= 2, "concat: bad axis");
    bool any_grad = false;
    Tape* tp = detail::active_tape();
    for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
    if (!tp) any_grad = false;

    std::vector<int> out_shape = parts[0].shape();
    for (size_t i = 1; i < parts.size(); ++i) {
        XY_CHECK(parts[i].rank() == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis)
                XY_CHECK(parts[i].shape()[d] == out_shape[d], "concat: shape mismatch");
        out_shape[axis] += parts[i].shape()[axis];
    }
    Tensor out = make_out(out_shape, any_grad);

    if (rank == 1 || axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.v().begin(), p.v().end(), out.v().begin() + off);
            off += p.v().size();
        }
    } else {  // rank 2, axis 1
        const int rows = out_shape[0], cols = out_shape[1];
        int col0 = 0;
        for (const auto& p : parts) {
            const int pc = p.shape()[1];
            for (int r = 0; r < rows; ++r)
                std::copy(p.v().begin() + static_cast<size_t>(r) * pc,
                          p.v().begin() + static_cast<size_t>(r + 1) * pc,
                          out.v().begin() + static_cast<size_t>(r) * cols + col0);
            col0 += pc;
        }
    }
    if (any_grad) {
        std::vector<NodePtr> ins;
        for (const auto& p : parts) ins.push_back(p.node());
        tp->record([ins, on = out.node(), axis, rank] {
            if (on->grad.empty()) return;
            if (rank == 1 || axis == 0) {
                size_t off = 0;
                for (const auto& in : ins) {
                    if (in->requires_grad) {
                        ensure_grad(in);
                        for (size_t i = 0; i < in->val.size(); ++i) in->grad[i] += on->grad[off + i];
                    }
                    off += in->val.size();
                }
            } else {
                const int rows = on->shape[0], cols = on->shape[1];
                int col0 = 0;
                for (const auto& in : ins) {
                    const int pc = in->shape[1];
                    if (in->requires_grad) {
                        ensure_grad(in);
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < pc; ++c)
                                in->grad[static_cast<size_t>(r) * pc + c] +=
                                    on->grad[static_cast<size_t>(r) * cols + col0 + c];
                    }
                    col0 += pc;
                }
            }
        });
    }
    return out;
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
    const int rank = x.rank();
    XY_CHECK(axis >= 0 && axis < rank && rank <= 2, "slice: bad axis");
    XY_CHECK(start >= 0 && len >= 1 && start + len <= x.shape()[axis], "slice: out of range");
    Tape* tp = tape_if_grad({&x});
    std::vector<int> out_shape = x.shape();
    out_shape[axis] = len;
    Tensor out = make_out(out_shape, tp != nullptr);

    if (rank == 1 || axis == 0) {
        const int cols = rank == 2 ? x.shape()[1] : 1;
        std::copy(x.v().begin() + static_cast<size_t>(start) * cols,
                  x.v().begin() + static_cast<size_t>(start + len) * cols, out.v().begin());
    } else {
        const int rows = x.shape()[0], cols = x.shape()[1];
        for (int r = 0; r < rows; ++r)
            std::copy(x.v().begin() + static_cast<size_t>(r) * cols + start,
                      x.v().begin() + static_cast<size_t>(r) * cols + start + len,
                      out.v().begin() + static_cast<size_t>(r) * len);
    }
    if (tp) tp->record([xn = x.node(), on = out.node(), axis, start, len, rank] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        if (rank == 1 || axis == 0) {
            const int cols = rank == 2 ? xn->shape[1] : 1;
            for (size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[static_cast<size_t>(start) * cols + i] += on->grad[i];
        } else {
            const int rows = xn->shape[0], cols = xn->shape[1];
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < len; ++c)
                    xn->grad[static_cast<size_t>(r) * cols + start + c] +=
                        on->grad[static_cast<size_t>(r) * len + c];
        }
    });
    return out;
}

// [L] -> [ceil(L/frame) x frame], zero padded tail
inline Tensor as_frames(const Tensor& x, int frame) {
    XY_CHECK(x.rank() == 1, "as_frames: rank-1 input expected");
    XY_CHECK(frame >= 1, "as_frames: bad frame");
    const int L = x.shape()[0];
    const int T = (L + frame - 1) / frame;
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out({T, frame}, tp != nullptr);
    for (int i = 0; i < L; ++i) out.v()[i] = x.v()[i];
    if (tp) tp->record([xn = x.node(), on = out.node(), L] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (int i = 0; i < L; ++i) xn->grad[i] += on->grad[i];
    });
    return out;
}

// each row repeated `factor` times: [T x C] -> [T*factor x C]
inline Tensor replication_upsample(const Tensor& x, int factor) {
    XY_CHECK(x.rank() == 2 && factor >= 1, "replication_upsample: bad input");
    const int T = x.shape()[0], C = x.shape()[1];
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out({T * factor, C}, tp != nullptr);
    for (int t = 0; t < T; ++t)
        for (int f = 0; f < factor; ++f)
            std::copy(x.v().begin() + static_cast<size_t>(t) * C,
                      x.v().begin() + static_cast<size_t>(t + 1) * C,
                      out.v().begin() + (static_cast<size_t>(t) * factor + f) * C);
    if (tp) tp->record([xn = x.node(), on = out.node(), T, C, factor] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < factor; ++f)
                for (int c = 0; c < C; ++c)
                    xn->grad[static_cast<size_t>(t) * C + c] +=
                        on->grad[(static_cast<size_t>(t) * factor + f) * C + c];
    });
    return out;
}

inline Tensor avg_pool1d(const Tensor& x, int k, int stride) {
    XY_CHECK(x.rank() == 2 && k >= 1 && stride >= 1, "avg_pool1d: bad input");
    const int T = x.shape()[0], C = x.shape()[1];
    const int T_out = (T - k) / stride + 1;
    XY_CHECK(T_out >= 1, "avg_pool1d: input too short");
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out({T_out, C}, tp != nullptr);
    const real inv = 1.0 / k;
    for (int t = 0; t < T_out; ++t)
        for (int c = 0; c < C; ++c) {
            real s = 0;
            for (int i = 0; i < k; ++i) s += x.v()[static_cast<size_t>(t * stride + i) * C + c];
            out.v()[static_cast<size_t>(t) * C + c] = s * inv;
        }
    if (tp) tp->record([xn = x.node(), on = out.node(), T_out, C, k, stride, inv] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (int t = 0; t < T_out; ++t)
            for (int c = 0; c < C; ++c) {
                real g = on->grad[static_cast<size_t>(t) * C + c] * inv;
                for (int i = 0; i < k; ++i)
                    xn->grad[static_cast<size_t>(t * stride + i) * C + c] += g;
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention building blocks
// ---------------------------------------------------------------------------

// row-wise softmax over the last axis
inline Tensor softmax(const Tensor& x) {
    XY_CHECK(x.rank() <= 2, "softmax: rank-1 or rank-2");
    const int rows = x.rank() == 2 ? x.shape()[0] : 1;
    const int cols = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
    Tape* tp = tape_if_grad({&x});
    Tensor out = make_out(x.shape(), tp != nullptr);
    for (int r = 0; r < rows; ++r) {
        const real* xi = x.v().data() + static_cast<size_t>(r) * cols;
        real* oi = out.v().data() + static_cast<size_t>(r) * cols;
        real mx = xi[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xi[c]);
        real z = 0;
        for (int c = 0; c < cols; ++c) {
            oi[c] = std::exp(xi[c] - mx);
            z += oi[c];
        }
        const real inv = 1.0 / z;
        for (int c = 0; c < cols; ++c) oi[c] *= inv;
    }
    if (tp) tp->record([xn = x.node(), on = out.node(), rows, cols] {
        if (on->grad.empty()) return;
        ensure_grad(xn);
        for (int r = 0; r < rows; ++r) {
            const real* y = on->val.data() + static_cast<size_t>(r) * cols;
            const real* gy = on->grad.data() + static_cast<size_t>(r) * cols;
            real dot = 0;
            for (int c = 0; c < cols; ++c) dot += gy[c] * y[c];
            real* gx = xn->grad.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dot);
        }
    });
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5) {
    XY_CHECK(x.rank() == 2, "layer_norm: rank-2 input");
    const int rows = x.shape()[0], cols = x.shape()[1];
    XY_CHECK(gamma.numel() == cols && beta.numel() == cols, "layer_norm: param size mismatch");
    Tape* tp = tape_if_grad({&x, &gamma, &beta});
    Tensor out = make_out(x.shape(), tp != nullptr);
    std::vector<real> inv_std(rows), mean(rows);
    for (int r = 0; r < rows; ++r) {
        const real* xi = x.v().data() + static_cast<size_t>(r) * cols;
        real mu = 0;
        for (int c = 0; c < cols; ++c) mu += xi[c];
        mu /= cols;
        real var = 0;
        for (int c = 0; c < cols; ++c) var += (xi[c] - mu) * (xi[c] - mu);
        var /= cols;
        const real is = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        real* oi = out.v().data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) oi[c] = (xi[c] - mu) * is * gamma.v()[c] + beta.v()[c];
    }
    if (tp) tp->record([xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
                        rows, cols, mean, inv_std] {
        if (on->grad.empty()) return;
        for (int r = 0; r < rows; ++r) {
            const real* xi = xn->val.data() + static_cast<size_t>(r) * cols;
            const real* gy = on->grad.data() + static_cast<size_t>(r) * cols;
            const real mu = mean[r], is = inv_std[r];
            if (gn->requires_grad) {
                ensure_grad(gn);
                for (int c = 0; c < cols; ++c) gn->grad[c] += gy[c] * (xi[c] - mu) * is;
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                for (int c = 0; c < cols; ++c) bn->grad[c] += gy[c];
            }
            if (xn->requires_grad) {
                ensure_grad(xn);
                real sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int c = 0; c < cols; ++c) {
                    const real xhat = (xi[c] - mu) * is;
                    const real dxhat = gy[c] * gn->val[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                real* gx = xn->grad.data() + static_cast<size_t>(r) * cols;
                const real invn = 1.0 / cols;
                for (int c = 0; c < cols; ++c) {
                    const real xhat = (xi[c] - mu) * is;
                    const real dxhat = gy[c] * gn->val[c];
                    gx[c] += is * (dxhat - invn * sum_dxhat - xhat * invn * sum_dxhat_xhat);
                }
            }
        }
    });
    return out;
}

inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    XY_CHECK(table.rank() == 2, "embedding: table must be [V x D]");
    const int V = table.shape()[0], D = table.shape()[1];
    for (int id : ids) XY_CHECK(id >= 0 && id < V, "embedding: id out of vocabulary");
    Tape* tp = tape_if_grad({&table});
    Tensor out = make_out({static_cast<int>(ids.size()), D}, tp != nullptr);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table.v().begin() + static_cast<size_t>(ids[i]) * D,
                  table.v().begin() + static_cast<size_t>(ids[i] + 1) * D,
                  out.v().begin() + i * D);
    if (tp) tp->record([tn = table.node(), on = out.node(), ids, D] {
        if (on->grad.empty()) return;
        ensure_grad(tn);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int d = 0; d < D; ++d)
                tn->grad[static_cast<size_t>(ids[i]) * D + d] += on->grad[i * D + d];
    });
    return out;
}

// sum over rows of -log softmax(logits)[target]
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    XY_CHECK(logits.rank() == 2, "cross_entropy: logits must be [N x V]");
    const int N = logits.shape()[0], V = logits.shape()[1];
    XY_CHECK(static_cast<int>(targets.size()) == N, "cross_entropy: target length mismatch");
    for (int t : targets) XY_CHECK(t >= 0 && t < V, "cross_entropy: target out of range");
    Tape* tp = tape_if_grad({&logits});
    Tensor out = make_out({1}, tp != nullptr);
    std::vector<real> probs(static_cast<size_t>(N) * V);
    real loss = 0;
    for (int r = 0; r < N; ++r) {
        const real* xi = logits.v().data() + static_cast<size_t>(r) * V;
        real* pi = probs.data() + static_cast<size_t>(r) * V;
        real mx = xi[0];
        for (int c = 1; c < V; ++c) mx = std::max(mx, xi[c]);
        real z = 0;
        for (int c = 0; c < V; ++c) {
            pi[c] = std::exp(xi[c] - mx);
            z += pi[c];
        }
        const real inv = 1.0 / z;
        for (int c = 0; c < V; ++c) pi[c] *= inv;
        loss -= std::log(std::max(pi[targets[r]], real(1e-300)));
    }
    out.v()[0] = loss;
    if (tp) tp->record([ln = logits.node(), on = out.node(), probs = std::move(probs), targets, N, V] {
        if (on->grad.empty()) return;
        ensure_grad(ln);
        const real go = on->grad[0];
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < V; ++c) {
                real d = probs[static_cast<size_t>(r) * V + c] - (c == targets[r] ? 1.0 : 0.0);
                ln->grad[static_cast<size_t>(r) * V + c] += go * d;
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Operators, init helpers
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor randn(std::vector<int> shape, Rng& rng, real stddev, bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.v()) v = rng.normal(0.0, stddev);
    return t;
}

inline bool all_finite(const Tensor& t) {
    for (real v : t.v())
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Tensor tensor;
    bool frozen = false;

    void set_frozen(bool f) {
        frozen = f;
        tensor.set_requires_grad(!f);
    }
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-8)
inline real finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, Tensor point, real eps) {
    point.set_requires_grad(true);
    Tape tape;
    std::vector<real> analytic;
    {
        TapeScope scope(tape);
        Tensor loss = fn(point);
        XY_CHECK(loss.numel() == 1, "finite_diff_check: fn must return a scalar");
        XY_CHECK(std::isfinite(loss.item()), "finite_diff_check: non-finite function value");
        tape.backward(loss);
        analytic = point.grad_or_zero();
    }
    point.node()->grad.clear();
    point.set_requires_grad(false);
    real max_rel = 0;
    for (int i = 0; i < point.numel(); ++i) {
        const real saved = point.v()[i];
        point.v()[i] = saved + eps;
        const real fp = fn(point).item();
        point.v()[i] = saved - eps;
        const real fm = fn(point).item();
        point.v()[i] = saved;
        XY_CHECK(std::isfinite(fp) && std::isfinite(fm), "finite_diff_check: non-finite value near point");
        const real central = (fp - fm) / (2 * eps);
        const real rel = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace xy::ad
