#pragma once

// Hand-written layers with explicit forward/backward. Every layer caches
// what its backward pass needs, accumulates parameter gradients in-place,
// and exposes its state through visit() so init, Adam, snapshots, and
// checkpoints never special-case a layer type. Inner loops run over the
// contiguous time axis so -O3 can vectorize them (this code trains real
// models on one core).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecgfreq/errors.hpp"
#include "ecgfreq/rng.hpp"
#include "ecgfreq/tensor.hpp"

namespace ecgfreq::nn {

// Visitor for trainable tensors: (name, data, grad, shape).
template <typename S>
using ParamFn =
    std::function<void(const std::string&, std::vector<S>&, std::vector<S>&,
                       const std::vector<std::size_t>&)>;

// Visitor for non-trainable state (batch-norm running stats): (name, data, shape).
template <typename S>
using BufferFn =
    std::function<void(const std::string&, std::vector<S>&, const std::vector<std::size_t>&)>;

namespace detail {

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename S>
void init_uniform(std::vector<S>& w, std::size_t fan_in, SplitMix64& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (S& x : w) x = static_cast<S>(rng.uniform(-a, a));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Conv1d: stride 1, "same" zero padding. Even kernels pad k/2 left and
// k/2 - 1 right (k=10 -> 5/4), odd kernels pad k/2 both sides.
template <typename S>
struct Conv1d {
    std::size_t c_in = 0, c_out = 0, k = 0, pad_l = 0, pad_r = 0;
    std::vector<S> w, b, gw, gb; // w: [c_out, c_in, k]
    Tensor3<S> x_;               // cached input

    Conv1d() = default;
    Conv1d(std::size_t ci, std::size_t co, std::size_t kk)
        : c_in(ci), c_out(co), k(kk), pad_l(kk / 2), pad_r(kk - 1 - kk / 2),
          w(co * ci * kk, S(0)), b(co, S(0)), gw(w.size(), S(0)), gb(co, S(0)) {}

    void init(SplitMix64& rng) {
        detail::init_uniform(w, c_in * k, rng);
        for (S& x : b) x = S(0);
    }

    Tensor3<S> forward(const Tensor3<S>& x) {
        if (x.nc != c_in)
            fail(Errc::InvariantViolation, "conv expects " + std::to_string(c_in) +
                                               " channels, got " + std::to_string(x.nc));
        x_ = x;
        const std::size_t B = x.nb, T = x.nt;
        Tensor3<S> y(B, c_out, T);
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t co = 0; co < c_out; ++co) {
                S* yp = y.ch(bi, co);
                const S bias = b[co];
                for (std::size_t t = 0; t < T; ++t) yp[t] = bias;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    const S* xp = x.ch(bi, ci);
                    const S* wp = &w[(co * c_in + ci) * k];
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::ptrdiff_t shift =
                            static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad_l);
                        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                        const std::size_t t1 =
                            shift > 0 ? (static_cast<std::size_t>(shift) < T
                                             ? T - static_cast<std::size_t>(shift)
                                             : 0)
                                      : T;
                        const S wv = wp[kk];
                        const S* xs = xp + shift;
                        for (std::size_t t = t0; t < t1; ++t) yp[t] += wv * xs[t];
                    }
                }
            }
        }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        const std::size_t B = x_.nb, T = x_.nt;
        Tensor3<S> dx(B, c_in, T);
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t co = 0; co < c_out; ++co) {
                const S* dyp = dy.ch(bi, co);
                double acc_b = 0.0;
                for (std::size_t t = 0; t < T; ++t) acc_b += dyp[t];
                gb[co] += static_cast<S>(acc_b);
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    const S* xp = x_.ch(bi, ci);
                    S* dxp = dx.ch(bi, ci);
                    const S* wp = &w[(co * c_in + ci) * k];
                    S* gwp = &gw[(co * c_in + ci) * k];
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::ptrdiff_t shift =
                            static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad_l);
                        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                        const std::size_t t1 =
                            shift > 0 ? (static_cast<std::size_t>(shift) < T
                                             ? T - static_cast<std::size_t>(shift)
                                             : 0)
                                      : T;
                        const S* xs = xp + shift;
                        S acc = S(0);
                        for (std::size_t t = t0; t < t1; ++t) acc += dyp[t] * xs[t];
                        gwp[kk] += acc;
                        S* dxs = dxp + shift;
                        const S wv = wp[kk];
                        for (std::size_t t = t0; t < t1; ++t) dxs[t] += wv * dyp[t];
                    }
                }
            }
        }
        return dx;
    }

    void visit(const std::string& prefix, const ParamFn<S>& fn) {
        fn(prefix + ".w", w, gw, {c_out, c_in, k});
        fn(prefix + ".b", b, gb, {c_out});
    }
};

// ---------------------------------------------------------------------------
// BatchNorm1d over (batch, time) per channel. Training normalizes with batch
// statistics (population variance) and updates running stats with momentum
// 0.1; eval normalizes with the running stats. Backward assumes the last
// forward ran in training mode.
template <typename S>
struct BatchNorm1d {
    std::size_t c = 0;
    double momentum = 0.1, eps = 1e-5;
    std::vector<S> gamma, beta, ggamma, gbeta;
    std::vector<S> running_mean, running_var;
    Tensor3<S> xhat_;
    std::vector<double> inv_std_;
    bool trained_forward_ = false;

    BatchNorm1d() = default;
    explicit BatchNorm1d(std::size_t cc)
        : c(cc), gamma(cc, S(1)), beta(cc, S(0)), ggamma(cc, S(0)), gbeta(cc, S(0)),
          running_mean(cc, S(0)), running_var(cc, S(1)) {}

    void init(SplitMix64&) {
        for (S& x : gamma) x = S(1);
        for (S& x : beta) x = S(0);
        for (S& x : running_mean) x = S(0);
        for (S& x : running_var) x = S(1);
    }

    Tensor3<S> forward(const Tensor3<S>& x, bool train) {
        const std::size_t B = x.nb, T = x.nt;
        Tensor3<S> y(B, c, T);
        trained_forward_ = train;
        if (train) {
            xhat_ = Tensor3<S>(B, c, T);
            inv_std_.assign(c, 0.0);
            const double n = static_cast<double>(B * T);
            for (std::size_t ci = 0; ci < c; ++ci) {
                double mean = 0.0;
                for (std::size_t bi = 0; bi < B; ++bi) {
                    const S* xp = x.ch(bi, ci);
                    for (std::size_t t = 0; t < T; ++t) mean += xp[t];
                }
                mean /= n;
                double var = 0.0;
                for (std::size_t bi = 0; bi < B; ++bi) {
                    const S* xp = x.ch(bi, ci);
                    for (std::size_t t = 0; t < T; ++t) {
                        const double d = xp[t] - mean;
                        var += d * d;
                    }
                }
                var /= n;
                const double inv = 1.0 / std::sqrt(var + eps);
                inv_std_[ci] = inv;
                const double g = gamma[ci], be = beta[ci];
                for (std::size_t bi = 0; bi < B; ++bi) {
                    const S* xp = x.ch(bi, ci);
                    S* xh = xhat_.ch(bi, ci);
                    S* yp = y.ch(bi, ci);
                    for (std::size_t t = 0; t < T; ++t) {
                        const double h = (xp[t] - mean) * inv;
                        xh[t] = static_cast<S>(h);
                        yp[t] = static_cast<S>(g * h + be);
                    }
                }
                running_mean[ci] =
                    static_cast<S>((1.0 - momentum) * running_mean[ci] + momentum * mean);
                running_var[ci] =
                    static_cast<S>((1.0 - momentum) * running_var[ci] + momentum * var);
            }
        } else {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[ci]) + eps);
                const double mean = running_mean[ci];
                const double g = gamma[ci], be = beta[ci];
                for (std::size_t bi = 0; bi < B; ++bi) {
                    const S* xp = x.ch(bi, ci);
                    S* yp = y.ch(bi, ci);
                    for (std::size_t t = 0; t < T; ++t)
                        yp[t] = static_cast<S>(g * ((xp[t] - mean) * inv) + be);
                }
            }
        }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        if (!trained_forward_)
            fail(Errc::InvariantViolation, "batch-norm backward requires a training-mode forward");
        const std::size_t B = dy.nb, T = dy.nt;
        const double n = static_cast<double>(B * T);
        Tensor3<S> dx(B, c, T);
        for (std::size_t ci = 0; ci < c; ++ci) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t bi = 0; bi < B; ++bi) {
                const S* dyp = dy.ch(bi, ci);
                const S* xh = xhat_.ch(bi, ci);
                for (std::size_t t = 0; t < T; ++t) {
                    sum_dy += dyp[t];
                    sum_dy_xhat += static_cast<double>(dyp[t]) * xh[t];
                }
            }
            ggamma[ci] += static_cast<S>(sum_dy_xhat);
            gbeta[ci] += static_cast<S>(sum_dy);
            const double g = gamma[ci], inv = inv_std_[ci];
            const double k1 = sum_dy / n, k2 = sum_dy_xhat / n;
            for (std::size_t bi = 0; bi < B; ++bi) {
                const S* dyp = dy.ch(bi, ci);
                const S* xh = xhat_.ch(bi, ci);
                S* dxp = dx.ch(bi, ci);
                for (std::size_t t = 0; t < T; ++t)
                    dxp[t] = static_cast<S>(g * inv * (dyp[t] - k1 - xh[t] * k2));
            }
        }
        return dx;
    }

    void visit(const std::string& prefix, const ParamFn<S>& fn) {
        fn(prefix + ".gamma", gamma, ggamma, {c});
        fn(prefix + ".beta", beta, gbeta, {c});
    }

    void visit_buffers(const std::string& prefix, const BufferFn<S>& fn) {
        fn(prefix + ".running_mean", running_mean, {c});
        fn(prefix + ".running_var", running_var, {c});
    }
};

// ---------------------------------------------------------------------------
template <typename S>
struct ReLU {
    Tensor3<S> y_;

    Tensor3<S> forward(const Tensor3<S>& x) {
        Tensor3<S> y = x;
        for (S& v : y.v)
            if (v < S(0)) v = S(0);
        y_ = y;
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        Tensor3<S> dx = dy;
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (y_.v[i] <= S(0)) dx.v[i] = S(0);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Width-2, stride-2 pooling; odd trailing samples are dropped (floor).
template <typename S>
struct MaxPool2 {
    std::vector<std::uint8_t> argmax_;
    std::size_t in_t_ = 0;

    Tensor3<S> forward(const Tensor3<S>& x) {
        const std::size_t B = x.nb, C = x.nc, To = x.nt / 2;
        in_t_ = x.nt;
        Tensor3<S> y(B, C, To);
        argmax_.assign(B * C * To, 0);
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t ci = 0; ci < C; ++ci) {
                const S* xp = x.ch(bi, ci);
                S* yp = y.ch(bi, ci);
                std::uint8_t* am = argmax_.data() + (bi * C + ci) * To;
                for (std::size_t t = 0; t < To; ++t) {
                    const S a = xp[2 * t], b = xp[2 * t + 1];
                    if (a >= b) {
                        yp[t] = a;
                        am[t] = 0;
                    } else {
                        yp[t] = b;
                        am[t] = 1;
                    }
                }
            }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        const std::size_t B = dy.nb, C = dy.nc, To = dy.nt;
        Tensor3<S> dx(B, C, in_t_);
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t ci = 0; ci < C; ++ci) {
                const S* dyp = dy.ch(bi, ci);
                S* dxp = dx.ch(bi, ci);
                const std::uint8_t* am = argmax_.data() + (bi * C + ci) * To;
                for (std::size_t t = 0; t < To; ++t) dxp[2 * t + am[t]] += dyp[t];
            }
        return dx;
    }
};

template <typename S>
struct AvgPool2 {
    std::size_t in_t_ = 0;

    Tensor3<S> forward(const Tensor3<S>& x) {
        const std::size_t B = x.nb, C = x.nc, To = x.nt / 2;
        in_t_ = x.nt;
        Tensor3<S> y(B, C, To);
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t ci = 0; ci < C; ++ci) {
                const S* xp = x.ch(bi, ci);
                S* yp = y.ch(bi, ci);
                for (std::size_t t = 0; t < To; ++t)
                    yp[t] = static_cast<S>((xp[2 * t] + xp[2 * t + 1]) * S(0.5));
            }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        const std::size_t B = dy.nb, C = dy.nc, To = dy.nt;
        Tensor3<S> dx(B, C, in_t_);
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t ci = 0; ci < C; ++ci) {
                const S* dyp = dy.ch(bi, ci);
                S* dxp = dx.ch(bi, ci);
                for (std::size_t t = 0; t < To; ++t) {
                    const S half = dyp[t] * S(0.5);
                    dxp[2 * t] += half;
                    dxp[2 * t + 1] += half;
                }
            }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Adaptive average pool to length 1: [B,C,T] -> [B,C] (mean over time).
template <typename S>
struct AdaptiveAvgPool1 {
    std::size_t in_t_ = 0;

    Tensor2<S> forward(const Tensor3<S>& x) {
        in_t_ = x.nt;
        Tensor2<S> y(x.nb, x.nc);
        for (std::size_t bi = 0; bi < x.nb; ++bi)
            for (std::size_t ci = 0; ci < x.nc; ++ci) {
                const S* xp = x.ch(bi, ci);
                double acc = 0.0;
                for (std::size_t t = 0; t < x.nt; ++t) acc += xp[t];
                y.at(bi, ci) = static_cast<S>(acc / static_cast<double>(x.nt));
            }
        return y;
    }

    Tensor3<S> backward(const Tensor2<S>& dy) {
        Tensor3<S> dx(dy.nr, dy.nc, in_t_);
        const S scale = static_cast<S>(1.0 / static_cast<double>(in_t_));
        for (std::size_t bi = 0; bi < dy.nr; ++bi)
            for (std::size_t ci = 0; ci < dy.nc; ++ci) {
                const S g = dy.at(bi, ci) * scale;
                S* dxp = dx.ch(bi, ci);
                for (std::size_t t = 0; t < in_t_; ++t) dxp[t] = g;
            }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Inverted dropout on Tensor3 activations; identity in eval mode.
template <typename S>
struct Dropout {
    double p = 0.0;
    std::vector<S> mask_;
    bool active_ = false;

    Dropout() = default;
    explicit Dropout(double pp) : p(pp) {}

    Tensor3<S> forward(const Tensor3<S>& x, bool train, SplitMix64& rng) {
        if (!train || p <= 0.0) {
            active_ = false;
            return x;
        }
        active_ = true;
        const S scale = static_cast<S>(1.0 / (1.0 - p));
        mask_.resize(x.v.size());
        Tensor3<S> y = x;
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            mask_[i] = rng.next_double() >= p ? scale : S(0);
            y.v[i] *= mask_[i];
        }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        if (!active_) return dy;
        Tensor3<S> dx = dy;
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= mask_[i];
        return dx;
    }
};

// Same, on [B,F] feature matrices (the classifier heads).
template <typename S>
struct Dropout2 {
    double p = 0.0;
    std::vector<S> mask_;
    bool active_ = false;

    Dropout2() = default;
    explicit Dropout2(double pp) : p(pp) {}

    Tensor2<S> forward(const Tensor2<S>& x, bool train, SplitMix64& rng) {
        if (!train || p <= 0.0) {
            active_ = false;
            return x;
        }
        active_ = true;
        const S scale = static_cast<S>(1.0 / (1.0 - p));
        mask_.resize(x.v.size());
        Tensor2<S> y = x;
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            mask_[i] = rng.next_double() >= p ? scale : S(0);
            y.v[i] *= mask_[i];
        }
        return y;
    }

    Tensor2<S> backward(const Tensor2<S>& dy) {
        if (!active_) return dy;
        Tensor2<S> dx = dy;
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= mask_[i];
        return dx;
    }
};

// ---------------------------------------------------------------------------
template <typename S>
struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<S> w, b, gw, gb; // w: [out, in]
    Tensor2<S> x_;

    Linear() = default;
    Linear(std::size_t i, std::size_t o)
        : in(i), out(o), w(o * i, S(0)), b(o, S(0)), gw(o * i, S(0)), gb(o, S(0)) {}

    void init(SplitMix64& rng) {
        detail::init_uniform(w, in, rng);
        for (S& x : b) x = S(0);
    }

    Tensor2<S> forward(const Tensor2<S>& x) {
        x_ = x;
        Tensor2<S> y(x.nr, out);
        for (std::size_t r = 0; r < x.nr; ++r) {
            const S* xp = x.row(r);
            S* yp = y.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const S* wp = &w[o * in];
                S acc = b[o];
                for (std::size_t i = 0; i < in; ++i) acc += wp[i] * xp[i];
                yp[o] = acc;
            }
        }
        return y;
    }

    Tensor2<S> backward(const Tensor2<S>& dy) {
        Tensor2<S> dx(x_.nr, in);
        for (std::size_t r = 0; r < x_.nr; ++r) {
            const S* xp = x_.row(r);
            const S* dyp = dy.row(r);
            S* dxp = dx.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const S g = dyp[o];
                gb[o] += g;
                S* gwp = &gw[o * in];
                const S* wp = &w[o * in];
                for (std::size_t i = 0; i < in; ++i) {
                    gwp[i] += g * xp[i];
                    dxp[i] += g * wp[i];
                }
            }
        }
        return dx;
    }

    void visit(const std::string& prefix, const ParamFn<S>& fn) {
        fn(prefix + ".w", w, gw, {out, in});
        fn(prefix + ".b", b, gb, {out});
    }
};

// ---------------------------------------------------------------------------
// [B,C,T] <-> [B,T,C] transpose feeding the recurrent stage.
template <typename S>
inline Tensor3<S> permute_ct(const Tensor3<S>& x) {
    Tensor3<S> y(x.nb, x.nt, x.nc);
    for (std::size_t bi = 0; bi < x.nb; ++bi)
        for (std::size_t ci = 0; ci < x.nc; ++ci) {
            const S* xp = x.ch(bi, ci);
            for (std::size_t t = 0; t < x.nt; ++t) y.at(bi, t, ci) = xp[t];
        }
    return y;
}

// ---------------------------------------------------------------------------
// Single-layer LSTM over [B, T, in] -> hidden states [B, T, hid].
// One bias vector b[4H]; gate order i, f, g, o. Forget-gate bias inits to 1.
template <typename S>
struct Lstm {
    std::size_t in = 0, hid = 0;
    std::vector<S> wx, wh, b, gwx, gwh, gb; // wx: [4H, in], wh: [4H, hid]
    // per-step caches for BPTT
    Tensor3<S> x_;
    std::vector<Tensor2<S>> gates_, c_, tanhc_, h_;

    Lstm() = default;
    Lstm(std::size_t i, std::size_t h)
        : in(i), hid(h), wx(4 * h * i, S(0)), wh(4 * h * h, S(0)), b(4 * h, S(0)),
          gwx(wx.size(), S(0)), gwh(wh.size(), S(0)), gb(b.size(), S(0)) {}

    void init(SplitMix64& rng) {
        detail::init_uniform(wx, in, rng);
        detail::init_uniform(wh, hid, rng);
        for (S& x : b) x = S(0);
        for (std::size_t j = hid; j < 2 * hid; ++j) b[j] = S(1);
    }

    static S sigmoid(S x) { return static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); }

    Tensor3<S> forward(const Tensor3<S>& x) {
        if (x.nt != in)
            fail(Errc::InvariantViolation, "lstm expects " + std::to_string(in) +
                                               " features, got " + std::to_string(x.nt));
        x_ = x;
        const std::size_t B = x.nb, T = x.nc; // Tensor3 used as [B, T, in]
        gates_.assign(T, Tensor2<S>(B, 4 * hid));
        c_.assign(T, Tensor2<S>(B, hid));
        tanhc_.assign(T, Tensor2<S>(B, hid));
        h_.assign(T, Tensor2<S>(B, hid));
        Tensor3<S> out(B, T, hid);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t bi = 0; bi < B; ++bi) {
                const S* xt = x.ch(bi, t);
                const S* hprev = t > 0 ? h_[t - 1].row(bi) : nullptr;
                S* g = gates_[t].row(bi);
                for (std::size_t r = 0; r < 4 * hid; ++r) {
                    const S* wxr = &wx[r * in];
                    S acc = b[r];
                    for (std::size_t i = 0; i < in; ++i) acc += wxr[i] * xt[i];
                    if (hprev) {
                        const S* whr = &wh[r * hid];
                        for (std::size_t j = 0; j < hid; ++j) acc += whr[j] * hprev[j];
                    }
                    g[r] = acc;
                }
                const S* cprev = t > 0 ? c_[t - 1].row(bi) : nullptr;
                S* ct = c_[t].row(bi);
                S* tct = tanhc_[t].row(bi);
                S* ht = h_[t].row(bi);
                S* op = out.ch(bi, t);
                for (std::size_t j = 0; j < hid; ++j) {
                    const S ig = sigmoid(g[j]);
                    const S fg = sigmoid(g[hid + j]);
                    const S gg = static_cast<S>(std::tanh(static_cast<double>(g[2 * hid + j])));
                    const S og = sigmoid(g[3 * hid + j]);
                    g[j] = ig;
                    g[hid + j] = fg;
                    g[2 * hid + j] = gg;
                    g[3 * hid + j] = og;
                    const S c = fg * (cprev ? cprev[j] : S(0)) + ig * gg;
                    ct[j] = c;
                    const S tc = static_cast<S>(std::tanh(static_cast<double>(c)));
                    tct[j] = tc;
                    ht[j] = og * tc;
                    op[j] = ht[j];
                }
            }
        }
        return out;
    }

    Tensor3<S> backward(const Tensor3<S>& dout) {
        const std::size_t B = x_.nb, T = x_.nc;
        Tensor3<S> dx(B, T, in);
        Tensor2<S> dh_next(B, hid), dc_next(B, hid);
        std::vector<S> dga(4 * hid);
        for (std::size_t t = T; t-- > 0;) {
            for (std::size_t bi = 0; bi < B; ++bi) {
                const S* g = gates_[t].row(bi);
                const S* tct = tanhc_[t].row(bi);
                const S* cprev = t > 0 ? c_[t - 1].row(bi) : nullptr;
                const S* dop = dout.ch(bi, t);
                S* dhn = dh_next.row(bi);
                S* dcn = dc_next.row(bi);
                for (std::size_t j = 0; j < hid; ++j) {
                    const S dh = dop[j] + dhn[j];
                    const S ig = g[j], fg = g[hid + j], gg = g[2 * hid + j], og = g[3 * hid + j];
                    const S dog = dh * tct[j];
                    const S dc = dh * og * (S(1) - tct[j] * tct[j]) + dcn[j];
                    const S dig = dc * gg;
                    const S dgg = dc * ig;
                    const S dfg = dc * (cprev ? cprev[j] : S(0));
                    dcn[j] = dc * fg;
                    dga[j] = dig * ig * (S(1) - ig);
                    dga[hid + j] = dfg * fg * (S(1) - fg);
                    dga[2 * hid + j] = dgg * (S(1) - gg * gg);
                    dga[3 * hid + j] = dog * og * (S(1) - og);
                }
                const S* xt = x_.ch(bi, t);
                const S* hprev = t > 0 ? h_[t - 1].row(bi) : nullptr;
                S* dxt = dx.ch(bi, t);
                for (std::size_t j = 0; j < hid; ++j) dhn[j] = S(0);
                for (std::size_t r = 0; r < 4 * hid; ++r) {
                    const S gr = dga[r];
                    gb[r] += gr;
                    S* gwxr = &gwx[r * in];
                    const S* wxr = &wx[r * in];
                    for (std::size_t i = 0; i < in; ++i) {
                        gwxr[i] += gr * xt[i];
                        dxt[i] += gr * wxr[i];
                    }
                    if (hprev) {
                        S* gwhr = &gwh[r * hid];
                        for (std::size_t j = 0; j < hid; ++j) gwhr[j] += gr * hprev[j];
                    }
                    const S* whr = &wh[r * hid];
                    for (std::size_t j = 0; j < hid; ++j) dhn[j] += gr * whr[j];
                }
            }
        }
        return dx;
    }

    void visit(const std::string& prefix, const ParamFn<S>& fn) {
        fn(prefix + ".wx", wx, gwx, {4 * hid, in});
        fn(prefix + ".wh", wh, gwh, {4 * hid, hid});
        fn(prefix + ".b", b, gb, {4 * hid});
    }
};

// ---------------------------------------------------------------------------
// Mean over the time axis of [B, T, H] -> [B, H] (temporal mean pooling).
template <typename S>
struct MeanOverTime {
    std::size_t t_ = 0;

    Tensor2<S> forward(const Tensor3<S>& x) {
        t_ = x.nc; // [B, T, H]
        Tensor2<S> y(x.nb, x.nt);
        for (std::size_t bi = 0; bi < x.nb; ++bi) {
            S* yp = y.row(bi);
            for (std::size_t t = 0; t < x.nc; ++t) {
                const S* xp = x.ch(bi, t);
                for (std::size_t j = 0; j < x.nt; ++j) yp[j] += xp[j];
            }
            const S scale = static_cast<S>(1.0 / static_cast<double>(x.nc));
            for (std::size_t j = 0; j < x.nt; ++j) yp[j] *= scale;
        }
        return y;
    }

    Tensor3<S> backward(const Tensor2<S>& dy) {
        Tensor3<S> dx(dy.nr, t_, dy.nc);
        const S scale = static_cast<S>(1.0 / static_cast<double>(t_));
        for (std::size_t bi = 0; bi < dy.nr; ++bi) {
            const S* dyp = dy.row(bi);
            for (std::size_t t = 0; t < t_; ++t) {
                S* dxp = dx.ch(bi, t);
                for (std::size_t j = 0; j < dy.nc; ++j) dxp[j] = dyp[j] * scale;
            }
        }
        return dx;
    }
};

} // namespace ecgfreq::nn
