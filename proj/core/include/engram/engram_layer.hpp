#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "engram/errors.hpp"
#include "engram/rng.hpp"
#include "engram/tensor.hpp"

namespace engram {

// The fusion stage. Per position t:
//
//   k_t = W_K e_t,  v_t = W_V e_t
//   dot_t = RMSNorm(h_t)^T RMSNorm(k_t) / sqrt(d_model)
//   alpha_t = sigmoid(dot_t)
//   u_t = depthwise causal conv over the v sequence   (optional)
//   w_t = W_O u_t                                      (optional, zero-init)
//   out_t = alpha_t * w_t
//
// out is added to the residual stream by the caller. Gradients are exact
// analytic derivatives of this composition, including both RMSNorm branches.

template <typename T>
T sigmoid(T x) {
    if (x >= T{0}) {
        T z = std::exp(-x);
        return T{1} / (T{1} + z);
    }
    T z = std::exp(x);
    return z / (T{1} + z);
}

// out_i = gain_i * x_i / sqrt(mean(x^2) + eps)
template <typename T>
void rmsnorm(std::span<const T> x, std::span<const T> gain, T eps, std::span<T> out,
             T* rms_out = nullptr) {
    T ms{};
    for (T v : x) ms += v * v;
    ms /= static_cast<T>(x.size());
    T r = std::sqrt(ms + eps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * x[i] / r;
    if (rms_out != nullptr) *rms_out = r;
}

// Given q = dL/d(rmsnorm(x)), accumulate dL/dx into dx and dL/dgain into dgain.
template <typename T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, T r,
                      std::span<const T> q, std::span<T> dx, std::span<T> dgain) {
    const std::size_t d = x.size();
    T qgx{};
    for (std::size_t i = 0; i < d; ++i) qgx += q[i] * gain[i] * x[i];
    const T r3 = r * r * r;
    for (std::size_t i = 0; i < d; ++i) {
        dx[i] += q[i] * gain[i] / r - x[i] * qgx / (static_cast<T>(d) * r3);
        dgain[i] += q[i] * x[i] / r;
    }
}

template <typename T>
struct EngramLayerParams {
    int layer_index = 0;
    int d_model = 0;
    int d_mem = 0;
    int kernel_size = 3;
    bool use_conv = true;
    bool use_output_proj = true;
    T rms_eps = static_cast<T>(1e-6);

    Mat<T> w_k;                  // [d_model x d_mem]
    Mat<T> w_v;                  // [d_model x d_mem]
    std::vector<T> rms_h_gain;   // [d_model]
    std::vector<T> rms_k_gain;   // [d_model]
    Mat<T> conv_kernel;          // [d_model x kernel_size], tap ks-1 = current position
    Mat<T> w_o;                  // [d_model x d_model]

    void allocate() {
        if (rms_eps <= T{0}) throw UsageError("engram layer: rms_eps must be > 0");
        w_k = Mat<T>(d_model, d_mem);
        w_v = Mat<T>(d_model, d_mem);
        rms_h_gain.assign(d_model, T{1});
        rms_k_gain.assign(d_model, T{1});
        if (use_conv) conv_kernel = Mat<T>(d_model, kernel_size);
        if (use_output_proj) w_o = Mat<T>(d_model, d_model);  // stays zero
    }

    // W_K/W_V ~ N(0, 0.02^2); conv starts as pass-through (current tap = 1);
    // W_O starts at zero so the layer begins as a no-op on the residual.
    void init(std::uint64_t seed) {
        allocate();
        auto fill = [&](Mat<T>& m, const char* name) {
            Rng rng(mix_seed(seed, fnv1a64(name)));
            for (T& v : m.data) v = static_cast<T>(rng.next_gaussian() * 0.02);
        };
        fill(w_k, "w_k");
        fill(w_v, "w_v");
        if (use_conv)
            for (int c = 0; c < d_model; ++c) conv_kernel(c, kernel_size - 1) = T{1};
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn("w_k", w_k);
        fn("w_v", w_v);
        fn("rms_h_gain", rms_h_gain);
        fn("rms_k_gain", rms_k_gain);
        if (use_conv) fn("conv_kernel", conv_kernel);
        if (use_output_proj) fn("w_o", w_o);
    }
};

// Everything the backward pass needs, cached by forward.
template <typename T>
struct EngramLayerCache {
    Mat<T> h;      // [P x d]  input hidden states
    Mat<T> e;      // [P x m]  retrieved memory
    Mat<T> k, v;   // [P x d]
    Mat<T> h_hat, k_hat;
    std::vector<T> r_h, r_k;
    std::vector<T> dot, alpha;
    Mat<T> u;      // post-conv
    Mat<T> w;      // post-W_O
    bool valid = false;
};

template <typename T>
struct EngramLayerGrads {
    Mat<T> w_k, w_v;
    std::vector<T> rms_h_gain, rms_k_gain;
    Mat<T> conv_kernel;
    Mat<T> w_o;

    void allocate_like(const EngramLayerParams<T>& p) {
        w_k = Mat<T>(p.w_k.rows, p.w_k.cols);
        w_v = Mat<T>(p.w_v.rows, p.w_v.cols);
        rms_h_gain.assign(p.rms_h_gain.size(), T{});
        rms_k_gain.assign(p.rms_k_gain.size(), T{});
        if (p.use_conv) conv_kernel = Mat<T>(p.conv_kernel.rows, p.conv_kernel.cols);
        if (p.use_output_proj) w_o = Mat<T>(p.w_o.rows, p.w_o.cols);
    }
};

// h: [P x d_model], e: [P x d_mem]. Returns injected output [P x d_model] and
// fills the cache; alphas are in cache.alpha.
template <typename T>
Mat<T> engram_forward(const EngramLayerParams<T>& p, const Mat<T>& h, const Mat<T>& e,
                      EngramLayerCache<T>& cache) {
    if (static_cast<int>(h.cols) != p.d_model || static_cast<int>(e.cols) != p.d_mem ||
        h.rows != e.rows)
        throw UsageError("engram layer: dimension mismatch");
    const std::size_t P = h.rows;
    const std::size_t d = p.d_model;

    cache.h = h;
    cache.e = e;
    cache.k = Mat<T>(P, d);
    cache.v = Mat<T>(P, d);
    cache.h_hat = Mat<T>(P, d);
    cache.k_hat = Mat<T>(P, d);
    cache.r_h.assign(P, T{});
    cache.r_k.assign(P, T{});
    cache.dot.assign(P, T{});
    cache.alpha.assign(P, T{});

    const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(d));
    for (std::size_t t = 0; t < P; ++t) {
        matvec(p.w_k, e.row(t), cache.k.row(t));
        matvec(p.w_v, e.row(t), cache.v.row(t));
        rmsnorm<T>(h.row(t), p.rms_h_gain, p.rms_eps, cache.h_hat.row(t), &cache.r_h[t]);
        rmsnorm<T>(cache.k.row(t), p.rms_k_gain, p.rms_eps, cache.k_hat.row(t),
                   &cache.r_k[t]);
        cache.dot[t] = dot<T>(cache.h_hat.row(t), cache.k_hat.row(t)) * inv_sqrt_d;
        cache.alpha[t] = sigmoid(cache.dot[t]);
    }

    // Depthwise causal conv over the v sequence: tap j reads v at offset
    // t - (ks-1) + j, so tap ks-1 is the current position.
    if (p.use_conv) {
        cache.u = Mat<T>(P, d);
        const int ks = p.kernel_size;
        for (std::size_t t = 0; t < P; ++t) {
            for (int j = 0; j < ks; ++j) {
                std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) - (ks - 1) + j;
                if (s < 0) continue;
                auto vs = cache.v.row(static_cast<std::size_t>(s));
                auto ut = cache.u.row(t);
                for (std::size_t c = 0; c < d; ++c)
                    ut[c] += p.conv_kernel(c, j) * vs[c];
            }
        }
    } else {
        cache.u = cache.v;
    }

    if (p.use_output_proj) {
        cache.w = Mat<T>(P, d);
        for (std::size_t t = 0; t < P; ++t) matvec(p.w_o, cache.u.row(t), cache.w.row(t));
    } else {
        cache.w = cache.u;
    }

    Mat<T> out(P, d);
    for (std::size_t t = 0; t < P; ++t) {
        auto wt = cache.w.row(t);
        auto ot = out.row(t);
        for (std::size_t c = 0; c < d; ++c) ot[c] = cache.alpha[t] * wt[c];
    }
    cache.valid = true;
    return out;
}

// d_out: [P x d_model] upstream gradient of the injected output. Accumulates
// into dh, de (both pre-sized) and the parameter grads.
template <typename T>
void engram_backward(const EngramLayerParams<T>& p, const EngramLayerCache<T>& cache,
                     const Mat<T>& d_out, Mat<T>& dh, Mat<T>& de,
                     EngramLayerGrads<T>& grads) {
    if (!cache.valid) throw StateError("engram layer: backward without forward cache");
    const std::size_t P = cache.h.rows;
    const std::size_t d = p.d_model;
    const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(d));

    Mat<T> dw(P, d);   // dL/dw_t
    std::vector<T> dalpha(P, T{});
    for (std::size_t t = 0; t < P; ++t) {
        auto gt = d_out.row(t);
        auto wt = cache.w.row(t);
        auto dwt = dw.row(t);
        T da{};
        for (std::size_t c = 0; c < d; ++c) {
            da += gt[c] * wt[c];
            dwt[c] = cache.alpha[t] * gt[c];
        }
        dalpha[t] = da;
    }

    // w = W_O u
    Mat<T> du(P, d);
    if (p.use_output_proj) {
        for (std::size_t t = 0; t < P; ++t) {
            add_outer(grads.w_o, dw.row(t), cache.u.row(t));
            matvec_transposed_add(p.w_o, dw.row(t), du.row(t));
        }
    } else {
        du = dw;
    }

    // u = conv(v)
    Mat<T> dv(P, d);
    if (p.use_conv) {
        const int ks = p.kernel_size;
        for (std::size_t t = 0; t < P; ++t) {
            auto dut = du.row(t);
            for (int j = 0; j < ks; ++j) {
                std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) - (ks - 1) + j;
                if (s < 0) continue;
                auto vs = cache.v.row(static_cast<std::size_t>(s));
                auto dvs = dv.row(static_cast<std::size_t>(s));
                for (std::size_t c = 0; c < d; ++c) {
                    grads.conv_kernel(c, j) += dut[c] * vs[c];
                    dvs[c] += dut[c] * p.conv_kernel(c, j);
                }
            }
        }
    } else {
        dv = du;
    }

    std::vector<T> d_hhat(d), d_khat(d), dk(d);
    for (std::size_t t = 0; t < P; ++t) {
        const T ddot = dalpha[t] * cache.alpha[t] * (T{1} - cache.alpha[t]);
        auto hh = cache.h_hat.row(t);
        auto kh = cache.k_hat.row(t);
        for (std::size_t c = 0; c < d; ++c) {
            d_hhat[c] = ddot * inv_sqrt_d * kh[c];
            d_khat[c] = ddot * inv_sqrt_d * hh[c];
        }
        rmsnorm_backward<T>(cache.h.row(t), p.rms_h_gain, cache.r_h[t], d_hhat,
                            dh.row(t), grads.rms_h_gain);
        std::fill(dk.begin(), dk.end(), T{});
        rmsnorm_backward<T>(cache.k.row(t), p.rms_k_gain, cache.r_k[t], d_khat,
                            std::span<T>(dk), grads.rms_k_gain);

        add_outer(grads.w_k, std::span<const T>(dk), cache.e.row(t));
        matvec_transposed_add(p.w_k, std::span<const T>(dk), de.row(t));
        add_outer(grads.w_v, dv.row(t), cache.e.row(t));
        matvec_transposed_add(p.w_v, dv.row(t), de.row(t));
    }
}

}  // namespace engram
