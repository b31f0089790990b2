#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "engram/engram_layer.hpp"
#include "engram/errors.hpp"
#include "engram/memory.hpp"
#include "engram/rng.hpp"
#include "engram/tensor.hpp"

namespace engram {

// Decoder-only backbone: learned token + position embeddings, pre-norm
// LayerNorm blocks (causal multi-head attention, 4x GELU MLP), final
// LayerNorm, output head tied to the token embedding. Memory fusion layers
// are injected into the residual stream at the entry of their designated
// blocks. RMSNorm appears only inside the gate.
struct BackboneConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int seq_len = 0;
    std::vector<int> engram_layers{2, 4, 6};
    bool conv_enabled = true;
    int conv_kernel_size = 3;
    bool output_proj_enabled = true;
    double layernorm_eps = 1e-5;
    double rms_eps = 1e-6;
    std::uint64_t init_seed = 0;

    void validate(int max_ngram_order) const {
        if (vocab_size < 2) throw UsageError("backbone: vocab_size must be >= 2");
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || seq_len < 1)
            throw UsageError("backbone: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw UsageError("backbone: d_model must be divisible by n_heads");
        if (seq_len < max_ngram_order)
            throw UsageError("backbone: seq_len must be >= max n-gram order");
        for (int idx : engram_layers)
            if (idx < 0 || idx >= n_layers)
                throw UsageError("backbone: engram layer index out of range");
    }
};

template <typename T>
struct Block {
    std::vector<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Mat<T> w_qkv;       // [3d x d]
    std::vector<T> b_qkv;
    Mat<T> w_attn_out;  // [d x d]
    std::vector<T> b_attn_out;
    Mat<T> w_fc;        // [4d x d]
    std::vector<T> b_fc;
    Mat<T> w_mlp_out;   // [d x 4d]
    std::vector<T> b_mlp_out;

    void allocate(int d) {
        ln1_g.assign(d, T{1});
        ln1_b.assign(d, T{});
        ln2_g.assign(d, T{1});
        ln2_b.assign(d, T{});
        w_qkv = Mat<T>(3 * d, d);
        b_qkv.assign(3 * d, T{});
        w_attn_out = Mat<T>(d, d);
        b_attn_out.assign(d, T{});
        w_fc = Mat<T>(4 * d, d);
        b_fc.assign(4 * d, T{});
        w_mlp_out = Mat<T>(d, 4 * d);
        b_mlp_out.assign(d, T{});
    }

    void zero_for_grads(int d) {
        allocate(d);
        std::fill(ln1_g.begin(), ln1_g.end(), T{});
        std::fill(ln2_g.begin(), ln2_g.end(), T{});
    }
};

// Named view of one parameter (or gradient) tensor. `decay` marks tensors
// subject to weight decay: matrices yes, gains/biases no.
template <typename T>
struct TensorRef {
    std::string name;
    std::span<T> values;
    bool decay = false;
};

template <typename T>
struct Backbone {
    BackboneConfig cfg;
    Mat<T> tok_emb;  // [V x d], tied output head
    Mat<T> pos_emb;  // [seq_len x d]
    std::vector<Block<T>> blocks;
    std::vector<T> lnf_g, lnf_b;
    std::vector<EngramLayerParams<T>> engram;  // aligned with cfg.engram_layers

    int head_dim() const { return cfg.d_model / cfg.n_heads; }

    // Position of `layer` in cfg.engram_layers, or -1.
    int engram_slot(int layer) const {
        for (std::size_t i = 0; i < cfg.engram_layers.size(); ++i)
            if (cfg.engram_layers[i] == layer) return static_cast<int>(i);
        return -1;
    }

    void init(int d_mem) {
        const int d = cfg.d_model;
        tok_emb = Mat<T>(cfg.vocab_size, d);
        pos_emb = Mat<T>(cfg.seq_len, d);
        blocks.assign(cfg.n_layers, Block<T>{});
        for (auto& block : blocks) block.allocate(d);
        lnf_g.assign(d, T{1});
        lnf_b.assign(d, T{});

        engram.clear();
        for (int layer : cfg.engram_layers) {
            EngramLayerParams<T> p;
            p.layer_index = layer;
            p.d_model = d;
            p.d_mem = d_mem;
            p.kernel_size = cfg.conv_kernel_size;
            p.use_conv = cfg.conv_enabled;
            p.use_output_proj = cfg.output_proj_enabled;
            p.rms_eps = static_cast<T>(cfg.rms_eps);
            p.init(mix_seed(cfg.init_seed, fnv1a64("engram"), layer));
            engram.push_back(std::move(p));
        }

        // Per-tensor seed streams keyed by name, so adding or removing fusion
        // layers never perturbs the backbone draw.
        auto fill = [&](Mat<T>& m, const std::string& name) {
            Rng rng(mix_seed(cfg.init_seed, fnv1a64(name)));
            for (T& v : m.data) v = static_cast<T>(rng.next_gaussian() * 0.02);
        };
        fill(tok_emb, "tok_emb");
        fill(pos_emb, "pos_emb");
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string prefix = "block" + std::to_string(l) + ".";
            fill(blocks[l].w_qkv, prefix + "w_qkv");
            fill(blocks[l].w_attn_out, prefix + "w_attn_out");
            fill(blocks[l].w_fc, prefix + "w_fc");
            fill(blocks[l].w_mlp_out, prefix + "w_mlp_out");
        }
    }
};

// Gradient holder with the same tensor layout as Backbone.
template <typename T>
struct BackboneGrads {
    Mat<T> tok_emb, pos_emb;
    std::vector<Block<T>> blocks;
    std::vector<T> lnf_g, lnf_b;
    std::vector<EngramLayerGrads<T>> engram;

    void allocate_like(const Backbone<T>& model) {
        tok_emb = Mat<T>(model.tok_emb.rows, model.tok_emb.cols);
        pos_emb = Mat<T>(model.pos_emb.rows, model.pos_emb.cols);
        blocks.assign(model.blocks.size(), Block<T>{});
        for (auto& block : blocks) block.zero_for_grads(model.cfg.d_model);
        lnf_g.assign(model.lnf_g.size(), T{});
        lnf_b.assign(model.lnf_b.size(), T{});
        engram.resize(model.engram.size());
        for (std::size_t i = 0; i < model.engram.size(); ++i)
            engram[i].allocate_like(model.engram[i]);
    }

    void zero() {
        auto z = [](auto& container) {
            std::fill(container.begin(), container.end(), T{});
        };
        z(tok_emb.data);
        z(pos_emb.data);
        for (auto& block : blocks) {
            z(block.ln1_g); z(block.ln1_b); z(block.ln2_g); z(block.ln2_b);
            z(block.w_qkv.data); z(block.b_qkv);
            z(block.w_attn_out.data); z(block.b_attn_out);
            z(block.w_fc.data); z(block.b_fc);
            z(block.w_mlp_out.data); z(block.b_mlp_out);
        }
        z(lnf_g);
        z(lnf_b);
        for (auto& g : engram) {
            z(g.w_k.data); z(g.w_v.data);
            z(g.rms_h_gain); z(g.rms_k_gain);
            z(g.conv_kernel.data); z(g.w_o.data);
        }
    }
};

namespace detail {

template <typename T, typename Out>
void collect_block(const std::string& prefix, Block<T>& b, Out& out) {
    auto vec = [&](const char* n, std::vector<T>& v) {
        out.push_back({prefix + n, std::span<T>(v), false});
    };
    auto mat = [&](const char* n, Mat<T>& m) {
        out.push_back({prefix + n, std::span<T>(m.data), true});
    };
    vec("ln1_g", b.ln1_g);
    vec("ln1_b", b.ln1_b);
    mat("w_qkv", b.w_qkv);
    vec("b_qkv", b.b_qkv);
    mat("w_attn_out", b.w_attn_out);
    vec("b_attn_out", b.b_attn_out);
    vec("ln2_g", b.ln2_g);
    vec("ln2_b", b.ln2_b);
    mat("w_fc", b.w_fc);
    vec("b_fc", b.b_fc);
    mat("w_mlp_out", b.w_mlp_out);
    vec("b_mlp_out", b.b_mlp_out);
}

template <typename T, typename EngramT, typename Out>
void collect_engram(const std::string& prefix, EngramT& e, bool use_conv, bool use_wo,
                    Out& out) {
    out.push_back({prefix + "w_k", std::span<T>(e.w_k.data), true});
    out.push_back({prefix + "w_v", std::span<T>(e.w_v.data), true});
    out.push_back({prefix + "rms_h_gain", std::span<T>(e.rms_h_gain), false});
    out.push_back({prefix + "rms_k_gain", std::span<T>(e.rms_k_gain), false});
    if (use_conv) out.push_back({prefix + "conv_kernel", std::span<T>(e.conv_kernel.data), true});
    if (use_wo) out.push_back({prefix + "w_o", std::span<T>(e.w_o.data), true});
}

}  // namespace detail

// Canonical tensor enumeration. The optimizer, checkpoints and the gradient
// checker all pair model and gradient tensors positionally through this.
template <typename T>
std::vector<TensorRef<T>> collect_tensors(Backbone<T>& model) {
    std::vector<TensorRef<T>> out;
    out.push_back({"tok_emb", std::span<T>(model.tok_emb.data), true});
    out.push_back({"pos_emb", std::span<T>(model.pos_emb.data), true});
    for (std::size_t l = 0; l < model.blocks.size(); ++l)
        detail::collect_block("block" + std::to_string(l) + ".", model.blocks[l], out);
    out.push_back({"lnf_g", std::span<T>(model.lnf_g), false});
    out.push_back({"lnf_b", std::span<T>(model.lnf_b), false});
    for (std::size_t i = 0; i < model.engram.size(); ++i)
        detail::collect_engram<T>(
            "engram" + std::to_string(model.cfg.engram_layers[i]) + ".", model.engram[i],
            model.cfg.conv_enabled, model.cfg.output_proj_enabled, out);
    return out;
}

template <typename T>
std::vector<TensorRef<T>> collect_tensors(const Backbone<T>& model_for_layout,
                                          BackboneGrads<T>& grads) {
    std::vector<TensorRef<T>> out;
    out.push_back({"tok_emb", std::span<T>(grads.tok_emb.data), true});
    out.push_back({"pos_emb", std::span<T>(grads.pos_emb.data), true});
    for (std::size_t l = 0; l < grads.blocks.size(); ++l)
        detail::collect_block("block" + std::to_string(l) + ".", grads.blocks[l], out);
    out.push_back({"lnf_g", std::span<T>(grads.lnf_g), false});
    out.push_back({"lnf_b", std::span<T>(grads.lnf_b), false});
    for (std::size_t i = 0; i < grads.engram.size(); ++i)
        detail::collect_engram<T>(
            "engram" + std::to_string(model_for_layout.cfg.engram_layers[i]) + ".",
            grads.engram[i], model_for_layout.cfg.conv_enabled,
            model_for_layout.cfg.output_proj_enabled, out);
    return out;
}

// ---------------------------------------------------------------------------
// forward / backward (single sequence)

template <typename T>
void layernorm(std::span<const T> x, std::span<const T> g, std::span<const T> b, T eps,
               std::span<T> out, T& mu_out, T& rstd_out) {
    const std::size_t d = x.size();
    T mu{};
    for (T v : x) mu += v;
    mu /= static_cast<T>(d);
    T var{};
    for (T v : x) var += (v - mu) * (v - mu);
    var /= static_cast<T>(d);
    T rstd = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) out[i] = g[i] * (x[i] - mu) * rstd + b[i];
    mu_out = mu;
    rstd_out = rstd;
}

template <typename T>
void layernorm_backward(std::span<const T> x, std::span<const T> g, T mu, T rstd,
                        std::span<const T> q, std::span<T> dx, std::span<T> dg,
                        std::span<T> db) {
    const std::size_t d = x.size();
    T mean_qg{}, mean_qg_xhat{};
    for (std::size_t i = 0; i < d; ++i) {
        T xhat = (x[i] - mu) * rstd;
        mean_qg += q[i] * g[i];
        mean_qg_xhat += q[i] * g[i] * xhat;
    }
    mean_qg /= static_cast<T>(d);
    mean_qg_xhat /= static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) {
        T xhat = (x[i] - mu) * rstd;
        dx[i] += rstd * (q[i] * g[i] - mean_qg - xhat * mean_qg_xhat);
        dg[i] += q[i] * xhat;
        db[i] += q[i];
    }
}

// GPT-2 tanh-approximation GELU.
template <typename T>
T gelu(T x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    T inner = c * (x + static_cast<T>(0.044715) * x * x * x);
    return static_cast<T>(0.5) * x * (T{1} + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
    const T c = static_cast<T>(0.7978845608028654);
    T x3 = x * x * x;
    T inner = c * (x + static_cast<T>(0.044715) * x3);
    T th = std::tanh(inner);
    T sech2 = T{1} - th * th;
    return static_cast<T>(0.5) * (T{1} + th) +
           static_cast<T>(0.5) * x * sech2 * c *
               (T{1} + static_cast<T>(0.134145) * x * x);
}

template <typename T>
struct BlockCache {
    Mat<T> x_in;        // residual stream at block entry (post fusion injection)
    Mat<T> ln1_out;
    std::vector<T> ln1_mu, ln1_rstd;
    Mat<T> qkv;         // [P x 3d]
    std::vector<Mat<T>> att;  // per head, [P x P] row-causal softmax
    Mat<T> att_concat;  // [P x d]
    Mat<T> x_mid;       // after attention residual
    Mat<T> ln2_out;
    std::vector<T> ln2_mu, ln2_rstd;
    Mat<T> fc_pre;      // [P x 4d]
    Mat<T> fc_act;      // [P x 4d]
};

template <typename T>
struct RowCache {
    std::vector<BlockCache<T>> blocks;
    std::vector<EngramLayerCache<T>> engram;  // aligned with cfg.engram_layers
    Mat<T> x_final;
    Mat<T> lnf_out;
    std::vector<T> lnf_mu, lnf_rstd;
    Mat<T> logits;  // [P x V]
};

// tokens: [P], memory: retrieved vectors [P x d_mem] (may be empty when the
// model has no fusion layers). Returns logits in cache.logits.
template <typename T>
void forward_row(const Backbone<T>& model, std::span<const std::uint32_t> tokens,
                 const Mat<T>& memory, RowCache<T>& cache) {
    const int d = model.cfg.d_model;
    const int n_heads = model.cfg.n_heads;
    const int dh = model.head_dim();
    const std::size_t P = tokens.size();
    if (P == 0 || P > static_cast<std::size_t>(model.cfg.seq_len))
        throw UsageError("forward: sequence length out of range");
    for (std::uint32_t tok : tokens)
        if (tok >= static_cast<std::uint32_t>(model.cfg.vocab_size))
            throw InputError("forward: token id out of vocab range");
    if (!model.engram.empty() && memory.rows != P)
        throw UsageError("forward: memory rows must match sequence length");

    const T eps = static_cast<T>(model.cfg.layernorm_eps);
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(dh));

    cache.blocks.assign(model.blocks.size(), BlockCache<T>{});
    cache.engram.assign(model.engram.size(), EngramLayerCache<T>{});

    Mat<T> x(P, d);
    for (std::size_t t = 0; t < P; ++t) {
        auto te = model.tok_emb.row(tokens[t]);
        auto pe = model.pos_emb.row(t);
        auto xt = x.row(t);
        for (int c = 0; c < d; ++c) xt[c] = te[c] + pe[c];
    }

    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        int slot = model.engram_slot(static_cast<int>(l));
        if (slot >= 0) {
            Mat<T> injected =
                engram_forward(model.engram[slot], x, memory, cache.engram[slot]);
            for (std::size_t t = 0; t < P; ++t)
                axpy(T{1}, injected.row(t), x.row(t));
        }

        BlockCache<T>& bc = cache.blocks[l];
        const Block<T>& block = model.blocks[l];
        bc.x_in = x;
        bc.ln1_out = Mat<T>(P, d);
        bc.ln1_mu.assign(P, T{});
        bc.ln1_rstd.assign(P, T{});
        bc.qkv = Mat<T>(P, 3 * d);
        for (std::size_t t = 0; t < P; ++t) {
            layernorm<T>(bc.x_in.row(t), block.ln1_g, block.ln1_b, eps, bc.ln1_out.row(t),
                         bc.ln1_mu[t], bc.ln1_rstd[t]);
            matvec(block.w_qkv, bc.ln1_out.row(t), bc.qkv.row(t));
            auto q = bc.qkv.row(t);
            for (int c = 0; c < 3 * d; ++c) q[c] += block.b_qkv[c];
        }

        bc.att.assign(n_heads, Mat<T>(P, P));
        bc.att_concat = Mat<T>(P, d);
        for (int h = 0; h < n_heads; ++h) {
            Mat<T>& att = bc.att[h];
            const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
            for (std::size_t t = 0; t < P; ++t) {
                auto qt = bc.qkv.row(t).subspan(qo, dh);
                // causal scores + softmax over s <= t
                T maxv = -std::numeric_limits<T>::infinity();
                for (std::size_t s = 0; s <= t; ++s) {
                    T sc = dot<T>(qt, bc.qkv.row(s).subspan(ko, dh)) * inv_sqrt_dh;
                    att(t, s) = sc;
                    maxv = std::max(maxv, sc);
                }
                T denom{};
                for (std::size_t s = 0; s <= t; ++s) {
                    T ex = std::exp(att(t, s) - maxv);
                    att(t, s) = ex;
                    denom += ex;
                }
                auto out = bc.att_concat.row(t).subspan(qo, dh);
                for (std::size_t s = 0; s <= t; ++s) {
                    att(t, s) /= denom;
                    axpy(att(t, s), bc.qkv.row(s).subspan(vo, dh), out);
                }
            }
        }

        bc.x_mid = Mat<T>(P, d);
        std::vector<T> proj(d);
        for (std::size_t t = 0; t < P; ++t) {
            matvec(block.w_attn_out, bc.att_concat.row(t), std::span<T>(proj));
            auto xm = bc.x_mid.row(t);
            auto xi = bc.x_in.row(t);
            for (int c = 0; c < d; ++c) xm[c] = xi[c] + proj[c] + block.b_attn_out[c];
        }

        bc.ln2_out = Mat<T>(P, d);
        bc.ln2_mu.assign(P, T{});
        bc.ln2_rstd.assign(P, T{});
        bc.fc_pre = Mat<T>(P, 4 * d);
        bc.fc_act = Mat<T>(P, 4 * d);
        for (std::size_t t = 0; t < P; ++t) {
            layernorm<T>(bc.x_mid.row(t), block.ln2_g, block.ln2_b, eps, bc.ln2_out.row(t),
                         bc.ln2_mu[t], bc.ln2_rstd[t]);
            matvec(block.w_fc, bc.ln2_out.row(t), bc.fc_pre.row(t));
            auto pre = bc.fc_pre.row(t);
            auto act = bc.fc_act.row(t);
            for (int c = 0; c < 4 * d; ++c) {
                pre[c] += block.b_fc[c];
                act[c] = gelu(pre[c]);
            }
        }

        x = Mat<T>(P, d);
        std::vector<T> mlp_out(d);
        for (std::size_t t = 0; t < P; ++t) {
            matvec(block.w_mlp_out, bc.fc_act.row(t), std::span<T>(mlp_out));
            auto xo = x.row(t);
            auto xm = bc.x_mid.row(t);
            for (int c = 0; c < d; ++c) xo[c] = xm[c] + mlp_out[c] + block.b_mlp_out[c];
        }
    }

    cache.x_final = x;
    cache.lnf_out = Mat<T>(P, d);
    cache.lnf_mu.assign(P, T{});
    cache.lnf_rstd.assign(P, T{});
    cache.logits = Mat<T>(P, model.cfg.vocab_size);
    for (std::size_t t = 0; t < P; ++t) {
        layernorm<T>(cache.x_final.row(t), model.lnf_g, model.lnf_b, eps,
                     cache.lnf_out.row(t), cache.lnf_mu[t], cache.lnf_rstd[t]);
        matvec(model.tok_emb, cache.lnf_out.row(t), cache.logits.row(t));
    }
}

// Mean-subtracted, numerically stable per-position cross entropy. Returns the
// loss for each position; logits are [P x V].
template <typename T>
std::vector<double> cross_entropy_per_position(const Mat<T>& logits,
                                               std::span<const std::uint32_t> targets) {
    std::vector<double> losses(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        auto row = logits.row(t);
        double maxv = -std::numeric_limits<double>::infinity();
        for (T v : row) maxv = std::max(maxv, static_cast<double>(v));
        double denom = 0.0;
        for (T v : row) denom += std::exp(static_cast<double>(v) - maxv);
        losses[t] =
            std::log(denom) - (static_cast<double>(row[targets[t]]) - maxv);
    }
    return losses;
}

// Backward through the whole row. `scale` multiplies the mean-CE gradient
// (use 1 / (B*P*accum_steps)). d_memory accumulates dL/de per position.
template <typename T>
void backward_row(const Backbone<T>& model, const RowCache<T>& cache,
                  std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> targets, T scale,
                  BackboneGrads<T>& grads, Mat<T>& d_memory) {
    const int d = model.cfg.d_model;
    const int n_heads = model.cfg.n_heads;
    const int dh = model.head_dim();
    const std::size_t P = tokens.size();
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(dh));

    // head + final LayerNorm
    Mat<T> dx(P, d);
    std::vector<T> dlogit(model.cfg.vocab_size);
    std::vector<T> d_lnf(d);
    for (std::size_t t = 0; t < P; ++t) {
        auto row = cache.logits.row(t);
        T maxv = row[0];
        for (T v : row) maxv = std::max(maxv, v);
        T denom{};
        for (std::size_t v = 0; v < row.size(); ++v) {
            dlogit[v] = std::exp(row[v] - maxv);
            denom += dlogit[v];
        }
        for (std::size_t v = 0; v < row.size(); ++v) dlogit[v] = dlogit[v] / denom * scale;
        dlogit[targets[t]] -= scale;

        // logits = tok_emb * lnf_out: both head grad and lnf grad
        std::fill(d_lnf.begin(), d_lnf.end(), T{});
        matvec_transposed_add(model.tok_emb, std::span<const T>(dlogit),
                              std::span<T>(d_lnf));
        add_outer(grads.tok_emb, std::span<const T>(dlogit), cache.lnf_out.row(t));
        layernorm_backward<T>(cache.x_final.row(t), model.lnf_g, cache.lnf_mu[t],
                              cache.lnf_rstd[t], d_lnf, dx.row(t),
                              std::span<T>(grads.lnf_g), std::span<T>(grads.lnf_b));
    }

    // blocks in reverse
    for (int l = static_cast<int>(model.blocks.size()) - 1; l >= 0; --l) {
        const Block<T>& block = model.blocks[l];
        const BlockCache<T>& bc = cache.blocks[l];
        Block<T>& gb = grads.blocks[l];

        // x_out = x_mid + W_mlp_out gelu(W_fc ln2(x_mid) + b_fc) + b_mlp_out
        Mat<T> dx_mid = dx;  // residual path
        std::vector<T> d_act(4 * d), d_pre(4 * d), d_ln2(d);
        for (std::size_t t = 0; t < P; ++t) {
            auto dxt = dx.row(t);
            add_outer(gb.w_mlp_out, dxt, bc.fc_act.row(t));
            for (int c = 0; c < d; ++c) gb.b_mlp_out[c] += dxt[c];
            std::fill(d_act.begin(), d_act.end(), T{});
            matvec_transposed_add(block.w_mlp_out, std::span<const T>(dxt),
                                  std::span<T>(d_act));
            auto pre = bc.fc_pre.row(t);
            for (int c = 0; c < 4 * d; ++c) {
                d_pre[c] = d_act[c] * gelu_grad(pre[c]);
                gb.b_fc[c] += d_pre[c];
            }
            add_outer(gb.w_fc, std::span<const T>(d_pre), bc.ln2_out.row(t));
            std::fill(d_ln2.begin(), d_ln2.end(), T{});
            matvec_transposed_add(block.w_fc, std::span<const T>(d_pre),
                                  std::span<T>(d_ln2));
            layernorm_backward<T>(bc.x_mid.row(t), block.ln2_g, bc.ln2_mu[t],
                                  bc.ln2_rstd[t], d_ln2, dx_mid.row(t),
                                  std::span<T>(gb.ln2_g), std::span<T>(gb.ln2_b));
        }

        // x_mid = x_in + W_attn_out concat + b
        Mat<T> dx_in = dx_mid;  // residual path
        Mat<T> d_concat(P, d);
        for (std::size_t t = 0; t < P; ++t) {
            auto dxt = dx_mid.row(t);
            add_outer(gb.w_attn_out, dxt, bc.att_concat.row(t));
            for (int c = 0; c < d; ++c) gb.b_attn_out[c] += dxt[c];
            matvec_transposed_add(block.w_attn_out, std::span<const T>(dxt),
                                  d_concat.row(t));
        }

        Mat<T> d_qkv(P, 3 * d);
        std::vector<T> d_scores(P);
        for (int h = 0; h < n_heads; ++h) {
            const Mat<T>& att = bc.att[h];
            const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
            for (std::size_t t = 0; t < P; ++t) {
                auto d_out_h = d_concat.row(t).subspan(qo, dh);
                // dP and dV
                T dot_pd{};
                for (std::size_t s = 0; s <= t; ++s) {
                    T dp = dot<T>(d_out_h, bc.qkv.row(s).subspan(vo, dh));
                    d_scores[s] = dp;
                    dot_pd += att(t, s) * dp;
                    axpy(att(t, s), d_out_h, d_qkv.row(s).subspan(vo, dh));
                }
                // softmax backward, then q/k
                auto qt = bc.qkv.row(t).subspan(qo, dh);
                auto dqt = d_qkv.row(t).subspan(qo, dh);
                for (std::size_t s = 0; s <= t; ++s) {
                    T dsc = att(t, s) * (d_scores[s] - dot_pd) * inv_sqrt_dh;
                    axpy(dsc, bc.qkv.row(s).subspan(ko, dh), dqt);
                    axpy(dsc, qt, d_qkv.row(s).subspan(ko, dh));
                }
            }
        }

        std::vector<T> d_ln1(d);
        for (std::size_t t = 0; t < P; ++t) {
            auto dq = d_qkv.row(t);
            add_outer(gb.w_qkv, dq, bc.ln1_out.row(t));
            for (int c = 0; c < 3 * d; ++c) gb.b_qkv[c] += dq[c];
            std::fill(d_ln1.begin(), d_ln1.end(), T{});
            matvec_transposed_add(block.w_qkv, std::span<const T>(dq), std::span<T>(d_ln1));
            layernorm_backward<T>(bc.x_in.row(t), block.ln1_g, bc.ln1_mu[t],
                                  bc.ln1_rstd[t], d_ln1, dx_in.row(t),
                                  std::span<T>(gb.ln1_g), std::span<T>(gb.ln1_b));
        }

        dx = std::move(dx_in);

        // fusion layer at this block's entry: x_in = x_prev + engram(x_prev, e),
        // so the upstream gradient both passes through and feeds the layer.
        int slot = model.engram_slot(l);
        if (slot >= 0) {
            Mat<T> d_injected = dx;
            engram_backward(model.engram[slot], cache.engram[slot], d_injected, dx,
                            d_memory, grads.engram[slot]);
        }
    }

    // embeddings
    for (std::size_t t = 0; t < P; ++t) {
        auto dxt = dx.row(t);
        axpy(T{1}, std::span<const T>(dxt), grads.tok_emb.row(tokens[t]));
        axpy(T{1}, std::span<const T>(dxt), grads.pos_emb.row(t));
    }
}

}  // namespace engram
