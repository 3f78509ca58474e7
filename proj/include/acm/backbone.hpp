// SPDX-License-Identifier: Apache-2.0
//
// Small decoder-only transformer with two hook points per layer (after the
// attention sublayer and after the feed-forward sublayer, each feeding the
// following Add & Norm). Post-norm layout. The token embedding is split
// into a word block and a special-token block so the word block can stay
// frozen while special rows remain trainable; the output head is tied.

#pragma once

#include "acm/optim.hpp"
#include "acm/tensor.hpp"
#include "acm/tokenizer.hpp"
#include "acm/util.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

struct BackboneConfig {
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 0; // from tokenizer, includes special tokens
    int n_base = 0;     // leading rows of the embedding (words + [PAD])
    int max_seq_len = 128;

    void validate() const {
        if (d_model % n_heads != 0) throw std::invalid_argument("backbone: d_model must divide by n_heads");
        if (vocab_size <= 0 || n_base <= 0 || n_base >= vocab_size) {
            throw std::invalid_argument("backbone: bad vocab split");
        }
    }
};

// Hook applied to a sublayer output o: returns the replacement h = f(o)
// fed into the following Add & Norm. Null means identity.
using Hook = std::function<Tensor(Tape*, const Tensor&)>;

struct LayerHooks {
    Hook mh; // after multi-head attention
    Hook ff; // after feed forward
};
using Hooks = std::vector<LayerHooks>;

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool frozen() const { return !tensor.requires_grad(); }
};

struct TransformerLayer {
    Tensor w_qkv, b_qkv; // [d, 3d], [3d]
    Tensor w_o, b_o;     // [d, d], [d]
    Tensor ln1_g, ln1_b;
    Tensor w_ff1, b_ff1; // [d, d_ff], [d_ff]
    Tensor w_ff2, b_ff2; // [d_ff, d], [d]
    Tensor ln2_g, ln2_b;
};

class Backbone {
public:
    Backbone() = default;

    Backbone(BackboneConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng = make_rng(init_seed, "backbone_init");
        const int d = cfg_.d_model;
        emb_base_ = init_normal(rng, {cfg_.n_base, d});
        emb_special_ = init_normal(rng, {cfg_.vocab_size - cfg_.n_base, d});
        pos_ = init_normal(rng, {cfg_.max_seq_len, d});
        for (int l = 0; l < cfg_.n_layers; ++l) {
            TransformerLayer layer;
            layer.w_qkv = init_normal(rng, {d, 3 * d});
            layer.b_qkv = Tensor::zeros({3 * d});
            layer.w_o = init_normal(rng, {d, d});
            layer.b_o = Tensor::zeros({d});
            layer.ln1_g = Tensor::from({d}, std::vector<double>(d, 1.0));
            layer.ln1_b = Tensor::zeros({d});
            layer.w_ff1 = init_normal(rng, {d, cfg_.d_ff});
            layer.b_ff1 = Tensor::zeros({cfg_.d_ff});
            layer.w_ff2 = init_normal(rng, {cfg_.d_ff, d});
            layer.b_ff2 = Tensor::zeros({d});
            layer.ln2_g = Tensor::from({d}, std::vector<double>(d, 1.0));
            layer.ln2_b = Tensor::zeros({d});
            layers_.push_back(layer);
        }
        lnf_g_ = Tensor::from({d}, std::vector<double>(d, 1.0));
        lnf_b_ = Tensor::zeros({d});
    }

    const BackboneConfig& config() const { return cfg_; }
    Tensor& emb_base() { return emb_base_; }
    Tensor& emb_special() { return emb_special_; }
    const Tensor& emb_special() const { return emb_special_; }
    std::vector<TransformerLayer>& layers() { return layers_; }
    const std::vector<TransformerLayer>& layers() const { return layers_; }

    // Name -> tensor, stable order. "emb_special" is the trainable block.
    std::vector<NamedParam> named_params() const {
        std::vector<NamedParam> ps;
        ps.push_back({"emb_base", emb_base_});
        ps.push_back({"emb_special", emb_special_});
        ps.push_back({"pos", pos_});
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "layers/" + std::to_string(l) + "/";
            const TransformerLayer& L = layers_[l];
            ps.push_back({p + "w_qkv", L.w_qkv});
            ps.push_back({p + "b_qkv", L.b_qkv});
            ps.push_back({p + "w_o", L.w_o});
            ps.push_back({p + "b_o", L.b_o});
            ps.push_back({p + "ln1_g", L.ln1_g});
            ps.push_back({p + "ln1_b", L.ln1_b});
            ps.push_back({p + "w_ff1", L.w_ff1});
            ps.push_back({p + "b_ff1", L.b_ff1});
            ps.push_back({p + "w_ff2", L.w_ff2});
            ps.push_back({p + "b_ff2", L.b_ff2});
            ps.push_back({p + "ln2_g", L.ln2_g});
            ps.push_back({p + "ln2_b", L.ln2_b});
        }
        ps.push_back({"ln_f/g", lnf_g_});
        ps.push_back({"ln_f/b", lnf_b_});
        return ps;
    }

    void set_all_trainable(bool on) {
        for (NamedParam& p : named_params_mut()) p.tensor.set_requires_grad(on);
    }
    // Freeze everything except the special-token embedding rows.
    void freeze_except_special() {
        set_all_trainable(false);
        emb_special_.set_requires_grad(true);
    }

    Tensor forward(Tape* tape, const std::vector<int>& ids, const Hooks* hooks = nullptr) const {
        const int T = static_cast<int>(ids.size());
        if (T == 0) throw std::invalid_argument("backbone: empty sequence");
        if (T > cfg_.max_seq_len) {
            throw std::invalid_argument("backbone: sequence length " + std::to_string(T) +
                                        " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
        }
        if (hooks && static_cast<int>(hooks->size()) != cfg_.n_layers) {
            throw std::invalid_argument("backbone: hooks must cover every layer");
        }
        const int d = cfg_.d_model;
        const int hd = d / cfg_.n_heads;
        Tensor mask = causal_mask(T);
        Tensor x = add(tape, embedding(tape, emb_base_, emb_special_, ids), slice_rows(tape, pos_, 0, T));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const TransformerLayer& L = layers_[l];
            Tensor qkv = add_rowvec(tape, matmul(tape, x, L.w_qkv), L.b_qkv);
            Tensor q = slice_cols(tape, qkv, 0, d);
            Tensor k = slice_cols(tape, qkv, d, d);
            Tensor v = slice_cols(tape, qkv, 2 * d, d);
            std::vector<Tensor> heads;
            heads.reserve(cfg_.n_heads);
            for (int h = 0; h < cfg_.n_heads; ++h) {
                Tensor qh = slice_cols(tape, q, h * hd, hd);
                Tensor kh = slice_cols(tape, k, h * hd, hd);
                Tensor vh = slice_cols(tape, v, h * hd, hd);
                Tensor att = add(tape, scale(tape, matmul_nt(tape, qh, kh), 1.0 / std::sqrt(hd)), mask);
                heads.push_back(matmul(tape, softmax_lastdim(tape, att), vh));
            }
            Tensor o_mh = add_rowvec(tape, matmul(tape, concat_cols(tape, heads), L.w_o), L.b_o);
            Tensor h_mh = (hooks && (*hooks)[l].mh) ? (*hooks)[l].mh(tape, o_mh) : o_mh;
            x = layer_norm(tape, add(tape, x, h_mh), L.ln1_g, L.ln1_b);
            Tensor ff = gelu(tape, add_rowvec(tape, matmul(tape, x, L.w_ff1), L.b_ff1));
            Tensor o_ff = add_rowvec(tape, matmul(tape, ff, L.w_ff2), L.b_ff2);
            Tensor h_ff = (hooks && (*hooks)[l].ff) ? (*hooks)[l].ff(tape, o_ff) : o_ff;
            x = layer_norm(tape, add(tape, x, h_ff), L.ln2_g, L.ln2_b);
        }
        x = layer_norm(tape, x, lnf_g_, lnf_b_);
        Tensor logits_base = matmul_nt(tape, x, emb_base_);
        Tensor logits_special = matmul_nt(tape, x, emb_special_);
        return concat_cols(tape, {logits_base, logits_special});
    }

    const Tensor& positional() const { return pos_; }
    const Tensor& final_norm_gain() const { return lnf_g_; }
    const Tensor& final_norm_bias() const { return lnf_b_; }

private:
    friend class Decoder;

    std::vector<NamedParam> named_params_mut() { return named_params(); }

    static Tensor init_normal(std::mt19937_64& rng, std::vector<int> shape) {
        std::normal_distribution<double> nd(0.0, 0.02);
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.value()) v = nd(rng);
        return t;
    }

    Tensor causal_mask(int T) const {
        Tensor m = Tensor::zeros({T, T});
        for (int i = 0; i < T; ++i)
            for (int j = i + 1; j < T; ++j) m.value()[static_cast<std::size_t>(i) * T + j] = -1e30;
        return m;
    }

    BackboneConfig cfg_;
    Tensor emb_base_, emb_special_, pos_;
    std::vector<TransformerLayer> layers_;
    Tensor lnf_g_, lnf_b_;
};

// ---------------------------------------------------------------------------
// incremental decoding (inference only, no tape): per-layer KV caches make
// generation linear in output length. Must match Backbone::forward exactly;
// the equivalence is covered by tests.

using RowHook = std::function<void(std::vector<double>&)>;
struct LayerRowHooks {
    RowHook mh, ff;
};
using RowHooks = std::vector<LayerRowHooks>;

class Decoder {
public:
    Decoder(const Backbone& bb, RowHooks hooks = {}) : bb_(bb), hooks_(std::move(hooks)) {
        if (!hooks_.empty() && static_cast<int>(hooks_.size()) != bb.cfg_.n_layers) {
            throw std::invalid_argument("decoder: hooks must cover every layer");
        }
        kcache_.resize(bb.cfg_.n_layers);
        vcache_.resize(bb.cfg_.n_layers);
    }

    int position() const { return t_; }

    // Feeds one token, returns the logits row for the next-token distribution.
    std::vector<double> step(int token_id) {
        const BackboneConfig& cfg = bb_.cfg_;
        if (t_ >= cfg.max_seq_len) throw std::runtime_error("decoder: exceeded max_seq_len");
        const int d = cfg.d_model;
        const int hd = d / cfg.n_heads;

        std::vector<double> x(d);
        {
            const int nb = cfg.n_base;
            const double* src = token_id < nb
                                    ? bb_.emb_base_.value().data() + static_cast<std::size_t>(token_id) * d
                                    : bb_.emb_special_.value().data() + static_cast<std::size_t>(token_id - nb) * d;
            const double* p = bb_.pos_.value().data() + static_cast<std::size_t>(t_) * d;
            for (int c = 0; c < d; ++c) x[c] = src[c] + p[c];
        }

        std::vector<double> qkv(3 * d), o(d), ff(cfg.d_ff);
        for (int l = 0; l < cfg.n_layers; ++l) {
            const TransformerLayer& L = bb_.layers_[l];
            row_times_mat(x, L.w_qkv, L.b_qkv, qkv);
            auto& kc = kcache_[l];
            auto& vc = vcache_[l];
            kc.insert(kc.end(), qkv.begin() + d, qkv.begin() + 2 * d);
            vc.insert(vc.end(), qkv.begin() + 2 * d, qkv.end());
            const int steps = t_ + 1;
            std::vector<double> ctx(d, 0.0);
            std::vector<double> att(steps);
            for (int h = 0; h < cfg.n_heads; ++h) {
                const double* qh = qkv.data() + h * hd;
                double mx = -1e300;
                for (int s = 0; s < steps; ++s) {
                    const double* kh = kc.data() + static_cast<std::size_t>(s) * d + h * hd;
                    double dot = 0.0;
                    for (int c = 0; c < hd; ++c) dot += qh[c] * kh[c];
                    att[s] = dot / std::sqrt(hd);
                    mx = std::max(mx, att[s]);
                }
                double z = 0.0;
                for (int s = 0; s < steps; ++s) {
                    att[s] = std::exp(att[s] - mx);
                    z += att[s];
                }
                double* ch = ctx.data() + h * hd;
                for (int s = 0; s < steps; ++s) {
                    const double w = att[s] / z;
                    const double* vh = vc.data() + static_cast<std::size_t>(s) * d + h * hd;
                    for (int c = 0; c < hd; ++c) ch[c] += w * vh[c];
                }
            }
            row_times_mat(ctx, L.w_o, L.b_o, o);
            if (!hooks_.empty() && hooks_[l].mh) hooks_[l].mh(o);
            add_norm(x, o, L.ln1_g, L.ln1_b);
            row_times_mat(x, L.w_ff1, L.b_ff1, ff);
            for (double& v : ff) v = gelu_scalar(v);
            row_times_mat(ff, L.w_ff2, L.b_ff2, o);
            if (!hooks_.empty() && hooks_[l].ff) hooks_[l].ff(o);
            add_norm(x, o, L.ln2_g, L.ln2_b);
        }
        norm_row(x, bb_.lnf_g_, bb_.lnf_b_);

        std::vector<double> logits(cfg.vocab_size);
        mat_times_col(bb_.emb_base_, x, logits.data());
        mat_times_col(bb_.emb_special_, x, logits.data() + cfg.n_base);
        ++t_;
        return logits;
    }

private:
    static void row_times_mat(const std::vector<double>& row, const Tensor& w, const Tensor& b,
                              std::vector<double>& out) {
        const int K = w.shape()[0], N = w.shape()[1];
        detail::MapC wm(w.value().data(), K, N);
        Eigen::Map<const Eigen::RowVectorXd> rv(row.data(), K);
        Eigen::Map<Eigen::RowVectorXd> ov(out.data(), N);
        ov.noalias() = rv * wm;
        for (int c = 0; c < N; ++c) out[c] += b.value()[c];
    }

    static void mat_times_col(const Tensor& m, const std::vector<double>& col, double* out) {
        const int R = m.shape()[0], C = m.shape()[1];
        detail::MapC mm(m.value().data(), R, C);
        Eigen::Map<const Eigen::VectorXd> cv(col.data(), C);
        Eigen::Map<Eigen::VectorXd> ov(out, R);
        ov.noalias() = mm * cv;
    }

    // x = layer_norm(x + h) with affine params, matching the tape op.
    static void add_norm(std::vector<double>& x, const std::vector<double>& h, const Tensor& g,
                         const Tensor& b) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += h[i];
        norm_row(x, g, b);
    }
    static void norm_row(std::vector<double>& x, const Tensor& g, const Tensor& b) {
        const int C = static_cast<int>(x.size());
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= C;
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int c = 0; c < C; ++c) x[c] = (x[c] - mean) * inv * g.value()[c] + b.value()[c];
    }

    const Backbone& bb_;
    RowHooks hooks_;
    std::vector<std::vector<double>> kcache_, vcache_;
    int t_ = 0;
};

} // namespace acm
