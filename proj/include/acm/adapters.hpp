// SPDX-License-Identifier: Apache-2.0
//
// Adapter modules (one bottleneck MLP after the attention sublayer, one
// after the feed-forward sublayer), the per-layer registry, per-task
// architecture maps, and hidden-state mixing with learnable coefficients.

#pragma once

#include "acm/backbone.hpp"
#include "acm/tensor.hpp"
#include "acm/util.hpp"

#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

enum class Site { MH, FF };

constexpr int kPass = -1; // architecture entry: identity hook, no module

struct AdapterModule {
    int module_id = -1; // assigned at registration; -1 while a candidate
    int layer = 0;
    int reduce_factor = 16;
    // site MH
    Tensor mh_down_w, mh_down_b, mh_up_w, mh_up_b;
    // site FF
    Tensor ff_down_w, ff_down_b, ff_up_w, ff_up_b;

    int bottleneck() const { return mh_down_w.shape()[1]; }

    std::vector<Tensor> params() const {
        return {mh_down_w, mh_down_b, mh_up_w, mh_up_b, ff_down_w, ff_down_b, ff_up_w, ff_up_b};
    }
    long param_count() const {
        long n = 0;
        for (const Tensor& t : params()) n += t.numel();
        return n;
    }
    void set_trainable(bool on) {
        for (Tensor t : params()) t.set_requires_grad(on);
    }
};

// Down projections get small random init; up projections start at zero so a
// fresh module is an exact identity hook.
inline std::shared_ptr<AdapterModule> make_adapter(int layer, int d_model, int reduce_factor,
                                                   std::mt19937_64& rng) {
    if (reduce_factor <= 0) throw std::invalid_argument("adapter: reduce factor must be positive");
    const int b = std::max(1, d_model / reduce_factor);
    auto m = std::make_shared<AdapterModule>();
    m->layer = layer;
    m->reduce_factor = reduce_factor;
    std::normal_distribution<double> nd(0.0, 0.02);
    auto randn = [&](std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.value()) v = nd(rng);
        return t;
    };
    m->mh_down_w = randn({d_model, b});
    m->mh_down_b = Tensor::zeros({b});
    m->mh_up_w = Tensor::zeros({b, d_model});
    m->mh_up_b = Tensor::zeros({d_model});
    m->ff_down_w = randn({d_model, b});
    m->ff_down_b = Tensor::zeros({b});
    m->ff_up_w = Tensor::zeros({b, d_model});
    m->ff_up_b = Tensor::zeros({d_model});
    return m;
}

// o + up(gelu(down(o))): bottleneck MLP with internal skip connection.
inline Tensor adapter_apply(Tape* tape, const AdapterModule& m, Site site, const Tensor& o) {
    if (o.cols() != m.mh_down_w.shape()[0]) {
        throw std::invalid_argument("adapter_apply: input width does not match d_model");
    }
    const Tensor& dw = site == Site::MH ? m.mh_down_w : m.ff_down_w;
    const Tensor& db = site == Site::MH ? m.mh_down_b : m.ff_down_b;
    const Tensor& uw = site == Site::MH ? m.mh_up_w : m.ff_up_w;
    const Tensor& ub = site == Site::MH ? m.mh_up_b : m.ff_up_b;
    Tensor h = gelu(tape, add_rowvec(tape, matmul(tape, o, dw), db));
    return add(tape, o, add_rowvec(tape, matmul(tape, h, uw), ub));
}

// Raw single-row version for the incremental decoder.
inline void adapter_apply_row(const AdapterModule& m, Site site, std::vector<double>& o) {
    const Tensor& dw = site == Site::MH ? m.mh_down_w : m.ff_down_w;
    const Tensor& db = site == Site::MH ? m.mh_down_b : m.ff_down_b;
    const Tensor& uw = site == Site::MH ? m.mh_up_w : m.ff_up_w;
    const Tensor& ub = site == Site::MH ? m.mh_up_b : m.ff_up_b;
    const int d = dw.shape()[0], b = dw.shape()[1];
    std::vector<double> h(b, 0.0);
    for (int j = 0; j < b; ++j) {
        double s = db.value()[j];
        for (int i = 0; i < d; ++i) s += o[i] * dw.value()[static_cast<std::size_t>(i) * b + j];
        h[j] = gelu_scalar(s);
    }
    for (int i = 0; i < d; ++i) {
        double s = ub.value()[i];
        for (int j = 0; j < b; ++j) s += h[j] * uw.value()[static_cast<std::size_t>(j) * d + i];
        o[i] += s;
    }
}

// Softmax-weighted average of every candidate's output; same lambda vector
// serves both sites of a layer.
inline Tensor mix_apply(Tape* tape, const std::vector<std::shared_ptr<AdapterModule>>& candidates,
                        const Tensor& lambda, Site site, const Tensor& o) {
    if (static_cast<std::size_t>(lambda.numel()) != candidates.size()) {
        throw std::invalid_argument("mix_apply: candidate count mismatch");
    }
    if (candidates.empty()) throw std::invalid_argument("mix_apply: no candidates");
    Tensor acc;
    for (std::size_t t = 0; t < candidates.size(); ++t) {
        if (candidates[t]->layer != candidates[0]->layer) {
            throw std::invalid_argument("mix_apply: candidates from different layers");
        }
        Tensor term = scale_by_elem(tape, adapter_apply(tape, *candidates[t], site, o), lambda,
                                    static_cast<int>(t));
        acc = t == 0 ? term : add(tape, acc, term);
    }
    return acc;
}

// Coefficients for k old modules plus one new candidate: old entries start
// at c, the candidate at -c, so every old module opens with e^{2c} times the
// candidate's weight.
inline Tensor init_coefficients(int k, double c) {
    if (k < 0) throw std::invalid_argument("init_coefficients: negative module count");
    if (c <= 0.0) throw std::invalid_argument("init_coefficients: prior strength must be positive");
    std::vector<double> v(k + 1, c);
    v[k] = -c;
    return Tensor::from({k + 1}, std::move(v), /*requires_grad=*/true);
}

// gamma * sum over layers of the entropy of softmax(c_l).
inline Tensor entropy_penalty(Tape* tape, const std::vector<Tensor>& coeffs, double gamma) {
    Tensor total = Tensor::scalar(0.0);
    for (const Tensor& c : coeffs) {
        Tensor lam = softmax_lastdim(tape, c);
        Tensor ent = scale(tape, sum_all(tape, mul(tape, lam, log_elem(tape, lam))), -1.0);
        total = add(tape, total, ent);
    }
    return scale(tape, total, gamma);
}

inline std::vector<double> softmax_values(const std::vector<double>& c) {
    double mx = c[0];
    for (double v : c) mx = std::max(mx, v);
    double z = 0.0;
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        out[i] = std::exp(c[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

// Per-layer ordered module store. Append-only; ids are global, assigned at
// registration and never reused.
class LayerRegistry {
public:
    LayerRegistry() = default;
    explicit LayerRegistry(int n_layers) : per_layer_(n_layers) {}

    int n_layers() const { return static_cast<int>(per_layer_.size()); }

    const std::vector<std::shared_ptr<AdapterModule>>& at_layer(int l) const {
        return per_layer_.at(l);
    }

    int register_module(std::shared_ptr<AdapterModule> m) {
        m->module_id = next_id_++;
        per_layer_.at(m->layer).push_back(m);
        by_id_[m->module_id] = m;
        return m->module_id;
    }

    std::shared_ptr<AdapterModule> find(int module_id) const {
        auto it = by_id_.find(module_id);
        if (it == by_id_.end()) throw std::out_of_range("registry: unknown module id");
        return it->second;
    }

    int total_modules() const { return static_cast<int>(by_id_.size()); }
    int next_id() const { return next_id_; }
    void set_next_id(int id) { next_id_ = id; } // checkpoint restore

    std::vector<std::shared_ptr<AdapterModule>> all() const {
        std::vector<std::shared_ptr<AdapterModule>> out;
        for (const auto& layer : per_layer_)
            for (const auto& m : layer) out.push_back(m);
        return out;
    }

private:
    std::vector<std::vector<std::shared_ptr<AdapterModule>>> per_layer_;
    std::map<int, std::shared_ptr<AdapterModule>> by_id_;
    int next_id_ = 0;
};

// Per-task assignment: for each layer, a module id or kPass.
struct ArchitectureMap {
    std::string task;
    std::vector<int> layers;

    bool uses_module(int module_id) const {
        for (int id : layers)
            if (id == module_id) return true;
        return false;
    }
    bool shares_module_with(const ArchitectureMap& other) const {
        for (int id : layers)
            if (id != kPass && other.uses_module(id)) return true;
        return false;
    }
};

inline void validate_arch(const ArchitectureMap& arch, const LayerRegistry& reg) {
    if (static_cast<int>(arch.layers.size()) != reg.n_layers()) {
        throw std::invalid_argument("architecture map: wrong layer count");
    }
    for (int l = 0; l < reg.n_layers(); ++l) {
        const int id = arch.layers[l];
        if (id == kPass) continue;
        if (reg.find(id)->layer != l) throw std::invalid_argument("architecture map: module/layer mismatch");
    }
}

// Tape hooks routing every layer through the task's selected module.
inline Hooks hooks_for_arch(const LayerRegistry& reg, const ArchitectureMap& arch) {
    validate_arch(arch, reg);
    Hooks hooks(reg.n_layers());
    for (int l = 0; l < reg.n_layers(); ++l) {
        const int id = arch.layers[l];
        if (id == kPass) continue;
        auto m = reg.find(id);
        hooks[l].mh = [m](Tape* tp, const Tensor& o) { return adapter_apply(tp, *m, Site::MH, o); };
        hooks[l].ff = [m](Tape* tp, const Tensor& o) { return adapter_apply(tp, *m, Site::FF, o); };
    }
    return hooks;
}

inline RowHooks row_hooks_for_arch(const LayerRegistry& reg, const ArchitectureMap& arch) {
    validate_arch(arch, reg);
    RowHooks hooks(reg.n_layers());
    for (int l = 0; l < reg.n_layers(); ++l) {
        const int id = arch.layers[l];
        if (id == kPass) continue;
        auto m = reg.find(id);
        hooks[l].mh = [m](std::vector<double>& o) { adapter_apply_row(*m, Site::MH, o); };
        hooks[l].ff = [m](std::vector<double>& o) { adapter_apply_row(*m, Site::FF, o); };
    }
    return hooks;
}

} // namespace acm
