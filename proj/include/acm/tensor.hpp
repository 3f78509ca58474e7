// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-based reverse-mode autodiff.
// Define-by-run: ops compute forward values immediately and, when a Tape is
// supplied and some input requires gradients, push a backward closure onto
// the tape. One backward pass walks the tape in reverse exactly once.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acm {

struct TensorData {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    std::string name; // set for named parameters

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value.assign(static_cast<std::size_t>(d->numel()), 0.0);
        d->requires_grad = requires_grad;
        return Tensor(d);
    }
    static Tensor from(std::vector<int> shape, std::vector<double> v, bool requires_grad = false) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value = std::move(v);
        if (static_cast<std::int64_t>(d->value.size()) != d->numel()) {
            throw std::invalid_argument("tensor: data length does not match shape");
        }
        d->requires_grad = requires_grad;
        return Tensor(d);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool valid() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    std::int64_t numel() const { return d_->numel(); }
    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }
    const std::string& name() const { return d_->name; }
    void set_name(std::string n) { d_->name = std::move(n); }

    std::vector<double>& value() { return d_->value; }
    const std::vector<double>& value() const { return d_->value; }
    std::vector<double>& grad() { return d_->grad; }
    const std::vector<double>& grad() const { return d_->grad; }
    bool has_grad() const { return d_->has_grad(); }
    void clear_grad() { d_->grad.clear(); }

    double item() const {
        if (numel() != 1) throw std::runtime_error("item: tensor is not scalar");
        return d_->value[0];
    }

    int rows() const { // leading dims collapsed
        return static_cast<int>(numel() / cols());
    }
    int cols() const {
        if (d_->shape.empty()) return 1;
        return d_->shape.back();
    }

    TensorData* raw() const { return d_.get(); }
    const std::shared_ptr<TensorData>& ptr() const { return d_; }

    bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

private:
    std::shared_ptr<TensorData> d_;
};

class Tape {
public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
    std::size_t size() const { return steps_.size(); }

    // Seeds d(loss)/d(loss)=1 and runs every recorded step once, in reverse.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        loss.raw()->ensure_grad();
        loss.raw()->grad[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void reset() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using MapM = Eigen::Map<EMat>;

inline MapC cmap(const TensorData* t, int r, int c) { return MapC(t->value.data(), r, c); }
inline MapC cmapg(const TensorData* t, int r, int c) { return MapC(t->grad.data(), r, c); }
inline MapM gmap(TensorData* t, int r, int c) { return MapM(t->grad.data(), r, c); }

inline bool track(Tape* tape, std::initializer_list<const Tensor*> ins) {
    if (!tape) return false;
    for (const Tensor* t : ins)
        if ((*t).requires_grad()) return true;
    return false;
}

inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    std::string msg = std::string(op) + ": shape mismatch [";
    for (int d : a.shape()) msg += std::to_string(d) + " ";
    msg += "] vs [";
    for (int d : b.shape()) msg += std::to_string(d) + " ";
    msg += "]";
    throw std::invalid_argument(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise / broadcast ops

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) detail::shape_error("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.value().size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        tape->record([pa, pb, po] {
            if (!po->has_grad()) return;
            const std::size_t m = po->grad.size();
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) pa->grad[i] += po->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) pb->grad[i] += po->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) detail::shape_error("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.value().size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        tape->record([pa, pb, po] {
            if (!po->has_grad()) return;
            const std::size_t m = po->grad.size();
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) pa->grad[i] += po->grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) pb->grad[i] += po->grad[i] * pa->value[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape* tape, const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.value().size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po, s] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            const std::size_t m = po->grad.size();
            for (std::size_t i = 0; i < m; ++i) pa->grad[i] += po->grad[i] * s;
        });
    }
    return out;
}

// m: [R x C], v: [C]; adds v to every row.
inline Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v) {
    const int C = m.cols();
    if (v.numel() != C) detail::shape_error("add_rowvec", m, v);
    const int R = m.rows();
    Tensor out = Tensor::zeros(m.shape());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            out.value()[static_cast<std::size_t>(r) * C + c] =
                m.value()[static_cast<std::size_t>(r) * C + c] + v.value()[c];
    if (detail::track(tape, {&m, &v})) {
        out.set_requires_grad(true);
        auto pm = m.ptr(), pv = v.ptr(), po = out.ptr();
        tape->record([pm, pv, po, R, C] {
            if (!po->has_grad()) return;
            if (pm->requires_grad) {
                pm->ensure_grad();
                const std::size_t n = po->grad.size();
                for (std::size_t i = 0; i < n; ++i) pm->grad[i] += po->grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c)
                        pv->grad[c] += po->grad[static_cast<std::size_t>(r) * C + c];
            }
        });
    }
    return out;
}

inline Tensor log_elem(Tape* tape, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.value().size();
    for (std::size_t i = 0; i < n; ++i) {
        if (a.value()[i] <= 0.0) throw std::domain_error("log: nonpositive input");
        out.value()[i] = std::log(a.value()[i]);
    }
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            const std::size_t m = po->grad.size();
            for (std::size_t i = 0; i < m; ++i) pa->grad[i] += po->grad[i] / pa->value[i];
        });
    }
    return out;
}

inline Tensor sum_all(Tape* tape, const Tensor& a) {
    double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
    Tensor out = Tensor::scalar(s);
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            for (double& g : pa->grad) g += po->grad[0];
        });
    }
    return out;
}

// y * lam[idx] where lam is a 1-D tensor; gradient reaches both factors.
inline Tensor scale_by_elem(Tape* tape, const Tensor& y, const Tensor& lam, int idx) {
    if (idx < 0 || idx >= lam.numel()) throw std::invalid_argument("scale_by_elem: index out of range");
    const double l = lam.value()[static_cast<std::size_t>(idx)];
    Tensor out = Tensor::zeros(y.shape());
    const std::size_t n = y.value().size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = y.value()[i] * l;
    if (detail::track(tape, {&y, &lam})) {
        out.set_requires_grad(true);
        auto py = y.ptr(), pl = lam.ptr(), po = out.ptr();
        tape->record([py, pl, po, idx, l] {
            if (!po->has_grad()) return;
            const std::size_t m = po->grad.size();
            if (py->requires_grad) {
                py->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) py->grad[i] += po->grad[i] * l;
            }
            if (pl->requires_grad) {
                pl->ensure_grad();
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += po->grad[i] * py->value[i];
                pl->grad[static_cast<std::size_t>(idx)] += acc;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        detail::shape_error("matmul", a, b);
    }
    const int M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    Tensor out = Tensor::zeros({M, N});
    {
        detail::MapM o(out.value().data(), M, N);
        o.noalias() = detail::cmap(a.raw(), M, K) * detail::cmap(b.raw(), K, N);
    }
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        tape->record([pa, pb, po, M, K, N] {
            if (!po->has_grad()) return;
            auto go = detail::cmapg(po.get(), M, N);
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::gmap(pa.get(), M, K).noalias() += go * detail::cmap(pb.get(), K, N).transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::gmap(pb.get(), K, N).noalias() += detail::cmap(pa.get(), M, K).transpose() * go;
            }
        });
    }
    return out;
}

// a @ b^T for b given row-major as [N x K].
inline Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1]) {
        detail::shape_error("matmul_nt", a, b);
    }
    const int M = a.shape()[0], K = a.shape()[1], N = b.shape()[0];
    Tensor out = Tensor::zeros({M, N});
    {
        detail::MapM o(out.value().data(), M, N);
        o.noalias() = detail::cmap(a.raw(), M, K) * detail::cmap(b.raw(), N, K).transpose();
    }
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        tape->record([pa, pb, po, M, K, N] {
            if (!po->has_grad()) return;
            auto go = detail::cmapg(po.get(), M, N);
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::gmap(pa.get(), M, K).noalias() += go * detail::cmap(pb.get(), N, K);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::gmap(pb.get(), N, K).noalias() += go.transpose() * detail::cmap(pa.get(), M, K);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

inline Tensor softmax_lastdim(Tape* tape, const Tensor& a) {
    const int C = a.cols();
    const int R = a.rows();
    Tensor out = Tensor::zeros(a.shape());
    for (int r = 0; r < R; ++r) {
        const double* x = a.value().data() + static_cast<std::size_t>(r) * C;
        double* y = out.value().data() + static_cast<std::size_t>(r) * C;
        double mx = x[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        for (int c = 0; c < C; ++c) y[c] /= z;
    }
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po, R, C] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            for (int r = 0; r < R; ++r) {
                const double* y = po->value.data() + static_cast<std::size_t>(r) * C;
                const double* gy = po->grad.data() + static_cast<std::size_t>(r) * C;
                double* gx = pa->grad.data() + static_cast<std::size_t>(r) * C;
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += gy[c] * y[c];
                for (int c = 0; c < C; ++c) gx[c] += (gy[c] - dot) * y[c];
            }
        });
    }
    return out;
}

// Per-row layer norm with affine rescale. Zero-variance rows normalize to
// zeros (epsilon inside the square root).
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const int C = x.cols();
    if (gain.numel() != C || bias.numel() != C) detail::shape_error("layer_norm", x, gain);
    const int R = x.rows();
    Tensor out = Tensor::zeros(x.shape());
    // Stash per-row mean and inverse stddev for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(R) * 2);
    for (int r = 0; r < R; ++r) {
        const double* v = x.value().data() + static_cast<std::size_t>(r) * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += v[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (v[c] - mean) * (v[c] - mean);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<std::size_t>(r) * 2] = mean;
        (*stats)[static_cast<std::size_t>(r) * 2 + 1] = inv;
        double* y = out.value().data() + static_cast<std::size_t>(r) * C;
        for (int c = 0; c < C; ++c) y[c] = (v[c] - mean) * inv * gain.value()[c] + bias.value()[c];
    }
    if (detail::track(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto px = x.ptr(), pg = gain.ptr(), pb = bias.ptr(), po = out.ptr();
        tape->record([px, pg, pb, po, stats, R, C] {
            if (!po->has_grad()) return;
            std::vector<double> dxn(C);
            for (int r = 0; r < R; ++r) {
                const double mean = (*stats)[static_cast<std::size_t>(r) * 2];
                const double inv = (*stats)[static_cast<std::size_t>(r) * 2 + 1];
                const double* v = px->value.data() + static_cast<std::size_t>(r) * C;
                const double* gy = po->grad.data() + static_cast<std::size_t>(r) * C;
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    for (int c = 0; c < C; ++c) pg->grad[c] += gy[c] * (v[c] - mean) * inv;
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (int c = 0; c < C; ++c) pb->grad[c] += gy[c];
                }
                if (!px->requires_grad) continue;
                px->ensure_grad();
                double sum_dxn = 0.0, sum_dxn_xn = 0.0;
                for (int c = 0; c < C; ++c) {
                    dxn[c] = gy[c] * pg->value[c];
                    sum_dxn += dxn[c];
                    sum_dxn_xn += dxn[c] * (v[c] - mean) * inv;
                }
                double* gx = px->grad.data() + static_cast<std::size_t>(r) * C;
                for (int c = 0; c < C; ++c) {
                    const double xn = (v[c] - mean) * inv;
                    gx[c] += inv * (dxn[c] - sum_dxn / C - xn * sum_dxn_xn / C);
                }
            }
        });
    }
    return out;
}

inline double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); }

inline Tensor gelu(Tape* tape, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.value().size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = gelu_scalar(a.value()[i]);
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            const std::size_t m = po->grad.size();
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < m; ++i) {
                const double v = pa->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                pa->grad[i] += po->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structure ops

inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int R = parts[0].rows();
    int C = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != R) detail::shape_error("concat_cols", parts[0], p);
        C += p.cols();
    }
    Tensor out = Tensor::zeros({R, C});
    int off = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < pc; ++c)
                out.value()[static_cast<std::size_t>(r) * C + off + c] =
                    p.value()[static_cast<std::size_t>(r) * pc + c];
        off += pc;
    }
    bool needs = false;
    for (const Tensor& p : parts) needs = needs || p.requires_grad();
    if (tape && needs) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> ps;
        ps.reserve(parts.size());
        for (const Tensor& p : parts) ps.push_back(p.ptr());
        auto po = out.ptr();
        tape->record([ps, po, R, C] {
            if (!po->has_grad()) return;
            int off2 = 0;
            for (auto& p : ps) {
                const int pc = p->shape.back();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int r = 0; r < R; ++r)
                        for (int c = 0; c < pc; ++c)
                            p->grad[static_cast<std::size_t>(r) * pc + c] +=
                                po->grad[static_cast<std::size_t>(r) * C + off2 + c];
                }
                off2 += pc;
            }
        });
    }
    return out;
}

inline Tensor slice_cols(Tape* tape, const Tensor& a, int off, int len) {
    const int C = a.cols();
    if (off < 0 || len <= 0 || off + len > C) throw std::invalid_argument("slice_cols: bad range");
    const int R = a.rows();
    Tensor out = Tensor::zeros({R, len});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < len; ++c)
            out.value()[static_cast<std::size_t>(r) * len + c] =
                a.value()[static_cast<std::size_t>(r) * C + off + c];
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po, R, C, off, len] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < len; ++c)
                    pa->grad[static_cast<std::size_t>(r) * C + off + c] +=
                        po->grad[static_cast<std::size_t>(r) * len + c];
        });
    }
    return out;
}

inline Tensor slice_rows(Tape* tape, const Tensor& a, int off, int len) {
    if (a.shape().size() != 2) throw std::invalid_argument("slice_rows: need 2-d tensor");
    const int R = a.shape()[0], C = a.shape()[1];
    if (off < 0 || len <= 0 || off + len > R) throw std::invalid_argument("slice_rows: bad range");
    Tensor out = Tensor::zeros({len, C});
    std::copy(a.value().begin() + static_cast<std::size_t>(off) * C,
              a.value().begin() + static_cast<std::size_t>(off + len) * C, out.value().begin());
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto pa = a.ptr();
        auto po = out.ptr();
        tape->record([pa, po, C, off, len] {
            if (!po->has_grad()) return;
            pa->ensure_grad();
            for (int r = 0; r < len; ++r)
                for (int c = 0; c < C; ++c)
                    pa->grad[static_cast<std::size_t>(off + r) * C + c] +=
                        po->grad[static_cast<std::size_t>(r) * C + c];
        });
    }
    return out;
}

// Embedding lookup over a vocabulary stored as two row blocks: ids below
// base rows hit `base`, the rest hit `special` (shifted). Keeps the frozen
// word table and the trainable special-token rows as separate parameters.
inline Tensor embedding(Tape* tape, const Tensor& base, const Tensor& special,
                        const std::vector<int>& ids) {
    if (base.shape().size() != 2 || special.shape().size() != 2 ||
        base.shape()[1] != special.shape()[1]) {
        detail::shape_error("embedding", base, special);
    }
    const int nb = base.shape()[0], ns = special.shape()[0], C = base.shape()[1];
    const int T = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({T, C});
    for (int t = 0; t < T; ++t) {
        const int id = ids[t];
        if (id < 0 || id >= nb + ns) throw std::out_of_range("embedding: token id out of range");
        const double* src = id < nb ? base.value().data() + static_cast<std::size_t>(id) * C
                                    : special.value().data() + static_cast<std::size_t>(id - nb) * C;
        std::copy(src, src + C, out.value().data() + static_cast<std::size_t>(t) * C);
    }
    if (detail::track(tape, {&base, &special})) {
        out.set_requires_grad(true);
        auto pb = base.ptr(), ps = special.ptr(), po = out.ptr();
        tape->record([pb, ps, po, ids, nb, C] {
            if (!po->has_grad()) return;
            for (std::size_t t = 0; t < ids.size(); ++t) {
                const int id = ids[t];
                const double* g = po->grad.data() + t * C;
                if (id < nb) {
                    if (!pb->requires_grad) continue;
                    pb->ensure_grad();
                    double* dst = pb->grad.data() + static_cast<std::size_t>(id) * C;
                    for (int c = 0; c < C; ++c) dst[c] += g[c];
                } else {
                    if (!ps->requires_grad) continue;
                    ps->ensure_grad();
                    double* dst = ps->grad.data() + static_cast<std::size_t>(id - nb) * C;
                    for (int c = 0; c < C; ++c) dst[c] += g[c];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// losses

// Sum over positions with mask=1 of -log softmax(logits)_target. The caller
// divides by the mask count (see cross_entropy_masked).
inline Tensor cross_entropy_masked_sum(Tape* tape, const Tensor& logits,
                                       const std::vector<int>& targets,
                                       const std::vector<int>& mask) {
    if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-d");
    const int T = logits.shape()[0], V = logits.shape()[1];
    if (static_cast<int>(targets.size()) != T || static_cast<int>(mask.size()) != T) {
        throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
    }
    // Row-wise log-sum-exp, stashed for backward.
    auto lse = std::make_shared<std::vector<double>>(T);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        if (targets[t] < 0 || targets[t] >= V) throw std::out_of_range("cross_entropy: target id out of range");
        const double* row = logits.value().data() + static_cast<std::size_t>(t) * V;
        double mx = row[0];
        for (int v = 1; v < V; ++v) mx = std::max(mx, row[v]);
        double z = 0.0;
        for (int v = 0; v < V; ++v) z += std::exp(row[v] - mx);
        const double l = mx + std::log(z);
        (*lse)[t] = l;
        total += l - row[targets[t]];
    }
    Tensor out = Tensor::scalar(total);
    if (detail::track(tape, {&logits})) {
        out.set_requires_grad(true);
        auto pl = logits.ptr();
        auto po = out.ptr();
        tape->record([pl, po, targets, mask, lse, T, V] {
            if (!po->has_grad()) return;
            pl->ensure_grad();
            const double g = po->grad[0];
            for (int t = 0; t < T; ++t) {
                if (!mask[t]) continue;
                const double* row = pl->value.data() + static_cast<std::size_t>(t) * V;
                double* gr = pl->grad.data() + static_cast<std::size_t>(t) * V;
                const double l = (*lse)[t];
                for (int v = 0; v < V; ++v) gr[v] += g * std::exp(row[v] - l);
                gr[targets[t]] -= g;
            }
        });
    }
    return out;
}

inline Tensor cross_entropy_masked(Tape* tape, const Tensor& logits,
                                   const std::vector<int>& targets,
                                   const std::vector<int>& mask) {
    int count = 0;
    for (int m : mask) count += (m != 0);
    if (count == 0) throw std::invalid_argument("empty supervision window");
    Tensor s = cross_entropy_masked_sum(tape, logits, targets, mask);
    return scale(tape, s, 1.0 / count);
}

} // namespace acm
