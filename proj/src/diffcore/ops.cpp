#include "gencast/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gencast/error.hpp"

namespace gencast::diff {

namespace {

Tape& tape_of(const Var& x) {
    if (!x.valid()) throw DetachedInput("operation on an unbound Var");
    return *x.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatch(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
}

Var record1(const Var& x, Tensor out, BackwardFn fn, const char* op) {
    const Var in[1] = {x};
    return tape_of(x).record(std::move(out), in, std::move(fn), op);
}

Var record2(const Var& a, const Var& b, Tensor out, BackwardFn fn, const char* op) {
    const Var in[2] = {a, b};
    return tape_of(a).record(std::move(out), in, std::move(fn), op);
}

// df receives (input, output) and returns the local derivative.
template <class F, class DF>
Var unary(const Var& x, const char* op, F f, DF df) {
    Tape* tp = &tape_of(x);
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const std::size_t xi = x.id();
    const std::size_t yi = tp->size();
    return record1(x, std::move(out),
                   [tp, xi, yi, df](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       const Tensor& in = tp->value(xi);
                       const Tensor& y = tp->value(yi);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
                   },
                   op);
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Calls fn(out_index, src_index) for every element of an output of shape `out`
// whose source offset is given by `src_strides` (0 on broadcast axes).
template <class Fn>
void for_each_strided(const Shape& out, const std::vector<std::size_t>& src_strides, Fn fn) {
    const std::size_t n = numel(out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        fn(o, src);
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            src += src_strides[ax];
            if (idx[ax] < out[ax]) break;
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + to_string(s));
    AxisSplit sp;
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

// out[r, p] += sum_k x[r, k] * w[k, p]
void gemm_acc(const double* x, const double* w, double* out, std::size_t rows, std::size_t k, std::size_t p) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * k;
        double* orow = out + r * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double xv = xr[kk];
            if (xv == 0.0) continue;
            const double* wr = w + kk * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += xv * wr[j];
        }
    }
}

// gx[r, k] += sum_p g[r, p] * w[k, p]
void gemm_acc_bt(const double* g, const double* w, double* gx, std::size_t rows, std::size_t k, std::size_t p) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * p;
        double* xr = gx + r * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* wr = w + kk * p;
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += gr[j] * wr[j];
            xr[kk] += s;
        }
    }
}

// gw[k, p] += sum_r x[r, k] * g[r, p]
void gemm_acc_at(const double* x, const double* g, double* gw, std::size_t rows, std::size_t k, std::size_t p) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * k;
        const double* gr = g + r * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double xv = xr[kk];
            if (xv == 0.0) continue;
            double* wr = gw + kk * p;
            for (std::size_t j = 0; j < p; ++j) wr[j] += xv * gr[j];
        }
    }
}

Var linear_impl(const Var& x, const Var& w, const Var& bias, const char* op) {
    Tape* tp = &tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.rank() != 2 || xv.rank() == 0 || xv.shape().back() != wv.dim(0)) {
        throw ShapeMismatch(std::string(op) + ": " + to_string(xv.shape()) + " x " + to_string(wv.shape()));
    }
    const std::size_t k = wv.dim(0), p = wv.dim(1), rows = xv.size() / std::max<std::size_t>(k, 1);
    const bool has_bias = bias.valid();
    if (has_bias && (bias.value().rank() != 1 || bias.value().dim(0) != p)) {
        throw ShapeMismatch(std::string(op) + ": bias shape " + to_string(bias.shape()));
    }
    Shape os = xv.shape();
    os.back() = p;
    Tensor out(os);
    if (has_bias) {
        const auto& bv = bias.value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + r * p);
    }
    gemm_acc(xv.data().data(), wv.data().data(), out.data().data(), rows, k, p);

    const std::size_t xi = x.id(), wi = w.id(), bi = has_bias ? bias.id() : 0;
    BackwardFn fn = [tp, xi, wi, bi, has_bias, rows, k, p](std::span<const double> g, AdjointBuffer& adj) {
        if (double* gx = adj.at(xi)) gemm_acc_bt(g.data(), tp->value(wi).data().data(), gx, rows, k, p);
        if (double* gw = adj.at(wi)) gemm_acc_at(tp->value(xi).data().data(), g.data(), gw, rows, k, p);
        if (has_bias) {
            if (double* gb = adj.at(bi)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < p; ++j) gb[j] += g[r * p + j];
            }
        }
    };
    if (has_bias) {
        const Var in[3] = {x, w, bias};
        return tp->record(std::move(out), in, std::move(fn), op);
    }
    return record2(x, w, std::move(out), std::move(fn), op);
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return record2(a, b, std::move(out),
                   [ai, bi](std::span<const double> g, AdjointBuffer& adj) {
                       if (double* ga = adj.at(ai))
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       if (double* gb = adj.at(bi))
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                   },
                   "add");
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return record2(a, b, std::move(out),
                   [ai, bi](std::span<const double> g, AdjointBuffer& adj) {
                       if (double* ga = adj.at(ai))
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       if (double* gb = adj.at(bi))
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                   },
                   "sub");
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tape* tp = &tape_of(a);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return record2(a, b, std::move(out),
                   [tp, ai, bi](std::span<const double> g, AdjointBuffer& adj) {
                       const Tensor& av = tp->value(ai);
                       const Tensor& bv = tp->value(bi);
                       if (double* ga = adj.at(ai))
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       if (double* gb = adj.at(bi))
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                   },
                   "mul");
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tape* tp = &tape_of(a);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return record2(a, b, std::move(out),
                   [tp, ai, bi](std::span<const double> g, AdjointBuffer& adj) {
                       const Tensor& av = tp->value(ai);
                       const Tensor& bv = tp->value(bi);
                       if (double* ga = adj.at(ai))
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
                       if (double* gb = adj.at(bi))
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                   },
                   "div");
}

Var maximum(const Var& a, const Var& b) {
    require_same_shape(a, b, "maximum");
    Tape* tp = &tape_of(a);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], bv[i]);
    const std::size_t ai = a.id(), bi = b.id();
    // Ties route the adjoint to the first operand.
    return record2(a, b, std::move(out),
                   [tp, ai, bi](std::span<const double> g, AdjointBuffer& adj) {
                       const Tensor& av = tp->value(ai);
                       const Tensor& bv = tp->value(bi);
                       double* ga = adj.at(ai);
                       double* gb = adj.at(bi);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                           if (av[i] >= bv[i]) {
                               if (ga) ga[i] += g[i];
                           } else if (gb) {
                               gb[i] += g[i];
                           }
                       }
                   },
                   "maximum");
}

Var scale(const Var& x, double factor) {
    return unary(
        x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& x, double c) {
    return unary(
        x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var relu(const Var& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
    return unary(
        x, "sigmoid",
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
    return unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sin(const Var& x) {
    return unary(
        x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(const Var& x) {
    return unary(
        x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var sqrt(const Var& x) {
    return unary(
        x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& x) {
    return unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var huber_elementwise(const Var& r, double delta) {
    return unary(
        r, "huber",
        [delta](double v) {
            const double a = std::abs(v);
            return a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
        },
        [delta](double v, double) {
            if (std::abs(v) <= delta) return v;
            return v > 0.0 ? delta : -delta;
        });
}

Var broadcast_to(const Var& x, const Shape& shape) {
    const Shape& xs = x.shape();
    if (xs.size() > shape.size()) throw ShapeMismatch("broadcast_to: cannot reduce rank");
    const std::size_t lead = shape.size() - xs.size();
    const auto xst = strides_of(xs);
    std::vector<std::size_t> src(shape.size(), 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::size_t oi = lead + i;
        if (xs[i] == shape[oi]) {
            src[oi] = xst[i];
        } else if (xs[i] != 1) {
            throw ShapeMismatch("broadcast_to: " + to_string(xs) + " -> " + to_string(shape));
        }
    }
    const Tensor& xv = x.value();
    Tensor out(shape);
    for_each_strided(shape, src, [&](std::size_t o, std::size_t s) { out[o] = xv[s]; });
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi, shape, src](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       for_each_strided(shape, src, [&](std::size_t o, std::size_t s) { gx[s] += g[o]; });
                   },
                   "broadcast_to");
}

Var reshape(const Var& x, const Shape& shape) {
    Tensor out = x.value().reshaped(shape);
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi](std::span<const double> g, AdjointBuffer& adj) {
                       if (double* gx = adj.at(xi))
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   },
                   "reshape");
}

Var permute(const Var& x, std::span<const std::size_t> perm) {
    const Shape& xs = x.shape();
    if (perm.size() != xs.size()) throw ShapeMismatch("permute: rank mismatch");
    std::vector<char> seen(xs.size(), 0);
    for (std::size_t p : perm) {
        if (p >= xs.size() || seen[p]) throw ShapeMismatch("permute: invalid permutation");
        seen[p] = 1;
    }
    const auto xst = strides_of(xs);
    Shape os(xs.size());
    std::vector<std::size_t> src(xs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        os[i] = xs[perm[i]];
        src[i] = xst[perm[i]];
    }
    const Tensor& xv = x.value();
    Tensor out(os);
    for_each_strided(os, src, [&](std::size_t o, std::size_t s) { out[o] = xv[s]; });
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi, os, src](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       for_each_strided(os, src, [&](std::size_t o, std::size_t s) { gx[s] += g[o]; });
                   },
                   "permute");
}

Var permute(const Var& x, std::initializer_list<std::size_t> perm) {
    return permute(x, std::span<const std::size_t>(perm.begin(), perm.size()));
}

Var linear(const Var& x, const Var& w, const Var& bias) { return linear_impl(x, w, bias, "linear"); }

Var matmul(const Var& a, const Var& b) {
    if (a.value().rank() != 2) throw ShapeMismatch("matmul expects a 2-D left operand");
    return linear_impl(a, b, Var{}, "matmul");
}

Var bmm(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw ShapeMismatch("bmm: " + to_string(av.shape()) + " x " + to_string(bv.shape()));
    }
    const std::size_t G = av.dim(0), M = av.dim(1), K = av.dim(2), P = bv.dim(2);
    Tensor out(Shape{G, M, P});
    for (std::size_t g = 0; g < G; ++g) {
        gemm_acc(av.data().data() + g * M * K, bv.data().data() + g * K * P, out.data().data() + g * M * P, M, K, P);
    }
    Tape* tp = &tape_of(a);
    const std::size_t ai = a.id(), bi = b.id();
    return record2(a, b, std::move(out),
                   [tp, ai, bi, G, M, K, P](std::span<const double> gout, AdjointBuffer& adj) {
                       double* ga = adj.at(ai);
                       double* gb = adj.at(bi);
                       const double* ad = tp->value(ai).data().data();
                       const double* bd = tp->value(bi).data().data();
                       for (std::size_t g = 0; g < G; ++g) {
                           const double* go = gout.data() + g * M * P;
                           if (ga) gemm_acc_bt(go, bd + g * K * P, ga + g * M * K, M, K, P);
                           if (gb) gemm_acc_at(ad + g * M * K, go, gb + g * K * P, M, K, P);
                       }
                   },
                   "bmm");
}

Var softmax(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() == 0) throw ShapeMismatch("softmax of a scalar");
    const std::size_t n = xv.shape().back();
    const std::size_t rows = n ? xv.size() / n : 0;
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data().data() + r * n;
        double* o = out.data().data() + r * n;
        const double m = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - m);
            s += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= s;
    }
    Tape* tp = &tape_of(x);
    const std::size_t xi = x.id(), yi = tp->size();
    return record1(x, std::move(out),
                   [tp, xi, yi, n, rows](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       const double* y = tp->value(yi).data().data();
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* yr = y + r * n;
                           const double* gr = g.data() + r * n;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                           for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
                       }
                   },
                   "softmax");
}

Var concat(std::span<const Var> xs, std::size_t axis) {
    if (xs.empty()) throw ShapeMismatch("concat of zero tensors");
    Tape& tp = tape_of(xs[0]);
    Shape os = xs[0].shape();
    if (axis >= os.size()) throw ShapeMismatch("concat axis out of range");
    std::vector<std::size_t> lens;
    std::size_t total = 0;
    for (const Var& v : xs) {
        Shape s = v.shape();
        if (s.size() != os.size()) throw ShapeMismatch("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != os[i]) throw ShapeMismatch("concat: " + to_string(s) + " vs " + to_string(os));
        }
        lens.push_back(s[axis]);
        total += s[axis];
    }
    os[axis] = total;
    const AxisSplit sp = split_at(os, axis);
    Tensor out(os);
    std::vector<std::size_t> ids;
    std::size_t base = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor& v = xs[k].value();
        const std::size_t block = lens[k] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(v.data().data() + o * block, block, out.data().data() + o * total * sp.inner + base * sp.inner);
        }
        base += lens[k];
        ids.push_back(xs[k].id());
    }
    return tp.record(std::move(out), xs,
                     [ids, lens, sp, total](std::span<const double> g, AdjointBuffer& adj) {
                         std::size_t base = 0;
                         for (std::size_t k = 0; k < ids.size(); ++k) {
                             const std::size_t block = lens[k] * sp.inner;
                             if (double* gx = adj.at(ids[k])) {
                                 for (std::size_t o = 0; o < sp.outer; ++o) {
                                     const double* src = g.data() + o * total * sp.inner + base * sp.inner;
                                     double* dst = gx + o * block;
                                     for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                 }
                             }
                             base += lens[k];
                         }
                     },
                     "concat");
}

Var concat(std::initializer_list<Var> xs, std::size_t axis) {
    return concat(std::span<const Var>(xs.begin(), xs.size()), axis);
}

Var index_select(const Var& x, std::size_t axis, std::span<const std::size_t> index) {
    const Shape& xs = x.shape();
    const AxisSplit sp = split_at(xs, axis);
    for (std::size_t i : index) {
        if (i >= sp.len) throw ShapeMismatch("index_select: index " + std::to_string(i) + " out of range");
    }
    Shape os = xs;
    os[axis] = index.size();
    const Tensor& xv = x.value();
    Tensor out(os);
    const std::size_t m = index.size();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < m; ++k)
            std::copy_n(xv.data().data() + (o * sp.len + index[k]) * sp.inner, sp.inner,
                        out.data().data() + (o * m + k) * sp.inner);
    std::vector<std::size_t> idx(index.begin(), index.end());
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi, idx, sp](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       const std::size_t m = idx.size();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                           for (std::size_t k = 0; k < m; ++k) {
                               const double* src = g.data() + (o * m + k) * sp.inner;
                               double* dst = gx + (o * sp.len + idx[k]) * sp.inner;
                               for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                           }
                   },
                   "index_select");
}

Var index_select(const Var& x, std::size_t axis, std::initializer_list<std::size_t> index) {
    return index_select(x, axis, std::span<const std::size_t>(index.begin(), index.size()));
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const std::size_t xi = x.id(), n = x.size();
    return record1(x, Tensor::scalar(s),
                   [xi, n](std::span<const double> g, AdjointBuffer& adj) {
                       if (double* gx = adj.at(xi))
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                   },
                   "sum");
}

Var mean(const Var& x) {
    if (x.size() == 0) throw ShapeMismatch("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var sum_axis(const Var& x, std::size_t axis) {
    const Shape& xs = x.shape();
    const AxisSplit sp = split_at(xs, axis);
    Shape os = xs;
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    const Tensor& xv = x.value();
    Tensor out(os);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l) {
            const double* src = xv.data().data() + (o * sp.len + l) * sp.inner;
            double* dst = out.data().data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi, sp](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       for (std::size_t o = 0; o < sp.outer; ++o)
                           for (std::size_t l = 0; l < sp.len; ++l) {
                               const double* src = g.data() + o * sp.inner;
                               double* dst = gx + (o * sp.len + l) * sp.inner;
                               for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                           }
                   },
                   "sum_axis");
}

Var mean_axis(const Var& x, std::size_t axis) {
    const std::size_t len = split_at(x.shape(), axis).len;
    if (len == 0) throw ShapeMismatch("mean over an empty axis");
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(len));
}

Var causal_conv1d(const Var& x, const Var& w, const Var& bias, std::size_t dilation) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 4 || wv.rank() != 3 || wv.dim(1) != xv.dim(3) || bv.rank() != 1 || bv.dim(0) != wv.dim(2)) {
        throw ShapeMismatch("causal_conv1d: x " + to_string(xv.shape()) + ", w " + to_string(wv.shape()) + ", b " +
                            to_string(bv.shape()));
    }
    if (dilation == 0) throw ShapeMismatch("causal_conv1d: dilation must be >= 1");
    const std::size_t B = xv.dim(0), T = xv.dim(1), N = xv.dim(2), Ci = xv.dim(3);
    const std::size_t K = wv.dim(0), Co = wv.dim(2);
    Tensor out(Shape{B, T, N, Co});
    const double* xd = xv.data().data();
    const double* wd = wv.data().data();
    double* od = out.data().data();
    for (std::size_t r = 0; r < B * T * N; ++r) std::copy(bv.data().begin(), bv.data().end(), od + r * Co);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < K && j * dilation <= t; ++j) {
                const std::size_t ts = t - j * dilation;
                gemm_acc(xd + ((b * T + ts) * N) * Ci, wd + j * Ci * Co, od + ((b * T + t) * N) * Co, N, Ci, Co);
            }

    Tape* tp = &tape_of(x);
    const std::size_t xi = x.id(), wi = w.id(), bi = bias.id();
    const Var in[3] = {x, w, bias};
    return tp->record(
        std::move(out), in,
        [tp, xi, wi, bi, B, T, N, Ci, K, Co, dilation](std::span<const double> g, AdjointBuffer& adj) {
            double* gx = adj.at(xi);
            double* gw = adj.at(wi);
            double* gb = adj.at(bi);
            const double* xd = tp->value(xi).data().data();
            const double* wd = tp->value(wi).data().data();
            if (gb)
                for (std::size_t r = 0; r < B * T * N; ++r)
                    for (std::size_t c = 0; c < Co; ++c) gb[c] += g[r * Co + c];
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < K && j * dilation <= t; ++j) {
                        const std::size_t ts = t - j * dilation;
                        const double* go = g.data() + ((b * T + t) * N) * Co;
                        if (gx) gemm_acc_bt(go, wd + j * Ci * Co, gx + ((b * T + ts) * N) * Ci, N, Ci, Co);
                        if (gw) gemm_acc_at(xd + ((b * T + ts) * N) * Ci, go, gw + j * Ci * Co, N, Ci, Co);
                    }
        },
        "causal_conv1d");
}

Var node_mix(const Tensor& a, const Var& x) {
    const Tensor& xv = x.value();
    if (a.rank() != 2 || a.dim(0) != a.dim(1) || xv.rank() < 2 || xv.dim(xv.rank() - 2) != a.dim(0)) {
        throw ShapeMismatch("node_mix: a " + to_string(a.shape()) + ", x " + to_string(xv.shape()));
    }
    const std::size_t N = a.dim(0), D = xv.shape().back();
    const std::size_t L = xv.size() / (N * D);
    Tensor out(xv.shape());
    for (std::size_t l = 0; l < L; ++l)
        gemm_acc(a.data().data(), xv.data().data() + l * N * D, out.data().data() + l * N * D, N, N, D);
    const std::size_t xi = x.id();
    return record1(x, std::move(out),
                   [xi, a, N, D, L](std::span<const double> g, AdjointBuffer& adj) {
                       double* gx = adj.at(xi);
                       if (!gx) return;
                       // gx[l] += a^T g[l]
                       for (std::size_t l = 0; l < L; ++l) {
                           const double* gl = g.data() + l * N * D;
                           double* xl = gx + l * N * D;
                           for (std::size_t i = 0; i < N; ++i)
                               for (std::size_t j = 0; j < N; ++j) {
                                   const double aij = a[i * N + j];
                                   if (aij == 0.0) continue;
                                   for (std::size_t d = 0; d < D; ++d) xl[j * D + d] += aij * gl[i * D + d];
                               }
                       }
                   },
                   "node_mix");
}

Var cdist(const Var& z, const Var& c) {
    const Tensor& zv = z.value();
    const Tensor& cv = c.value();
    if (zv.rank() != 3 || cv.rank() != 3 || zv.dim(0) != cv.dim(0) || zv.dim(2) != cv.dim(2)) {
        throw ShapeMismatch("cdist: " + to_string(zv.shape()) + " vs " + to_string(cv.shape()));
    }
    const std::size_t G = zv.dim(0), M = zv.dim(1), K = cv.dim(1), d = zv.dim(2);
    Tensor out(Shape{G, M, K});
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const double* zr = zv.data().data() + (g * M + m) * d;
                const double* cr = cv.data().data() + (g * K + k) * d;
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += (zr[i] - cr[i]) * (zr[i] - cr[i]);
                out[(g * M + m) * K + k] = std::sqrt(s);
            }
    Tape* tp = &tape_of(z);
    const std::size_t zi = z.id(), ci = c.id(), yi = tp->size();
    return record2(z, c, std::move(out),
                   [tp, zi, ci, yi, G, M, K, d](std::span<const double> gout, AdjointBuffer& adj) {
                       double* gz = adj.at(zi);
                       double* gc = adj.at(ci);
                       const double* zd = tp->value(zi).data().data();
                       const double* cd = tp->value(ci).data().data();
                       const double* dist = tp->value(yi).data().data();
                       for (std::size_t g = 0; g < G; ++g)
                           for (std::size_t m = 0; m < M; ++m)
                               for (std::size_t k = 0; k < K; ++k) {
                                   const std::size_t o = (g * M + m) * K + k;
                                   if (dist[o] == 0.0 || gout[o] == 0.0) continue;
                                   const double f = gout[o] / dist[o];
                                   const double* zr = zd + (g * M + m) * d;
                                   const double* cr = cd + (g * K + k) * d;
                                   for (std::size_t i = 0; i < d; ++i) {
                                       const double v = f * (zr[i] - cr[i]);
                                       if (gz) gz[(g * M + m) * d + i] += v;
                                       if (gc) gc[(g * K + k) * d + i] -= v;
                                   }
                               }
                   },
                   "cdist");
}

}  // namespace gencast::diff
