#include "evflow/autodiff.hpp"

#include <cmath>
#include <cstring>

namespace evflow::ad {

const Tensor& Var::val() const { return tape->val_of(id); }
const std::vector<int>& Var::shape() const { return tape->val_of(id).shape; }

Var Tape::constant(Tensor v) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = false;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& v, Tensor* sink) {
    Node n;
    n.value = v;
    n.requires_grad = true;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make_node(Tensor value, const std::vector<Var>& deps,
                    std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    for (const Var& d : deps) {
        if (d.tape != this) throw ValidationError("autodiff: mixing nodes from different tapes");
        if (nodes_[static_cast<size_t>(d.id)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor(n.value.shape);
        n.grad_live = true;
    }
    return n.grad;
}

Tensor Tape::grad(Var v) {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad_live) return n.grad;
    return Tensor(n.value.shape);
}

void Tape::backward(Var scalar_loss) {
    if (scalar_loss.tape != this) throw ValidationError("autodiff: loss from another tape");
    if (val_of(scalar_loss.id).numel() != 1)
        throw ValidationError("autodiff: backward requires a scalar loss");
    grad_of(scalar_loss.id).data[0] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_live || !n.requires_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.sink) n.sink->add_(n.grad);
    }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.val().same_shape(b.val()))
        throw ValidationError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tape& t = *a.tape;
    Tensor out = a.val();
    out.add_(b.val());
    int ia = a.id, ib = b.id;
    return t.make_node(std::move(out), {a, b}, [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        if (tp.needs_grad(ia)) tp.grad_of(ia).add_(g);
        if (tp.needs_grad(ib)) tp.grad_of(ib).add_(g);
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.val().data[i];
    int ia = a.id, ib = b.id;
    return t.make_node(std::move(out), {a, b}, [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        if (tp.needs_grad(ia)) tp.grad_of(ia).add_(g);
        if (tp.needs_grad(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.val().data[i];
    int ia = a.id, ib = b.id;
    return t.make_node(std::move(out), {a, b}, [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& av = tp.val_of(ia);
        const Tensor& bv = tp.val_of(ib);
        if (tp.needs_grad(ia)) {
            Tensor& ga = tp.grad_of(ia);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
        }
        if (tp.needs_grad(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
        }
    });
}

Var affine(Var a, double s, double shift) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (double& v : out.data) v = s * v + shift;
    int ia = a.id;
    return t.make_node(std::move(out), {a}, [ia, s](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        if (!tp.needs_grad(ia)) return;
        Tensor& ga = tp.grad_of(ia);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += s * g.data[i];
    });
}

Var add_bias(Var x, Var b) {
    Tape& t = *x.tape;
    const Tensor& xv = x.val();
    const Tensor& bv = b.val();
    int c = xv.shape.back();
    if (bv.rank() != 1 || bv.dim(0) != c) throw ValidationError("add_bias: bias shape mismatch");
    Tensor out = xv;
    int64_t rows = xv.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) out.data[static_cast<size_t>(r) * c + j] += bv.data[static_cast<size_t>(j)];
    int ix = x.id, ib = b.id;
    return t.make_node(std::move(out), {x, b}, [ix, ib, c, rows](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        if (tp.needs_grad(ix)) tp.grad_of(ix).add_(g);
        if (tp.needs_grad(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(r) * c + j];
        }
    });
}

namespace {

template <typename F, typename DF>
Var unary_ew(Var a, F f, DF df_from_out_and_in) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (double& v : out.data) v = f(v);
    int ia = a.id;
    return t.make_node(std::move(out), {a}, [ia, df_from_out_and_in](Tape& tp, int self) {
        if (!tp.needs_grad(ia)) return;
        const Tensor& g = tp.grad_of(self);
        const Tensor& y = tp.val_of(self);
        const Tensor& x = tp.val_of(ia);
        Tensor& ga = tp.grad_of(ia);
        for (size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * df_from_out_and_in(y.data[i], x.data[i]);
    });
}

}  // namespace

Var sigmoid(Var a) {
    return unary_ew(
        a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double y, double) { return y * (1.0 - y); });
}

Var tanh_op(Var a) {
    return unary_ew(
        a, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Var relu(Var a) {
    return unary_ew(
        a, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
    return unary_ew(
        a,
        [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
        [](double, double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var silu(Var a) {
    return unary_ew(
        a, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double, double x) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var clamp(Var a, double lo, double hi) {
    return unary_ew(
        a, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double, double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var reshape(Var a, std::vector<int> shape) {
    if (Tensor::count(shape) != a.val().numel()) throw ValidationError("reshape: element count mismatch");
    Tape& t = *a.tape;
    Tensor out(std::move(shape), a.val().data);
    int ia = a.id;
    return t.make_node(std::move(out), {a}, [ia](Tape& tp, int self) {
        if (!tp.needs_grad(ia)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& ga = tp.grad_of(ia);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

Var concat_last(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("concat: no inputs");
    Tape& t = *xs[0].tape;
    const Tensor& first = xs[0].val();
    std::vector<int> lead(first.shape.begin(), first.shape.end() - 1);
    int total_c = 0;
    std::vector<int> widths;
    for (const Var& x : xs) {
        const Tensor& v = x.val();
        std::vector<int> l(v.shape.begin(), v.shape.end() - 1);
        if (l != lead) throw ValidationError("concat: leading dims mismatch");
        widths.push_back(v.shape.back());
        total_c += v.shape.back();
    }
    std::vector<int> out_shape = lead;
    out_shape.push_back(total_c);
    Tensor out(out_shape);
    int64_t rows = out.numel() / total_c;
    int off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
        int w = widths[k];
        const Tensor& v = xs[k].val();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.ptr() + r * total_c + off, v.ptr() + r * w, sizeof(double) * static_cast<size_t>(w));
        off += w;
    }
    std::vector<int> ids;
    for (const Var& x : xs) ids.push_back(x.id);
    return t.make_node(std::move(out), xs, [ids, widths, rows, total_c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        int off = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            int w = widths[k];
            if (tp.needs_grad(ids[k])) {
                Tensor& gx = tp.grad_of(ids[k]);
                for (int64_t r = 0; r < rows; ++r) {
                    const double* src = g.ptr() + r * total_c + off;
                    double* dst = gx.ptr() + r * w;
                    for (int j = 0; j < w; ++j) dst[j] += src[j];
                }
            }
            off += w;
        }
    });
}

Var slice_last(Var x, int from, int to) {
    const Tensor& v = x.val();
    int c = v.shape.back();
    if (from < 0 || to > c || from >= to) throw ValidationError("slice: bad range");
    std::vector<int> out_shape(v.shape.begin(), v.shape.end() - 1);
    int w = to - from;
    out_shape.push_back(w);
    Tensor out(out_shape);
    int64_t rows = out.numel() / w;
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.ptr() + r * w, v.ptr() + r * c + from, sizeof(double) * static_cast<size_t>(w));
    int ix = x.id;
    return x.tape->make_node(std::move(out), {x}, [ix, from, w, c, rows](Tape& tp, int self) {
        if (!tp.needs_grad(ix)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gx = tp.grad_of(ix);
        for (int64_t r = 0; r < rows; ++r) {
            const double* src = g.ptr() + r * w;
            double* dst = gx.ptr() + r * c + from;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
    });
}

Var permute_rows(Var x, const std::vector<int>& idx) {
    const Tensor& v = x.val();
    if (v.rank() != 2) throw ValidationError("permute_rows: rank-2 input expected");
    int l = v.dim(0), d = v.dim(1);
    if (static_cast<int>(idx.size()) != l) throw ValidationError("permute_rows: index size mismatch");
    Tensor out({l, d});
    for (int r = 0; r < l; ++r)
        std::memcpy(out.ptr() + static_cast<int64_t>(r) * d, v.ptr() + static_cast<int64_t>(idx[static_cast<size_t>(r)]) * d,
                    sizeof(double) * static_cast<size_t>(d));
    int ix = x.id;
    std::vector<int> idx_copy = idx;
    return x.tape->make_node(std::move(out), {x}, [ix, idx_copy, d](Tape& tp, int self) {
        if (!tp.needs_grad(ix)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gx = tp.grad_of(ix);
        int l = g.dim(0);
        for (int r = 0; r < l; ++r) {
            const double* src = g.ptr() + static_cast<int64_t>(r) * d;
            double* dst = gx.ptr() + static_cast<int64_t>(idx_copy[static_cast<size_t>(r)]) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Var mean_of(const std::vector<Var>& xs) {
    if (xs.empty()) throw ValidationError("mean_of: no inputs");
    Var acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return scale(acc, 1.0 / static_cast<double>(xs.size()));
}

Var matmul(Var a, Var b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ValidationError("matmul: incompatible shapes");
    int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double* crow = out.ptr() + static_cast<int64_t>(i) * n;
        const double* arow = av.ptr() + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            double av_ip = arow[p];
            if (av_ip == 0.0) continue;
            const double* brow = bv.ptr() + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av_ip * brow[j];
        }
    }
    int ia = a.id, ib = b.id;
    return a.tape->make_node(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& av = tp.val_of(ia);
        const Tensor& bv = tp.val_of(ib);
        if (tp.needs_grad(ia)) {
            Tensor& ga = tp.grad_of(ia);
            for (int i = 0; i < m; ++i) {
                const double* grow = g.ptr() + static_cast<int64_t>(i) * n;
                double* garow = ga.ptr() + static_cast<int64_t>(i) * k;
                for (int p = 0; p < k; ++p) {
                    const double* brow = bv.ptr() + static_cast<int64_t>(p) * n;
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                    garow[p] += s;
                }
            }
        }
        if (tp.needs_grad(ib)) {
            Tensor& gb = tp.grad_of(ib);
            for (int i = 0; i < m; ++i) {
                const double* grow = g.ptr() + static_cast<int64_t>(i) * n;
                const double* arow = av.ptr() + static_cast<int64_t>(i) * k;
                for (int p = 0; p < k; ++p) {
                    double av_ip = arow[p];
                    if (av_ip == 0.0) continue;
                    double* gbrow = gb.ptr() + static_cast<int64_t>(p) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av_ip * grow[j];
                }
            }
        }
    });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 4) throw ValidationError("conv2d: bad ranks");
    int h = xv.dim(0), wd = xv.dim(1), ci = xv.dim(2);
    int kh = wv.dim(0), kw = wv.dim(1), co = wv.dim(3);
    if (wv.dim(2) != ci || bv.dim(0) != co) throw ValidationError("conv2d: channel mismatch");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({ho, wo, co});
    for (int yo = 0; yo < ho; ++yo) {
        for (int xo = 0; xo < wo; ++xo) {
            double* acc = out.ptr() + (static_cast<int64_t>(yo) * wo + xo) * co;
            for (int j = 0; j < co; ++j) acc[j] = bv.data[static_cast<size_t>(j)];
            for (int ky = 0; ky < kh; ++ky) {
                int yi = yo * stride - pad + ky;
                if (yi < 0 || yi >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    int xi = xo * stride - pad + kx;
                    if (xi < 0 || xi >= wd) continue;
                    const double* xr = xv.ptr() + (static_cast<int64_t>(yi) * wd + xi) * ci;
                    const double* wr = wv.ptr() + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
                    for (int c = 0; c < ci; ++c) {
                        double v = xr[c];
                        if (v == 0.0) continue;
                        const double* wc = wr + static_cast<int64_t>(c) * co;
                        for (int j = 0; j < co; ++j) acc[j] += v * wc[j];
                    }
                }
            }
        }
    }
    int ix = x.id, iw = w.id, ib = b.id;
    return x.tape->make_node(std::move(out), {x, w, b},
                             [ix, iw, ib, h, wd, ci, kh, kw, co, ho, wo, stride, pad](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& xv = tp.val_of(ix);
        const Tensor& wv = tp.val_of(iw);
        bool nx = tp.needs_grad(ix), nw = tp.needs_grad(iw), nb = tp.needs_grad(ib);
        Tensor* gx = nx ? &tp.grad_of(ix) : nullptr;
        Tensor* gw = nw ? &tp.grad_of(iw) : nullptr;
        Tensor* gb = nb ? &tp.grad_of(ib) : nullptr;
        for (int yo = 0; yo < ho; ++yo) {
            for (int xo = 0; xo < wo; ++xo) {
                const double* gr = g.ptr() + (static_cast<int64_t>(yo) * wo + xo) * co;
                if (nb)
                    for (int j = 0; j < co; ++j) gb->data[static_cast<size_t>(j)] += gr[j];
                for (int ky = 0; ky < kh; ++ky) {
                    int yi = yo * stride - pad + ky;
                    if (yi < 0 || yi >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        int xi = xo * stride - pad + kx;
                        if (xi < 0 || xi >= wd) continue;
                        const double* xr = xv.ptr() + (static_cast<int64_t>(yi) * wd + xi) * ci;
                        const double* wr = wv.ptr() + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
                        for (int c = 0; c < ci; ++c) {
                            const double* wc = wr + static_cast<int64_t>(c) * co;
                            if (nx) {
                                double s = 0.0;
                                for (int j = 0; j < co; ++j) s += gr[j] * wc[j];
                                gx->data[(static_cast<size_t>(yi) * wd + xi) * ci + c] += s;
                            }
                            if (nw) {
                                double v = xr[c];
                                if (v != 0.0) {
                                    double* gwc = gw->ptr() + ((static_cast<int64_t>(ky) * kw + kx) * ci + c) * co;
                                    for (int j = 0; j < co; ++j) gwc[j] += v * gr[j];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Var depthwise_conv2d(Var x, Var w, Var b, int pad) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 3 || wv.rank() != 3) throw ValidationError("depthwise_conv2d: bad ranks");
    int h = xv.dim(0), wd = xv.dim(1), c = xv.dim(2);
    int kh = wv.dim(0), kw = wv.dim(1);
    if (wv.dim(2) != c || bv.dim(0) != c) throw ValidationError("depthwise_conv2d: channel mismatch");
    int ho = h + 2 * pad - kh + 1;
    int wo = wd + 2 * pad - kw + 1;
    Tensor out({ho, wo, c});
    for (int yo = 0; yo < ho; ++yo) {
        for (int xo = 0; xo < wo; ++xo) {
            double* acc = out.ptr() + (static_cast<int64_t>(yo) * wo + xo) * c;
            for (int j = 0; j < c; ++j) acc[j] = bv.data[static_cast<size_t>(j)];
            for (int ky = 0; ky < kh; ++ky) {
                int yi = yo - pad + ky;
                if (yi < 0 || yi >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    int xi = xo - pad + kx;
                    if (xi < 0 || xi >= wd) continue;
                    const double* xr = xv.ptr() + (static_cast<int64_t>(yi) * wd + xi) * c;
                    const double* wr = wv.ptr() + (static_cast<int64_t>(ky) * kw + kx) * c;
                    for (int j = 0; j < c; ++j) acc[j] += xr[j] * wr[j];
                }
            }
        }
    }
    int ix = x.id, iw = w.id, ib = b.id;
    return x.tape->make_node(std::move(out), {x, w, b},
                             [ix, iw, ib, h, wd, c, kh, kw, ho, wo, pad](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& xv = tp.val_of(ix);
        const Tensor& wv = tp.val_of(iw);
        bool nx = tp.needs_grad(ix), nw = tp.needs_grad(iw), nb = tp.needs_grad(ib);
        Tensor* gx = nx ? &tp.grad_of(ix) : nullptr;
        Tensor* gw = nw ? &tp.grad_of(iw) : nullptr;
        Tensor* gb = nb ? &tp.grad_of(ib) : nullptr;
        for (int yo = 0; yo < ho; ++yo) {
            for (int xo = 0; xo < wo; ++xo) {
                const double* gr = g.ptr() + (static_cast<int64_t>(yo) * wo + xo) * c;
                if (nb)
                    for (int j = 0; j < c; ++j) gb->data[static_cast<size_t>(j)] += gr[j];
                for (int ky = 0; ky < kh; ++ky) {
                    int yi = yo - pad + ky;
                    if (yi < 0 || yi >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        int xi = xo - pad + kx;
                        if (xi < 0 || xi >= wd) continue;
                        const double* xr = xv.ptr() + (static_cast<int64_t>(yi) * wd + xi) * c;
                        const double* wr = wv.ptr() + (static_cast<int64_t>(ky) * kw + kx) * c;
                        if (nx) {
                            double* gxr = gx->ptr() + (static_cast<int64_t>(yi) * wd + xi) * c;
                            for (int j = 0; j < c; ++j) gxr[j] += gr[j] * wr[j];
                        }
                        if (nw) {
                            double* gwr = gw->ptr() + (static_cast<int64_t>(ky) * kw + kx) * c;
                            for (int j = 0; j < c; ++j) gwr[j] += gr[j] * xr[j];
                        }
                    }
                }
            }
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = x.val();
    int c = xv.shape.back();
    if (gamma.val().dim(0) != c || beta.val().dim(0) != c)
        throw ValidationError("layer_norm: parameter shape mismatch");
    int64_t rows = xv.numel() / c;
    Tensor out(xv.shape);
    Tensor mean({static_cast<int>(rows)});
    Tensor rstd({static_cast<int>(rows)});
    const Tensor& gv = gamma.val();
    const Tensor& bv = beta.val();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.ptr() + r * c;
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += xr[j];
        m /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
        var /= c;
        double rs = 1.0 / std::sqrt(var + eps);
        mean.data[static_cast<size_t>(r)] = m;
        rstd.data[static_cast<size_t>(r)] = rs;
        double* yr = out.ptr() + r * c;
        for (int j = 0; j < c; ++j) yr[j] = (xr[j] - m) * rs * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
    }
    int ix = x.id, ig = gamma.id, ib = beta.id;
    auto mean_sh = std::make_shared<Tensor>(std::move(mean));
    auto rstd_sh = std::make_shared<Tensor>(std::move(rstd));
    return x.tape->make_node(std::move(out), {x, gamma, beta},
                             [ix, ig, ib, c, rows, mean_sh, rstd_sh](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& xv = tp.val_of(ix);
        const Tensor& gv = tp.val_of(ig);
        bool nx = tp.needs_grad(ix), ng = tp.needs_grad(ig), nb = tp.needs_grad(ib);
        Tensor* gx = nx ? &tp.grad_of(ix) : nullptr;
        Tensor* gg = ng ? &tp.grad_of(ig) : nullptr;
        Tensor* gb = nb ? &tp.grad_of(ib) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const double* xr = xv.ptr() + r * c;
            const double* gr = g.ptr() + r * c;
            double m = mean_sh->data[static_cast<size_t>(r)];
            double rs = rstd_sh->data[static_cast<size_t>(r)];
            if (ng || nb) {
                for (int j = 0; j < c; ++j) {
                    double xhat = (xr[j] - m) * rs;
                    if (ng) gg->data[static_cast<size_t>(j)] += gr[j] * xhat;
                    if (nb) gb->data[static_cast<size_t>(j)] += gr[j];
                }
            }
            if (nx) {
                // d xhat = gamma * g; dx = rs*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double s1 = 0.0, s2 = 0.0;
                for (int j = 0; j < c; ++j) {
                    double dxh = gr[j] * gv.data[static_cast<size_t>(j)];
                    double xhat = (xr[j] - m) * rs;
                    s1 += dxh;
                    s2 += dxh * xhat;
                }
                s1 /= c;
                s2 /= c;
                double* gxr = gx->ptr() + r * c;
                for (int j = 0; j < c; ++j) {
                    double dxh = gr[j] * gv.data[static_cast<size_t>(j)];
                    double xhat = (xr[j] - m) * rs;
                    gxr[j] += rs * (dxh - s1 - xhat * s2);
                }
            }
        }
    });
}

namespace {

struct Corner {
    int x0, y0;
    double wx, wy;
};

inline Corner split_coord(double sx, double sy) {
    double fx = std::floor(sx), fy = std::floor(sy);
    return Corner{static_cast<int>(fx), static_cast<int>(fy), sx - fx, sy - fy};
}

}  // namespace

Var bilinear_warp(Var m, Var flow) {
    const Tensor& mv = m.val();
    const Tensor& fv = flow.val();
    if (mv.rank() != 3 || fv.rank() != 3 || fv.shape.back() != 2)
        throw ValidationError("bilinear_warp: bad shapes");
    int h = mv.dim(0), w = mv.dim(1), c = mv.dim(2);
    if (fv.dim(0) != h || fv.dim(1) != w) throw ValidationError("bilinear_warp: grid mismatch");
    if (!fv.all_finite()) throw NumericError("bilinear_warp: non-finite flow");
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double u = fv.at(y, x, 0), v = fv.at(y, x, 1);
            Corner cr = split_coord(x + u, y + v);
            double* o = out.ptr() + (static_cast<int64_t>(y) * w + x) * c;
            for (int dy = 0; dy <= 1; ++dy) {
                int yy = cr.y0 + dy;
                if (yy < 0 || yy >= h) continue;
                double wyv = dy ? cr.wy : 1.0 - cr.wy;
                for (int dx = 0; dx <= 1; ++dx) {
                    int xx = cr.x0 + dx;
                    if (xx < 0 || xx >= w) continue;
                    double wt = wyv * (dx ? cr.wx : 1.0 - cr.wx);
                    const double* src = mv.ptr() + (static_cast<int64_t>(yy) * w + xx) * c;
                    for (int j = 0; j < c; ++j) o[j] += wt * src[j];
                }
            }
        }
    }
    int im = m.id, ifl = flow.id;
    return m.tape->make_node(std::move(out), {m, flow}, [im, ifl, h, w, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& mv = tp.val_of(im);
        const Tensor& fv = tp.val_of(ifl);
        bool nm = tp.needs_grad(im), nf = tp.needs_grad(ifl);
        Tensor* gm = nm ? &tp.grad_of(im) : nullptr;
        Tensor* gf = nf ? &tp.grad_of(ifl) : nullptr;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double u = fv.at(y, x, 0), v = fv.at(y, x, 1);
                Corner cr = split_coord(x + u, y + v);
                const double* gr = g.ptr() + (static_cast<int64_t>(y) * w + x) * c;
                double du = 0.0, dv = 0.0;
                for (int dy = 0; dy <= 1; ++dy) {
                    int yy = cr.y0 + dy;
                    if (yy < 0 || yy >= h) continue;
                    double wyv = dy ? cr.wy : 1.0 - cr.wy;
                    double dwy = dy ? 1.0 : -1.0;
                    for (int dx = 0; dx <= 1; ++dx) {
                        int xx = cr.x0 + dx;
                        if (xx < 0 || xx >= w) continue;
                        double wxv = dx ? cr.wx : 1.0 - cr.wx;
                        double dwx = dx ? 1.0 : -1.0;
                        const double* src = mv.ptr() + (static_cast<int64_t>(yy) * w + xx) * c;
                        if (nm) {
                            double wt = wyv * wxv;
                            double* gsrc = gm->ptr() + (static_cast<int64_t>(yy) * w + xx) * c;
                            for (int j = 0; j < c; ++j) gsrc[j] += wt * gr[j];
                        }
                        if (nf) {
                            double dot = 0.0;
                            for (int j = 0; j < c; ++j) dot += gr[j] * src[j];
                            du += dot * dwx * wyv;
                            dv += dot * dwy * wxv;
                        }
                    }
                }
                if (nf) {
                    gf->at(y, x, 0) += du;
                    gf->at(y, x, 1) += dv;
                }
            }
        }
    });
}

Var resize_bilinear(Var x, int out_h, int out_w) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw ValidationError("resize_bilinear: rank-3 input expected");
    int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
    double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
    Tensor out({out_h, out_w, c});
    auto sample_weights = [&](int oy, int ox, int& y0, int& x0, double& wy, double& wx) {
        double fy = out_h > 1 ? oy * sy : 0.5 * (h - 1);
        double fx = out_w > 1 ? ox * sx : 0.5 * (w - 1);
        y0 = std::min(static_cast<int>(std::floor(fy)), h - 1);
        x0 = std::min(static_cast<int>(std::floor(fx)), w - 1);
        wy = fy - y0;
        wx = fx - x0;
    };
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            int y0, x0;
            double wy, wx;
            sample_weights(oy, ox, y0, x0, wy, wx);
            int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            double* o = out.ptr() + (static_cast<int64_t>(oy) * out_w + ox) * c;
            const double* p00 = xv.ptr() + (static_cast<int64_t>(y0) * w + x0) * c;
            const double* p01 = xv.ptr() + (static_cast<int64_t>(y0) * w + x1) * c;
            const double* p10 = xv.ptr() + (static_cast<int64_t>(y1) * w + x0) * c;
            const double* p11 = xv.ptr() + (static_cast<int64_t>(y1) * w + x1) * c;
            for (int j = 0; j < c; ++j)
                o[j] = (1 - wy) * ((1 - wx) * p00[j] + wx * p01[j]) + wy * ((1 - wx) * p10[j] + wx * p11[j]);
        }
    }
    int ix = x.id;
    return x.tape->make_node(std::move(out), {x}, [ix, h, w, c, out_h, out_w, sy, sx](Tape& tp, int self) {
        if (!tp.needs_grad(ix)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gx = tp.grad_of(ix);
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double fy = out_h > 1 ? oy * sy : 0.5 * (h - 1);
                double fx = out_w > 1 ? ox * sx : 0.5 * (w - 1);
                int y0 = std::min(static_cast<int>(std::floor(fy)), h - 1);
                int x0 = std::min(static_cast<int>(std::floor(fx)), w - 1);
                double wy = fy - y0, wx = fx - x0;
                int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double* gr = g.ptr() + (static_cast<int64_t>(oy) * out_w + ox) * c;
                double* g00 = gx.ptr() + (static_cast<int64_t>(y0) * w + x0) * c;
                double* g01 = gx.ptr() + (static_cast<int64_t>(y0) * w + x1) * c;
                double* g10 = gx.ptr() + (static_cast<int64_t>(y1) * w + x0) * c;
                double* g11 = gx.ptr() + (static_cast<int64_t>(y1) * w + x1) * c;
                for (int j = 0; j < c; ++j) {
                    g00[j] += (1 - wy) * (1 - wx) * gr[j];
                    g01[j] += (1 - wy) * wx * gr[j];
                    g10[j] += wy * (1 - wx) * gr[j];
                    g11[j] += wy * wx * gr[j];
                }
            }
        }
    });
}

Var upsample_flow8(Var f) {
    const Tensor& fv = f.val();
    if (fv.rank() != 3 || fv.shape.back() != 2) throw ValidationError("upsample_flow8: bad shape");
    int h = fv.dim(0), w = fv.dim(1);
    int oh = h * 8, ow = w * 8;
    Tensor out({oh, ow, 2});
    // Sample position in source grid for output pixel center; edge-clamped so
    // constant fields stay constant.
    auto src_of = [](int o) { return (o + 0.5) / 8.0 - 0.5; };
    for (int oy = 0; oy < oh; ++oy) {
        double fy = src_of(oy);
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::min(std::max(y0, 0), h - 1), yb = std::min(std::max(y0 + 1, 0), h - 1);
        for (int ox = 0; ox < ow; ++ox) {
            double fx = src_of(ox);
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::min(std::max(x0, 0), w - 1), xb = std::min(std::max(x0 + 1, 0), w - 1);
            for (int j = 0; j < 2; ++j) {
                double v = (1 - wy) * ((1 - wx) * fv.at(ya, xa, j) + wx * fv.at(ya, xb, j)) +
                           wy * ((1 - wx) * fv.at(yb, xa, j) + wx * fv.at(yb, xb, j));
                out.at(oy, ox, j) = 8.0 * v;
            }
        }
    }
    int idf = f.id;
    return f.tape->make_node(std::move(out), {f}, [idf, h, w, oh, ow](Tape& tp, int self) {
        if (!tp.needs_grad(idf)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gf = tp.grad_of(idf);
        auto src_of = [](int o) { return (o + 0.5) / 8.0 - 0.5; };
        for (int oy = 0; oy < oh; ++oy) {
            double fy = src_of(oy);
            int y0 = static_cast<int>(std::floor(fy));
            double wy = fy - y0;
            int ya = std::min(std::max(y0, 0), h - 1), yb = std::min(std::max(y0 + 1, 0), h - 1);
            for (int ox = 0; ox < ow; ++ox) {
                double fx = src_of(ox);
                int x0 = static_cast<int>(std::floor(fx));
                double wx = fx - x0;
                int xa = std::min(std::max(x0, 0), w - 1), xb = std::min(std::max(x0 + 1, 0), w - 1);
                for (int j = 0; j < 2; ++j) {
                    double gv = 8.0 * g.at(oy, ox, j);
                    gf.at(ya, xa, j) += (1 - wy) * (1 - wx) * gv;
                    gf.at(ya, xb, j) += (1 - wy) * wx * gv;
                    gf.at(yb, xa, j) += wy * (1 - wx) * gv;
                    gf.at(yb, xb, j) += wy * wx * gv;
                }
            }
        }
    });
}

Var avg_pool_targets(Var level) {
    const Tensor& lv = level.val();
    if (lv.rank() != 3) throw ValidationError("avg_pool_targets: rank-3 input expected");
    int p = lv.dim(0), ht = lv.dim(1), wt = lv.dim(2);
    int ho = (ht + 1) / 2, wo = (wt + 1) / 2;
    Tensor out({p, ho, wo});
    for (int i = 0; i < p; ++i) {
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                double s = 0.0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    int yy = 2 * y + dy;
                    if (yy >= ht) continue;
                    for (int dx = 0; dx < 2; ++dx) {
                        int xx = 2 * x + dx;
                        if (xx >= wt) continue;
                        s += lv.at(i, yy, xx);
                        ++n;
                    }
                }
                out.at(i, y, x) = s / n;
            }
        }
    }
    int il = level.id;
    return level.tape->make_node(std::move(out), {level}, [il, p, ht, wt, ho, wo](Tape& tp, int self) {
        if (!tp.needs_grad(il)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gl = tp.grad_of(il);
        for (int i = 0; i < p; ++i) {
            for (int y = 0; y < ho; ++y) {
                for (int x = 0; x < wo; ++x) {
                    int n = (std::min(2 * y + 2, ht) - 2 * y) * (std::min(2 * x + 2, wt) - 2 * x);
                    double gv = g.at(i, y, x) / n;
                    for (int dy = 0; dy < 2; ++dy) {
                        int yy = 2 * y + dy;
                        if (yy >= ht) continue;
                        for (int dx = 0; dx < 2; ++dx) {
                            int xx = 2 * x + dx;
                            if (xx >= wt) continue;
                            gl.at(i, yy, xx) += gv;
                        }
                    }
                }
            }
        }
    });
}

Var corr_lookup(Var level, Var flow, double inv_scale, int radius) {
    const Tensor& lv = level.val();
    const Tensor& fv = flow.val();
    if (lv.rank() != 3 || fv.rank() != 3 || fv.shape.back() != 2)
        throw ValidationError("corr_lookup: bad shapes");
    int h = fv.dim(0), w = fv.dim(1);
    if (lv.dim(0) != h * w) throw ValidationError("corr_lookup: source cell count mismatch");
    if (!fv.all_finite()) throw NumericError("corr_lookup: non-finite flow");
    int ht = lv.dim(1), wt = lv.dim(2);
    int win = 2 * radius + 1;
    Tensor out({h, w, win * win});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int cell = y * w + x;
            double cx = x + fv.at(y, x, 0) * inv_scale;
            double cy = y + fv.at(y, x, 1) * inv_scale;
            double* o = out.ptr() + (static_cast<int64_t>(y) * w + x) * win * win;
            int ch = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx, ++ch) {
                    Corner cr = split_coord(cx + dx, cy + dy);
                    double v = 0.0;
                    for (int ey = 0; ey <= 1; ++ey) {
                        int yy = cr.y0 + ey;
                        if (yy < 0 || yy >= ht) continue;
                        double wyv = ey ? cr.wy : 1.0 - cr.wy;
                        for (int ex = 0; ex <= 1; ++ex) {
                            int xx = cr.x0 + ex;
                            if (xx < 0 || xx >= wt) continue;
                            v += wyv * (ex ? cr.wx : 1.0 - cr.wx) * lv.at(cell, yy, xx);
                        }
                    }
                    o[ch] = v;
                }
            }
        }
    }
    int il = level.id, ifl = flow.id;
    return level.tape->make_node(std::move(out), {level, flow},
                                 [il, ifl, h, w, ht, wt, radius, inv_scale](Tape& tp, int self) {
        const Tensor& g = tp.grad_of(self);
        const Tensor& lv = tp.val_of(il);
        const Tensor& fv = tp.val_of(ifl);
        bool nl = tp.needs_grad(il), nf = tp.needs_grad(ifl);
        Tensor* gl = nl ? &tp.grad_of(il) : nullptr;
        Tensor* gf = nf ? &tp.grad_of(ifl) : nullptr;
        int win = 2 * radius + 1;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int cell = y * w + x;
                double cx = x + fv.at(y, x, 0) * inv_scale;
                double cy = y + fv.at(y, x, 1) * inv_scale;
                const double* gr = g.ptr() + (static_cast<int64_t>(y) * w + x) * win * win;
                double du = 0.0, dv = 0.0;
                int ch = 0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    for (int dx = -radius; dx <= radius; ++dx, ++ch) {
                        double gv = gr[ch];
                        if (gv == 0.0) continue;
                        Corner cr = split_coord(cx + dx, cy + dy);
                        for (int ey = 0; ey <= 1; ++ey) {
                            int yy = cr.y0 + ey;
                            if (yy < 0 || yy >= ht) continue;
                            double wyv = ey ? cr.wy : 1.0 - cr.wy;
                            double dwy = ey ? 1.0 : -1.0;
                            for (int ex = 0; ex <= 1; ++ex) {
                                int xx = cr.x0 + ex;
                                if (xx < 0 || xx >= wt) continue;
                                double wxv = ex ? cr.wx : 1.0 - cr.wx;
                                double dwx = ex ? 1.0 : -1.0;
                                if (nl) gl->at(cell, yy, xx) += gv * wyv * wxv;
                                if (nf) {
                                    double lvv = lv.at(cell, yy, xx);
                                    du += gv * lvv * dwx * wyv;
                                    dv += gv * lvv * dwy * wxv;
                                }
                            }
                        }
                    }
                }
                if (nf) {
                    gf->at(y, x, 0) += du * inv_scale;
                    gf->at(y, x, 1) += dv * inv_scale;
                }
            }
        }
    });
}

Var crop_topleft(Var x, int out_h, int out_w) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw ValidationError("crop_topleft: rank-3 input expected");
    int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    if (out_h > h || out_w > w) throw ValidationError("crop_topleft: crop larger than input");
    if (out_h == h && out_w == w) return x;
    Tensor out({out_h, out_w, c});
    for (int y = 0; y < out_h; ++y)
        std::memcpy(out.ptr() + static_cast<int64_t>(y) * out_w * c,
                    xv.ptr() + static_cast<int64_t>(y) * w * c,
                    sizeof(double) * static_cast<size_t>(out_w) * c);
    int ix = x.id;
    return x.tape->make_node(std::move(out), {x}, [ix, w, c, out_h, out_w](Tape& tp, int self) {
        if (!tp.needs_grad(ix)) return;
        const Tensor& g = tp.grad_of(self);
        Tensor& gx = tp.grad_of(ix);
        for (int y = 0; y < out_h; ++y) {
            const double* src = g.ptr() + static_cast<int64_t>(y) * out_w * c;
            double* dst = gx.ptr() + static_cast<int64_t>(y) * w * c;
            for (int j = 0; j < out_w * c; ++j) dst[j] += src[j];
        }
    });
}

Var sum_sq_half(Var x) {
    const Tensor& xv = x.val();
    double s = 0.0;
    for (double v : xv.data) s += v * v;
    Tensor out = Tensor::scalar(0.5 * s);
    int ix = x.id;
    return x.tape->make_node(std::move(out), {x}, [ix](Tape& tp, int self) {
        if (!tp.needs_grad(ix)) return;
        double g = tp.grad_of(self).data[0];
        const Tensor& xv = tp.val_of(ix);
        Tensor& gx = tp.grad_of(ix);
        for (size_t i = 0; i < xv.data.size(); ++i) gx.data[i] += g * xv.data[i];
    });
}

Var masked_l1_mean(Var pred, const Tensor& gt, const Tensor& mask) {
    const Tensor& pv = pred.val();
    if (!pv.same_shape(const_cast<Tensor&>(gt))) throw ValidationError("masked_l1: pred/gt shape mismatch");
    if (pv.rank() != 3) throw ValidationError("masked_l1: rank-3 input expected");
    int h = pv.dim(0), w = pv.dim(1), c = pv.dim(2);
    if (mask.rank() != 2 || mask.dim(0) != h || mask.dim(1) != w)
        throw ValidationError("masked_l1: mask shape mismatch");
    int64_t n_valid = 0;
    for (double v : mask.data)
        if (v > 0.5) ++n_valid;
    if (n_valid == 0) throw ValidationError("masked_l1: empty valid mask");
    double s = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            for (int j = 0; j < c; ++j) s += std::abs(pv.at(y, x, j) - gt.at(y, x, j));
        }
    Tensor out = Tensor::scalar(s / static_cast<double>(n_valid));
    int ip = pred.id;
    auto gt_sh = std::make_shared<Tensor>(gt);
    auto mask_sh = std::make_shared<Tensor>(mask);
    return pred.tape->make_node(std::move(out), {pred}, [ip, gt_sh, mask_sh, h, w, c, n_valid](Tape& tp, int self) {
        if (!tp.needs_grad(ip)) return;
        double g = tp.grad_of(self).data[0] / static_cast<double>(n_valid);
        const Tensor& pv = tp.val_of(ip);
        Tensor& gp = tp.grad_of(ip);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (mask_sh->at(y, x) <= 0.5) continue;
                for (int j = 0; j < c; ++j) {
                    double d = pv.at(y, x, j) - gt_sh->at(y, x, j);
                    gp.at(y, x, j) += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
                }
            }
    });
}

Param& ParamStore::create(const std::string& name, std::vector<int> shape, bool trainable) {
    if (params_.count(name)) throw ValidationError("param already exists: " + name);
    Param p;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.adam_m = Tensor(shape);
    p.adam_v = Tensor(std::move(shape));
    p.trainable = trainable;
    auto [it, ok] = params_.emplace(name, std::move(p));
    return it->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown param: " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown param: " + name);
    return it->second;
}

Param* ParamStore::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
}

void ParamStore::zero_grads() {
    for (auto& [k, p] : params_) p.grad.fill(0.0);
}

int64_t ParamStore::total_entries(bool trainable_only) const {
    int64_t n = 0;
    for (const auto& [k, p] : params_)
        if (!trainable_only || p.trainable) n += p.value.numel();
    return n;
}

Var ParamStore::use(Tape& t, const std::string& name) {
    Param& p = at(name);
    return t.leaf(p.value, &p.grad);
}

}  // namespace evflow::ad
