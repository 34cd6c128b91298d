#include "evflow/ssm.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace evflow::ssm {

StateMatrix hippo_legs(int n) {
    if (n < 1) throw ValidationError("hippo_legs: n must be >= 1");
    StateMatrix a;
    a.n = n;
    a.entries = Tensor({n, n});
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            if (r > c)
                a.entries.at(r, c) = -std::sqrt(2.0 * r + 1.0) * std::sqrt(2.0 * c + 1.0);
            else if (r == c)
                a.entries.at(r, c) = -static_cast<double>(r + 1);
        }
    }
    return a;
}

PerturbationMatrix sample_perturbation(const StateMatrix& a, double scale, uint64_t seed) {
    if (scale <= 0.0) throw ValidationError("sample_perturbation: scale must be positive");
    PerturbationMatrix e;
    e.scale = scale;
    e.entries = Tensor({a.n, a.n});
    RandomStream rng(seed);
    rng.fill_normal(e.entries, 1.0);
    double target = scale * a.entries.frobenius_norm();
    double norm = e.entries.frobenius_norm();
    if (norm == 0.0) throw NumericError("sample_perturbation: degenerate sample");
    e.entries.scale_(target / norm);
    return e;
}

namespace {

DiagonalizedSystem from_eigen(const Eigen::MatrixXcd& values_diag, const Eigen::MatrixXcd& v,
                              const Eigen::MatrixXd& a_star) {
    int n = static_cast<int>(a_star.rows());
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(v);
    if (!lu.isInvertible()) throw DecompositionRejected("eigenbasis not invertible");
    Eigen::MatrixXcd vinv = lu.inverse();
    Eigen::MatrixXcd recon = v * values_diag * vinv;
    double err = (recon - a_star.cast<cplx>()).norm() / a_star.norm();
    if (!(err <= 1e-6))
        throw DecompositionRejected("reconstruction error " + std::to_string(err) +
                                    " exceeds 1e-6; resample the perturbation");
    DiagonalizedSystem sys;
    sys.n_state = n;
    sys.recon_error = err;
    sys.eigenvalues.resize(static_cast<size_t>(n));
    sys.basis.resize(static_cast<size_t>(n) * n);
    sys.basis_inv.resize(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        cplx lam = values_diag(i, i);
        if (lam.real() >= 0.0) {
            lam = cplx(-1e-4, lam.imag());
            ++sys.projected_count;
        }
        sys.eigenvalues[static_cast<size_t>(i)] = lam;
        for (int j = 0; j < n; ++j) {
            sys.basis[static_cast<size_t>(i) * n + j] = v(i, j);
            sys.basis_inv[static_cast<size_t>(i) * n + j] = vinv(i, j);
        }
    }
    return sys;
}

}  // namespace

DiagonalizedSystem perturb_then_diagonalize(const StateMatrix& a, const PerturbationMatrix& e) {
    if (a.entries.shape != e.entries.shape)
        throw ValidationError("perturb_then_diagonalize: shape mismatch");
    int n = a.n;
    Eigen::MatrixXd a_star(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) a_star(r, c) = a.entries.at(r, c) + e.entries.at(r, c);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(a_star);
    if (solver.info() != Eigen::Success)
        throw DecompositionRejected("eigensolver failed to converge");
    Eigen::MatrixXcd values = solver.eigenvalues().asDiagonal();
    return from_eigen(values, solver.eigenvectors(), a_star);
}

DiagonalizedSystem hippo_spectrum_system(int n) {
    if (n < 1) throw ValidationError("hippo_spectrum_system: n must be >= 1");
    DiagonalizedSystem sys;
    sys.n_state = n;
    sys.recon_error = 0.0;
    sys.eigenvalues.resize(static_cast<size_t>(n));
    sys.basis.assign(static_cast<size_t>(n) * n, cplx(0.0));
    sys.basis_inv.assign(static_cast<size_t>(n) * n, cplx(0.0));
    for (int i = 0; i < n; ++i) {
        sys.eigenvalues[static_cast<size_t>(i)] = cplx(-static_cast<double>(i + 1), 0.0);
        sys.basis[static_cast<size_t>(i) * n + i] = 1.0;
        sys.basis_inv[static_cast<size_t>(i) * n + i] = 1.0;
    }
    return sys;
}

void init_selective_params(DiagonalizedSystem& sys, int d_model, uint64_t seed, double delta_init) {
    int n = sys.n_state;
    sys.d_model = d_model;
    sys.w_b = Tensor({d_model, n});
    sys.w_c = Tensor({d_model, n});
    sys.w_delta = Tensor({d_model, d_model});
    sys.bias_delta = Tensor({d_model});
    sys.d_skip = Tensor({d_model});
    sys.lambda_grad_re = Tensor({n});
    sys.lambda_grad_im = Tensor({n});
    RandomStream rng(seed);
    double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
    rng.fill_normal(sys.w_b, sd);
    rng.fill_normal(sys.w_c, sd);
    rng.fill_normal(sys.w_delta, 0.1 * sd);
    sys.bias_delta.fill(std::log(std::expm1(delta_init)));
    sys.d_skip.fill(1.0);
}

ZohFactors discretize_zoh(cplx lambda, double delta) {
    if (delta <= 0.0) throw ValidationError("discretize_zoh: delta must be positive");
    return ZohFactors{std::exp(delta * lambda), delta};
}

namespace {

// y := x * w for row-major x [l, d] and w [d, n]; shared by the plain and
// autodiff paths so both produce bit-identical projections.
void project(const Tensor& x, const Tensor& w, Tensor& y) {
    int l = x.dim(0), d = x.dim(1), n = w.dim(1);
    y = Tensor({l, n});
    for (int i = 0; i < l; ++i) {
        double* yr = y.ptr() + static_cast<int64_t>(i) * n;
        const double* xr = x.ptr() + static_cast<int64_t>(i) * d;
        for (int p = 0; p < d; ++p) {
            double v = xr[p];
            if (v == 0.0) continue;
            const double* wr = w.ptr() + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) yr[j] += v * wr[j];
        }
    }
}

}  // namespace

SelectiveParams selective_params(const Tensor& x, const DiagonalizedSystem& sys) {
    if (x.rank() != 2 || x.dim(1) != sys.d_model)
        throw ValidationError("selective_params: input shape mismatch");
    if (x.dim(0) < 1) throw ValidationError("selective_params: empty sequence");
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.data[static_cast<size_t>(i)]))
            throw NumericError("selective_params: non-finite input at position " +
                               std::to_string(i / x.dim(1)));
    SelectiveParams out;
    project(x, sys.w_b, out.b);
    project(x, sys.w_c, out.c);
    project(x, sys.w_delta, out.delta);
    int l = x.dim(0), d = sys.d_model;
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j) {
            double pre = out.delta.at(i, j) + sys.bias_delta.at(j);
            double sp = pre > 30.0 ? pre : std::log1p(std::exp(pre));
            out.delta.at(i, j) = std::min(sys.delta_max, std::max(sys.delta_min, sp));
        }
    return out;
}

namespace detail {

void scan_forward(int L, int D, int N, const double* x, const double* delta, const double* b,
                  const double* c, const double* d_skip, const cplx* lambda, ScanMode mode,
                  double* y, cplx* h_store, cplx* a_store) {
    std::vector<cplx> h(static_cast<size_t>(N));
    std::vector<cplx> a_row(static_cast<size_t>(N));
    std::vector<cplx> seq_a, seq_s;
    if (mode == ScanMode::Parallel) {
        seq_a.resize(static_cast<size_t>(L) * N);
        seq_s.resize(static_cast<size_t>(L) * N);
    }
    for (int d = 0; d < D; ++d) {
        if (mode == ScanMode::Recurrent) {
            std::fill(h.begin(), h.end(), cplx(0.0));
            for (int l = 0; l < L; ++l) {
                double dt = delta[static_cast<size_t>(l) * D + d];
                double xv = x[static_cast<size_t>(l) * D + d];
                const double* br = b + static_cast<size_t>(l) * N;
                const double* cr = c + static_cast<size_t>(l) * N;
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    cplx a = std::exp(dt * lambda[n]);
                    h[static_cast<size_t>(n)] = a * h[static_cast<size_t>(n)] + dt * br[n] * xv;
                    acc += cr[n] * h[static_cast<size_t>(n)].real();
                    if (a_store) a_store[(static_cast<size_t>(d) * L + l) * N + n] = a;
                    if (h_store) h_store[(static_cast<size_t>(d) * L + l) * N + n] = h[static_cast<size_t>(n)];
                }
                double out = acc + d_skip[d] * xv;
                if (!std::isfinite(out))
                    throw NumericError("scan: non-finite output at position " + std::to_string(l));
                y[static_cast<size_t>(l) * D + d] = out;
            }
        } else {
            // Inclusive prefix scan over affine maps h -> a*h + s.
            for (int l = 0; l < L; ++l) {
                double dt = delta[static_cast<size_t>(l) * D + d];
                double xv = x[static_cast<size_t>(l) * D + d];
                const double* br = b + static_cast<size_t>(l) * N;
                for (int n = 0; n < N; ++n) {
                    seq_a[static_cast<size_t>(l) * N + n] = std::exp(dt * lambda[n]);
                    seq_s[static_cast<size_t>(l) * N + n] = cplx(dt * br[n] * xv, 0.0);
                }
            }
            for (int step = 1; step < L; step *= 2) {
                for (int l = L - 1; l >= step; --l) {
                    const cplx* pa = &seq_a[static_cast<size_t>(l - step) * N];
                    const cplx* ps = &seq_s[static_cast<size_t>(l - step) * N];
                    cplx* qa = &seq_a[static_cast<size_t>(l) * N];
                    cplx* qs = &seq_s[static_cast<size_t>(l) * N];
                    for (int n = 0; n < N; ++n) {
                        qs[n] = qa[n] * ps[n] + qs[n];
                        qa[n] = pa[n] * qa[n];
                    }
                }
            }
            for (int l = 0; l < L; ++l) {
                const double* cr = c + static_cast<size_t>(l) * N;
                double acc = 0.0;
                for (int n = 0; n < N; ++n) acc += cr[n] * seq_s[static_cast<size_t>(l) * N + n].real();
                double out = acc + d_skip[d] * x[static_cast<size_t>(l) * D + d];
                if (!std::isfinite(out))
                    throw NumericError("scan: non-finite output at position " + std::to_string(l));
                y[static_cast<size_t>(l) * D + d] = out;
            }
        }
    }
}

void scan_backward(int L, int D, int N, const double* x, const double* delta, const double* b,
                   const double* c, const double* d_skip, const cplx* lambda, const cplx* h_store,
                   const cplx* a_store, const double* gy, double* gx, double* gdelta, double* gb,
                   double* gc, double* gd_skip, double* glam_re, double* glam_im) {
    std::vector<cplx> hhat(static_cast<size_t>(N));
    std::vector<cplx> lam_hat(static_cast<size_t>(N));
    for (int d = 0; d < D; ++d) {
        std::fill(hhat.begin(), hhat.end(), cplx(0.0));
        std::fill(lam_hat.begin(), lam_hat.end(), cplx(0.0));
        for (int l = L - 1; l >= 0; --l) {
            double g = gy[static_cast<size_t>(l) * D + d];
            double dt = delta[static_cast<size_t>(l) * D + d];
            double xv = x[static_cast<size_t>(l) * D + d];
            const double* br = b + static_cast<size_t>(l) * N;
            const double* cr = c + static_cast<size_t>(l) * N;
            const cplx* hl = h_store + (static_cast<size_t>(d) * L + l) * N;
            const cplx* hp = l > 0 ? h_store + (static_cast<size_t>(d) * L + l - 1) * N : nullptr;
            const cplx* al = a_store + (static_cast<size_t>(d) * L + l) * N;
            if (gd_skip) gd_skip[d] += g * xv;
            double gx_acc = gx ? g * d_skip[d] : 0.0;
            double gdt_acc = 0.0;
            for (int n = 0; n < N; ++n) {
                cplx& hh = hhat[static_cast<size_t>(n)];
                if (gc) gc[static_cast<size_t>(l) * N + n] += g * hl[n].real();
                hh += cplx(g * cr[n], 0.0);
                double sh = hh.real();  // adjoint of the (real) input term
                if (gb) gb[static_cast<size_t>(l) * N + n] += sh * dt * xv;
                if (gx) gx_acc += sh * dt * br[n];
                gdt_acc += sh * br[n] * xv;
                if (hp) {
                    cplx ahat = std::conj(hp[n]) * hh;
                    cplx what = std::conj(al[n]) * ahat;
                    gdt_acc += lambda[n].real() * what.real() + lambda[n].imag() * what.imag();
                    lam_hat[static_cast<size_t>(n)] += dt * what;
                }
                hh = std::conj(al[n]) * hh;
            }
            if (gx) gx[static_cast<size_t>(l) * D + d] += gx_acc;
            if (gdelta) gdelta[static_cast<size_t>(l) * D + d] += gdt_acc;
        }
        if (glam_re)
            for (int n = 0; n < N; ++n) glam_re[n] += lam_hat[static_cast<size_t>(n)].real();
        if (glam_im)
            for (int n = 0; n < N; ++n) glam_im[n] += lam_hat[static_cast<size_t>(n)].imag();
    }
}

}  // namespace detail

Tensor scan(const Tensor& x, const DiagonalizedSystem& sys, ScanMode mode) {
    SelectiveParams sp = selective_params(x, sys);
    int L = x.dim(0), D = sys.d_model, N = sys.n_state;
    Tensor y({L, D});
    detail::scan_forward(L, D, N, x.ptr(), sp.delta.ptr(), sp.b.ptr(), sp.c.ptr(),
                         sys.d_skip.ptr(), sys.eigenvalues.data(), mode, y.ptr(), nullptr,
                         nullptr);
    return y;
}

ad::Var scan_op(ad::Var x, ad::Var delta, ad::Var b, ad::Var c, ad::Var d_skip, ad::Var lambda_re,
                ad::Var lambda_im, ScanMode mode) {
    const Tensor& xv = x.val();
    int L = xv.dim(0), D = xv.dim(1);
    int N = b.val().dim(1);
    if (delta.val().shape != xv.shape || c.val().dim(1) != N || d_skip.val().dim(0) != D ||
        lambda_re.val().dim(0) != N || lambda_im.val().dim(0) != N)
        throw ValidationError("scan_op: inconsistent shapes");
    for (double v : xv.data)
        if (!std::isfinite(v)) throw NumericError("scan_op: non-finite input");
    std::vector<cplx> lambda(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n)
        lambda[static_cast<size_t>(n)] = cplx(lambda_re.val().at(n), lambda_im.val().at(n));
    auto h_store = std::make_shared<std::vector<cplx>>(static_cast<size_t>(L) * D * N);
    auto a_store = std::make_shared<std::vector<cplx>>(static_cast<size_t>(L) * D * N);
    Tensor y({L, D});
    // Parallel-mode forwards keep the recurrent pass for the backward stores:
    // the adjoint recursion needs per-step states either way.
    detail::scan_forward(L, D, N, xv.ptr(), delta.val().ptr(), b.val().ptr(), c.val().ptr(),
                         d_skip.val().ptr(), lambda.data(), ScanMode::Recurrent, y.ptr(),
                         h_store->data(), a_store->data());
    if (mode == ScanMode::Parallel) {
        Tensor yp({L, D});
        detail::scan_forward(L, D, N, xv.ptr(), delta.val().ptr(), b.val().ptr(), c.val().ptr(),
                             d_skip.val().ptr(), lambda.data(), ScanMode::Parallel, yp.ptr(),
                             nullptr, nullptr);
        y = std::move(yp);
    }
    int ix = x.id, idelta = delta.id, ib = b.id, ic = c.id, ids = d_skip.id, ilr = lambda_re.id,
        ili = lambda_im.id;
    auto lam = std::make_shared<std::vector<cplx>>(std::move(lambda));
    return x.tape->make_node(
        std::move(y), {x, delta, b, c, d_skip, lambda_re, lambda_im},
        [=](ad::Tape& tp, int self) {
            const Tensor& g = tp.grad_of(self);
            auto buf = [&](int id) -> double* {
                return tp.needs_grad(id) ? tp.grad_of(id).ptr() : nullptr;
            };
            detail::scan_backward(L, D, N, tp.val_of(ix).ptr(), tp.val_of(idelta).ptr(),
                                  tp.val_of(ib).ptr(), tp.val_of(ic).ptr(), tp.val_of(ids).ptr(),
                                  lam->data(), h_store->data(), a_store->data(), g.ptr(), buf(ix),
                                  buf(idelta), buf(ib), buf(ic), buf(ids), buf(ilr), buf(ili));
        });
}

double perturbation_magnitude(const PerturbationMatrix& e) { return e.entries.frobenius_norm(); }

double min_eigenvalue_gap(const DiagonalizedSystem& sys) {
    double gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < sys.eigenvalues.size(); ++i)
        for (size_t j = i + 1; j < sys.eigenvalues.size(); ++j)
            gap = std::min(gap, std::abs(sys.eigenvalues[i] - sys.eigenvalues[j]));
    return gap;
}

}  // namespace evflow::ssm
