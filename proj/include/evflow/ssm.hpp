#pragma once

#include <complex>
#include <string>
#include <vector>

#include "evflow/autodiff.hpp"
#include "evflow/tensor.hpp"

namespace evflow::ssm {

using cplx = std::complex<double>;

// Square real state matrix (the continuous-time evolution matrix).
struct StateMatrix {
    Tensor entries;  // [n, n]
    int n = 0;
};

// Gaussian perturbation rescaled to an exact Frobenius ratio of the matrix it
// perturbs.
struct PerturbationMatrix {
    Tensor entries;  // [n, n]
    double scale = 0.1;
};

// HiPPO-LegS: lower triangular, entry (r,c) = -sqrt(2r+1)*sqrt(2c+1) for r>c,
// -(r+1) on the diagonal. Spectrum is exactly {-1, ..., -n}.
StateMatrix hippo_legs(int n);

// i.i.d. standard normal entries rescaled so ||E||_F = scale * ||A||_F.
PerturbationMatrix sample_perturbation(const StateMatrix& a, double scale, uint64_t seed);

// Diagonalized selective system: spectrum of A* = A + E plus the learned
// input-dependent projections. Eigenvalues carry the stability projection
// (Re >= 0 mapped to -1e-4); `recon_error` is the relative reconstruction
// residual of the raw decomposition.
struct DiagonalizedSystem {
    int n_state = 0;
    int d_model = 0;
    std::vector<cplx> eigenvalues;          // [N], after stability projection
    std::vector<cplx> basis;                // [N*N] row-major; V
    std::vector<cplx> basis_inv;            // [N*N]; V^-1
    double recon_error = 0.0;
    int projected_count = 0;                // eigenvalues moved to the stable half-plane
    double delta_min = 1e-3;
    double delta_max = 1e-1;

    // Learned tensors (registered with a ParamStore by model code).
    Tensor w_b;         // [D, N]
    Tensor w_c;         // [D, N]
    Tensor w_delta;     // [D, D]
    Tensor bias_delta;  // [D]
    Tensor d_skip;      // [D]

    // Gradient buffers for the spectrum; used when the perturbation trains.
    Tensor lambda_grad_re;  // [N]
    Tensor lambda_grad_im;  // [N]
};

// Eigendecomposition of A + E. Throws DecompositionRejected when the relative
// reconstruction error exceeds 1e-6 (caller resamples E with a fresh seed).
// Projections are left zero-initialized; init_selective_params fills them.
DiagonalizedSystem perturb_then_diagonalize(const StateMatrix& a, const PerturbationMatrix& e);

// The hippo baseline: exact LegS spectrum with identity basis (the diagonal
// canonical form), bypassing the ill-conditioned numerical decomposition of
// the unperturbed matrix.
DiagonalizedSystem hippo_spectrum_system(int n);

// Random-normal projection init; bias_delta set so softplus(bias) ~ delta_init.
void init_selective_params(DiagonalizedSystem& sys, int d_model, uint64_t seed,
                           double delta_init = 1e-2);

struct ZohFactors {
    cplx a_bar;      // exp(delta * lambda)
    double b_scale;  // delta (first-order input scaling)
};

// Zero-order-hold factors for one eigenvalue and step size.
ZohFactors discretize_zoh(cplx lambda, double delta);

struct SelectiveParams {
    Tensor b;      // [L, N]
    Tensor c;      // [L, N]
    Tensor delta;  // [L, D], softplus-clamped
};

// Input-dependent B, C, delta from the learned projections.
SelectiveParams selective_params(const Tensor& x, const DiagonalizedSystem& sys);

enum class ScanMode { Recurrent, Parallel };

// Full selective scan y = scan(x): per channel d, h_l = exp(delta*lambda) h_{l-1}
// + delta*b_l*x_l, y_l = Re(c_l . h_l) + d_skip * x_l. Recurrent mode is the
// reference; parallel mode uses an associative prefix scan.
Tensor scan(const Tensor& x, const DiagonalizedSystem& sys, ScanMode mode);

// Low-level kernels shared by the plain scan and the autodiff op.
namespace detail {
void scan_forward(int L, int D, int N, const double* x, const double* delta, const double* b,
                  const double* c, const double* d_skip, const cplx* lambda, ScanMode mode,
                  double* y, cplx* h_store, cplx* a_store);
void scan_backward(int L, int D, int N, const double* x, const double* delta, const double* b,
                   const double* c, const double* d_skip, const cplx* lambda, const cplx* h_store,
                   const cplx* a_store, const double* gy, double* gx, double* gdelta, double* gb,
                   double* gc, double* gd_skip, double* glam_re, double* glam_im);
}  // namespace detail

// Autodiff node for the selective scan. x, delta: [L,D]; b, c: [L,N];
// d_skip: [D]; lambda components: [N].
ad::Var scan_op(ad::Var x, ad::Var delta, ad::Var b, ad::Var c, ad::Var d_skip, ad::Var lambda_re,
                ad::Var lambda_im, ScanMode mode = ScanMode::Recurrent);

// Frobenius norm of the perturbation (the L_PTD penalty term).
double perturbation_magnitude(const PerturbationMatrix& e);

// Minimum pairwise eigenvalue distance (diagnostic for inspect reports).
double min_eigenvalue_gap(const DiagonalizedSystem& sys);

}  // namespace evflow::ssm
